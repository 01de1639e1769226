//! Maximum-likelihood training with best-validation checkpoint retention.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bars::neumaier;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::FeatureSetTag;
use crate::io_util::write_atomic;
use crate::tdist::{t_logpdf, StudentTParams};

use super::autodiff::Graph;
use super::mlp::{t_nll, Mlp, MlpSpec};
use super::optim::AdamW;
use super::tensor::Mat;

pub const DROPOUT_GRID: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const WEIGHT_DECAY_GRID: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];
pub const LEARNING_RATE_GRID: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// `None` selects the tuned rate of the feature set.
    pub dropout: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub seeds: Vec<u64>,
    pub hidden: usize,
    pub blocks: usize,
    /// Rows per inference batch during validation and evaluation.
    pub eval_batch: usize,
    /// Accept hyperparameters outside the published search grid.
    pub allow_off_grid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            dropout: None,
            batch_size: 1024,
            epochs: 10,
            batches_per_epoch: 200,
            seeds: vec![1, 2, 3],
            hidden: 256,
            blocks: 2,
            eval_batch: 4096,
            allow_off_grid: false,
        }
    }
}

fn on_grid(v: f64, grid: &[f64]) -> bool {
    grid.iter().any(|g| (v - g).abs() <= 1e-9 * g.abs())
}

/// Tuned dropout per feature set.
pub fn tuned_dropout(tag: FeatureSetTag) -> f64 {
    match tag {
        FeatureSetTag::Basic => 0.1,
        FeatureSetTag::NoTiming | FeatureSetTag::Full => 0.3,
    }
}

impl TrainConfig {
    pub fn dropout_for(&self, tag: FeatureSetTag) -> f64 {
        self.dropout.unwrap_or_else(|| tuned_dropout(tag))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train.{m}")));
        if self.batch_size == 0 || self.epochs == 0 || self.batches_per_epoch == 0 || self.eval_batch == 0 {
            return bad("batch_size, epochs, batches_per_epoch and eval_batch must be positive".into());
        }
        if self.hidden == 0 || self.blocks == 0 {
            return bad("hidden and blocks must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate must be > 0 and weight_decay >= 0".into());
        }
        if let Some(d) = self.dropout {
            if !(0.0..1.0).contains(&d) {
                return bad(format!("dropout must lie in [0, 1), got {d}"));
            }
        }
        if !self.allow_off_grid {
            if !on_grid(self.learning_rate, &LEARNING_RATE_GRID) {
                return bad(format!("learning_rate {} is not in the search grid", self.learning_rate));
            }
            if !on_grid(self.weight_decay, &WEIGHT_DECAY_GRID) {
                return bad(format!("weight_decay {} is not in the search grid", self.weight_decay));
            }
            if let Some(d) = self.dropout {
                if !on_grid(d, &DROPOUT_GRID) {
                    return bad(format!("dropout {d} is not in the search grid"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub train_nll: f64,
    pub valid_nll: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Mlp<f32>,
    pub seed: u64,
    pub dropout: f64,
    pub best_epoch: usize,
    pub best_valid_nll: f64,
    pub log: Vec<EpochLog>,
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut x = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Evaluation-mode predictions for every row of `ds`.
pub fn predict_dataset(model: &Mlp<f32>, ds: &Dataset, eval_batch: usize) -> Result<Vec<StudentTParams>> {
    if model.spec.input_dim != ds.input_dim() {
        return Err(Error::Contract(format!(
            "model expects {} inputs, dataset rows hold {}",
            model.spec.input_dim,
            ds.input_dim()
        )));
    }
    let w = ds.input_dim();
    let mut out = Vec::with_capacity(ds.len());
    for start in (0..ds.len()).step_by(eval_batch.max(1)) {
        let end = (start + eval_batch).min(ds.len());
        out.extend(model.predict(&ds.x[start * w..end * w], end - start)?);
    }
    Ok(out)
}

/// Mean NLL in 64-bit compensated arithmetic, in sample order.
pub fn mean_nll(preds: &[StudentTParams], y: &[f32]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Undefined("NLL of an empty set".into()));
    }
    let (mut s, mut c) = (0.0, 0.0);
    for (p, &yi) in preds.iter().zip(y) {
        neumaier(&mut s, &mut c, -t_logpdf(p, yi as f64)?);
    }
    Ok((s + c) / preds.len() as f64)
}

/// Fills inverted-dropout masks, one per residual block.
pub fn dropout_masks(rng: &mut ChaCha8Rng, blocks: usize, rows: usize, hidden: usize, rate: f64) -> Vec<Mat<f32>> {
    let keep = (1.0 / (1.0 - rate)) as f32;
    (0..blocks)
        .map(|_| {
            let data = (0..rows * hidden)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            Mat::from_vec(rows, hidden, data)
        })
        .collect()
}

/// One optimization step on the given rows; returns the batch loss.
pub fn train_step(
    model: &mut Mlp<f32>,
    opt: &mut AdamW<f32>,
    x: Vec<f32>,
    y: Vec<f32>,
    masks: Option<Vec<Mat<f32>>>,
) -> Result<f64> {
    let rows = y.len();
    let mut g = Graph::new();
    let p = model.leaves(&mut g);
    let xv = g.constant(Mat::from_vec(rows, model.spec.input_dim, x));
    let yv = g.constant(Mat::from_vec(rows, 1, y));
    let head = model.forward(&mut g, &p, xv, masks)?;
    let loss = t_nll(&mut g, head, yv)?;
    let value = g.value(loss).data[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("batch loss is {value}")));
    }
    let mut grads = g.backward(loss)?;
    let gs: Vec<Mat<f32>> = p
        .iter()
        .zip(&model.params)
        .map(|(&v, m)| grads.take(v).unwrap_or_else(|| Mat::zeros(m.rows, m.cols)))
        .collect();
    if gs.iter().any(|m| m.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("gradient holds non-finite values".into()));
    }
    opt.step(&mut model.params, &gs);
    Ok(value)
}

/// Trains one seed; keeps the parameters with the lowest validation NLL.
pub fn train(train: &Dataset, valid: &Dataset, cfg: &TrainConfig, dropout: f64, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    if train.tag != valid.tag {
        return Err(Error::Manifest(format!("train split is {}, validation split is {}", train.tag, valid.tag)));
    }
    let spec = MlpSpec::new(train.input_dim(), cfg.hidden, cfg.blocks, dropout);
    let mut model = Mlp::<f32>::init(spec, stream_seed(seed, 1))?;
    let mut opt = AdamW::new(&model.params, cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 2));
    let w = train.input_dim();
    let mut order: Vec<u32> = (0..train.len() as u32).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (mut sum, mut comp) = (0.0, 0.0);
        for _ in 0..cfg.batches_per_epoch {
            let bs = cfg.batch_size.min(train.len());
            let mut idx = Vec::with_capacity(bs);
            while idx.len() < bs {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                idx.push(order[cursor] as usize);
                cursor += 1;
            }
            let mut x = Vec::with_capacity(bs * w);
            let mut y = Vec::with_capacity(bs);
            for &i in &idx {
                x.extend_from_slice(train.row(i));
                y.push(train.y[i]);
            }
            let masks = (dropout > 0.0).then(|| dropout_masks(&mut rng, cfg.blocks, bs, cfg.hidden, dropout));
            let loss = train_step(&mut model, &mut opt, x, y, masks).map_err(|e| match e {
                Error::NonFinite(m) => {
                    let lo = idx.iter().map(|&i| train.keys[i]).min().expect("non-empty batch");
                    let hi = idx.iter().map(|&i| train.keys[i]).max().expect("non-empty batch");
                    Error::NonFinite(format!(
                        "{m} at step {} (seed {seed}); batch keys range {lo:?} ..= {hi:?}",
                        opt.steps() + 1
                    ))
                }
                other => other,
            })?;
            neumaier(&mut sum, &mut comp, loss);
        }
        let preds = predict_dataset(&model, valid, cfg.eval_batch)?;
        let valid_nll = mean_nll(&preds, &valid.y)?;
        if !valid_nll.is_finite() {
            return Err(Error::NonFinite(format!("validation NLL is {valid_nll} after epoch {epoch} (seed {seed})")));
        }
        log::debug!("seed {seed} epoch {epoch}: valid NLL {valid_nll:.6}");
        log.push(EpochLog {
            epoch,
            step: opt.steps(),
            train_nll: (sum + comp) / cfg.batches_per_epoch as f64,
            valid_nll,
        });
        if valid_nll < best.0 {
            best = (valid_nll, epoch, model.clone());
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        seed,
        dropout,
        best_epoch: best.1,
        best_valid_nll: best.0,
        log,
    })
}

pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    write_atomic(path, |f| {
        writeln!(f, "epoch,step,train_nll,valid_nll")?;
        for r in log {
            writeln!(f, "{},{},{},{}", r.epoch, r.step, r.train_nll, r.valid_nll)?;
        }
        Ok(())
    })
}
