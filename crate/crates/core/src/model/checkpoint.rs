//! Checkpoint files: `<run>.manifest.json` and `<run>.weights.bin`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, NormStats};
use crate::error::{Error, Result};
use crate::features::FeatureSetTag;
use crate::io_util::{fingerprint, read_json, sha256_hex, write_bytes_atomic, write_json};

use super::mlp::{Mlp, MlpSpec};
use super::tensor::Mat;

pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset into the weights blob, in elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u16,
    pub run: String,
    pub architecture: MlpSpec,
    pub feature_set: FeatureSetTag,
    /// Columns per bar.
    pub d: usize,
    pub lookback: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub best_epoch: usize,
    pub best_valid_nll: f64,
    pub norm_hash: String,
    pub columns_hash: String,
    pub tensors: Vec<TensorEntry>,
    pub weights_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub model: Mlp<f32>,
}

pub fn norm_hash(norm: &NormStats) -> String {
    fingerprint(&serde_json::to_vec(norm).expect("norm stats serialize"))
}

pub fn manifest_path(dir: &Path, run: &str) -> PathBuf {
    dir.join(format!("{run}.manifest.json"))
}

pub fn weights_path(dir: &Path, run: &str) -> PathBuf {
    dir.join(format!("{run}.weights.bin"))
}

pub fn tensor_table(spec: &MlpSpec) -> Vec<TensorEntry> {
    let mut offset = 0;
    spec.tensor_shapes()
        .into_iter()
        .map(|(name, rows, cols)| {
            let e = TensorEntry { name, rows, cols, offset };
            offset += rows * cols;
            e
        })
        .collect()
}

pub fn encode_weights(model: &Mlp<f32>) -> Vec<u8> {
    let n: usize = model.params.iter().map(Mat::len).sum();
    let mut out = Vec::with_capacity(4 * n);
    for p in &model.params {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        run: &str,
        model: Mlp<f32>,
        meta: &DatasetMeta,
        seed: u64,
        learning_rate: f64,
        weight_decay: f64,
        best_epoch: usize,
        best_valid_nll: f64,
    ) -> Self {
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            run: run.to_string(),
            architecture: model.spec.clone(),
            feature_set: meta.tag,
            d: meta.tag.dim(),
            lookback: meta.lookback,
            seed,
            learning_rate,
            weight_decay,
            best_epoch,
            best_valid_nll,
            norm_hash: norm_hash(&meta.norm),
            columns_hash: meta.columns_hash.clone(),
            tensors: tensor_table(&model.spec),
            weights_sha256: sha256_hex(&encode_weights(&model)),
        };
        Self { manifest, model }
    }

    /// Refuses datasets whose feature set, columns or normalization differ
    /// from the ones the model was trained on.
    pub fn validate_against(&self, meta: &DatasetMeta) -> Result<()> {
        let m = &self.manifest;
        if m.feature_set != meta.tag {
            return Err(Error::Manifest(format!(
                "checkpoint {} was trained on {}, dataset is {}",
                m.run, m.feature_set, meta.tag
            )));
        }
        if m.lookback != meta.lookback || m.architecture.input_dim != meta.lookback * meta.tag.dim() {
            return Err(Error::Manifest(format!("checkpoint {} input shape does not match the dataset", m.run)));
        }
        if m.columns_hash != meta.columns_hash {
            return Err(Error::Manifest(format!(
                "checkpoint {} column hash {} differs from dataset {}",
                m.run, m.columns_hash, meta.columns_hash
            )));
        }
        let nh = norm_hash(&meta.norm);
        if m.norm_hash != nh {
            return Err(Error::Manifest(format!(
                "checkpoint {} normalization hash {} differs from dataset {nh}",
                m.run, m.norm_hash
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let run = &ckpt.manifest.run;
    write_bytes_atomic(&weights_path(dir, run), &encode_weights(&ckpt.model))?;
    write_json(&manifest_path(dir, run), &ckpt.manifest)
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Manifest(format!("{}: {}", path.display(), msg.into()))
}

pub fn load_checkpoint(dir: &Path, run: &str) -> Result<Checkpoint> {
    let mp = manifest_path(dir, run);
    let manifest: CheckpointManifest = read_json(&mp)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            format: "checkpoint",
            version: manifest.format_version,
            msg: format!("expected version {CHECKPOINT_VERSION}"),
        });
    }
    manifest.architecture.validate()?;
    if manifest.tensors != tensor_table(&manifest.architecture) {
        return Err(bad(&mp, "tensor table does not match the architecture"));
    }
    if manifest.d != manifest.feature_set.dim()
        || manifest.architecture.input_dim != manifest.lookback * manifest.d
    {
        return Err(bad(&mp, "input dimension does not match the feature set"));
    }
    let wp = weights_path(dir, run);
    let bytes = std::fs::read(&wp).map_err(|e| Error::io(&wp, e))?;
    let n = manifest.architecture.param_count();
    if bytes.len() != 4 * n {
        return Err(bad(&wp, format!("weights blob holds {} bytes, expected {}", bytes.len(), 4 * n)));
    }
    if sha256_hex(&bytes) != manifest.weights_sha256 {
        return Err(bad(&wp, "weights digest does not match the manifest"));
    }
    let flat: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let params = manifest
        .tensors
        .iter()
        .map(|t| Mat::from_vec(t.rows, t.cols, flat[t.offset..t.offset + t.rows * t.cols].to_vec()))
        .collect();
    let model = Mlp {
        spec: manifest.architecture.clone(),
        params,
    };
    Ok(Checkpoint { manifest, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SplitSpec, DATASET_VERSION};
    use crate::features::{ColumnManifest, LOOKBACK};
    use std::collections::BTreeMap;

    fn meta(tag: FeatureSetTag) -> DatasetMeta {
        DatasetMeta {
            format_version: DATASET_VERSION,
            tag,
            lookback: LOOKBACK,
            columns_hash: ColumnManifest::new(tag).hash(),
            symbols: vec!["S000".into()],
            splits: SplitSpec::default(),
            counts: BTreeMap::new(),
            rejects: BTreeMap::new(),
            norm: NormStats {
                target_mean: 1e-5,
                target_std: 2e-3,
                train_samples: 10,
                features: BTreeMap::new(),
            },
        }
    }

    fn ckpt(tag: FeatureSetTag) -> Checkpoint {
        let spec = MlpSpec::new(LOOKBACK * tag.dim(), 16, 2, 0.1);
        Checkpoint::new("r1", Mlp::init(spec, 9).unwrap(), &meta(tag), 9, 1e-4, 1e-2, 3, 1.25)
    }

    #[test]
    fn save_load_save_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let c = ckpt(FeatureSetTag::Basic);
        save_checkpoint(&a, &c).unwrap();
        let back = load_checkpoint(&a, "r1").unwrap();
        assert_eq!(back, c);
        save_checkpoint(&b, &back).unwrap();
        for p in ["r1.manifest.json", "r1.weights.bin"] {
            assert_eq!(std::fs::read(a.join(p)).unwrap(), std::fs::read(b.join(p)).unwrap());
        }
    }

    #[test]
    fn wrong_feature_set_is_a_manifest_error() {
        let c = ckpt(FeatureSetTag::Full);
        c.validate_against(&meta(FeatureSetTag::Full)).unwrap();
        assert!(matches!(c.validate_against(&meta(FeatureSetTag::Basic)), Err(Error::Manifest(_))));
        let mut m = meta(FeatureSetTag::Full);
        m.norm.target_std = 3e-3;
        assert!(matches!(c.validate_against(&m), Err(Error::Manifest(_))));
    }

    #[test]
    fn corrupted_weights_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let c = ckpt(FeatureSetTag::Basic);
        save_checkpoint(dir.path(), &c).unwrap();
        let wp = weights_path(dir.path(), "r1");
        let mut bytes = std::fs::read(&wp).unwrap();
        bytes[5] ^= 1;
        std::fs::write(&wp, &bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path(), "r1"), Err(Error::Manifest(_))));
        bytes.pop();
        std::fs::write(&wp, &bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path(), "r1"), Err(Error::Manifest(_))));
    }
}
