use std::time::Instant;

use barlab_core::model::autodiff::Graph;
use barlab_core::model::mlp::{t_nll, Mlp, MlpSpec};
use barlab_core::model::optim::AdamW;
use barlab_core::model::tensor::Mat;
use barlab_core::model::train::{dropout_masks, train_step};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

fn batch_loss(m: &Mlp<f64>, x: &Mat<f64>, y: &Mat<f64>, masks: &Option<Vec<Mat<f64>>>) -> f64 {
    let mut g = Graph::new();
    let p: Vec<_> = m.params.iter().map(|t| g.constant(t.clone())).collect();
    let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
    let head = m.forward(&mut g, &p, xv, masks.clone()).unwrap();
    let l = t_nll(&mut g, head, yv).unwrap();
    g.value(l).data[0]
}

fn analytic(m: &Mlp<f64>, x: &Mat<f64>, y: &Mat<f64>, masks: &Option<Vec<Mat<f64>>>) -> Vec<Mat<f64>> {
    let mut g = Graph::new();
    let p = m.leaves(&mut g);
    let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
    let head = m.forward(&mut g, &p, xv, masks.clone()).unwrap();
    let l = t_nll(&mut g, head, yv).unwrap();
    let mut grads = g.backward(l).unwrap();
    p.iter().map(|&v| grads.take(v).unwrap()).collect()
}

#[test]
fn full_loss_gradients_match_central_differences() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for config in 0..20 {
        let spec = MlpSpec::new(rng.random_range(2..12), rng.random_range(3..10), rng.random_range(0..3), 0.0);
        let rows = rng.random_range(1..9);
        let mut m = Mlp::<f64>::init(spec.clone(), config).unwrap();
        // move the head away from its initial values
        for v in m.params.last_mut().unwrap().data.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        let x = Mat::from_vec(rows, spec.input_dim, (0..rows * spec.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect());
        let y = Mat::from_vec(rows, 1, (0..rows).map(|_| rng.random_range(-3.0..3.0)).collect());
        let rate = if config % 2 == 0 { 0.0 } else { 0.3 };
        let masks = (spec.blocks > 0 && rate > 0.0).then(|| {
            dropout_masks(&mut rng, spec.blocks, rows, spec.hidden, rate)
                .into_iter()
                .map(|m| m.cast::<f64>())
                .collect::<Vec<_>>()
        });
        let grads = analytic(&m, &x, &y, &masks);
        let h = 1e-6;
        for (t, gt) in grads.iter().enumerate() {
            for i in 0..m.params[t].data.len() {
                let orig = m.params[t].data[i];
                m.params[t].data[i] = orig + h;
                let up = batch_loss(&m, &x, &y, &masks);
                m.params[t].data[i] = orig - h;
                let down = batch_loss(&m, &x, &y, &masks);
                m.params[t].data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = gt.data[i];
                // absolute floor for entries whose gradient is zero
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
                assert!(rel < 1e-4, "config {config} tensor {t} entry {i}: analytic {a} numeric {fd}");
            }
        }
    }
    eprintln!("worst relative gradient error {worst:.2e}");
    assert!(t0.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn dropout_preserves_the_expected_activation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (rows, hidden, rate) = (4, 8, 0.3);
    let n = 10_000;
    let mut sum = vec![0.0f64; rows * hidden];
    for _ in 0..n {
        let m = &dropout_masks(&mut rng, 1, rows, hidden, rate)[0];
        for (s, v) in sum.iter_mut().zip(&m.data) {
            *s += *v as f64;
        }
    }
    // each mask entry has mean 1 and variance rate/(1-rate)
    let se = (rate / (1.0 - rate) / n as f64).sqrt();
    for s in &sum {
        assert!((s / n as f64 - 1.0).abs() < 5.0 * se, "{}", s / n as f64);
    }
}

#[test]
fn head_is_valid_on_a_million_inputs() {
    let spec = MlpSpec::new(6, 16, 2, 0.0);
    let m = Mlp::<f32>::init(spec, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let x: Vec<f32> = (0..10_000 * 6)
            .map(|_| {
                let s: f32 = if rng.random::<bool>() { 1.0 } else { 100.0 };
                s * rng.random_range(-1.0f32..1.0)
            })
            .collect();
        for p in m.predict(&x, 10_000).unwrap() {
            assert!(p.mu.is_finite() && p.sigma > 0.0 && p.sigma.is_finite() && p.nu > 2.0 && p.nu.is_finite(), "{p:?}");
        }
    }
}

#[test]
fn one_batch_overfits_monotonically() {
    let spec = MlpSpec::new(8, 32, 2, 0.0);
    let mut m = Mlp::<f32>::init(spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f32> = (0..64 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f32> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut opt = AdamW::new(&m.params, 1e-3, 0.0);
    let losses: Vec<f64> = (0..50)
        .map(|_| train_step(&mut m, &mut opt, x.clone(), y.clone(), None).unwrap())
        .collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn unconditional_t_is_recovered() {
    // zero inputs leave only the biases to learn the marginal
    let (mu, sigma, nu) = (0.5, 2.0, 5.0);
    let t = StudentT::new(nu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = MlpSpec::new(2, 8, 1, 0.0);
    let mut m = Mlp::<f32>::init(spec, 7).unwrap();
    let mut opt = AdamW::new(&m.params, 1e-2, 0.0);
    let rows = 2048;
    for _ in 0..1500 {
        let y: Vec<f32> = (0..rows).map(|_| (mu + sigma * t.sample(&mut rng)) as f32).collect();
        train_step(&mut m, &mut opt, vec![0.0; rows * 2], y, None).unwrap();
    }
    let p = m.predict(&[0.0, 0.0], 1).unwrap()[0];
    assert!((p.mu - mu).abs() < 0.05, "{p:?}");
    assert!((p.sigma / sigma - 1.0).abs() < 0.05, "{p:?}");
    assert!((p.nu - nu).abs() < 1.0, "{p:?}");
}

#[test]
fn init_and_steps_are_reproducible() {
    let spec = MlpSpec::new(5, 12, 2, 0.0);
    let run = || {
        let mut m = Mlp::<f32>::init(spec.clone(), 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut opt = AdamW::new(&m.params, 1e-3, 1e-2);
        for _ in 0..5 {
            let x: Vec<f32> = (0..16 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let masks = dropout_masks(&mut rng, 2, 16, 12, 0.2);
            train_step(&mut m, &mut opt, x, y, Some(masks)).unwrap();
        }
        m
    };
    let (a, b) = (run(), run());
    let bits = |m: &Mlp<f32>| m.params.iter().flat_map(|p| p.data.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&Mlp::<f32>::init(spec.clone(), 43).unwrap()));
}
