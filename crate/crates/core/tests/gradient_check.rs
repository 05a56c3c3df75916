//! Backward passes against central finite differences in f64.

use planmae_core::masking::plan_random;
use planmae_core::nn::Mat;
use planmae_core::training::loss_and_grad;
use planmae_core::{Mae, MaskPlan, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Central differences carry roughly `ulp(loss) / EPS` ~ 1e-11 of
/// roundoff, so entries below this magnitude are compared on an absolute
/// scale of `FLOOR * TOL` instead.
const FLOOR: f64 = 1e-6;

fn tiny(seed: u64) -> ModelConfig {
    ModelConfig {
        image_size: 4,
        patch_size: 2,
        channels: 1,
        enc_dim: 8,
        enc_depth: 1,
        enc_heads: 2,
        dec_dim: 8,
        dec_depth: 1,
        dec_heads: 2,
        mlp_ratio: 2.0,
        seed,
    }
}

/// Reference objective: decoder output compared to the input on masked
/// rows, averaged per value and then over the batch.
fn objective(model: &Mae<f64>, batch: &[Mat<f64>], plans: &[MaskPlan]) -> f64 {
    let mut total = 0.0;
    for (x, plan) in batch.iter().zip(plans) {
        let lat = model.encode_mat(x, plan).unwrap();
        let pred = model.decode_mat(&lat, plan).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for &i in &plan.masked {
            for j in 0..x.cols {
                let d = pred.row(i)[j] - x.row(i)[j];
                sum += d * d;
                n += 1;
            }
        }
        total += sum / n as f64;
    }
    total / batch.len() as f64
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < FLOOR {
        (a - n).abs() / FLOOR
    } else {
        (a - n).abs() / scale
    }
}

fn check(seed: u64, randomize: bool) {
    let config = tiny(seed);
    let mut model = Mae::<f64>::init(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    if randomize {
        for (_, t) in model.params.tensors_mut() {
            for v in &mut t.data {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    let batch: Vec<Mat<f64>> = (0..2)
        .map(|_| Mat::from_vec(4, 4, (0..16).map(|_| rng.random_range(0.0..1.0)).collect()))
        .collect();
    let plans: Vec<MaskPlan> = (0..2)
        .map(|k| plan_random(model.grid(), 0.5, seed * 7 + k).unwrap())
        .collect();
    let refs: Vec<&Mat<f64>> = batch.iter().collect();
    let (loss, grads) = loss_and_grad(&model, &refs, &plans, 1.0).unwrap();
    assert!((loss - objective(&model, &batch, &plans)).abs() < 1e-12);

    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data.clone()))
        .collect();
    let mut worst = (0.0, String::new());
    for (ti, (name, ga)) in analytic.iter().enumerate() {
        for (k, &a) in ga.iter().enumerate() {
            let bump = |m: &mut Mae<f64>, d: f64| {
                m.params.tensors_mut()[ti].1.data[k] += d;
            };
            bump(&mut model, EPS);
            let up = objective(&model, &batch, &plans);
            bump(&mut model, -2.0 * EPS);
            let down = objective(&model, &batch, &plans);
            bump(&mut model, EPS);
            let numeric = (up - down) / (2.0 * EPS);
            let e = rel_err(a, numeric);
            if e > worst.0 {
                worst = (e, format!("{name}[{k}]: analytic {a} numeric {numeric}"));
            }
        }
    }
    assert!(worst.0 < TOL, "seed {seed}: rel err {} at {}", worst.0, worst.1);
}

#[test]
fn gradients_match_finite_differences_at_init() {
    for seed in 0..5 {
        check(seed, false);
    }
}

#[test]
fn gradients_match_finite_differences_random_params() {
    for seed in 10..15 {
        check(seed, true);
    }
}

#[test]
fn gradient_shapes_mirror_params() {
    let model = Mae::<f64>::init(tiny(1)).unwrap();
    let x = Mat::from_vec(4, 4, vec![0.5; 16]);
    let plan = plan_random(model.grid(), 0.5, 3).unwrap();
    let (_, g) = loss_and_grad(&model, &[&x], &[plan], 1.0).unwrap();
    let want = ModelParams::<f64>::zeros(&tiny(1));
    for ((na, a), (nb, b)) in g.tensors().into_iter().zip(want.tensors()) {
        assert_eq!(na, nb);
        assert_eq!(a.shape, b.shape);
    }
}
