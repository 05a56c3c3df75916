use planmae_core::masking::plan_random;
use planmae_core::{patchify, Mae, MaskSpec, Mode, ModelConfig, Raster, Strategy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(seed: u64, channels: usize) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        patch_size: 4,
        channels,
        enc_dim: 16,
        enc_depth: 1,
        enc_heads: 2,
        dec_dim: 8,
        dec_depth: 1,
        dec_heads: 2,
        mlp_ratio: 2.0,
        seed,
    }
}

fn image(rng: &mut ChaCha8Rng, mode: Mode) -> Raster {
    let data = (0..16 * 16 * mode.channels())
        .map(|_| rng.random_range(0.0f32..=1.0))
        .collect();
    Raster::new(16, 16, mode, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn reconstruction_keeps_visible_pixels(seed in any::<u64>(), ratio in 0.0f64..=1.0, colored in any::<bool>()) {
        let mode = if colored { Mode::Colored } else { Mode::LineDrawing };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Mae::<f32>::init(small(seed, mode.channels())).unwrap();
        // Large random weights push predictions far outside [0, 1].
        for (_, t) in model.params.tensors_mut() {
            for v in &mut t.data {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let img = image(&mut rng, mode);
        let plan = plan_random(model.grid(), ratio, seed).unwrap();
        let out = model.reconstruct(&img, &plan).unwrap();
        let (a, b) = (patchify(&img, 4).unwrap(), patchify(&out, 4).unwrap());
        for i in plan.visible() {
            prop_assert_eq!(a.patch(i), b.patch(i));
        }
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn forward_is_finite_and_accounts_for_every_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..100u64 {
        let model = Mae::<f32>::init(small(trial, 1)).unwrap();
        let img = image(&mut rng, Mode::LineDrawing);
        let spec =
            MaskSpec::new(Strategy::ALL[trial as usize % 5], rng.random_range(0.0..=1.0)).with_seed(trial);
        let plan = spec.plan(model.grid()).unwrap();
        let seq = patchify(&img, 4).unwrap();
        let lat = model.encode(&seq, &plan).unwrap();
        assert_eq!(lat.rows + plan.num_masked(), 16);
        assert!(lat.data.iter().all(|v| v.is_finite()));
        let pred = model.decode(&lat, &plan).unwrap();
        assert_eq!(pred.len(), 16);
        assert!(pred.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn mask_token_drives_masked_predictions_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut model = Mae::<f32>::init(small(4, 1)).unwrap();
    for (_, t) in model.params.tensors_mut() {
        for v in &mut t.data {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let img = image(&mut rng, Mode::LineDrawing);
    let plan = plan_random(model.grid(), 0.5, 2).unwrap();
    let before = model.reconstruct(&img, &plan).unwrap();
    for v in &mut model.params.mask_token.data {
        *v += 0.5;
    }
    let after = model.reconstruct(&img, &plan).unwrap();
    let (a, b) = (patchify(&before, 4).unwrap(), patchify(&after, 4).unwrap());
    assert!(plan.masked.iter().any(|&i| a.patch(i) != b.patch(i)));
    for i in plan.visible() {
        assert_eq!(a.patch(i), b.patch(i));
    }
}

#[test]
fn inference_is_deterministic() {
    let model = Mae::<f32>::init(ModelConfig::desk(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data = (0..64 * 64 * 3).map(|_| rng.random_range(0.0f32..=1.0)).collect();
    let img = Raster::new(64, 64, Mode::Colored, data).unwrap();
    let plan = MaskSpec::new(Strategy::Center, 0.3).plan(model.grid()).unwrap();
    assert_eq!(
        model.reconstruct(&img, &plan).unwrap(),
        model.reconstruct(&img, &plan).unwrap()
    );
}
