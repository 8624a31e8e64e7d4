use photoseq_core::noise::noise_field;
use photoseq_core::{add_noise, estimate_noise_params, Error, FrameClip, Image, NoiseParams};
use proptest::prelude::*;

/// Static scene of vertical bands, one per intensity level.
fn banded_scene(levels: &[f32], band: usize, height: usize) -> Image {
    Image::from_fn(height, band * levels.len(), |_, x, _| levels[x / band]).unwrap()
}

fn bursts(scene: &Image, params: &NoiseParams, frames: usize, count: usize, seed: u64) -> Vec<FrameClip> {
    (0..count)
        .map(|b| {
            let frames = (0..frames)
                .map(|t| add_noise(scene, params, seed + (b * frames + t) as u64).unwrap())
                .collect();
            FrameClip::new(frames, 30.0).unwrap()
        })
        .collect()
}

fn variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

#[test]
fn monte_carlo_variance_matches_affine_law() {
    let params = NoiseParams::new(0.01, 0.001, "").unwrap();
    for (i, expected) in [(0.5f32, 0.006), (0.1, 0.002), (0.9, 0.01)] {
        let img = Image::constant(1000, 1000, i).unwrap();
        let n = noise_field(&img, &params, 42).unwrap();
        let v = variance(&n);
        assert!((v - expected).abs() / expected < 0.02, "i={i}: {v} vs {expected}");
        let mean = n.iter().sum::<f64>() / n.len() as f64;
        // Standard error of the mean is sqrt(v / n).
        assert!(mean.abs() < 5.0 * (v / n.len() as f64).sqrt(), "mean {mean}");
    }
}

#[test]
fn calibration_recovers_known_parameters() {
    let truth = NoiseParams::new(0.02, 0.003, "").unwrap();
    let levels: Vec<f32> = (1..=9).map(|k| k as f32 / 10.0).collect();
    let scene = banded_scene(&levels, 16, 32);
    let est = estimate_noise_params(&bursts(&scene, &truth, 16, 4, 7)).unwrap();
    assert!((est.alpha - truth.alpha).abs() / truth.alpha < 0.05, "alpha {}", est.alpha);
    assert!((est.beta - truth.beta).abs() / truth.beta < 0.05, "beta {}", est.beta);
}

#[test]
fn noise_free_bursts_give_zero_parameters() {
    let scene = banded_scene(&[0.2, 0.4, 0.8], 4, 4);
    let est = estimate_noise_params(&bursts(&scene, &NoiseParams::noise_free(), 8, 2, 0)).unwrap();
    assert_eq!((est.alpha, est.beta), (0.0, 0.0));
}

#[test]
fn single_level_is_ill_posed() {
    let scene = Image::constant(24, 24, 0.4).unwrap();
    let noisy = NoiseParams::new(0.02, 0.003, "").unwrap();
    for p in [noisy, NoiseParams::noise_free()] {
        let r = estimate_noise_params(&bursts(&scene, &p, 12, 2, 1));
        assert!(matches!(r, Err(Error::IllPosed(_))), "{r:?}");
    }
}

#[test]
fn short_bursts_are_rejected() {
    let scene = banded_scene(&[0.2, 0.8], 2, 2);
    let r = estimate_noise_params(&bursts(&scene, &NoiseParams::noise_free(), 5, 1, 0));
    assert!(matches!(r, Err(Error::Argument(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn same_seed_is_bit_identical(seed in any::<u64>(), alpha in 0.0f64..0.1, beta in 0.0f64..0.01) {
        let img = Image::from_fn(6, 5, |y, x, c| ((y * 5 + x) * 3 + c) as f32 / 90.0).unwrap();
        let p = NoiseParams::new(alpha, beta, "").unwrap();
        let a = add_noise(&img, &p, seed).unwrap();
        prop_assert_eq!(&a, &add_noise(&img, &p, seed).unwrap());
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn params_text_round_trips(alpha in 0.0f64..1.0, beta in 0.0f64..1.0, label in "[a-z0-9 ]{0,12}") {
        let p = NoiseParams::new(alpha, beta, label).unwrap();
        prop_assert_eq!(NoiseParams::parse(&p.to_text()).unwrap(), p);
    }
}
