mod common;

use std::f64::consts::PI;

use common::random_unit;
use mbcnn::metrics::psnr;
use mbcnn::synth::{
    degrade, moire_field, procedural_clean, procedural_dataset, synth_pair, tone_map,
    DegradationParams, Grating, ToneCurve, MAX_COMPONENTS, MAX_SCALES,
};
use mbcnn::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grating(scale: usize, orientation: f64, frequency: f64) -> Grating {
    Grating {
        scale,
        orientation,
        frequency,
        amplitude: [0.1, 0.05, 0.02],
        phase: 0.3,
    }
}

fn closed_form(g: &Grating, y: f64, x: f64, curvature: f64, ch: usize) -> f64 {
    let arg = 2.0 * PI * g.frequency * (x * g.orientation.cos() + y * g.orientation.sin())
        + curvature * (x * x + y * y)
        + g.phase;
    g.amplitude[ch] * arg.cos()
}

#[test]
fn finest_scale_field_matches_formula() {
    let gs = [grating(0, 0.7, 0.13), grating(0, 2.1, 0.31)];
    let f = moire_field(17, 23, &gs, 0.0015);
    for y in 0..17 {
        for x in 0..23 {
            for ch in 0..3 {
                let want: f64 = gs
                    .iter()
                    .map(|g| closed_form(g, y as f64, x as f64, 0.0015, ch))
                    .sum();
                assert!((f.get(0, y, x, ch) - want).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn coarse_scale_is_bilinearly_upsampled() {
    let g = grating(1, 0.4, 0.2);
    let f = moire_field(16, 16, &[g], 0.0);
    let coarse = |y: usize, x: usize| closed_form(&g, y as f64, x as f64, 0.0, 0);
    // Output pixel 5 sits at coarse coordinate 2.25, between samples 2 and 3.
    let top = 0.75 * coarse(2, 2) + 0.25 * coarse(2, 3);
    let bottom = 0.75 * coarse(3, 2) + 0.25 * coarse(3, 3);
    assert!((f.get(0, 5, 5, 0) - (0.75 * top + 0.25 * bottom)).abs() < 1e-12);
    // Pixel 0 lies before the first sample centre and clamps to it.
    assert!((f.get(0, 0, 0, 0) - coarse(0, 0)).abs() < 1e-12);
}

#[test]
fn axis_aligned_grating_is_constant_along_the_fringes() {
    // Orientation 0 varies with x only.
    let f = moire_field(12, 10, &[grating(0, 0.0, 0.25)], 0.0);
    for y in 0..12 {
        for x in 0..10 {
            assert_eq!(f.get(0, y, x, 1), f.get(0, 0, x, 1));
        }
    }
    let v = moire_field(12, 10, &[grating(0, PI / 2.0, 0.25)], 0.0);
    for y in 0..12 {
        for x in 0..10 {
            assert!((v.get(0, y, x, 0) - v.get(0, y, 0, 0)).abs() < 1e-12);
        }
    }
}

#[test]
fn field_averages_to_zero_over_full_periods() {
    // Frequency 1/8 over 64 columns covers eight whole periods.
    let f = moire_field(4, 64, &[grating(0, 0.0, 0.125)], 0.0);
    for ch in 0..3 {
        let mean: f64 = (0..64).map(|x| f.get(0, 0, x, ch)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-2, "{mean}");
    }
    let zero = Grating {
        amplitude: [0.0; 3],
        ..grating(0, 1.0, 0.3)
    };
    assert!(moire_field(8, 8, &[zero], 0.001)
        .data()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn tone_curve_examples() {
    let img = Tensor::<f32>::full([1, 2, 2, 3], 0.5);
    assert_eq!(tone_map(&img, &[ToneCurve::IDENTITY; 3]).unwrap(), img);
    let square = ToneCurve {
        gamma: 2.0,
        gain: 1.0,
        offset: 0.0,
    };
    assert_eq!(square.apply(0.5), 0.25);
    let c = ToneCurve {
        gamma: 1.3,
        gain: 0.9,
        offset: 0.02,
    };
    let values: Vec<f64> = (0..=20).map(|i| c.apply(i as f64 / 20.0)).collect();
    assert!(values.windows(2).all(|w| w[1] > w[0]));
    assert!(tone_map(&Tensor::zeros([1, 2, 2, 1]), &[ToneCurve::IDENTITY; 3]).is_err());
}

#[test]
fn degenerate_parameters_leave_the_image_untouched() {
    let clean = random_unit([1, 16, 16, 3], 1);
    assert_eq!(
        degrade(&clean, &DegradationParams::identity()).unwrap(),
        clean
    );
}

#[test]
fn pairs_are_reproducible_from_the_seed() {
    let clean = random_unit([1, 32, 32, 3], 2);
    let a = synth_pair(&clean, 77).unwrap();
    let b = synth_pair(&clean, 77).unwrap();
    assert_eq!(a, b);
    assert_eq!(degrade(&clean, &a.params).unwrap(), a.moire);
    assert_ne!(synth_pair(&clean, 78).unwrap().moire, a.moire);
    assert_eq!(
        procedural_dataset(3, 16, 5).unwrap(),
        procedural_dataset(3, 16, 5).unwrap()
    );
}

#[test]
fn degradation_strength_over_100_seeds() {
    let pairs = procedural_dataset(100, 64, 1000).unwrap();
    let scores: Vec<f64> = pairs
        .iter()
        .map(|p| psnr(&p.moire, &p.clean).unwrap())
        .collect();
    assert!(scores.iter().all(|s| s.is_finite()));
    let mean = scores.iter().sum::<f64>() / 100.0;
    let inside = scores.iter().filter(|s| (15.0..=30.0).contains(*s)).count();
    assert!((15.0..=30.0).contains(&mean), "mean {mean}");
    assert!(inside >= 80, "{inside} of 100 in 15-30 dB");
}

#[test]
fn procedural_images_stay_in_range() {
    let img = procedural_clean(40, 24, &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(img.shape(), [1, 40, 24, 3]);
    assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_parameters_are_in_range(seed in any::<u64>()) {
        let p = DegradationParams::sample(&mut ChaCha8Rng::seed_from_u64(seed));
        for t in p.tone {
            prop_assert!((0.7..=1.4).contains(&t.gamma));
            prop_assert!((0.8..=1.2).contains(&t.gain));
            prop_assert!((-0.05..=0.05).contains(&t.offset));
        }
        prop_assert!(!p.gratings.is_empty());
        prop_assert!(p.gratings.len() <= MAX_SCALES * MAX_COMPONENTS);
        for g in &p.gratings {
            prop_assert!(g.scale < MAX_SCALES);
            prop_assert!((0.0..PI).contains(&g.orientation));
            prop_assert!((0.02..=0.45).contains(&g.frequency));
            prop_assert!(g.amplitude.iter().all(|a| (0.02..=0.15).contains(a)));
            prop_assert!((0.0..2.0 * PI).contains(&g.phase));
        }
        prop_assert!((0.0..=0.002).contains(&p.curvature));
    }

    #[test]
    fn moire_is_clamped_and_differs_from_clean(seed in 0u64..1000) {
        let clean = random_unit([1, 16, 16, 3], seed);
        let pair = synth_pair(&clean, seed).unwrap();
        prop_assert!(pair.moire.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(psnr(&pair.moire, &pair.clean).unwrap().is_finite());
    }
}
