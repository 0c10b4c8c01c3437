//! Property suites over the model, histogram and simulator.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use spadgate::estimators::{coates_transient, DepthPosterior, FluxGrid};
use spadgate::model::{
    detection_log_likelihood, timestamps_to_histogram, AcquisitionRecord, SceneTransient, SpadConfig,
};
use spadgate::policies::PolicyState;
use spadgate::rng::stream_rng;
use spadgate::spadsim::{run_acquisition, AcquisitionLimits};
use spadgate::Observation;

fn observation(b: usize) -> impl Strategy<Value = (u32, Observation)> {
    (0..b as u32, prop::option::weighted(0.9, 0..b as u32)).prop_map(|(g, t)| {
        (
            g,
            match t {
                Some(t) => Observation::Detected(t),
                None => Observation::Censored,
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn histogram_ignores_cycle_order(
        pairs in prop::collection::vec(observation(24), 1..200),
        shuffle_seed in any::<u64>(),
    ) {
        let rec = AcquisitionRecord::from_pairs(24, 3, pairs.clone());
        let mut shuffled = pairs;
        shuffled.shuffle(&mut stream_rng(shuffle_seed, 0));
        let other = AcquisitionRecord::from_pairs(24, 3, shuffled);
        let (h1, h2) = (timestamps_to_histogram(&rec, 24), timestamps_to_histogram(&other, 24));
        prop_assert_eq!(&h1, &h2);
        prop_assert_eq!(coates_transient(&h1), coates_transient(&h2));
    }

    #[test]
    fn counts_never_exceed_denominators(pairs in prop::collection::vec(observation(16), 0..300)) {
        let h = timestamps_to_histogram(&AcquisitionRecord::from_pairs(16, 2, pairs), 16);
        for i in 0..16 {
            prop_assert!(h.counts[i] <= h.denominators[i]);
        }
        prop_assert_eq!(h.counts.iter().sum::<u64>(), h.detections);
    }

    #[test]
    fn likelihood_is_invariant_to_a_common_shift(
        b in 4usize..64,
        ambient in 0.001f64..0.5,
        signal in 0.0f64..3.0,
        depth_frac in 0.0f64..1.0,
        gate_frac in 0.0f64..1.0,
        offset_frac in 0.0f64..1.0,
        shift in 0usize..200,
    ) {
        let d = ((depth_frac * b as f64) as usize).min(b - 1);
        let g = ((gate_frac * b as f64) as usize).min(b - 1);
        let t = g + ((offset_frac * b as f64) as usize).min(b - 1);
        let scene = SceneTransient::single_peak(b, ambient, d, signal).unwrap();
        let moved = scene.shifted(shift);
        let k = shift % b;
        let lhs = detection_log_likelihood(&scene, t, g).unwrap();
        let g_moved = (g + k) % b;
        let rhs = detection_log_likelihood(&moved, g_moved + (t - g), g_moved).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn posterior_shift_moves_the_map(
        shift in 0usize..32,
        pairs in prop::collection::vec(observation(32), 1..60),
    ) {
        let b = 32;
        let grid = FluxGrid::new(vec![0.0, 0.3, 1.0]).unwrap();
        let mut base = DepthPosterior::uniform(b, grid.clone()).unwrap();
        let mut moved = DepthPosterior::uniform(b, grid).unwrap();
        for &(g, obs) in &pairs {
            base.update(obs, g as usize, 0.05, 4).unwrap();
            let obs_moved = match obs {
                Observation::Detected(t) => Observation::Detected(((t as usize + shift) % b) as u32),
                Observation::Censored => Observation::Censored,
            };
            moved.update(obs_moved, (g as usize + shift) % b, 0.05, 4).unwrap();
        }
        for d in 0..b {
            let p = base.marginal()[d];
            let q = moved.marginal()[(d + shift) % b];
            prop_assert!((p - q).abs() <= 1e-9, "bin {d}: {p} vs {q}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Longer dead time never yields more detections per unit time on an
    /// ambient-only scene (compared over a long budget).
    #[test]
    fn detections_decrease_with_dead_time(
        ambient in 0.005f64..0.05,
        dead in 20usize..400,
        extra in 150usize..600,
        seed in any::<u64>(),
    ) {
        let b = 100;
        let scene = SceneTransient::ambient_only(b, ambient).unwrap();
        let count = |dead_bins: usize| {
            let cfg = SpadConfig::from_bins(b, dead_bins).unwrap();
            let mut policy = PolicyState::free_running();
            run_acquisition(&scene, &cfg, &mut policy, AcquisitionLimits::budget(2_000_000), seed)
                .unwrap()
                .record
                .detections()
        };
        prop_assert!(count(dead) >= count(dead + extra));
    }
}

#[test]
fn shifted_scene_rates() {
    let scene = SceneTransient::single_peak(10, 0.1, 8, 1.0).unwrap();
    let moved = scene.shifted(3);
    assert_abs_diff_eq!(moved.rate(1), 1.1, epsilon = 1e-15);
    assert_abs_diff_eq!(moved.rate(8), 0.1, epsilon = 1e-15);
}
