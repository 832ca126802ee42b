use ndarray::Array2;
use proptest::prelude::*;

use splitmerge_core::fcm::fcm_run_from;
use splitmerge_core::speckle::{enhanced_lee_plane, SpeckleParams};
use splitmerge_core::synth::{gamma_field, ClassSpec};
use splitmerge_core::*;

fn points(raw: &[f64], d: usize) -> Array2<f64> {
    Array2::from_shape_fn((raw.len() / d, d), |(i, c)| raw[i * d + c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fcm_objective_never_rises(
        raw in prop::collection::vec(-50.0f64..50.0, 60..240),
        k in 2usize..5,
        seed in any::<u64>(),
        gk in any::<bool>(),
    ) {
        let x = points(&raw[..raw.len() / 3 * 3], 3);
        let metric = if gk { Metric::AdaptiveMahalanobis } else { Metric::Euclidean };
        let r = fcm_run(x.view(), &FcmParams::new(k, metric, seed)).unwrap();
        for w in r.objective.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
        prop_assert!(r.max_column_error < 1e-9);
        prop_assert_eq!(r.labels.len(), x.nrows());
    }

    #[test]
    fn fcm_f32_tracks_f64(seed in any::<u64>()) {
        let means: Vec<f64> = (0..200).map(|i| [2.0, 40.0][i % 2]).collect();
        let v = gamma_field(&means, 6.0, seed).unwrap();
        let x64 = Array2::from_shape_fn((200, 1), |(i, _)| v[i] as f64);
        let x32 = x64.mapv(|a| a as f32);
        let init = [0, 1];
        let a = fcm_run_from(x64.view(), &FcmParams::new(2, Metric::HellingerGamma { looks: 6.0 }, 0), &init).unwrap();
        let b = fcm_run_from(x32.view(), &FcmParams::new(2, Metric::HellingerGamma { looks: 6.0f32 }, 0), &init).unwrap();
        let agree = a.labels.iter().zip(&b.labels).filter(|(p, q)| p == q).count();
        prop_assert!(agree >= 196, "{agree}/200");
    }

    #[test]
    fn lee_output_stays_within_input_range(
        seed in any::<u64>(),
        looks in 1.0f64..12.0,
        side in 7usize..24,
    ) {
        let v: Vec<f64> = gamma_field(&vec![3.0; side * side], looks, seed)
            .unwrap()
            .into_iter()
            .map(f64::from)
            .collect();
        let out = enhanced_lee_plane(&v, side, side, &SpeckleParams::new(looks)).unwrap();
        let (lo, hi) = v.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        prop_assert!(out.iter().all(|&o| o.is_finite() && o >= lo && o <= hi));
    }

    #[test]
    fn synth_truth_is_the_changed_rectangles(
        x0 in 0usize..30, y0 in 0usize..30, w in 1usize..10, h in 1usize..10, seed in any::<u64>(),
    ) {
        let spec = SceneSpec {
            width: 40,
            height: 40,
            looks: 4.0,
            seed,
            background: 0,
            classes: vec![
                ClassSpec::isotropic(vec![10.0, 20.0], 1.0, 1.0),
                ClassSpec::isotropic(vec![50.0, 5.0], 1.0, 8.0),
            ],
            changes: vec![synth::ChangeRegion { rect: Bounds::new(x0, y0, w, h), class: 1 }],
        };
        let (o, s, t) = generate_pair(&spec).unwrap();
        let (o2, s2, _) = generate_pair(&spec).unwrap();
        prop_assert_eq!(o.data(), o2.data());
        prop_assert_eq!(s.data(), s2.data());
        for y in 0..40 {
            for x in 0..40 {
                let inside = x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
                prop_assert_eq!(t.get(x, y), inside);
            }
        }
    }
}
