use ppg_stress::dataset::{f_statistic, WindowSpec};
use ppg_stress::dsp::{design_butter_bandpass, filtfilt};
use ppg_stress::eval::{mann_whitney_u, UTestMode};
use ppg_stress::hrv::{all_features, FeatureVector};
use ppg_stress::models::{lda_fit, stress_level};
use ppg_stress::pulse::RrSeries;
use proptest::prelude::*;

fn rr_window() -> impl Strategy<Value = Vec<f64>> {
    (90usize..140, 650.0..950.0f64, any::<u64>()).prop_map(|(n, base, seed)| {
        let mut s = seed | 1;
        (0..n)
            .map(|i| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                let u = (s % 10_000) as f64 / 10_000.0 - 0.5;
                base + 60.0 * u + 30.0 * (i as f64 * 0.9).sin()
            })
            .collect()
    })
}

fn features(rr: &[f64]) -> FeatureVector {
    all_features(&RrSeries::from_intervals(rr), 120.0).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filtfilt_is_linear(
        x in prop::collection::vec(-1.0..1.0f64, 300),
        y in prop::collection::vec(-1.0..1.0f64, 300),
        a in -5.0..5.0f64,
        b in -5.0..5.0f64,
    ) {
        let c = design_butter_bandpass(3, 0.5, 8.0, 100.0).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = filtfilt(&c, &mix).unwrap();
        let fx = filtfilt(&c, &x).unwrap();
        let fy = filtfilt(&c, &y).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * fx[i] + b * fy[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-9 * (1.0 + a.abs() + b.abs()));
        }
    }

    #[test]
    fn u_statistics_sum_to_n1_n2(
        a in prop::collection::vec(0u8..20, 1..40),
        b in prop::collection::vec(0u8..20, 1..40),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = mann_whitney_u(&a, &b, UTestMode::Normal).unwrap();
        let ba = mann_whitney_u(&b, &a, UTestMode::Normal).unwrap();
        prop_assert_eq!(ab.u + ba.u, (a.len() * b.len()) as f64);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn hrv_time_scale_coherence(rr in rr_window(), s in 0.8..1.25f64) {
        let scaled: Vec<f64> = rr.iter().map(|v| v * s).collect();
        let f = features(&rr);
        let g = features(&scaled);
        for name in ["MeanNN", "SDNN", "RMSSD", "SDSD", "MadNN", "MedianNN", "IQRNN", "MinNN", "MaxNN", "SD1", "SD2"] {
            prop_assert!(close(g.get(name).unwrap(), s * f.get(name).unwrap(), 1e-9), "{}", name);
        }
        for name in ["CVNN", "CVSD", "MCVNN", "SD1SD2", "CSI", "ShanEn"] {
            prop_assert!(close(g.get(name).unwrap(), f.get(name).unwrap(), 1e-9), "{}", name);
        }
    }

    #[test]
    fn hrv_multiset_features_ignore_order(rr in rr_window(), rot in 1usize..50) {
        let mut perm = rr.clone();
        perm.reverse();
        perm.rotate_left(rot % rr.len());
        let f = features(&rr);
        let g = features(&perm);
        for name in ["MeanNN", "SDNN", "MedianNN", "MadNN", "IQRNN", "MinNN", "MaxNN", "ShanEn"] {
            prop_assert!(close(g.get(name).unwrap(), f.get(name).unwrap(), 1e-9), "{}", name);
        }
    }

    #[test]
    fn f_is_affine_invariant(
        g0 in prop::collection::vec(-10.0..10.0f64, 3..30),
        g1 in prop::collection::vec(-10.0..10.0f64, 3..30),
        a in prop_oneof![0.1..10.0f64, -10.0..-0.1f64],
        b in -100.0..100.0f64,
    ) {
        let t = |x: &[f64]| x.iter().map(|v| a * v + b).collect::<Vec<_>>();
        let f0 = f_statistic(&g0, &g1);
        let f1 = f_statistic(&t(&g0), &t(&g1));
        prop_assert!(close(f0, f1, 1e-9), "{} vs {}", f0, f1);
    }

    #[test]
    fn lda_decisions_survive_affine_rescaling(
        seed in any::<u64>(),
        scale in prop::collection::vec(0.2..5.0f64, 3),
        shift in prop::collection::vec(-50.0..50.0f64, 3),
    ) {
        let mut s = seed | 1;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 100_000) as f64 / 100_000.0 - 0.5
        };
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..120 {
            let label = (i % 2) as u8;
            let c = if label == 1 { 0.6 } else { -0.6 };
            x.push(vec![c + next(), 0.5 * c + next(), next()]);
            y.push(label);
        }
        let tx: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(&scale).zip(&shift).map(|((v, a), b)| a * v + b).collect())
            .collect();
        let m0 = lda_fit(&x, &y, 0.0).unwrap();
        let m1 = lda_fit(&tx, &y, 0.0).unwrap();
        for (r, tr) in x.iter().zip(&tx) {
            let (p, q) = (m0.predict_proba(r), m1.predict_proba(tr));
            prop_assert!((p - q).abs() < 1e-6, "{} vs {}", p, q);
        }
    }

    #[test]
    fn window_count_formula(len in 0.0..2000.0f64, size in 60.0..200.0f64, step in 1.0..60.0f64) {
        let spec = WindowSpec::new(size, step.min(size)).unwrap();
        let n = spec.count_in(len);
        if len < size {
            prop_assert_eq!(n, 0);
        } else {
            let last_end = (n - 1) as f64 * spec.step_s + size;
            prop_assert!(last_end <= len + 1e-9);
            prop_assert!(last_end + spec.step_s > len);
        }
    }

    #[test]
    fn stress_level_on_tenths_grid(p in 0.0..=1.0f64) {
        let s = stress_level(p).unwrap();
        prop_assert!((s * 10.0 - (s * 10.0).round()).abs() < 1e-9);
        prop_assert!((s - p).abs() <= 0.05 + 1e-9);
    }
}
