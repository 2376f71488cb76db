use approx::assert_relative_eq;
use ocvcap_core::estimator::{EstimationProblem, SocTransform};
use ocvcap_core::{
    absolute_relative_error, aggregate, apply_transform, enforce_monotone, integrate_discharge,
    soc_from_qdc, uncalibrated_soc, OcvCurve,
};
use proptest::prelude::*;

/// Strictly increasing curve inside [0, 1] x [2, 5] V.
fn curve_strategy() -> impl Strategy<Value = OcvCurve> {
    (2usize..24)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.01f64..1.0, n),
                prop::collection::vec(0.002f64..0.3, n),
                0.0f64..0.3,
                2.0f64..3.0,
            )
        })
        .prop_map(|(ds, dv, z_start, v_start)| {
            let total: f64 = ds.iter().sum();
            let span = 1.0 - z_start;
            let mut soc = Vec::with_capacity(ds.len());
            let mut z = 0.0;
            for d in &ds {
                soc.push(z_start + span * z / total);
                z += d;
            }
            let mut ocv = Vec::with_capacity(dv.len());
            let mut v = v_start;
            for d in &dv {
                ocv.push(v);
                v += d / ds.len() as f64 * 4.0;
            }
            OcvCurve::new(soc, ocv, "prop").unwrap()
        })
}

/// Strictly increasing sample times starting at `t0`.
fn times(t0: f64, steps: &[f64]) -> Vec<f64> {
    let mut t = vec![t0];
    for dt in steps {
        let last = *t.last().unwrap();
        t.push(last + dt);
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn interpolation_hits_knots_exactly(curve in curve_strategy()) {
        for (z, v) in curve.soc().iter().zip(curve.ocv()) {
            prop_assert_eq!(curve.interp_ocv(*z).unwrap(), *v);
            prop_assert_eq!(curve.interp_soc(*v).unwrap(), *z);
        }
    }

    #[test]
    fn soc_round_trip(curve in curve_strategy(), u in 0.0f64..=1.0) {
        let r = curve.soc_range();
        let z = (r.lo + u * r.width()).min(r.hi);
        let back = curve.interp_soc(curve.interp_ocv(z).unwrap()).unwrap();
        prop_assert!((back - z).abs() <= 1e-12, "z={} back={}", z, back);
    }

    #[test]
    fn interpolant_is_strictly_increasing(curve in curve_strategy(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let r = curve.soc_range();
        let (z1, z2) = if a < b { (a, b) } else { (b, a) };
        let (z1, z2) = (r.lo + z1 * r.width(), r.lo + z2 * r.width());
        prop_assert!(curve.interp_ocv(z1).unwrap() < curve.interp_ocv(z2).unwrap());
    }

    #[test]
    fn out_of_range_is_an_error(curve in curve_strategy(), eps in 1e-9f64..0.5) {
        let r = curve.soc_range();
        prop_assert!(curve.interp_ocv(r.lo - eps).is_err());
        prop_assert!(curve.interp_ocv(r.hi + eps).is_err());
    }

    #[test]
    fn monotone_repair_is_idempotent_and_keeps_soc_order(
        samples in prop::collection::vec((0.0f64..1.0, 2.5f64..4.2), 2..40)
    ) {
        let (soc, ocv): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        let (s1, v1) = enforce_monotone(soc.clone(), ocv);
        let mut sorted = soc;
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(&s1, &sorted);
        prop_assert!(v1.windows(2).all(|w| w[1] > w[0]));
        let (s2, v2) = enforce_monotone(s1.clone(), v1.clone());
        prop_assert_eq!(s2, s1);
        prop_assert_eq!(v2, v1);
    }

    #[test]
    fn coulomb_counting_is_additive(
        steps in prop::collection::vec(0.1f64..120.0, 2..60),
        currents in prop::collection::vec(-5.0f64..5.0, 61),
        split in 1usize..60,
    ) {
        let t = times(0.0, &steps);
        let i = &currents[..t.len()];
        let k = split.min(t.len() - 2);
        let whole = integrate_discharge(&t, i).unwrap();
        let head = integrate_discharge(&t[..=k], &i[..=k]).unwrap();
        let tail = integrate_discharge(&t[k..], &i[k..]).unwrap();
        let joined = head[k] + tail.last().unwrap();
        let scale = whole.iter().map(|q| q.abs()).fold(1e-9, f64::max);
        prop_assert!((joined - whole.last().unwrap()).abs() <= 1e-12 * scale);
    }

    #[test]
    fn coulomb_counting_is_linear(
        steps in prop::collection::vec(0.1f64..120.0, 1..60),
        currents in prop::collection::vec(-5.0f64..5.0, 61),
        alpha in -10.0f64..10.0,
    ) {
        let t = times(100.0, &steps);
        let i = &currents[..t.len()];
        let scaled: Vec<f64> = i.iter().map(|x| alpha * x).collect();
        let q = integrate_discharge(&t, i).unwrap();
        let qs = integrate_discharge(&t, &scaled).unwrap();
        let scale = q.iter().map(|x| x.abs()).fold(1e-9, f64::max) * alpha.abs().max(1.0);
        for (a, b) in q.iter().zip(&qs) {
            prop_assert!((alpha * a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn zero_current_withdraws_nothing(steps in prop::collection::vec(0.1f64..120.0, 1..60)) {
        let t = times(0.0, &steps);
        let q = integrate_discharge(&t, &vec![0.0; t.len()]).unwrap();
        prop_assert!(q.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn soc_is_affine_and_decreasing_in_charge(
        q1 in -5.0f64..5.0, q2 in -5.0f64..5.0, z0 in 0.0f64..1.0, cap in 0.5f64..10.0
    ) {
        prop_assume!(q1 != q2);
        let (a, b) = (soc_from_qdc(q1, z0, cap).unwrap(), soc_from_qdc(q2, z0, cap).unwrap());
        prop_assert_eq!(q1 < q2, a > b);
        let slope = (b - a) / (q2 - q1);
        prop_assert!((slope + 1.0 / cap).abs() <= 1e-9 / cap);
    }

    #[test]
    fn transform_matches_calibrated_soc(
        cn in 1.0f64..10.0, ratio in 0.3f64..1.5, z0 in 0.0f64..1.0, q in -2.0f64..12.0
    ) {
        let ca = cn * ratio;
        let t = SocTransform::new(cn, ca, z0).unwrap();
        let via_transform = apply_transform(&t, uncalibrated_soc(q, cn).unwrap());
        prop_assert!((via_transform - (z0 - q / ca)).abs() <= 1e-12);
    }

    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((0.5f64..6.0, 0.5f64..6.0), 1..30)) {
        let rows: Vec<(String, f64, f64)> =
            pairs.iter().enumerate().map(|(k, (e, a))| (k.to_string(), *e, *a)).collect();
        let r = aggregate(rows).unwrap();
        prop_assert!(r.rmse_ah >= r.mae_ah * (1.0 - 1e-12));
    }

    #[test]
    fn equal_errors_give_rmse_equal_to_mae(err in -1.0f64..1.0, actual in prop::collection::vec(2.0f64..6.0, 1..20)) {
        let rows: Vec<(String, f64, f64)> =
            actual.iter().map(|a| ("c".to_string(), a + err, *a)).collect();
        let r = aggregate(rows).unwrap();
        prop_assert!((r.rmse_ah - r.mae_ah).abs() <= 1e-12);
    }

    #[test]
    fn are_is_scale_invariant(est in 0.1f64..10.0, actual in 0.1f64..10.0, alpha in 1e-3f64..1e3) {
        let a = absolute_relative_error(est, actual).unwrap();
        let b = absolute_relative_error(alpha * est, alpha * actual).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn piecewise_linear_current_integrates_exactly() {
    // ramp from 0 to -2 A over 1 h, then hold -2 A for 30 min
    let t: Vec<f64> = (0..=90).map(|k| k as f64 * 60.0).collect();
    let i: Vec<f64> = t
        .iter()
        .map(|&s| if s <= 3600.0 { -2.0 * s / 3600.0 } else { -2.0 })
        .collect();
    let q = integrate_discharge(&t, &i).unwrap();
    for (s, got) in t.iter().zip(&q) {
        let h = s / 3600.0;
        let want = if h <= 1.0 {
            h * h
        } else {
            1.0 + 2.0 * (h - 1.0)
        };
        assert_relative_eq!(*got, want, max_relative = 1e-12, epsilon = 1e-300);
    }
}

#[test]
fn objective_uses_only_feasible_points() {
    let curve = OcvCurve::new(vec![0.0, 0.5, 1.0], vec![3.0, 3.5, 4.0], "").unwrap();
    let p = EstimationProblem::new(curve, vec![0.0, 1.0, 2.0], vec![4.0, 3.75, 3.5], 4.0).unwrap();
    assert_eq!(p.objective(4.0, 1.0).unwrap(), Some(0.0));
    assert_eq!(p.objective(1.0, 0.5).unwrap(), None);
}
