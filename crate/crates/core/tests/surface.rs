use cbclab::surface::{
    fold_curve, frequency_response, gp_fit, FoldOptions, GpFitOptions, ResponseSurface, SliceOptions, Support,
    SurfaceJet, SurfacePoint,
};
use proptest::prelude::*;

/// `G = A³ − c(ω) A + 2` with `c(ω) = c₀ + ω`: folds at `A = ±√(c/3)`.
struct ShiftedCubic {
    c0: f64,
}

impl ResponseSurface for ShiftedCubic {
    fn jet(&self, omega: f64, a: f64) -> SurfaceJet {
        let c = self.c0 + omega;
        SurfaceJet {
            value: a * a * a - c * a + 2.0,
            d_omega: -a,
            d_amplitude: 3.0 * a * a - c,
            d_amplitude2: 6.0 * a,
            d_amplitude_omega: -1.0,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn folds_of_a_cubic_family(c0 in 0.5f64..2.0) {
        let s = ShiftedCubic { c0 };
        let support = Support::rectangle((0.0, 1.0), (-2.0, 2.0));
        let fold = fold_curve(&s, (0.0, 1.0), &support, &FoldOptions::default()).unwrap();
        prop_assert!(!fold.is_empty());
        for p in &fold {
            let root = ((c0 + p.omega) / 3.0).sqrt();
            prop_assert!((p.amplitude.abs() - root).abs() < 1e-6, "{} vs ±{}", p.amplitude, root);
            prop_assert!(s.jet(p.omega, p.amplitude).d_amplitude.abs() <= 1e-8);
        }
        prop_assert!(fold.iter().any(|p| p.amplitude > 0.0) && fold.iter().any(|p| p.amplitude < 0.0));
    }

    #[test]
    fn slices_stay_on_the_contour(gamma in 1.0f64..1.5) {
        let s = ShiftedCubic { c0: 1.0 };
        let support = Support::rectangle((0.0, 1.0), (-2.0, 2.0));
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let branches = frequency_response(&s, gamma, &grid, &support, &SliceOptions::default()).unwrap();
        for b in &branches {
            for p in &b.points {
                prop_assert!((s.jet(p.omega, p.amplitude).value - gamma).abs() < 1e-8);
            }
        }
        // for these levels the contour turns back in ω exactly once, on the
        // upper fold A = √(c/3)
        let folds: Vec<_> = branches.iter().flat_map(|b| b.fold_points()).collect();
        prop_assert_eq!(folds.len(), 1);
        prop_assert!(s.jet(folds[0].omega, folds[0].amplitude).d_amplitude.abs() < 1e-8);
        prop_assert!(folds[0].amplitude > 0.0);
    }
}

#[test]
fn gp_reproduces_a_smooth_sheet() {
    let sheet = |w: f64, a: f64| 1.0 + (1.0 + 0.4 * w) * a + 3.0 * a * a * a - 0.2 * w;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..12 {
        for j in 0..15 {
            let (w, a) = (i as f64 * 0.1, j as f64 * 0.07);
            let p = SurfacePoint { omega: w, amplitude: a, gamma: sheet(w, a) };
            if (i + j) % 5 == 2 {
                test.push(p);
            } else {
                train.push(p);
            }
        }
    }
    let gp = gp_fit(&train, None, &GpFitOptions::default()).unwrap();
    let (lo, hi) = gp.gamma_range();
    let rms = (test.iter().map(|p| (gp.predict(p.omega, p.amplitude).0 - p.gamma).powi(2)).sum::<f64>()
        / test.len() as f64)
        .sqrt();
    assert!(rms < 1e-3 * (hi - lo), "held-out RMS {rms:e}");
    let fit = gp.jet(0.5, 0.5);
    assert!((fit.d_amplitude - (1.2 + 9.0 * 0.25)).abs() < 1e-2, "{}", fit.d_amplitude);
}

#[test]
fn gp_needs_enough_points() {
    let few: Vec<SurfacePoint> = (0..5)
        .map(|k| SurfacePoint { omega: k as f64, amplitude: 0.1, gamma: 1.0 })
        .collect();
    assert!(gp_fit(&few, None, &GpFitOptions::default()).is_err());
}
