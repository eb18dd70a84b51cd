use std::f64::consts::TAU;

use cbclab::cbc::{continuation_sweep, CbcConfig};
use cbclab::oracle::linear_multipliers;
use cbclab::rig::{ControllerConfig, NoiseConfig, RigParams, VirtualRig};
use cbclab::sysid::{estimate_floquet, SysIdConfig};

#[test]
fn identified_multipliers_of_the_linear_plant() {
    let params = RigParams::linear();
    let omega = TAU * 2.8;
    let mut rig = VirtualRig::new(params.clone(), ControllerConfig::default(), NoiseConfig::silent()).unwrap();
    let run = continuation_sweep(&mut rig, omega, &[0.01], &CbcConfig::default()).unwrap();
    let config = SysIdConfig {
        repeats: 3,
        ..SysIdConfig::default()
    };
    let est = estimate_floquet(&rig, &run.points[0], &config, 1).unwrap();
    let exact = linear_multipliers(&params, omega);
    let got = est.result.complex_multipliers();
    for w in exact {
        let best = got
            .iter()
            .min_by(|a, b| (*a - w).norm().total_cmp(&(*b - w).norm()))
            .unwrap();
        assert!((best.norm() / w.norm() - 1.0).abs() < 0.02, "{best} vs {w}");
        let darg = (best.arg() - w.arg() + TAU / 2.0).rem_euclid(TAU) - TAU / 2.0;
        assert!(darg.abs() < 0.05, "{best} vs {w}");
    }
    assert!(est.result.stable);
}

#[test]
fn duffing_stability_changes_between_the_folds() {
    let params = RigParams::default();
    let omega = TAU * 3.0;
    let grid: Vec<f64> = (1..=40).map(|k| 0.0016 * k as f64).collect();
    let mut rig = VirtualRig::new(params, ControllerConfig::default(), NoiseConfig::silent()).unwrap();
    let run = continuation_sweep(&mut rig, omega, &grid, &CbcConfig::default()).unwrap();
    let config = SysIdConfig {
        repeats: 2,
        ..SysIdConfig::default()
    };
    let folds = run.geometric_folds();
    let low = estimate_floquet(&rig, &run.points[folds[0] - 5], &config, 2).unwrap();
    let mid = estimate_floquet(&rig, &run.points[(folds[0] + folds[1]) / 2], &config, 3).unwrap();
    assert!(low.result.stable);
    assert!(!mid.result.stable);
    assert!(mid.result.leading().re > 1.0 && mid.result.leading().im.abs() < 1e-9);
}
