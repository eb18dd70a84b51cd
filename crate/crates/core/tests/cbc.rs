use std::f64::consts::TAU;

use cbclab::cbc::{continuation_sweep, replay_open_loop, CbcConfig, ContinuationRun};
use cbclab::oracle::linear_gain;
use cbclab::rig::{ControllerConfig, NoiseConfig, RigParams, VirtualRig};

fn sweep(params: &RigParams, hz: f64, grid: &[f64]) -> ContinuationRun {
    let mut rig = VirtualRig::new(params.clone(), ControllerConfig::default(), NoiseConfig::silent()).unwrap();
    continuation_sweep(&mut rig, TAU * hz, grid, &CbcConfig::default()).unwrap()
}

fn grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| 0.0016 * k as f64).collect()
}

#[test]
fn linear_branch_follows_the_transfer_function() {
    let params = RigParams::linear();
    let run = sweep(&params, 2.8, &grid(12));
    let gain = linear_gain(&params, TAU * 2.8);
    for p in &run.points {
        assert!(p.residual <= p.tolerance);
        assert!((p.response_amplitude / p.gamma - gain).abs() < 1e-5 * gain, "{} vs {gain}", p.response_amplitude / p.gamma);
    }
    assert!(run.geometric_folds().is_empty());
}

#[test]
fn duffing_branch_above_resonance_folds_twice() {
    let params = RigParams::default();
    let run = sweep(&params, 3.0, &grid(40));
    let k = ControllerConfig::default().gain_at(TAU * 3.0);
    for p in &run.points {
        assert!(p.relative_residual(k) <= 1e-6, "relative residual {:e}", p.relative_residual(k));
    }
    let folds = run.geometric_folds();
    assert_eq!(folds.len(), 2, "{folds:?}");
    let targets = run.fold_targets();
    for (f, t) in folds.iter().zip(&targets) {
        assert!((t - run.points[*f].target_amplitude()).abs() <= 0.0016);
    }
    // Γ rises, falls between the folds, then rises again
    let g: Vec<f64> = run.points.iter().map(|p| p.gamma).collect();
    assert!(g[folds[0]] > g[folds[1]]);
}

#[test]
fn open_loop_replay_stays_on_the_orbit() {
    let params = RigParams::default();
    let run = sweep(&params, 3.0, &grid(20));
    let k = ControllerConfig::default().gain_at(TAU * 3.0);
    for p in &run.points {
        let drift = replay_open_loop(&params, p).unwrap() / p.response_amplitude;
        assert!(drift <= 10.0 * p.relative_residual(k).max(1e-12), "drift {drift:e}");
    }
}

#[test]
fn identical_seeds_give_identical_noisy_sweeps() {
    let params = RigParams::default();
    let noise = NoiseConfig::silent().with_amplitude(0.002).with_seed(9);
    let run = |noise: NoiseConfig| {
        let mut rig = VirtualRig::new(params.clone(), ControllerConfig::default(), noise).unwrap();
        continuation_sweep(&mut rig, TAU * 2.6, &[0.01, 0.012], &CbcConfig::noisy()).unwrap()
    };
    let (a, b) = (run(noise), run(noise));
    assert_eq!(a, b);
    let c = run(noise.with_seed(10));
    assert_ne!(a.points[0].gamma, c.points[0].gamma);
}
