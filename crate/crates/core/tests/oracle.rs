use std::f64::consts::TAU;

use cbclab::cbc::{continuation_sweep, CbcConfig};
use cbclab::oracle::{
    brute_force_monodromy, harmonic_balance_guess, liouville_determinant, linear_multipliers, variational_multipliers,
    OrbitInput,
};
use cbclab::rig::{ControllerConfig, NoiseConfig, RigParams, VirtualRig};
use proptest::prelude::*;

#[test]
fn variational_and_finite_difference_monodromy_agree() {
    let params = RigParams::default();
    let omega = TAU * 3.0;
    let grid: Vec<f64> = (1..=40).map(|k| 0.0016 * k as f64).collect();
    let mut rig = VirtualRig::new(params.clone(), ControllerConfig::default(), NoiseConfig::silent()).unwrap();
    let run = continuation_sweep(&mut rig, omega, &grid, &CbcConfig::default()).unwrap();
    let det = liouville_determinant(&params, omega);
    let (mut stable, mut unstable) = (0, 0);
    for idx in [0, 5, 10, 15, 20, 26, 29, 32, 35, 38] {
        let p = &run.points[idx];
        let input = OrbitInput::new(p.gamma, p.omega, p.phase);
        let var = variational_multipliers(&params, input, p.phase0_state).unwrap();
        let bf = brute_force_monodromy(&params, input, [var.state[0], var.state[1]], 1e-6).unwrap();
        let diff = (var.monodromy - bf).abs().max();
        assert!(diff < 1e-5, "point {idx}: entrywise difference {diff:e}");
        assert!((var.determinant() - det).abs() < 1e-8, "point {idx}: det {} vs {det}", var.determinant());
        if var.multipliers[0].norm() > 1.0 {
            unstable += 1;
        } else {
            stable += 1;
        }
    }
    assert!(stable > 0 && unstable > 0, "{stable} stable, {unstable} unstable");
}

#[test]
fn linear_plant_matches_closed_form() {
    let params = RigParams::linear();
    let omega = TAU * 2.8;
    let (input, guess) = harmonic_balance_guess(&params, omega, 0.01, 0.3);
    let var = variational_multipliers(&params, input, guess).unwrap();
    let mut got = var.multipliers.to_vec();
    let mut want = linear_multipliers(&params, omega).to_vec();
    got.sort_by(|a, b| b.im.total_cmp(&a.im));
    want.sort_by(|a, b| b.im.total_cmp(&a.im));
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).norm() < 1e-9, "{g} vs {w}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn determinant_obeys_liouville(f in 2.2f64..3.4, a in 0.002f64..0.05, phase in -3.0f64..3.0) {
        let params = RigParams::default();
        let omega = TAU * f;
        let (input, guess) = harmonic_balance_guess(&params, omega, a, phase);
        if let Ok(var) = variational_multipliers(&params, input, guess) {
            let det = liouville_determinant(&params, omega);
            prop_assert!((var.determinant() - det).abs() < 1e-8);
            let product = var.multipliers[0] * var.multipliers[1];
            prop_assert!((product.re - det).abs() < 1e-8 && product.im.abs() < 1e-8);
        }
    }
}
