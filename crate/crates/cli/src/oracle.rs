//! `oracle`: variational and finite-difference monodromy of stored orbits.

use std::f64::consts::TAU;
use std::io::Write;

use cbclab::cbc::ContinuationPoint;
use cbclab::oracle::{brute_force_monodromy, liouville_determinant, variational_multipliers, OrbitInput};
use rayon::prelude::*;
use serde::Serialize;

use crate::{load_sweeps, nearest_sweep, write_json, write_with, CliError, CliResult, RunContext};

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub index: usize,
    pub omega: f64,
    pub gamma: f64,
    pub response_amplitude: f64,
    pub state: [f64; 2],
    pub variational: [[f64; 2]; 2],
    pub brute_force: [[f64; 2]; 2],
    /// `[re, im]` of both multipliers, largest modulus first.
    pub multipliers: [[f64; 2]; 2],
    pub max_entry_difference: f64,
    pub determinant: f64,
    pub liouville: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub sweep_index: usize,
    pub omega: f64,
    pub rows: Vec<OracleRow>,
    pub errors: Vec<(usize, String)>,
}

pub fn evaluate(ctx: &RunContext, index: usize, p: &ContinuationPoint) -> cbclab::Result<OracleRow> {
    let params = &ctx.config.rig;
    let input = OrbitInput::new(p.gamma, p.omega, p.phase);
    let var = variational_multipliers(params, input, p.phase0_state)?;
    let state = [var.state[0], var.state[1]];
    let bf = brute_force_monodromy(params, input, state, ctx.config.oracle.brute_force_eps)?;
    let mat = |m: &nalgebra::Matrix2<f64>| [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]];
    Ok(OracleRow {
        index,
        omega: p.omega,
        gamma: p.gamma,
        response_amplitude: p.response_amplitude,
        state,
        variational: mat(&var.monodromy),
        brute_force: mat(&bf),
        multipliers: var.multipliers.map(|c| [c.re, c.im]),
        max_entry_difference: (var.monodromy - bf).abs().max(),
        determinant: var.determinant(),
        liouville: liouville_determinant(params, p.omega),
        stable: var.multipliers.iter().all(|c| c.norm() <= 1.0),
    })
}

pub fn run(ctx: &RunContext) -> CliResult<OracleReport> {
    let runs = load_sweeps(ctx)?;
    let dir = ctx.prepare("oracle")?;
    let (sweep_index, branch) = nearest_sweep(&runs, ctx.config.oracle.frequency_hz).expect("at least one sweep");
    let indices: Vec<usize> = match &ctx.config.oracle.points {
        Some(list) => list.clone(),
        None => (0..branch.points.len()).collect(),
    };
    if let Some(bad) = indices.iter().find(|&&i| i >= branch.points.len()) {
        return Err(CliError::Config(format!(
            "oracle point {bad} is past the end of the {}-point branch at {:.4} Hz",
            branch.points.len(),
            branch.omega / TAU
        )));
    }
    let results: Vec<cbclab::Result<OracleRow>> = ctx.install(|| {
        indices
            .par_iter()
            .map(|&i| evaluate(ctx, i, &branch.points[i]))
            .collect()
    });
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (&i, r) in indices.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => errors.push((i, e.to_string())),
        }
    }
    let report = OracleReport {
        sweep_index: *sweep_index,
        omega: branch.omega,
        rows,
        errors,
    };

    write_with(&dir.join("oracle.csv"), |w| {
        writeln!(
            w,
            "index,omega,gamma,response_amplitude,mu_abs_1,mu_abs_2,stable,max_entry_difference,determinant,liouville"
        )?;
        for r in &report.rows {
            let m = |k: usize| r.multipliers[k][0].hypot(r.multipliers[k][1]);
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}",
                r.index,
                r.omega,
                r.gamma,
                r.response_amplitude,
                m(0),
                m(1),
                r.stable,
                r.max_entry_difference,
                r.determinant,
                r.liouville
            )?;
        }
        Ok(())
    })?;
    write_json(&dir.join("oracle.json"), &report)?;

    if report.errors.is_empty() {
        Ok(report)
    } else {
        let lines: Vec<String> = report.errors.iter().map(|(i, e)| format!("point {i}: {e}")).collect();
        Err(CliError::Failed(lines.join("\n")))
    }
}
