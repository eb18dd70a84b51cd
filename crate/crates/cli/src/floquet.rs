//! `floquet`: multiplier estimates along every stored branch.

use std::f64::consts::TAU;

use cbclab::cbc::{ContinuationPoint, ContinuationRun};
use cbclab::oracle::{variational_multipliers, OrbitInput};
use cbclab::rig::{NoiseConfig, VirtualRig};
use cbclab::seed::derive_seed;
use cbclab::sysid::{estimate_floquet, write_floquet_csv, FloquetResult};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::stream;
use crate::{load_sweeps, write_json, write_with, CliError, CliResult, RunContext};

#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub index: usize,
    pub omega: f64,
    pub gamma: f64,
    pub response_amplitude: f64,
    pub sysid: Option<FloquetResult>,
    pub oracle: Option<FloquetResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchReport {
    pub sweep_index: usize,
    pub repeat: usize,
    pub omega: f64,
    pub points: Vec<PointReport>,
}

impl BranchReport {
    /// Sysid stability per analysed point, `None` where estimation failed.
    pub fn flags(&self) -> Vec<(usize, Option<bool>)> {
        self.points
            .iter()
            .map(|p| (p.index, p.sysid.as_ref().map(|r| r.stable)))
            .collect()
    }
}

/// Oracle multipliers of a continuation point, using its lumped forcing.
pub fn oracle_at(ctx: &RunContext, point: &ContinuationPoint) -> cbclab::Result<FloquetResult> {
    let input = OrbitInput::new(point.gamma, point.omega, point.phase);
    Ok(variational_multipliers(&ctx.config.rig, input, point.phase0_state)?.to_floquet())
}

fn analyse_point(ctx: &RunContext, sweep_index: usize, repeat: usize, index: usize, point: &ContinuationPoint) -> PointReport {
    let cfg = &ctx.config;
    let seed = derive_seed(
        cfg.seed,
        &[stream::FLOQUET, sweep_index as u64, repeat as u64, index as u64],
    );
    let mut report = PointReport {
        index,
        omega: point.omega,
        gamma: point.gamma,
        response_amplitude: point.response_amplitude,
        sysid: None,
        oracle: None,
        error: None,
    };
    let mut errors = Vec::new();
    let sysid = VirtualRig::new(cfg.rig.clone(), cfg.controller, NoiseConfig::silent())
        .and_then(|rig| estimate_floquet(&rig, point, &cfg.sysid, seed));
    match sysid {
        Ok(est) => report.sysid = Some(est.result),
        Err(e) => errors.push(format!("sysid: {e}")),
    }
    if cfg.floquet.oracle {
        match oracle_at(ctx, point) {
            Ok(res) => report.oracle = Some(res),
            Err(e) => errors.push(format!("oracle: {e}")),
        }
    }
    if !errors.is_empty() {
        report.error = Some(errors.join("; "));
    }
    report
}

/// Analyses the selected branches without writing anything.
pub fn analyse(ctx: &RunContext, runs: &[(usize, ContinuationRun)]) -> Vec<BranchReport> {
    let f = &ctx.config.floquet;
    let selected: Vec<&(usize, ContinuationRun)> = runs
        .iter()
        .filter(|(idx, _)| f.sweep_indices.as_ref().map_or(true, |list| list.contains(idx)))
        .collect();
    let mut tasks = Vec::new();
    for (b, (sweep_index, run)) in selected.iter().enumerate() {
        for repeat in 0..f.branch_repeats {
            for index in (0..run.points.len()).step_by(f.stride) {
                tasks.push((b, *sweep_index, repeat, index));
            }
        }
    }
    let reports: Vec<PointReport> = ctx.install(|| {
        tasks
            .par_iter()
            .map(|&(b, sweep_index, repeat, index)| {
                analyse_point(ctx, sweep_index, repeat, index, &selected[b].1.points[index])
            })
            .collect()
    });

    let mut branches: Vec<BranchReport> = Vec::new();
    for (&(b, sweep_index, repeat, _), report) in tasks.iter().zip(reports) {
        match branches.last_mut() {
            Some(last) if last.sweep_index == sweep_index && last.repeat == repeat => last.points.push(report),
            _ => branches.push(BranchReport {
                sweep_index,
                repeat,
                omega: selected[b].1.omega,
                points: vec![report],
            }),
        }
    }
    branches
}

fn rows(points: &[PointReport], pick: impl Fn(&PointReport) -> Option<&FloquetResult>) -> Vec<(f64, f64, FloquetResult)> {
    points
        .iter()
        .filter_map(|p| pick(p).map(|r| (p.omega, p.response_amplitude, r.clone())))
        .collect()
}

fn suffix(sweep_index: usize, repeat: usize) -> String {
    if repeat == 0 {
        format!("{sweep_index:03}")
    } else {
        format!("{sweep_index:03}_rep{repeat}")
    }
}

pub fn run(ctx: &RunContext) -> CliResult<Vec<BranchReport>> {
    let runs = load_sweeps(ctx)?;
    let dir = ctx.prepare("floquet")?;
    let branches = analyse(ctx, &runs);

    let mut failures = Vec::new();
    for br in &branches {
        let tag = suffix(br.sweep_index, br.repeat);
        write_with(&dir.join(format!("floquet_{tag}.csv")), |w| {
            write_floquet_csv(w, &rows(&br.points, |p| p.sysid.as_ref()))
        })?;
        if ctx.config.floquet.oracle {
            write_with(&dir.join(format!("oracle_{tag}.csv")), |w| {
                write_floquet_csv(w, &rows(&br.points, |p| p.oracle.as_ref()))
            })?;
        }
        write_json(&dir.join(format!("floquet_{tag}.json")), br)?;

        if br.repeat == 0 {
            let (_, run) = runs
                .iter()
                .find(|(idx, _)| *idx == br.sweep_index)
                .expect("branch comes from a loaded sweep");
            let mut annotated = run.clone();
            annotated.stable = vec![None; run.points.len()];
            for (idx, flag) in br.flags() {
                annotated.stable[idx] = flag;
            }
            write_with(&dir.join(format!("branch_{tag}.csv")), |w| annotated.write_csv(w))?;
        }
        for p in &br.points {
            if let Some(e) = &p.error {
                failures.push(format!(
                    "{:.4} Hz, repeat {}, point {}: {e}",
                    br.omega / TAU,
                    br.repeat,
                    p.index
                ));
            }
        }
    }
    if failures.is_empty() {
        Ok(branches)
    } else {
        Err(CliError::Failed(failures.join("\n")))
    }
}
