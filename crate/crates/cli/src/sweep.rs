//! `sweep`: amplitude continuations at each configured frequency.

use std::f64::consts::TAU;
use std::io::Write;

use cbclab::cbc::{continuation_sweep, ContinuationRun};
use cbclab::rig::VirtualRig;
use cbclab::seed::derive_seed;
use rayon::prelude::*;

use crate::config::stream;
use crate::{write_with, CliError, CliResult, RunContext};

pub fn csv_name(idx: usize) -> String {
    format!("sweep_{idx:03}.csv")
}

pub fn json_name(idx: usize) -> String {
    format!("sweep_{idx:03}.json")
}

pub const COMBINED: &str = "sweep_combined.csv";

#[derive(Debug)]
pub struct SweepReport {
    pub runs: Vec<ContinuationRun>,
    /// `(sweep index, frequency in Hz, message)` for every aborted sweep.
    pub failures: Vec<(usize, f64, String)>,
}

/// Runs one sweep; on failure the partial branch is returned with the error.
pub fn run_one(ctx: &RunContext, idx: usize, omega: f64) -> (ContinuationRun, Option<String>) {
    let cfg = &ctx.config;
    let noise = cfg
        .sweep
        .noise
        .with_seed(derive_seed(cfg.seed, &[stream::SWEEP, idx as u64]));
    let grid = cfg.sweep.amplitude_grid();
    let rig = VirtualRig::new(cfg.rig.clone(), cfg.controller, noise);
    let mut rig = match rig {
        Ok(r) => r,
        Err(e) => {
            let empty = ContinuationRun {
                omega,
                amplitude_grid: grid,
                config: cfg.sweep.cbc,
                seed: noise.seed,
                points: Vec::new(),
                stable: Vec::new(),
            };
            return (empty, Some(e.to_string()));
        }
    };
    match continuation_sweep(&mut rig, omega, &grid, &cfg.sweep.cbc) {
        Ok(mut run) => {
            run.seed = noise.seed;
            (run, None)
        }
        Err(abort) => {
            let mut run = abort.partial;
            run.seed = noise.seed;
            (run, Some(abort.error.to_string()))
        }
    }
}

pub fn run(ctx: &RunContext) -> CliResult<SweepReport> {
    let dir = ctx.prepare("sweep")?;
    let omegas = ctx.config.sweep.omegas();
    let results: Vec<(ContinuationRun, Option<String>)> = ctx.install(|| {
        omegas
            .par_iter()
            .enumerate()
            .map(|(idx, &w)| run_one(ctx, idx, w))
            .collect()
    });

    let mut failures = Vec::new();
    for (idx, (run, err)) in results.iter().enumerate() {
        write_with(&dir.join(csv_name(idx)), |w| run.write_csv(w))?;
        write_with(&dir.join(json_name(idx)), |w| {
            run.write_json(&mut *w)?;
            writeln!(w)?;
            Ok(())
        })?;
        if let Some(e) = err {
            failures.push((idx, run.omega / TAU, e.clone()));
        }
    }
    write_with(&dir.join(COMBINED), |w| {
        writeln!(w, "sweep_index,omega,gamma,response_amplitude,residual,stability_flag")?;
        for (idx, (run, _)) in results.iter().enumerate() {
            let mut buf = Vec::new();
            run.write_csv(&mut buf)?;
            let text = String::from_utf8_lossy(&buf);
            for line in text.lines().skip(1) {
                writeln!(w, "{idx},{line}")?;
            }
        }
        Ok(())
    })?;

    let runs = results.into_iter().map(|(r, _)| r).collect();
    Ok(SweepReport { runs, failures })
}

/// Turns recorded failures into the command's error.
pub fn check(report: &SweepReport) -> CliResult<()> {
    if report.failures.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = report
        .failures
        .iter()
        .map(|(idx, hz, e)| format!("sweep {idx} at {hz:.4} Hz: {e}"))
        .collect();
    Err(CliError::Failed(lines.join("\n")))
}
