//! `perturbation-study`: multiplier spread against perturbation size for a
//! stable orbit (open and closed loop) and an unstable orbit (closed loop).

use std::f64::consts::TAU;
use std::io::Write;

use cbclab::cbc::{continuation_sweep, ContinuationPoint};
use cbclab::rig::{NoiseConfig, VirtualRig};
use cbclab::seed::derive_seed;
use cbclab::sysid::{estimate_floquet, SysIdConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::stream;
use crate::{write_json, write_with, CliError, CliResult, RunContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    StableOpenLoop,
    StableClosedLoop,
    UnstableClosedLoop,
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::StableOpenLoop,
        Condition::StableClosedLoop,
        Condition::UnstableClosedLoop,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Condition::StableOpenLoop => "stable_open_loop",
            Condition::StableClosedLoop => "stable_closed_loop",
            Condition::UnstableClosedLoop => "unstable_closed_loop",
        }
    }

    fn closed_loop(self) -> bool {
        self != Condition::StableOpenLoop
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub condition: Condition,
    pub perturbation: f64,
    /// Mean leading modulus over the repeats and its 95% half-width.
    pub mean_mu_abs: f64,
    pub ci: f64,
    pub moduli: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub omega: f64,
    pub stable_amplitude: f64,
    pub unstable_amplitude: f64,
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn condition(&self, c: Condition) -> impl Iterator<Item = &StudyRow> {
        self.rows.iter().filter(move |r| r.condition == c)
    }
}

/// Continues the branch up to the unstable target and returns the points
/// nearest both targets.
fn orbits(ctx: &RunContext) -> CliResult<(ContinuationPoint, ContinuationPoint)> {
    let cfg = &ctx.config;
    let p = &cfg.perturbation;
    let omega = TAU * p.frequency_hz;
    let grid = cfg.sweep.grid_up_to(p.unstable_target.max(p.stable_target));
    let mut rig = VirtualRig::new(cfg.rig.clone(), cfg.controller, NoiseConfig::silent())?;
    let run = continuation_sweep(&mut rig, omega, &grid, &cfg.sweep.cbc).map_err(|a| a.error)?;
    let nearest = |target: f64| {
        let k = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        run.points[k].clone()
    };
    Ok((nearest(p.stable_target), nearest(p.unstable_target)))
}

pub fn analyse(ctx: &RunContext) -> CliResult<StudyReport> {
    let cfg = &ctx.config;
    let p = &cfg.perturbation;
    let (stable, unstable) = orbits(ctx)?;
    let template = VirtualRig::new(cfg.rig.clone(), cfg.controller, NoiseConfig::silent())?;

    let tasks: Vec<(usize, usize)> = (0..Condition::ALL.len())
        .flat_map(|c| (0..p.amplitudes.len()).map(move |a| (c, a)))
        .collect();
    let rows = ctx.install(|| {
        tasks
            .par_iter()
            .map(|&(c, a)| {
                let condition = Condition::ALL[c];
                let orbit = if condition == Condition::UnstableClosedLoop { &unstable } else { &stable };
                let sysid = SysIdConfig {
                    m_samples: p.m_samples,
                    n_order: Some(p.n_order),
                    perturbation: p.amplitudes[a],
                    disturbance: p.disturbance,
                    periods: p.periods,
                    repeats: p.repeats,
                    closed_loop: condition.closed_loop(),
                    ..cfg.sysid.clone()
                };
                let seed = derive_seed(cfg.seed, &[stream::PERTURBATION, c as u64, a as u64]);
                let mut row = StudyRow {
                    condition,
                    perturbation: p.amplitudes[a],
                    mean_mu_abs: f64::NAN,
                    ci: f64::NAN,
                    moduli: Vec::new(),
                    error: None,
                };
                match estimate_floquet(&template, orbit, &sysid, seed) {
                    Ok(est) => {
                        row.mean_mu_abs = est.result.mean_moduli.as_ref().map_or(f64::NAN, |m| m[0]);
                        row.ci = est.result.ci.as_ref().map_or(f64::NAN, |c| c[0]);
                        row.moduli = est.repeats.iter().map(|r| r.moduli()[0]).collect();
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                row
            })
            .collect()
    });
    Ok(StudyReport {
        omega: stable.omega,
        stable_amplitude: stable.response_amplitude,
        unstable_amplitude: unstable.response_amplitude,
        rows,
    })
}

pub fn run(ctx: &RunContext) -> CliResult<StudyReport> {
    let dir = ctx.prepare("perturbation")?;
    let report = analyse(ctx)?;
    write_with(&dir.join("perturbation.csv"), |w| {
        writeln!(w, "condition,perturbation,mean_mu_abs,ci")?;
        for r in &report.rows {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e}",
                r.condition.label(),
                r.perturbation,
                r.mean_mu_abs,
                r.ci
            )?;
        }
        Ok(())
    })?;
    write_json(&dir.join("perturbation.json"), &report)?;

    let failures: Vec<String> = report
        .rows
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| format!("{} at perturbation {}: {e}", r.condition.label(), r.perturbation))
        })
        .collect();
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Failed(failures.join("\n")))
    }
}
