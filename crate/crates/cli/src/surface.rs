//! `surface`: GP fit of the swept sheet, its fold curve and fixed-forcing slices.

use std::f64::consts::TAU;

use cbclab::cbc::ContinuationRun;
use cbclab::seed::derive_seed;
use cbclab::surface::{
    gp_fit, gp_fold_curve, gp_frequency_response, points_from_runs, write_fold_csv, write_slice_csv, Branch,
    FoldPoint, GpSurface, Hyperparameters, ResponseSurface, SurfacePoint,
};
use serde::Serialize;

use crate::config::stream;
use crate::{load_sweeps, write_json, write_with, CliError, CliResult, RunContext};

#[derive(Debug, Clone, Serialize)]
pub struct SliceSummary {
    pub gamma: f64,
    pub file: String,
    pub branches: usize,
    pub points: usize,
    /// `(ω, A)` of every fold point on the slice.
    pub fold_points: Vec<[f64; 2]>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SurfaceSummary {
    pub training_points: usize,
    pub holdout_points: usize,
    pub hyperparameters: Hyperparameters,
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
    pub gamma_range: [f64; 2],
    pub holdout_rms: Option<f64>,
    /// Held-out RMS as a fraction of the Γ range of all data.
    pub holdout_rms_fraction: Option<f64>,
    pub fold_points: usize,
    pub fold_branches: usize,
    pub fold_max_residual: Option<f64>,
    pub fold_error: Option<String>,
    pub slices: Vec<SliceSummary>,
}

pub struct SurfaceReport {
    pub summary: SurfaceSummary,
    pub gp: GpSurface,
    pub fold: Vec<FoldPoint>,
    pub slices: Vec<Vec<Branch>>,
}

/// Splits off every `stride`-th point (offset `stride / 2`) for validation.
pub fn holdout_split(points: &[SurfacePoint], stride: usize) -> (Vec<SurfacePoint>, Vec<SurfacePoint>) {
    if stride < 2 {
        return (points.to_vec(), Vec::new());
    }
    let (test, train): (Vec<_>, Vec<_>) = points.iter().enumerate().partition(|(i, _)| i % stride == stride / 2);
    (
        train.into_iter().map(|(_, p)| *p).collect(),
        test.into_iter().map(|(_, p)| *p).collect(),
    )
}

pub fn analyse(ctx: &RunContext, runs: &[ContinuationRun]) -> CliResult<SurfaceReport> {
    let cfg = &ctx.config;
    let s = &cfg.surface;
    let all = points_from_runs(runs);
    let (train, test) = holdout_split(&all, s.holdout_stride);
    let mut fit = s.fit.clone();
    fit.seed = derive_seed(cfg.seed, &[stream::SURFACE, fit.seed]);
    let gp = gp_fit(&train, None, &fit)?;

    let lo = all.iter().map(|p| p.gamma).fold(f64::INFINITY, f64::min);
    let hi = all.iter().map(|p| p.gamma).fold(f64::NEG_INFINITY, f64::max);
    let holdout_rms = (!test.is_empty()).then(|| {
        let sq: f64 = test.iter().map(|p| (gp.predict(p.omega, p.amplitude).0 - p.gamma).powi(2)).sum();
        (sq / test.len() as f64).sqrt()
    });

    let (fold, fold_error) = match gp_fold_curve(&gp, None, &s.fold) {
        Ok(f) => (f, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let fold_max_residual = (!fold.is_empty()).then(|| {
        fold.iter()
            .map(|q| gp.jet(q.omega, q.amplitude).d_amplitude.abs())
            .fold(0.0, f64::max)
    });

    let gammas = s.slice_gammas.clone().unwrap_or_else(|| {
        let (glo, ghi) = gp.gamma_range();
        (0..s.slice_count)
            .map(|k| glo + (k + 1) as f64 / (s.slice_count + 1) as f64 * (ghi - glo))
            .collect()
    });
    let (wlo, whi) = gp.support().omega_range();
    let step = TAU * s.slice_step_hz;
    let n = ((whi - wlo) / step).ceil().max(1.0) as usize;
    let grid: Vec<f64> = (0..=n).map(|k| (wlo + k as f64 * step).min(whi)).collect();
    let mut slices = Vec::new();
    let mut summaries = Vec::new();
    for &gamma in &gammas {
        let mut summary = SliceSummary {
            gamma,
            file: slice_name(gamma),
            branches: 0,
            points: 0,
            fold_points: Vec::new(),
            error: None,
        };
        match gp_frequency_response(&gp, gamma, &grid, &s.slice) {
            Ok(b) => {
                summary.branches = b.len();
                summary.points = b.iter().map(|br| br.points.len()).sum();
                summary.fold_points = b
                    .iter()
                    .flat_map(|br| br.fold_points())
                    .map(|p| [p.omega, p.amplitude])
                    .collect();
                slices.push(b);
            }
            Err(e) => {
                summary.error = Some(e.to_string());
                slices.push(Vec::new());
            }
        }
        summaries.push(summary);
    }

    let summary = SurfaceSummary {
        training_points: train.len(),
        holdout_points: test.len(),
        hyperparameters: gp.hyperparameters(),
        jitter: gp.jitter(),
        log_marginal_likelihood: gp.log_marginal_likelihood(),
        gamma_range: [lo, hi],
        holdout_rms,
        holdout_rms_fraction: holdout_rms.map(|r| r / (hi - lo)),
        fold_points: fold.len(),
        fold_branches: fold.iter().map(|p| p.branch + 1).max().unwrap_or(0),
        fold_max_residual,
        fold_error,
        slices: summaries,
    };
    Ok(SurfaceReport {
        summary,
        gp,
        fold,
        slices,
    })
}

pub fn slice_name(gamma: f64) -> String {
    format!("slice_{gamma:.6}.csv")
}

pub fn run(ctx: &RunContext) -> CliResult<SurfaceReport> {
    let runs: Vec<ContinuationRun> = load_sweeps(ctx)?.into_iter().map(|(_, r)| r).collect();
    let dir = ctx.prepare("surface")?;
    let report = analyse(ctx, &runs)?;
    write_with(&dir.join("fold_curve.csv"), |w| write_fold_csv(w, &report.fold))?;
    for (s, branches) in report.summary.slices.iter().zip(&report.slices) {
        write_with(&dir.join(&s.file), |w| write_slice_csv(w, branches))?;
    }
    write_json(&dir.join("surface.json"), &report.summary)?;

    let mut failures = Vec::new();
    if let Some(e) = &report.summary.fold_error {
        failures.push(format!("fold curve: {e}"));
    }
    for s in &report.summary.slices {
        if let Some(e) = &s.error {
            failures.push(format!("slice at gamma {:.6}: {e}", s.gamma));
        }
    }
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Failed(failures.join("\n")))
    }
}
