//! `escape`: open-loop departures from an unstable orbit, their phase-0
//! Poincaré dots and the identified unstable eigendirection.

use std::f64::consts::TAU;
use std::io::Write;

use cbclab::cbc::{ContinuationPoint, ContinuationRun};
use cbclab::rig::{Channel, NoiseConfig, SampledRecord, VirtualRig};
use cbclab::seed::derive_seed;
use cbclab::signals::response_amplitude;
use cbclab::sysid::estimate_floquet;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::stream;
use crate::{load_sweeps, nearest_sweep, write_json, write_with, CliError, CliResult, RunContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Attractor {
    High,
    Low,
}

/// Delay-coordinate dot `(x(t), x(t − τ))` relative to the orbit's own dot.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Dot {
    pub period: usize,
    pub dx: f64,
    pub dy: f64,
    pub controlled: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeRun {
    pub run: usize,
    pub seed: u64,
    pub outcome: Option<Attractor>,
    /// Periods after the release until the settling test passed.
    pub settle_period: Option<usize>,
    pub final_amplitude: f64,
    pub error: Option<String>,
    pub dots: Vec<Dot>,
    #[serde(skip)]
    pub series: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeSummary {
    pub omega: f64,
    pub sweep_index: usize,
    pub point_index: usize,
    pub orbit_amplitude: f64,
    pub orbit_dot: [f64; 2],
    pub leading_multiplier: [f64; 2],
    pub multiplier_ci: Option<f64>,
    /// Unit eigendirection in `(x(t), x(t − τ))`.
    pub direction: [f64; 2],
    pub delay_seconds: f64,
    pub high: usize,
    pub low: usize,
    pub failed: usize,
    /// RMS distance of the controlled dots from the orbit dot.
    pub controlled_radius: f64,
    /// Distance window of the dots used for the alignment metric.
    pub window: [f64; 2],
    pub dots_in_window: usize,
    /// RMS perpendicular distance over RMS distance within the window.
    pub perpendicular_ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EscapeReport {
    pub summary: EscapeSummary,
    pub runs: Vec<EscapeRun>,
}

/// Orbit used for the escapes: the configured point, or the middle of the
/// segment between the geometric folds.
pub fn choose_orbit(run: &ContinuationRun, point_index: Option<usize>) -> CliResult<usize> {
    if let Some(i) = point_index {
        if i >= run.points.len() {
            return Err(CliError::Config(format!(
                "escape.point_index {i} is past the end of a {}-point branch",
                run.points.len()
            )));
        }
        return Ok(i);
    }
    let folds = run.geometric_folds();
    if folds.len() < 2 {
        return Err(CliError::Failed(format!(
            "branch at {:.4} Hz has {} geometric fold(s); no unstable segment to escape from",
            run.omega / TAU,
            folds.len()
        )));
    }
    Ok((folds[0] + folds[1]) / 2)
}

struct Setup<'a> {
    orbit: &'a ContinuationPoint,
    rig: VirtualRig,
    reference: Vec<f64>,
    shift: usize,
    n_harmonics: usize,
}

impl Setup<'_> {
    fn dot(&self, now: f64, previous: &[f64]) -> (f64, f64) {
        let spp = self.reference.len();
        (
            now - self.reference[0],
            previous[spp - self.shift] - self.reference[spp - self.shift],
        )
    }
}

fn period_amplitude(rec: &SampledRecord, n_harmonics: usize) -> cbclab::Result<f64> {
    Ok(response_amplitude(&rec.fourier(Channel::Position, n_harmonics, 1)?))
}

fn escape_once(ctx: &RunContext, setup: &Setup, run: usize) -> EscapeRun {
    let seed = derive_seed(ctx.config.seed, &[stream::ESCAPE, 1, run as u64]);
    let mut out = EscapeRun {
        run,
        seed,
        outcome: None,
        settle_period: None,
        final_amplitude: f64::NAN,
        error: None,
        dots: Vec::new(),
        series: Vec::new(),
    };
    if let Err(err) = escape_inner(ctx, setup, &mut out) {
        out.error = Some(err.to_string());
    }
    out
}

fn escape_inner(ctx: &RunContext, setup: &Setup, out: &mut EscapeRun) -> cbclab::Result<()> {
    let e = &ctx.config.escape;
    let orbit = setup.orbit;
    let target = &orbit.target;
    let mut rig = setup.rig.clone();
    rig.set_noise(
        NoiseConfig {
            amplitude: e.noise_amplitude,
            cutoff_frequency: e.sysid.cutoff_frequency,
            filter_order: e.sysid.filter_order,
            ..NoiseConfig::silent()
        }
        .with_seed(out.seed),
    );
    rig.set_controller_enabled(true);

    let mut previous = rig.run_segment(target, &orbit.forcing, 1)?.x;
    for period in 0..e.settle_periods {
        let rec = rig.run_segment(target, &orbit.forcing, 1)?;
        let (dx, dy) = setup.dot(rec.x[0], &previous);
        out.dots.push(Dot {
            period,
            dx,
            dy,
            controlled: true,
        });
        previous = rec.x;
    }

    rig.set_controller_enabled(false);
    let free = orbit.open_loop_forcing();
    let a_orbit = orbit.response_amplitude;
    let mut last = f64::NAN;
    let mut calm = 0;
    for period in 0..e.max_periods {
        let rec = rig.run_segment(target, &free, 1)?;
        let (dx, dy) = setup.dot(rec.x[0], &previous);
        out.dots.push(Dot {
            period,
            dx,
            dy,
            controlled: false,
        });
        if period < e.record_periods {
            out.series.extend((0..rec.len()).map(|k| [rec.t[k], rec.x[k], rec.i[k]]));
        }
        let a = period_amplitude(&rec, setup.n_harmonics)?;
        let away = (a - a_orbit).abs() > e.neighbourhood * a_orbit;
        calm = if away && ((a - last).abs() <= e.settle_tol * a) { calm + 1 } else { 0 };
        last = a;
        previous = rec.x;
        if calm >= e.settle_count {
            out.settle_period = Some(period + 1);
            out.final_amplitude = a;
            out.outcome = Some(if a > a_orbit { Attractor::High } else { Attractor::Low });
            return Ok(());
        }
    }
    out.final_amplitude = last;
    Err(cbclab::Error::EscapeTimeout { periods: e.max_periods })
}

/// Runs the escapes and computes the summary without writing anything.
pub fn analyse(ctx: &RunContext, runs: &[(usize, ContinuationRun)]) -> CliResult<EscapeReport> {
    let cfg = &ctx.config;
    let e = &cfg.escape;
    let (sweep_index, branch) = nearest_sweep(runs, e.frequency_hz).expect("load_sweeps returns at least one run");
    let point_index = choose_orbit(branch, e.point_index)?;
    let orbit = &branch.points[point_index];

    let params = cfg.rig.with_phase_grid(e.sysid.m_samples);
    let template = VirtualRig::new(params.clone(), cfg.controller, NoiseConfig::silent())?;
    let est = estimate_floquet(&template, orbit, &e.sysid, derive_seed(cfg.seed, &[stream::ESCAPE, 0]))?;
    let lead = est.result.leading();
    let raw = est.result.leading_direction();
    let norm = raw[0].hypot(raw[e.delay_samples]);
    let mut direction = [raw[0] / norm, raw[e.delay_samples] / norm];
    if direction[0] < 0.0 {
        direction = [-direction[0], -direction[1]];
    }

    let mut rig = template.clone();
    rig.set_position(orbit.phase0_state[0], orbit.phase0_state[1]);
    rig.advance(&orbit.target, &orbit.forcing, e.sysid.settle_periods)?;
    let reference = rig.run_segment(&orbit.target, &orbit.forcing, 1)?;
    let spp = reference.steps_per_period;
    let shift = e.delay_samples * spp / e.sysid.m_samples;
    let setup = Setup {
        orbit,
        rig,
        reference: reference.x.clone(),
        shift,
        n_harmonics: cfg.sweep.cbc.n_harmonics,
    };

    let results: Vec<EscapeRun> = ctx.install(|| (0..e.runs).into_par_iter().map(|r| escape_once(ctx, &setup, r)).collect());

    let controlled: Vec<f64> = results
        .iter()
        .flat_map(|r| r.dots.iter().filter(|d| d.controlled).map(|d| d.dx.hypot(d.dy)))
        .collect();
    let controlled_radius = rms(&controlled);
    let window = [
        e.noise_floor_factor * controlled_radius,
        e.neighbourhood * orbit.response_amplitude,
    ];
    let (mut dist, mut perp) = (Vec::new(), Vec::new());
    for d in results.iter().flat_map(|r| r.dots.iter()).filter(|d| !d.controlled) {
        let r = d.dx.hypot(d.dy);
        if r >= window[0] && r <= window[1] {
            dist.push(r);
            perp.push(d.dx * direction[1] - d.dy * direction[0]);
        }
    }
    let perpendicular_ratio = (!dist.is_empty()).then(|| rms(&perp) / rms(&dist));

    let count = |a: Attractor| results.iter().filter(|r| r.outcome == Some(a)).count();
    let summary = EscapeSummary {
        omega: orbit.omega,
        sweep_index: *sweep_index,
        point_index,
        orbit_amplitude: orbit.response_amplitude,
        orbit_dot: [reference.x[0], reference.x[spp - shift]],
        leading_multiplier: [lead.re, lead.im],
        multiplier_ci: est.result.ci.as_ref().and_then(|c| c.first().copied()),
        direction,
        delay_seconds: shift as f64 * reference.dt,
        high: count(Attractor::High),
        low: count(Attractor::Low),
        failed: results.iter().filter(|r| r.error.is_some()).count(),
        controlled_radius,
        window,
        dots_in_window: dist.len(),
        perpendicular_ratio,
    };
    Ok(EscapeReport { summary, runs: results })
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn run(ctx: &RunContext) -> CliResult<EscapeReport> {
    let runs = load_sweeps(ctx)?;
    let dir = ctx.prepare("escape")?;
    let report = analyse(ctx, &runs)?;
    let s = &report.summary;

    for r in &report.runs {
        write_with(&dir.join(format!("escape_{:03}.csv", r.run)), |w| {
            writeln!(w, "t,x,i")?;
            for [t, x, i] in &r.series {
                writeln!(w, "{t:.16e},{x:.16e},{i:.16e}")?;
            }
            Ok(())
        })?;
    }
    write_with(&dir.join("poincare.csv"), |w| {
        writeln!(w, "run,period,controlled,x,x_delayed")?;
        for r in &report.runs {
            for d in &r.dots {
                writeln!(
                    w,
                    "{},{},{},{:.16e},{:.16e}",
                    r.run,
                    d.period,
                    d.controlled,
                    s.orbit_dot[0] + d.dx,
                    s.orbit_dot[1] + d.dy
                )?;
            }
        }
        Ok(())
    })?;
    write_with(&dir.join("eigendirection.csv"), |w| {
        writeln!(w, "x,x_delayed,direction_x,direction_x_delayed,multiplier_re,multiplier_im")?;
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            s.orbit_dot[0],
            s.orbit_dot[1],
            s.direction[0],
            s.direction[1],
            s.leading_multiplier[0],
            s.leading_multiplier[1]
        )?;
        Ok(())
    })?;
    write_json(&dir.join("summary.json"), &report.summary)?;
    write_json(&dir.join("runs.json"), &report.runs)?;

    let failures: Vec<String> = report
        .runs
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("escape run {}: {e}", r.run)))
        .collect();
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Failed(failures.join("\n")))
    }
}
