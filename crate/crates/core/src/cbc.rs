//! Control-based continuation of periodic orbits.
//!
//! The continuation parameter is the fundamental of the control target. For
//! each value the remaining target coefficients are found by fixed-point
//! iteration (set them to the measured response until the control action has
//! no content outside the fundamental), and the fundamental of the control
//! action is absorbed into an effective forcing amplitude Γ.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rig::{Channel, ControllerConfig, Forcing, NoiseConfig, RigParams, SampledRecord, VirtualRig};
use crate::signals::{effective_forcing, response_amplitude, FourierSeries, DEFAULT_AVERAGING_PERIODS, DEFAULT_HARMONICS};

/// Settings for settling, measurement and the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbcConfig {
    pub n_harmonics: usize,
    /// Periods always run before settling is tested.
    pub settle_periods: usize,
    pub max_settle_periods: usize,
    /// Periods averaged for the coefficient estimates.
    pub measure_periods: usize,
    /// Settled when consecutive per-period response coefficients differ by
    /// less than this times the target amplitude, twice in a row.
    pub settle_tol: f64,
    /// Accept when the non-invasiveness residual is below
    /// `residual_tol · |K(iω)| · A`, `A` being the response amplitude.
    pub residual_tol: f64,
    pub max_iter: usize,
    /// Fixed forcing `a cos(ωt) + b sin(ωt)` applied during the sweep.
    pub forcing_a: f64,
    pub forcing_b: f64,
}

impl Default for CbcConfig {
    fn default() -> Self {
        Self {
            n_harmonics: DEFAULT_HARMONICS,
            settle_periods: 8,
            max_settle_periods: 400,
            measure_periods: DEFAULT_AVERAGING_PERIODS,
            settle_tol: 1e-9,
            residual_tol: 1e-6,
            max_iter: 30,
            forcing_a: 0.0,
            forcing_b: 0.0,
        }
    }
}

impl CbcConfig {
    /// Looser settings for runs with the perturbation switched on.
    pub fn noisy() -> Self {
        Self {
            settle_tol: 1e-2,
            residual_tol: 1e-2,
            ..Self::default()
        }
    }
}

/// Control target `x*(t)`; the fundamental pair is the continuation variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTarget {
    pub series: FourierSeries,
}

impl ControlTarget {
    /// Target `amplitude · cos(ωt)` with all other coefficients zero.
    pub fn new(omega: f64, amplitude: f64, n_harmonics: usize) -> Self {
        Self {
            series: FourierSeries::fundamental(omega, amplitude, 0.0, n_harmonics),
        }
    }

    pub fn fundamental(&self) -> [f64; 2] {
        self.series.harmonic(1)
    }

    pub fn amplitude(&self) -> f64 {
        response_amplitude(&self.series)
    }

    /// Copies the mean and harmonics `j ≥ 2` from `response`, leaving the
    /// fundamental untouched.
    fn adopt_non_fundamental(&mut self, response: &FourierSeries) {
        self.series.a0 = response.a0;
        for j in 2..=self.series.n_harmonics() {
            self.series.set_harmonic(j, response.harmonic(j));
        }
    }
}

/// Norm of the control action outside the fundamental:
/// `‖(A₀/2, A₂, B₂, …, A_n, B_n)‖₂`.
pub fn noninvasiveness_residual(control: &FourierSeries) -> f64 {
    let mut acc = 0.25 * control.a0 * control.a0;
    for [a, b] in control.harmonics.iter().skip(1) {
        acc += a * a + b * b;
    }
    acc.sqrt()
}

/// Coefficients measured on a settled closed loop.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub response: FourierSeries,
    pub control: FourierSeries,
    pub record: SampledRecord,
    pub settle_periods: usize,
}

/// Runs the closed loop until the per-period response coefficients stop
/// changing, then measures `measure_periods` periods.
pub fn settle_and_measure(
    rig: &mut VirtualRig,
    target: &ControlTarget,
    forcing: &Forcing,
    config: &CbcConfig,
) -> Result<Measurement> {
    let nh = config.n_harmonics;
    let scale = target.amplitude().max(1e-9);
    let tol = config.settle_tol * scale;

    rig.advance(&target.series, forcing, config.settle_periods)?;
    let mut ran = config.settle_periods;
    let mut previous: Option<FourierSeries> = None;
    let mut quiet = 0;
    let mut change = f64::INFINITY;
    while quiet < 2 {
        if ran >= config.max_settle_periods {
            return Err(Error::NotSettled { periods: ran, change, tol });
        }
        let rec = rig.run_segment(&target.series, forcing, 1)?;
        ran += 1;
        let coeffs = rec.fourier(Channel::Position, nh, 1)?;
        if let Some(prev) = &previous {
            change = coeffs.distance(prev);
            quiet = if change <= tol { quiet + 1 } else { 0 };
        }
        previous = Some(coeffs);
    }

    let record = rig.run_segment(&target.series, forcing, config.measure_periods.max(1))?;
    if record.periods() >= 2 {
        let per = record.per_period_fourier(Channel::Position, nh)?;
        let change = per[per.len() - 1].distance(&per[per.len() - 2]);
        if change > tol {
            return Err(Error::NotSettled { periods: ran, change, tol });
        }
    }
    Ok(Measurement {
        response: record.fourier(Channel::Position, nh, 0)?,
        control: record.fourier(Channel::Control, nh, 0)?,
        record,
        settle_periods: ran,
    })
}

/// Result of the fixed-point iteration on the non-fundamental coefficients.
#[derive(Debug, Clone)]
pub struct FixedPointOutcome {
    pub target: ControlTarget,
    pub measurement: Measurement,
    pub residual: f64,
    pub tolerance: f64,
    /// Target updates performed.
    pub iterations: usize,
}

fn residual_tolerance(rig: &VirtualRig, omega: f64, response: &FourierSeries, config: &CbcConfig) -> f64 {
    config.residual_tol * rig.controller().gain_at(omega) * response_amplitude(response).max(1e-9)
}

/// Sets the mean and higher harmonics of the target to the measured response
/// until the control action is non-invasive outside the fundamental.
pub fn fixed_point_harmonics(
    rig: &mut VirtualRig,
    target: &ControlTarget,
    forcing: &Forcing,
    config: &CbcConfig,
) -> Result<FixedPointOutcome> {
    let mut target = target.clone();
    let mut iterations = 0;
    loop {
        let measurement = settle_and_measure(rig, &target, forcing, config)?;
        let residual = noninvasiveness_residual(&measurement.control);
        let tolerance = residual_tolerance(rig, forcing.omega, &measurement.response, config);
        if residual <= tolerance {
            return Ok(FixedPointOutcome {
                target,
                measurement,
                residual,
                tolerance,
                iterations,
            });
        }
        if iterations >= config.max_iter {
            return Err(Error::FixedPointDiverged {
                iterations,
                residual,
                tol: tolerance,
            });
        }
        target.adopt_non_fundamental(&measurement.response);
        iterations += 1;
    }
}

/// A converged, non-invasively controlled periodic orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationPoint {
    pub omega: f64,
    /// Forcing applied during the measurement.
    pub forcing: Forcing,
    pub gamma: f64,
    /// Phase of the lumped input `Γ cos(ωt + φ)`.
    pub phase: f64,
    pub target: FourierSeries,
    pub response: FourierSeries,
    pub control: FourierSeries,
    pub response_amplitude: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub iterations: usize,
    /// `(x, ẋ)` at the start of the last measured period (forcing phase 0).
    pub phase0_state: [f64; 2],
    /// Last measured period of `x(t)`.
    #[serde(skip)]
    pub orbit_x: Vec<f64>,
    /// Last measured period of the total input `i(t)`.
    #[serde(skip)]
    pub orbit_i: Vec<f64>,
}

impl ContinuationPoint {
    fn from_outcome(outcome: FixedPointOutcome, forcing: &Forcing) -> Self {
        let m = &outcome.measurement;
        let [a1u, b1u] = m.control.harmonic(1);
        let eff = effective_forcing(forcing.a, forcing.b, a1u, b1u);
        let n = m.record.steps_per_period;
        let start = m.record.len() - n;
        Self {
            omega: forcing.omega,
            forcing: *forcing,
            gamma: eff.gamma,
            phase: eff.phase,
            target: outcome.target.series,
            response_amplitude: response_amplitude(&m.response),
            response: m.response.clone(),
            control: m.control.clone(),
            residual: outcome.residual,
            tolerance: outcome.tolerance,
            iterations: outcome.iterations,
            phase0_state: [m.record.x[start], m.record.xdot[start]],
            orbit_x: m.record.x[start..].to_vec(),
            orbit_i: m.record.i[start..].to_vec(),
        }
    }

    /// Forcing that reproduces the orbit with the controller switched off.
    pub fn open_loop_forcing(&self) -> Forcing {
        Forcing::new(
            self.gamma * self.phase.cos(),
            -self.gamma * self.phase.sin(),
            self.omega,
        )
    }

    pub fn control_target(&self) -> ControlTarget {
        ControlTarget {
            series: self.target.clone(),
        }
    }

    pub fn target_amplitude(&self) -> f64 {
        response_amplitude(&self.target)
    }

    /// Residual relative to `|K(iω)| · A`.
    pub fn relative_residual(&self, gain: f64) -> f64 {
        self.residual / (gain * self.response_amplitude.max(1e-300))
    }
}

/// One sweep at fixed forcing frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationRun {
    pub omega: f64,
    pub amplitude_grid: Vec<f64>,
    pub config: CbcConfig,
    pub seed: u64,
    pub points: Vec<ContinuationPoint>,
    /// Stability per point when known.
    #[serde(default)]
    pub stable: Vec<Option<bool>>,
}

/// A sweep that stopped early; `partial` holds the points obtained so far.
#[derive(Debug)]
pub struct SweepAbort {
    pub partial: ContinuationRun,
    pub error: Error,
}

impl fmt::Display for SweepAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} points retained)", self.error, self.partial.points.len())
    }
}

impl std::error::Error for SweepAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Sweeps the fundamental target amplitude over `amplitude_grid` at fixed
/// `omega`, warm-starting each point from the previous one.
pub fn continuation_sweep(
    rig: &mut VirtualRig,
    omega: f64,
    amplitude_grid: &[f64],
    config: &CbcConfig,
) -> std::result::Result<ContinuationRun, SweepAbort> {
    let mut run = ContinuationRun {
        omega,
        amplitude_grid: amplitude_grid.to_vec(),
        config: *config,
        seed: rig.noise().seed,
        points: Vec::with_capacity(amplitude_grid.len()),
        stable: Vec::new(),
    };
    let monotone = amplitude_grid.windows(2).all(|w| w[1] >= w[0]) || amplitude_grid.windows(2).all(|w| w[1] <= w[0]);
    if !monotone || !(omega > 0.0) {
        return Err(SweepAbort {
            partial: run,
            error: Error::InvalidParameter("amplitude grid must be monotone and omega positive".into()),
        });
    }
    let forcing = Forcing::new(config.forcing_a, config.forcing_b, omega);
    let mut target = ControlTarget::new(omega, 0.0, config.n_harmonics);
    for (index, &amplitude) in amplitude_grid.iter().enumerate() {
        target.series.set_harmonic(1, [amplitude, 0.0]);
        match fixed_point_harmonics(rig, &target, &forcing, config) {
            Ok(outcome) => {
                target = outcome.target.clone();
                run.points.push(ContinuationPoint::from_outcome(outcome, &forcing));
            }
            Err(e) => {
                return Err(SweepAbort {
                    partial: run,
                    error: Error::SweepFailed {
                        index,
                        source: Box::new(e),
                    },
                })
            }
        }
    }
    Ok(run)
}

/// Runs one period open loop from the orbit's phase-0 state under its lumped
/// forcing and returns `max |x_open − x_closed|` against the recorded period.
pub fn replay_open_loop(params: &RigParams, point: &ContinuationPoint) -> Result<f64> {
    if point.orbit_x.is_empty() {
        return Err(Error::InvalidParameter("point carries no recorded period to replay against".into()));
    }
    let mut rig = VirtualRig::new(params.clone(), ControllerConfig::off(), NoiseConfig::silent())?;
    rig.set_position(point.phase0_state[0], point.phase0_state[1]);
    let rec = rig.run_segment(&point.target, &point.open_loop_forcing(), 1)?;
    if rec.x.len() != point.orbit_x.len() {
        return Err(Error::GridMismatch(format!(
            "replay has {} samples per period, the orbit {}",
            rec.x.len(),
            point.orbit_x.len()
        )));
    }
    Ok(rec
        .x
        .iter()
        .zip(&point.orbit_x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

impl ContinuationRun {
    /// `omega,gamma,response_amplitude,residual,stability_flag`; the flag
    /// column is empty where stability is unknown.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega,gamma,response_amplitude,residual,stability_flag")?;
        for (idx, p) in self.points.iter().enumerate() {
            let flag = match self.stable.get(idx).copied().flatten() {
                Some(true) => "stable",
                Some(false) => "unstable",
                None => "",
            };
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                p.omega, p.gamma, p.response_amplitude, p.residual, flag
            )?;
        }
        Ok(())
    }

    /// Full sidecar with every point's Fourier coefficients.
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    /// Indices `i` where `Γ` has a local extremum along the branch, i.e. the
    /// sign of `Γ_{i+1} − Γ_i` differs from that of `Γ_i − Γ_{i−1}`.
    pub fn geometric_folds(&self) -> Vec<usize> {
        let g: Vec<f64> = self.points.iter().map(|p| p.gamma).collect();
        (1..g.len().saturating_sub(1))
            .filter(|&i| (g[i] - g[i - 1]) * (g[i + 1] - g[i]) < 0.0)
            .collect()
    }

    /// Target amplitude of each geometric fold, refined by the vertex of the
    /// parabola through `Γ` at the extremum and its two neighbours.
    pub fn fold_targets(&self) -> Vec<f64> {
        self.geometric_folds()
            .into_iter()
            .map(|i| {
                let a: Vec<f64> = (i - 1..=i + 1).map(|k| self.points[k].target_amplitude()).collect();
                let g: Vec<f64> = (i - 1..=i + 1).map(|k| self.points[k].gamma).collect();
                let d01 = (g[1] - g[0]) / (a[1] - a[0]);
                let d12 = (g[2] - g[1]) / (a[2] - a[1]);
                let curv = (d12 - d01) / (a[2] - a[0]);
                // Vertex of g0 + d01 (x − a0) + curv (x − a0)(x − a1).
                let vertex = 0.5 * (a[0] + a[1]) - d01 / (2.0 * curv);
                vertex.clamp(a[0], a[2])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn rig(params: RigParams) -> VirtualRig {
        VirtualRig::new(params, ControllerConfig::default(), NoiseConfig::silent()).unwrap()
    }

    #[test]
    fn residual_excludes_fundamental() {
        let mut s = FourierSeries::zeros(1.0, 3);
        assert_eq!(noninvasiveness_residual(&s), 0.0);
        s.set_harmonic(1, [5.0, 0.0]);
        assert_eq!(noninvasiveness_residual(&s), 0.0);
        s.a0 = 2.0;
        s.set_harmonic(3, [0.0, 1.0]);
        assert!((noninvasiveness_residual(&s) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn trivial_equilibrium() {
        let mut r = rig(RigParams::default());
        let w = TAU * 2.8;
        let t = ControlTarget::new(w, 0.0, 7);
        let m = settle_and_measure(&mut r, &t, &Forcing::new(0.0, 0.0, w), &CbcConfig::default()).unwrap();
        assert_eq!(response_amplitude(&m.response), 0.0);
        assert_eq!(noninvasiveness_residual(&m.control), 0.0);
        assert_eq!(m.control.harmonic(1), [0.0, 0.0]);
    }

    #[test]
    fn linear_plant_needs_no_update() {
        let mut r = rig(RigParams::linear());
        let w = TAU * 2.8;
        let out = fixed_point_harmonics(
            &mut r,
            &ControlTarget::new(w, 0.02, 7),
            &Forcing::new(0.0, 0.0, w),
            &CbcConfig::default(),
        )
        .unwrap();
        assert!(out.iterations <= 1);
        assert!(out.target.series.harmonics[1..].iter().flatten().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn duffing_converges_quickly_and_keeps_fundamental() {
        let mut r = rig(RigParams::default());
        let w = TAU * 3.0;
        let start = ControlTarget::new(w, 0.03, 7);
        let cfg = CbcConfig::default();
        let out = fixed_point_harmonics(&mut r, &start, &Forcing::new(0.0, 0.0, w), &cfg).unwrap();
        assert!(out.iterations <= 5, "iterations {}", out.iterations);
        assert!(out.residual <= out.tolerance);
        assert_eq!(out.target.fundamental(), start.fundamental());
    }

    #[test]
    fn mismatched_harmonic_drives_controller() {
        let mut r = rig(RigParams::linear());
        let w = TAU * 2.8;
        let mut t = ControlTarget::new(w, 0.02, 7);
        t.series.set_harmonic(3, [1e-3, 0.0]);
        let m = settle_and_measure(&mut r, &t, &Forcing::new(0.0, 0.0, w), &CbcConfig::default()).unwrap();
        let [a3, b3] = m.control.harmonic(3);
        assert!(a3.hypot(b3) > 0.05);
    }

    #[test]
    fn zero_iterations_is_a_divergence() {
        let mut r = rig(RigParams::default());
        let w = TAU * 3.0;
        let cfg = CbcConfig {
            max_iter: 0,
            ..CbcConfig::default()
        };
        let err = fixed_point_harmonics(&mut r, &ControlTarget::new(w, 0.04, 7), &Forcing::new(0.0, 0.0, w), &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::FixedPointDiverged { .. }));
    }

    #[test]
    fn fold_targets_hit_parabola_vertices() {
        let w = TAU * 3.0;
        let point = |a: f64| {
            let series = FourierSeries::fundamental(w, a, 0.0, 1);
            ContinuationPoint {
                omega: w,
                forcing: Forcing::new(0.0, 0.0, w),
                gamma: 1.0 - (a - 0.35).powi(2),
                phase: 0.0,
                target: series.clone(),
                response: series.clone(),
                control: FourierSeries::zeros(w, 1),
                response_amplitude: a,
                residual: 0.0,
                tolerance: 0.0,
                iterations: 0,
                phase0_state: [0.0; 2],
                orbit_x: Vec::new(),
                orbit_i: Vec::new(),
            }
        };
        let grid: Vec<f64> = (1..=6).map(|k| 0.1 * k as f64).collect();
        let run = ContinuationRun {
            omega: w,
            amplitude_grid: grid.clone(),
            config: CbcConfig::default(),
            seed: 0,
            points: grid.iter().map(|&a| point(a)).collect(),
            stable: Vec::new(),
        };
        assert_eq!(run.geometric_folds(), vec![2]);
        let f = run.fold_targets();
        assert!((f[0] - 0.35).abs() < 1e-12, "{f:?}");
    }
}
