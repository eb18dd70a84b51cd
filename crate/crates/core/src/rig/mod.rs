//! Fixed-step simulation of a periodically forced nonlinear oscillator under
//! PD feedback, with filtered Gaussian perturbations.
//!
//! The integration grid is locked to the forcing period: each period holds a
//! whole number of steps (a multiple of [`RigParams::phase_quantum`]) and the
//! step is the period divided by that count, as close to the nominal sample
//! rate as the rounding allows. Records therefore always contain whole
//! periods and every sample sits on an exact forcing phase.
//!
//! All arithmetic is sequential IEEE-754 double precision with no fused or
//! reordered operations, so a given seed and configuration reproduce the same
//! bits on every platform with a conforming `libm`.

mod noise;
mod plant;
mod record;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

pub use noise::{BoxMuller, Butterworth, NoiseSource};
pub use plant::{Plant, SpringGeometry};
pub use record::{Channel, SampledRecord};

use crate::error::{Error, Result};
use crate::signals::FourierSeries;

/// Physical parameters of the simulated oscillator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigParams {
    /// rad/s
    pub natural_frequency: f64,
    pub damping_ratio: f64,
    /// Duffing coefficient α, 1/(m²·s²). Ignored when `spring_geometry` is set.
    pub cubic_stiffness: f64,
    pub spring_geometry: Option<SpringGeometry>,
    /// m
    pub displacement_limit: f64,
    /// Hz
    pub sample_rate: f64,
    /// Steps per forcing period are rounded to a multiple of this.
    pub phase_quantum: usize,
}

impl Default for RigParams {
    fn default() -> Self {
        Self {
            natural_frequency: TAU * 2.55,
            damping_ratio: 0.03,
            cubic_stiffness: 5.0e4,
            spring_geometry: None,
            displacement_limit: 0.08,
            sample_rate: 1000.0,
            phase_quantum: 40,
        }
    }
}

impl RigParams {
    /// Linear plant with the default natural frequency and damping.
    pub fn linear() -> Self {
        Self {
            cubic_stiffness: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.natural_frequency > 0.0
            && self.damping_ratio >= 0.0
            && self.sample_rate > 0.0
            && self.displacement_limit > 0.0
            && self.phase_quantum >= 1
            && self.cubic_stiffness.is_finite();
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid rig parameters: {self:?}")));
        }
        if let Some(g) = &self.spring_geometry {
            if !(g.mass > 0.0 && g.spring_constant >= 0.0 && g.mount_length > 0.0 && g.rest_length >= 0.0) {
                return Err(Error::InvalidParameter(format!("invalid spring geometry: {g:?}")));
            }
        }
        Ok(())
    }

    pub fn plant(&self) -> Plant {
        Plant {
            natural_frequency: self.natural_frequency,
            damping_ratio: self.damping_ratio,
            cubic_stiffness: self.cubic_stiffness,
            springs: self.spring_geometry,
        }
    }

    /// Integration steps in one period of forcing at `omega`.
    pub fn steps_per_period(&self, omega: f64) -> usize {
        let q = self.phase_quantum.max(1);
        let nominal = self.sample_rate * TAU / omega;
        ((nominal / q as f64).round() as usize).max(1) * q
    }

    /// Copy whose period grid is also divisible by `m`.
    pub fn with_phase_grid(&self, m: usize) -> Self {
        let q = self.phase_quantum.max(1);
        let lcm = q / gcd(q, m.max(1)) * m.max(1);
        Self {
            phase_quantum: lcm,
            ..self.clone()
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// PD feedback `u = K_p (x* − x) + K_d (ẋ* − ẋ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub kp: f64,
    pub kd: f64,
    pub enabled: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kp: 0.0,
            kd: 4.0,
            enabled: true,
        }
    }
}

impl ControllerConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// `|K(iω)|` of the PD law at the fundamental.
    pub fn gain_at(&self, omega: f64) -> f64 {
        self.kp.hypot(self.kd * omega)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kp.is_finite() && self.kd.is_finite()) {
            return Err(Error::InvalidParameter("controller gains must be finite".into()));
        }
        Ok(())
    }
}

/// Perturbation and disturbance settings.
///
/// `amplitude` scales the injected perturbation η, which is part of the
/// recorded input. `disturbance_amplitude` scales an independent, unrecorded
/// input disturbance (same filter) standing in for the ambient disturbances of
/// a physical rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub amplitude: f64,
    /// Hz
    pub cutoff_frequency: f64,
    pub filter_order: usize,
    pub seed: u64,
    pub disturbance_amplitude: f64,
    /// Hz; the disturbance uses the perturbation cutoff when unset.
    pub disturbance_cutoff: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.0,
            cutoff_frequency: 10.0,
            filter_order: 6,
            seed: 0,
            disturbance_amplitude: 0.0,
            disturbance_cutoff: None,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self::default()
    }

    pub fn with_amplitude(self, amplitude: f64) -> Self {
        Self { amplitude, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// The cutoff must stay below the Nyquist frequency of an `m`-point
    /// per-period grid at forcing frequency `omega`.
    pub fn check_grid(&self, omega: f64, m: usize) -> Result<()> {
        let nyquist = m as f64 * omega / (2.0 * TAU);
        if self.cutoff_frequency >= nyquist {
            return Err(Error::InvalidParameter(format!(
                "noise cutoff {} Hz is not below the {m}-point grid Nyquist frequency {nyquist:.3} Hz",
                self.cutoff_frequency
            )));
        }
        Ok(())
    }
}

/// Sinusoidal forcing `p(t) = a cos(ωt) + b sin(ωt)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Forcing {
    pub a: f64,
    pub b: f64,
    pub omega: f64,
}

impl Forcing {
    pub fn new(a: f64, b: f64, omega: f64) -> Self {
        Self { a, b, omega }
    }

    pub fn period(&self) -> f64 {
        TAU / self.omega
    }
}

/// Dynamic state of the rig including both noise generators.
#[derive(Debug, Clone)]
pub struct RigState {
    pub x: f64,
    pub v: f64,
    pub t: f64,
    /// Step index within the current forcing period.
    pub phase_step: usize,
    pub period_count: u64,
    clock_omega: f64,
    perturbation: NoiseSource,
    disturbance: NoiseSource,
}

impl RigState {
    pub fn noise_filter_state(&self) -> &[f64] {
        self.perturbation.filter_state()
    }
}

/// One sample taken at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub u: f64,
    pub i: f64,
    pub eta: f64,
}

/// The simulated rig.
#[derive(Debug, Clone)]
pub struct VirtualRig {
    params: RigParams,
    plant: Plant,
    controller: ControllerConfig,
    noise: NoiseConfig,
    state: RigState,
    dt: f64,
    steps_per_period: usize,
}

const DISTURBANCE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

impl VirtualRig {
    pub fn new(params: RigParams, controller: ControllerConfig, noise: NoiseConfig) -> Result<Self> {
        params.validate()?;
        controller.validate()?;
        let cutoff_ok = |fc: f64| fc > 0.0 && fc < 0.5 * params.sample_rate;
        if noise.filter_order == 0
            || !cutoff_ok(noise.cutoff_frequency)
            || !noise.disturbance_cutoff.map_or(true, cutoff_ok)
        {
            return Err(Error::InvalidParameter(format!("invalid noise settings: {noise:?}")));
        }
        let fs = params.sample_rate;
        let perturbation = NoiseSource::new(noise.amplitude, noise.filter_order, noise.cutoff_frequency, fs, noise.seed);
        let disturbance = NoiseSource::new(
            noise.disturbance_amplitude,
            noise.filter_order,
            noise.disturbance_cutoff.unwrap_or(noise.cutoff_frequency),
            fs,
            noise.seed ^ DISTURBANCE_STREAM,
        );
        Ok(Self {
            plant: params.plant(),
            dt: 1.0 / fs,
            steps_per_period: 0,
            params,
            controller,
            noise,
            state: RigState {
                x: 0.0,
                v: 0.0,
                t: 0.0,
                phase_step: 0,
                period_count: 0,
                clock_omega: 0.0,
                perturbation,
                disturbance,
            },
        })
    }

    pub fn params(&self) -> &RigParams {
        &self.params
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn controller(&self) -> &ControllerConfig {
        &self.controller
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    pub fn state(&self) -> &RigState {
        &self.state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps_per_period
    }

    pub fn set_position(&mut self, x: f64, v: f64) {
        self.state.x = x;
        self.state.v = v;
    }

    pub fn set_controller_enabled(&mut self, enabled: bool) {
        self.controller.enabled = enabled;
    }

    pub fn set_controller(&mut self, controller: ControllerConfig) {
        self.controller = controller;
    }

    /// Replaces both noise streams (amplitudes, seed) keeping the filter
    /// design and resetting their filter states.
    pub fn set_noise(&mut self, noise: NoiseConfig) {
        let fs = if self.steps_per_period > 0 { 1.0 / self.dt } else { self.params.sample_rate };
        self.state.perturbation =
            NoiseSource::new(noise.amplitude, noise.filter_order, noise.cutoff_frequency, fs, noise.seed);
        self.state.disturbance = NoiseSource::new(
            noise.disturbance_amplitude,
            noise.filter_order,
            noise.disturbance_cutoff.unwrap_or(noise.cutoff_frequency),
            fs,
            noise.seed ^ DISTURBANCE_STREAM,
        );
        self.noise = noise;
    }

    /// Locks the integration grid to the period of `omega`. A change of
    /// frequency restarts the clock at `t = 0`.
    fn lock_clock(&mut self, omega: f64) -> Result<()> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidParameter(format!("forcing frequency must be positive, got {omega}")));
        }
        if self.state.clock_omega == omega {
            return Ok(());
        }
        self.steps_per_period = self.params.steps_per_period(omega);
        self.dt = TAU / omega / self.steps_per_period as f64;
        let fs = 1.0 / self.dt;
        self.state.perturbation.set_sample_rate(fs);
        self.state.disturbance.set_sample_rate(fs);
        self.state.clock_omega = omega;
        self.state.t = 0.0;
        self.state.phase_step = 0;
        self.state.period_count = 0;
        Ok(())
    }

    #[inline]
    fn control(&self, target: &FourierSeries, tau: f64, x: f64, v: f64) -> f64 {
        if !self.controller.enabled {
            return 0.0;
        }
        let (xs, vs) = target.eval(tau);
        self.controller.kp * (xs - x) + self.controller.kd * (vs - v)
    }

    /// Advances the rig by one step and returns the sample taken at the start
    /// of the step.
    ///
    /// The PD law is evaluated at every integrator stage from the stage state;
    /// the perturbation and disturbance are held over the step.
    pub fn step(&mut self, target: &FourierSeries, forcing: &Forcing) -> Result<StepSample> {
        self.lock_clock(forcing.omega)?;
        let w = forcing.omega;
        let h = self.dt;
        let tau = self.state.phase_step as f64 * h;
        let eta = self.state.perturbation.sample();
        let held = eta + self.state.disturbance.sample();

        let p = |t: f64| {
            let (s, c) = (w * t).sin_cos();
            forcing.a * c + forcing.b * s
        };
        let (x0, v0) = (self.state.x, self.state.v);
        let plant = self.plant;
        let rhs = |t: f64, x: f64, v: f64, rig: &Self| -> (f64, f64) {
            let u = rig.control(target, t, x, v);
            (v, plant.acceleration(x, v, p(t) + u + held))
        };

        let u0 = self.control(target, tau, x0, v0);
        let p0 = p(tau);
        let k1 = (v0, plant.acceleration(x0, v0, p0 + u0 + held));
        let k2 = rhs(tau + 0.5 * h, x0 + 0.5 * h * k1.0, v0 + 0.5 * h * k1.1, self);
        let k3 = rhs(tau + 0.5 * h, x0 + 0.5 * h * k2.0, v0 + 0.5 * h * k2.1, self);
        let k4 = rhs(tau + h, x0 + h * k3.0, v0 + h * k3.1, self);
        let x1 = x0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        let v1 = v0 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);

        let sample = StepSample {
            t: self.state.t,
            x: x0,
            v: v0,
            u: u0,
            i: p0 + u0 + eta,
            eta,
        };

        self.state.x = x1;
        self.state.v = v1;
        self.state.phase_step += 1;
        if self.state.phase_step == self.steps_per_period {
            self.state.phase_step = 0;
            self.state.period_count += 1;
        }
        self.state.t =
            self.state.period_count as f64 * forcing.period() + self.state.phase_step as f64 * h;

        if !x1.is_finite() || x1.abs() > self.params.displacement_limit {
            return Err(Error::DisplacementLimitExceeded {
                position: x1.abs(),
                limit: self.params.displacement_limit,
                time: self.state.t,
            });
        }
        Ok(sample)
    }

    /// Integrates `n_periods` whole periods and returns the sampled record.
    /// A rig left mid-period is first advanced to the next period boundary.
    pub fn run_segment(&mut self, target: &FourierSeries, forcing: &Forcing, n_periods: usize) -> Result<SampledRecord> {
        if n_periods == 0 {
            return Err(Error::InvalidParameter("n_periods must be at least 1".into()));
        }
        self.lock_clock(forcing.omega)?;
        while self.state.phase_step != 0 {
            self.step(target, forcing)?;
        }
        let n = n_periods * self.steps_per_period;
        let mut rec = SampledRecord::with_capacity(self.dt, self.steps_per_period, *forcing, n);
        for _ in 0..n {
            let s = self.step(target, forcing)?;
            rec.t.push(s.t);
            rec.x.push(s.x);
            rec.xdot.push(s.v);
            rec.u.push(s.u);
            rec.i.push(s.i);
            rec.eta.push(s.eta);
        }
        Ok(rec)
    }

    /// Runs `n_periods` without keeping samples.
    pub fn advance(&mut self, target: &FourierSeries, forcing: &Forcing, n_periods: usize) -> Result<()> {
        self.lock_clock(forcing.omega)?;
        while self.state.phase_step != 0 {
            self.step(target, forcing)?;
        }
        for _ in 0..n_periods * self.steps_per_period {
            self.step(target, forcing)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_gain(params: &RigParams, omega: f64) -> f64 {
        let w0 = params.natural_frequency;
        1.0 / ((w0 * w0 - omega * omega).powi(2) + (2.0 * params.damping_ratio * w0 * omega).powi(2)).sqrt()
    }

    #[test]
    fn equilibrium_stays_at_rest() {
        let mut rig = VirtualRig::new(RigParams::default(), ControllerConfig::default(), NoiseConfig::silent()).unwrap();
        let w = TAU * 2.5;
        let rec = rig
            .run_segment(&FourierSeries::zeros(w, 7), &Forcing::new(0.0, 0.0, w), 3)
            .unwrap();
        assert!(rec.x.iter().chain(&rec.xdot).chain(&rec.u).all(|&v| v == 0.0));
    }

    #[test]
    fn linear_response_matches_transfer_function() {
        let params = RigParams::linear();
        let mut rig = VirtualRig::new(params.clone(), ControllerConfig::off(), NoiseConfig::silent()).unwrap();
        let w = TAU * 2.5;
        let f = Forcing::new(1.0, 0.0, w);
        let zero = FourierSeries::zeros(w, 1);
        // 1/(ζω₀) ≈ 2.1 s time constant
        rig.advance(&zero, &f, 150).unwrap();
        let rec = rig.run_segment(&zero, &f, 2).unwrap();
        let amp = rec.fourier(Channel::Position, 3, 0).unwrap();
        let measured = crate::signals::response_amplitude(&amp);
        let expected = linear_gain(&params, w);
        assert!(((measured - expected) / expected).abs() < 1e-6, "{measured} vs {expected}");
    }

    #[test]
    fn displacement_guard() {
        let mut rig = VirtualRig::new(RigParams::default(), ControllerConfig::off(), NoiseConfig::silent()).unwrap();
        let w = TAU * 2.6;
        let err = rig
            .run_segment(&FourierSeries::zeros(w, 1), &Forcing::new(50.0, 0.0, w), 20)
            .unwrap_err();
        assert!(matches!(err, Error::DisplacementLimitExceeded { .. }));
    }

    #[test]
    fn segment_bookkeeping() {
        let mut rig = VirtualRig::new(RigParams::default(), ControllerConfig::off(), NoiseConfig::silent()).unwrap();
        let w = TAU;
        let rec = rig.run_segment(&FourierSeries::zeros(w, 1), &Forcing::new(0.1, 0.0, w), 1).unwrap();
        assert_eq!(rec.len(), 1000);
        assert!((rec.dt * rec.len() as f64 - 1.0).abs() < 1e-12);
        assert_eq!(rig.state().phase_step, 0);
        assert!((rig.state().t - 1.0).abs() < 1e-12);
        // grid rounds to the phase quantum
        assert_eq!(RigParams::default().steps_per_period(TAU * 3.2), 320);
        assert_eq!(RigParams::default().with_phase_grid(12).phase_quantum, 120);
    }

    #[test]
    fn same_seed_same_bits() {
        let noise = NoiseConfig {
            amplitude: 0.5,
            seed: 11,
            disturbance_amplitude: 0.1,
            ..NoiseConfig::default()
        };
        let w = TAU * 2.8;
        let target = FourierSeries::fundamental(w, 0.02, 0.0, 7);
        let f = Forcing::new(0.3, 0.0, w);
        let run = || {
            let mut rig = VirtualRig::new(RigParams::default(), ControllerConfig::default(), noise).unwrap();
            rig.run_segment(&target, &f, 4).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let mut other = noise;
        other.seed = 12;
        let mut rig = VirtualRig::new(RigParams::default(), ControllerConfig::default(), other).unwrap();
        assert_ne!(rig.run_segment(&target, &f, 4).unwrap().x, a.x);
    }

    #[test]
    fn periodic_steady_state() {
        let mut rig = VirtualRig::new(RigParams::default(), ControllerConfig::off(), NoiseConfig::silent()).unwrap();
        let w = TAU * 2.3;
        let f = Forcing::new(0.4, 0.0, w);
        let zero = FourierSeries::zeros(w, 1);
        rig.advance(&zero, &f, 200).unwrap();
        let rec = rig.run_segment(&zero, &f, 2).unwrap();
        let n = rec.steps_per_period;
        let diff = (0..n).map(|k| (rec.x[k] - rec.x[k + n]).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn open_loop_has_no_control() {
        let noise = NoiseConfig {
            amplitude: 0.3,
            seed: 5,
            ..NoiseConfig::default()
        };
        let mut rig = VirtualRig::new(RigParams::default(), ControllerConfig::off(), noise).unwrap();
        let w = TAU * 2.7;
        let target = FourierSeries::fundamental(w, 0.03, 0.01, 3);
        let rec = rig.run_segment(&target, &Forcing::new(0.5, 0.1, w), 5).unwrap();
        assert!(rec.u.iter().all(|&u| u == 0.0));
        for k in 0..rec.len() {
            let p = 0.5 * (w * rec.t[k]).cos() + 0.1 * (w * rec.t[k]).sin();
            assert!((rec.i[k] - (p + rec.u[k] + rec.eta[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn free_decay_loses_energy() {
        let mut rig = VirtualRig::new(RigParams::default(), ControllerConfig::off(), NoiseConfig::silent()).unwrap();
        rig.set_position(0.05, 0.0);
        let w = TAU * 2.5;
        let rec = rig.run_segment(&FourierSeries::zeros(w, 1), &Forcing::new(0.0, 0.0, w), 10).unwrap();
        let plant = rig.plant();
        let e: Vec<f64> = rec.x.iter().zip(&rec.xdot).map(|(&x, &v)| plant.energy(x, v)).collect();
        assert!(e.windows(2).all(|p| p[1] <= p[0]));
        assert!(e.last().unwrap() < &(0.5 * e[0]));
    }

    #[test]
    fn perpendicular_springs_have_zero_mean_response() {
        let params = RigParams {
            spring_geometry: Some(SpringGeometry {
                spring_constant: 120.0,
                rest_length: 0.1,
                mount_length: 0.1,
                mass: 1.0,
            }),
            ..RigParams::default()
        };
        let mut rig = VirtualRig::new(params, ControllerConfig::off(), NoiseConfig::silent()).unwrap();
        let w = TAU * 2.9;
        let f = Forcing::new(1.0, 0.3, w);
        let zero = FourierSeries::zeros(w, 1);
        rig.advance(&zero, &f, 200).unwrap();
        let rec = rig.run_segment(&zero, &f, 4).unwrap();
        let s = rec.fourier(Channel::Position, 3, 0).unwrap();
        assert!((0.5 * s.a0).abs() < 1e-6);
        assert!(crate::signals::response_amplitude(&s) > 1e-3);
    }
}
