//! Experiment configuration: one TOML document with a section per module.
//! Every field has a default, so an empty file is a valid configuration.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use cbclab::cbc::CbcConfig;
use cbclab::rig::{ControllerConfig, NoiseConfig, RigParams};
use cbclab::surface::{FoldOptions, GpFitOptions, SliceOptions};
use cbclab::sysid::SysIdConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Reference configuration with every default spelled out and commented.
pub const REFERENCE_CONFIG: &str = include_str!("../reference.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub rig: RigParams,
    pub controller: ControllerConfig,
    pub sweep: SweepConfig,
    pub sysid: SysIdConfig,
    pub floquet: FloquetConfig,
    pub escape: EscapeConfig,
    pub perturbation: PerturbationConfig,
    pub surface: SurfaceConfig,
    pub oracle: OracleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            out_dir: PathBuf::from("out"),
            rig: RigParams::default(),
            controller: ControllerConfig::default(),
            sweep: SweepConfig::default(),
            sysid: SysIdConfig::default(),
            floquet: FloquetConfig::default(),
            escape: EscapeConfig::default(),
            perturbation: PerturbationConfig::default(),
            surface: SurfaceConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub step_hz: f64,
    /// Explicit frequency list; overrides the start/stop/step range.
    pub frequencies_hz: Option<Vec<f64>>,
    /// Target amplitudes `amplitude_start + k · amplitude_step`, m.
    pub amplitude_start: f64,
    pub amplitude_step: f64,
    pub amplitude_count: usize,
    pub cbc: CbcConfig,
    pub noise: NoiseConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start_hz: 2.2,
            stop_hz: 3.2,
            step_hz: 0.025,
            frequencies_hz: None,
            amplitude_start: 0.0016,
            amplitude_step: 0.0016,
            amplitude_count: 40,
            cbc: CbcConfig::default(),
            noise: NoiseConfig::silent(),
        }
    }
}

impl SweepConfig {
    pub fn frequencies_hz(&self) -> Vec<f64> {
        if let Some(list) = &self.frequencies_hz {
            return list.clone();
        }
        let n = ((self.stop_hz - self.start_hz) / self.step_hz + 1e-9).floor() as usize + 1;
        (0..n).map(|k| self.start_hz + k as f64 * self.step_hz).collect()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.frequencies_hz().into_iter().map(|f| TAU * f).collect()
    }

    pub fn amplitude_grid(&self) -> Vec<f64> {
        (0..self.amplitude_count)
            .map(|k| self.amplitude_start + k as f64 * self.amplitude_step)
            .collect()
    }

    /// Grid points up to and including the one nearest `target`.
    pub fn grid_up_to(&self, target: f64) -> Vec<f64> {
        let k = ((target - self.amplitude_start) / self.amplitude_step).round().max(0.0) as usize;
        (0..=k).map(|j| self.amplitude_start + j as f64 * self.amplitude_step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloquetConfig {
    /// Sweep indices to analyse; all when unset.
    pub sweep_indices: Option<Vec<usize>>,
    /// Analyse every `stride`-th point of each branch.
    pub stride: usize,
    /// Independent repetitions of the whole branch.
    pub branch_repeats: usize,
    /// Also evaluate the variational oracle at every point.
    pub oracle: bool,
}

impl Default for FloquetConfig {
    fn default() -> Self {
        Self {
            sweep_indices: None,
            stride: 1,
            branch_repeats: 1,
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscapeConfig {
    /// The sweep nearest this frequency supplies the orbit.
    pub frequency_hz: f64,
    /// Branch index of the orbit; the middle of the unstable segment when unset.
    pub point_index: Option<usize>,
    pub runs: usize,
    /// Perturbation amplitude during the escapes.
    pub noise_amplitude: f64,
    /// Controlled periods with noise before the controller is switched off.
    pub settle_periods: usize,
    pub max_periods: usize,
    /// Relative change of the per-period amplitude below which a run counts as settled.
    pub settle_tol: f64,
    /// Consecutive settled periods required.
    pub settle_count: usize,
    /// Sysid settings for the eigendirection; the delay coordinate is
    /// `x(t − delay_samples · T/m)`.
    pub sysid: SysIdConfig,
    pub delay_samples: usize,
    /// Dots count as near the orbit below this fraction of its amplitude.
    pub neighbourhood: f64,
    /// and above this multiple of the controlled scatter radius.
    pub noise_floor_factor: f64,
    /// Periods of each time series kept in the CSV after the release.
    pub record_periods: usize,
}

impl Default for EscapeConfig {
    fn default() -> Self {
        Self {
            frequency_hz: 3.0,
            point_index: None,
            runs: 40,
            noise_amplitude: 0.02,
            settle_periods: 20,
            max_periods: 400,
            settle_tol: 2e-3,
            settle_count: 10,
            sysid: SysIdConfig::default(),
            delay_samples: 2,
            neighbourhood: 0.1,
            noise_floor_factor: 5.0,
            record_periods: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub frequency_hz: f64,
    /// Target amplitudes of the stable and unstable orbits, m.
    pub stable_target: f64,
    pub unstable_target: f64,
    pub amplitudes: Vec<f64>,
    /// Unrecorded disturbance amplitude, the noise floor of the study.
    pub disturbance: f64,
    pub m_samples: usize,
    pub n_order: usize,
    pub repeats: usize,
    pub periods: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            frequency_hz: 3.0,
            stable_target: 0.0096,
            unstable_target: 0.0528,
            amplitudes: vec![0.006, 0.012, 0.02, 0.035, 0.06],
            disturbance: 0.0002,
            m_samples: 20,
            n_order: 2,
            repeats: 10,
            periods: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    pub fit: GpFitOptions,
    pub fold: FoldOptions,
    pub slice: SliceOptions,
    /// Forcing amplitudes of the slices; spread over the data range when unset.
    pub slice_gammas: Option<Vec<f64>>,
    pub slice_count: usize,
    pub slice_step_hz: f64,
    /// Every `holdout_stride`-th point is held out to report the fit error.
    pub holdout_stride: usize,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            fit: GpFitOptions::default(),
            fold: FoldOptions::default(),
            slice: SliceOptions::default(),
            slice_gammas: None,
            slice_count: 5,
            slice_step_hz: 0.01,
            holdout_stride: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// The sweep nearest this frequency supplies the orbits.
    pub frequency_hz: f64,
    /// Branch indices; the whole branch when unset.
    pub points: Option<Vec<usize>>,
    /// Relative step of the finite-difference monodromy.
    pub brute_force_eps: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            frequency_hz: 3.0,
            points: None,
            brute_force_eps: 1e-6,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.rig.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.controller.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let s = &self.sweep;
        if s.frequencies_hz().iter().any(|f| !(*f > 0.0)) || s.frequencies_hz().is_empty() {
            return bad("sweep frequencies must be positive and non-empty".into());
        }
        if s.frequencies_hz.is_none() && !(s.step_hz > 0.0 && s.stop_hz >= s.start_hz) {
            return bad("sweep range needs step_hz > 0 and stop_hz >= start_hz".into());
        }
        if !(s.amplitude_start > 0.0 && s.amplitude_step > 0.0 && s.amplitude_count >= 1) {
            return bad("amplitude grid needs positive start and step and at least one point".into());
        }
        if self.floquet.stride == 0 || self.floquet.branch_repeats == 0 {
            return bad("floquet stride and branch_repeats must be at least 1".into());
        }
        let p = &self.perturbation;
        if p.amplitudes.is_empty() || p.amplitudes.iter().any(|a| !(*a > 0.0)) {
            return bad("perturbation amplitudes must be positive and non-empty".into());
        }
        if p.n_order == 0 || p.n_order >= p.m_samples || p.repeats == 0 {
            return bad("perturbation study needs 0 < n_order < m_samples and repeats >= 1".into());
        }
        let e = &self.escape;
        if e.runs == 0 || e.delay_samples == 0 || e.delay_samples >= e.sysid.n_order.unwrap_or(e.sysid.m_samples) {
            return bad("escape needs runs >= 1 and 0 < delay_samples < sysid.n_order".into());
        }
        if self.surface.holdout_stride == 1 {
            return bad("surface.holdout_stride of 1 would hold out every point".into());
        }
        Ok(())
    }
}

/// Seed-path prefixes, one per command.
pub mod stream {
    pub const SWEEP: u64 = 0;
    pub const FLOQUET: u64 = 1;
    pub const ESCAPE: u64 = 2;
    pub const PERTURBATION: u64 = 3;
    pub const SURFACE: u64 = 4;
}
