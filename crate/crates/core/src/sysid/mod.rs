//! Identification of the linearisation around a controlled orbit.
//!
//! The rig is perturbed with filtered noise while the controller holds it on
//! a converged orbit. Deviations of the response and total input from the
//! noise-free reference are sampled on an `m`-point phase grid and fitted
//! with a periodic ARX model whose one-period map gives the Floquet
//! multipliers.

mod arx;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub use arx::{aic, fit_arx, monodromy, select_order, ArxModel, FitOptions, OrderScore};

use crate::cbc::ContinuationPoint;
use crate::error::{Error, Result};
use crate::linalg::eigen_decomposition;
use crate::rig::{NoiseConfig, VirtualRig};
use crate::seed::derive_seed;

/// Perturbed response `y = x − x̂` and input `k = i − î` on the integration
/// grid, starting at forcing phase 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub omega: f64,
    pub steps_per_period: usize,
    pub y: Vec<f64>,
    pub k: Vec<f64>,
    /// One period of the reference orbit `x̂`.
    pub reference_x: Vec<f64>,
    /// One period of the reference input `î`.
    pub reference_i: Vec<f64>,
    pub closed_loop: bool,
}

impl PerturbationRecord {
    /// Record built directly from samples (`steps_per_period` per period),
    /// with zero reference.
    pub fn from_samples(omega: f64, steps_per_period: usize, y: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        if y.len() != k.len() || steps_per_period == 0 || y.len() % steps_per_period != 0 {
            return Err(Error::GridMismatch(format!(
                "{} response and {} input samples do not form whole periods of {steps_per_period}",
                y.len(),
                k.len()
            )));
        }
        Ok(Self {
            omega,
            steps_per_period,
            y,
            k,
            reference_x: vec![0.0; steps_per_period],
            reference_i: vec![0.0; steps_per_period],
            closed_loop: false,
        })
    }

    pub fn periods(&self) -> usize {
        self.y.len() / self.steps_per_period
    }

    /// `(y, k)` decimated to `m` samples per period.
    pub fn on_grid(&self, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if m == 0 || self.steps_per_period % m != 0 {
            return Err(Error::GridMismatch(format!(
                "{} samples per period are not divisible by m = {m}",
                self.steps_per_period
            )));
        }
        let stride = self.steps_per_period / m;
        let y = self.y.iter().step_by(stride).copied().collect();
        let k = self.k.iter().step_by(stride).copied().collect();
        Ok((y, k))
    }

    pub fn rms(values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
    }
}

/// A complex number with named parts, as written to JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for ComplexValue {
    fn from(c: Complex64) -> Self {
        Self { re: c.re, im: c.im }
    }
}

impl From<ComplexValue> for Complex64 {
    fn from(c: ComplexValue) -> Self {
        Complex64::new(c.re, c.im)
    }
}

/// Monodromy matrix with its eigen-decomposition.
///
/// For identified models the state is the delay vector
/// `(y(0), y(−T/m), …, y(−(n−1)T/m))` at the phase-0 section; for the oracle it
/// is `(x, ẋ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetResult {
    pub source: String,
    /// Sorted by decreasing modulus.
    pub multipliers: Vec<ComplexValue>,
    pub monodromy: Vec<Vec<f64>>,
    pub eigenvectors: Vec<Vec<ComplexValue>>,
    pub m: usize,
    pub n: usize,
    pub rss: f64,
    /// Condition number of `B(0)` (1 for the oracle).
    pub condition: f64,
    /// 95% confidence half-widths of the multiplier moduli, when repeated.
    pub ci: Option<Vec<f64>>,
    /// Mean multiplier moduli over repeats, when repeated.
    pub mean_moduli: Option<Vec<f64>>,
    pub repeats: usize,
    pub stable: bool,
}

impl FloquetResult {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        source: &str,
        block: &DMatrix<f64>,
        values: Vec<Complex64>,
        vectors: Vec<DVector<Complex64>>,
        m: usize,
        n: usize,
        rss: f64,
        condition: f64,
    ) -> Self {
        let stable = values.iter().all(|v| v.norm() <= 1.0);
        Self {
            source: source.to_string(),
            multipliers: values.into_iter().map(Into::into).collect(),
            monodromy: (0..block.nrows()).map(|r| block.row(r).iter().copied().collect()).collect(),
            eigenvectors: vectors
                .into_iter()
                .map(|v| v.iter().copied().map(Into::into).collect())
                .collect(),
            m,
            n,
            rss,
            condition,
            ci: None,
            mean_moduli: None,
            repeats: 1,
            stable,
        }
    }

    /// Decomposes a monodromy matrix given in row-major rows.
    pub fn from_matrix(source: &str, monodromy: &DMatrix<f64>, m: usize, n: usize, rss: f64, condition: f64) -> Self {
        let (values, vectors) = eigen_decomposition(monodromy);
        Self::from_parts(source, monodromy, values, vectors, m, n, rss, condition)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.monodromy.len();
        DMatrix::from_fn(n, n, |r, c| self.monodromy[r][c])
    }

    pub fn complex_multipliers(&self) -> Vec<Complex64> {
        self.multipliers.iter().copied().map(Into::into).collect()
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.complex_multipliers().iter().map(|c| c.norm()).collect()
    }

    /// Mean moduli when repeated, otherwise the moduli of the multipliers.
    pub fn reported_moduli(&self) -> Vec<f64> {
        self.mean_moduli.clone().unwrap_or_else(|| self.moduli())
    }

    pub fn leading(&self) -> Complex64 {
        self.multipliers.first().copied().map(Into::into).unwrap_or_default()
    }

    /// Leading eigenvector with real part only (meaningful for a real
    /// leading multiplier).
    pub fn leading_direction(&self) -> Vec<f64> {
        self.eigenvectors
            .first()
            .map(|v| v.iter().map(|c| c.re).collect())
            .unwrap_or_default()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Settings for perturbation, fitting and repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SysIdConfig {
    pub m_samples: usize,
    /// Fixed order, or `None` for AIC selection over the ranges below.
    pub n_order: Option<usize>,
    pub m_range: Vec<usize>,
    pub n_range: Vec<usize>,
    /// Perturbation amplitude in input units.
    pub perturbation: f64,
    /// Unrecorded input disturbance amplitude.
    pub disturbance: f64,
    pub disturbance_cutoff: Option<f64>,
    pub cutoff_frequency: f64,
    pub filter_order: usize,
    pub periods: usize,
    /// Noise-free periods run from the orbit state before recording.
    pub settle_periods: usize,
    pub repeats: usize,
    pub closed_loop: bool,
    /// Unstable when the largest modulus exceeds `1 + margin · CI`.
    pub stability_margin: f64,
    pub fit: FitOptions,
}

impl Default for SysIdConfig {
    fn default() -> Self {
        Self {
            m_samples: 10,
            n_order: Some(4),
            m_range: vec![10],
            n_range: vec![1, 2, 3, 4, 5, 6],
            perturbation: 0.5,
            disturbance: 0.0,
            disturbance_cutoff: None,
            cutoff_frequency: 10.0,
            filter_order: 6,
            periods: 200,
            settle_periods: 20,
            repeats: 10,
            closed_loop: true,
            stability_margin: 3.0,
            fit: FitOptions::default(),
        }
    }
}

impl SysIdConfig {
    fn noise(&self, seed: u64) -> NoiseConfig {
        NoiseConfig {
            amplitude: self.perturbation,
            cutoff_frequency: self.cutoff_frequency,
            filter_order: self.filter_order,
            seed,
            disturbance_amplitude: self.disturbance,
            disturbance_cutoff: self.disturbance_cutoff,
        }
    }
}

/// Runs the rig around `orbit` with noise injection and returns the
/// deviations from the noise-free reference.
///
/// The rig is rebuilt from `template` with a period grid divisible by
/// `config.m_samples`. In open-loop mode the controller is off and the orbit's
/// lumped forcing is applied instead.
pub fn collect_perturbed_data(
    template: &VirtualRig,
    orbit: &ContinuationPoint,
    config: &SysIdConfig,
    seed: u64,
) -> Result<PerturbationRecord> {
    if !(config.perturbation >= 0.0) {
        return Err(Error::InvalidParameter("perturbation amplitude must be non-negative".into()));
    }
    config.noise(seed).check_grid(orbit.omega, config.m_samples)?;
    let params = template.params().with_phase_grid(config.m_samples);
    let mut controller = *template.controller();
    controller.enabled = config.closed_loop;
    let forcing = if config.closed_loop { orbit.forcing } else { orbit.open_loop_forcing() };
    let target = &orbit.target;

    let mut rig = VirtualRig::new(params, controller, NoiseConfig::silent())?;
    rig.set_position(orbit.phase0_state[0], orbit.phase0_state[1]);
    rig.advance(target, &forcing, config.settle_periods)?;
    let reference = rig.run_segment(target, &forcing, 1)?;

    rig.set_noise(config.noise(seed));
    let rec = rig.run_segment(target, &forcing, config.periods.max(1))?;
    let spp = rec.steps_per_period;
    let y = rec.x.iter().enumerate().map(|(s, x)| x - reference.x[s % spp]).collect();
    let k = rec.i.iter().enumerate().map(|(s, i)| i - reference.i[s % spp]).collect();
    Ok(PerturbationRecord {
        omega: orbit.omega,
        steps_per_period: spp,
        y,
        k,
        reference_x: reference.x,
        reference_i: reference.i,
        closed_loop: config.closed_loop,
    })
}

/// Repeated identification at one orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetEstimate {
    /// Decomposition of the mean monodromy, with mean moduli, CI and the
    /// stability flag filled in.
    pub result: FloquetResult,
    pub repeats: Vec<FloquetResult>,
    pub order_scores: Vec<OrderScore>,
}

/// Sample mean and 95% t-interval half-width of each column.
pub fn mean_and_ci(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let r = samples.len();
    let width = samples.iter().map(Vec::len).min().unwrap_or(0);
    let mean: Vec<f64> = (0..width)
        .map(|c| samples.iter().map(|s| s[c]).sum::<f64>() / r as f64)
        .collect();
    if r < 2 {
        return (mean, vec![0.0; width]);
    }
    let t = StudentsT::new(0.0, 1.0, (r - 1) as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(1.96);
    let ci = (0..width)
        .map(|c| {
            let var = samples.iter().map(|s| (s[c] - mean[c]).powi(2)).sum::<f64>() / (r - 1) as f64;
            t * (var / r as f64).sqrt()
        })
        .collect();
    (mean, ci)
}

/// Collects, fits and decomposes `config.repeats` independent records.
pub fn estimate_floquet(
    template: &VirtualRig,
    orbit: &ContinuationPoint,
    config: &SysIdConfig,
    seed: u64,
) -> Result<FloquetEstimate> {
    let repeats = config.repeats.max(1);
    let mut m = config.m_samples;
    let mut n = config.n_order.unwrap_or(0);
    let mut scores = Vec::new();
    let mut results = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let data = collect_perturbed_data(template, orbit, config, derive_seed(seed, &[r as u64]))?;
        if r == 0 && config.n_order.is_none() {
            let (bm, bn, table) = select_order(&data, &config.m_range, &config.n_range, &config.fit)?;
            m = bm;
            n = bn;
            scores = table;
        }
        let model = fit_arx(&data, m, n, &config.fit)?;
        results.push(monodromy(&model)?);
    }

    let mut mean = DMatrix::zeros(n, n);
    for res in &results {
        mean += res.matrix();
    }
    mean /= repeats as f64;
    let rss = results.iter().map(|r| r.rss).sum::<f64>() / repeats as f64;
    let condition = results.iter().map(|r| r.condition).fold(0.0, f64::max);
    let mut result = FloquetResult::from_matrix("sysid", &mean, m, n, rss, condition);

    let moduli: Vec<Vec<f64>> = results.iter().map(FloquetResult::moduli).collect();
    let (mean_moduli, ci) = mean_and_ci(&moduli);
    let lead = mean_moduli.first().copied().unwrap_or(0.0);
    let lead_ci = ci.first().copied().unwrap_or(0.0);
    result.stable = !(lead > 1.0 + config.stability_margin * lead_ci);
    result.mean_moduli = Some(mean_moduli);
    result.ci = Some(ci);
    result.repeats = repeats;
    Ok(FloquetEstimate {
        result,
        repeats: results,
        order_scores: scores,
    })
}

/// One `floquet` CSV row per orbit:
/// `omega,response_amplitude,mu_abs_1,mu_abs_2,stable`.
pub fn write_floquet_csv<W: Write>(mut w: W, rows: &[(f64, f64, FloquetResult)]) -> Result<()> {
    writeln!(w, "omega,response_amplitude,mu_abs_1,mu_abs_2,stable")?;
    for (omega, amplitude, res) in rows {
        let moduli = res.reported_moduli();
        let get = |i: usize| moduli.get(i).copied().unwrap_or(f64::NAN);
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{}",
            omega,
            amplitude,
            get(0),
            get(1),
            res.stable
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_decimation() {
        let y: Vec<f64> = (0..40).map(|v| v as f64).collect();
        let rec = PerturbationRecord::from_samples(1.0, 20, y.clone(), y).unwrap();
        let (yg, _) = rec.on_grid(10).unwrap();
        assert_eq!(yg.len(), 20);
        assert_eq!(yg[1], 2.0);
        assert!(rec.on_grid(3).is_err());
    }

    #[test]
    fn ci_of_identical_samples_is_zero() {
        let (mean, ci) = mean_and_ci(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(mean, vec![1.0, 2.0]);
        assert_eq!(ci, vec![0.0, 0.0]);
    }

    #[test]
    fn ci_uses_t_quantile() {
        let (mean, ci) = mean_and_ci(&[vec![0.0], vec![2.0]]);
        assert_eq!(mean[0], 1.0);
        // s = sqrt(2), t_{0.975,1} = 12.706
        assert!((ci[0] - 12.7062 * 1.0).abs() < 1e-3);
    }

    #[test]
    fn json_schema_fields() {
        let r = FloquetResult::from_matrix("oracle", &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]), 0, 2, 0.0, 1.0);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["multipliers", "monodromy", "m", "n", "rss", "ci", "source"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["multipliers"][0]["re"], 0.5);
        assert_eq!(v["source"], "oracle");
    }
}
