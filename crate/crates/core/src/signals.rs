//! Fourier discretisation of periodic signals, effective forcing and delay
//! embedding.
//!
//! The series convention throughout the crate is
//!
//! ```text
//! x(t) = a0/2 + sum_j  A_j cos(j w t) + B_j sin(j w t),   j = 1..n
//! ```
//!
//! so the mean of the signal is `a0 / 2`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of harmonics kept in control targets.
pub const DEFAULT_HARMONICS: usize = 7;
/// Default number of trailing periods averaged when estimating coefficients.
pub const DEFAULT_AVERAGING_PERIODS: usize = 10;

/// Truncated Fourier series of a `2π/ω`-periodic signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    pub omega: f64,
    pub a0: f64,
    /// `(A_j, B_j)` for `j = 1..=n_harmonics`.
    pub harmonics: Vec<[f64; 2]>,
}

impl FourierSeries {
    pub fn zeros(omega: f64, n_harmonics: usize) -> Self {
        Self {
            omega,
            a0: 0.0,
            harmonics: vec![[0.0; 2]; n_harmonics.max(1)],
        }
    }

    /// Pure fundamental `a cos(ωt) + b sin(ωt)`.
    pub fn fundamental(omega: f64, a: f64, b: f64, n_harmonics: usize) -> Self {
        let mut s = Self::zeros(omega, n_harmonics);
        s.harmonics[0] = [a, b];
        s
    }

    pub fn n_harmonics(&self) -> usize {
        self.harmonics.len()
    }

    pub fn period(&self) -> f64 {
        TAU / self.omega
    }

    /// Coefficient `(A_j, B_j)`, zero beyond the truncation order.
    pub fn harmonic(&self, j: usize) -> [f64; 2] {
        assert!(j >= 1, "harmonic index starts at 1");
        self.harmonics.get(j - 1).copied().unwrap_or([0.0; 2])
    }

    pub fn set_harmonic(&mut self, j: usize, pair: [f64; 2]) {
        assert!(j >= 1, "harmonic index starts at 1");
        if j > self.harmonics.len() {
            self.harmonics.resize(j, [0.0; 2]);
        }
        self.harmonics[j - 1] = pair;
    }

    /// Value and time derivative at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        synthesize(self, t)
    }

    pub fn value(&self, t: f64) -> f64 {
        synthesize(self, t).0
    }

    /// Flattened coefficient vector `[a0, A1, B1, A2, B2, ...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 2 * self.harmonics.len());
        v.push(self.a0);
        for h in &self.harmonics {
            v.extend_from_slice(h);
        }
        v
    }

    /// Euclidean distance between coefficient vectors, padding the shorter
    /// series with zeros.
    pub fn distance(&self, other: &FourierSeries) -> f64 {
        let n = self.harmonics.len().max(other.harmonics.len());
        let mut acc = (self.a0 - other.a0).powi(2);
        for j in 1..=n {
            let [a, b] = self.harmonic(j);
            let [c, d] = other.harmonic(j);
            acc += (a - c).powi(2) + (b - d).powi(2);
        }
        acc.sqrt()
    }

    /// Mean signal power `a0²/4 + ½ Σ (A_j² + B_j²)`.
    pub fn power(&self) -> f64 {
        self.a0 * self.a0 / 4.0
            + 0.5
                * self
                    .harmonics
                    .iter()
                    .map(|[a, b]| a * a + b * b)
                    .sum::<f64>()
    }
}

/// Evaluates the series and its analytic time derivative at `t`.
///
/// Harmonics are generated by complex rotation from a single `sin_cos`, so the
/// cost is one transcendental call per evaluation.
pub fn synthesize(series: &FourierSeries, t: f64) -> (f64, f64) {
    let w = series.omega;
    let (s1, c1) = (w * t).sin_cos();
    let (mut c, mut s) = (c1, s1);
    let mut value = 0.5 * series.a0;
    let mut deriv = 0.0;
    for (idx, [a, b]) in series.harmonics.iter().enumerate() {
        let jw = (idx + 1) as f64 * w;
        value += a * c + b * s;
        deriv += jw * (b * c - a * s);
        let next_c = c * c1 - s * s1;
        let next_s = s * c1 + c * s1;
        c = next_c;
        s = next_s;
    }
    (value, deriv)
}

/// Fourier coefficients of a uniformly sampled signal spanning an integer
/// number of periods. Sample `k` is taken at `t0 + k dt`.
///
/// The trapezoidal rule on a closed periodic grid reduces to the plain mean,
/// which is exact for band-limited signals below the Nyquist order.
pub fn fourier_coeffs(
    samples: &[f64],
    t0: f64,
    dt: f64,
    omega: f64,
    n_harmonics: usize,
) -> Result<FourierSeries> {
    if samples.is_empty() || dt <= 0.0 || omega <= 0.0 || n_harmonics == 0 {
        return Err(Error::InvalidParameter(
            "fourier_coeffs needs samples, dt > 0, omega > 0 and n_harmonics >= 1".into(),
        ));
    }
    let n = samples.len();
    let span = n as f64 * dt;
    let period = TAU / omega;
    let periods = span / period;
    let whole = periods.round();
    if whole < 1.0 || (span - whole * period).abs() > 0.5 * dt {
        return Err(Error::NonIntegerPeriodSpan { samples: n, periods });
    }

    let scale = 2.0 / n as f64;
    let mut a0 = 0.0;
    let mut acc = vec![[0.0f64; 2]; n_harmonics];
    for (k, &x) in samples.iter().enumerate() {
        let t = t0 + k as f64 * dt;
        a0 += x;
        let (s1, c1) = (omega * t).sin_cos();
        let (mut c, mut s) = (c1, s1);
        for pair in acc.iter_mut() {
            pair[0] += x * c;
            pair[1] += x * s;
            let next_c = c * c1 - s * s1;
            s = s * c1 + c * s1;
            c = next_c;
        }
    }
    Ok(FourierSeries {
        omega,
        a0: a0 * scale,
        harmonics: acc.into_iter().map(|[a, b]| [a * scale, b * scale]).collect(),
    })
}

/// Response amplitude: magnitude of the fundamental.
pub fn response_amplitude(series: &FourierSeries) -> f64 {
    let [a, b] = series.harmonic(1);
    a.hypot(b)
}

/// Effective forcing after lumping the fundamental of the control action into
/// the forcing `a cos(ωt) + b sin(ωt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveForcing {
    pub gamma: f64,
    /// Phase of `Γ cos(ωt + φ)`; carries no physical meaning.
    pub phase: f64,
}

impl EffectiveForcing {
    /// Cosine and sine coefficients of `Γ cos(ωt + φ)`.
    pub fn cos_sin(&self) -> (f64, f64) {
        (self.gamma * self.phase.cos(), -self.gamma * self.phase.sin())
    }
}

pub fn effective_forcing(a: f64, b: f64, a1u: f64, b1u: f64) -> EffectiveForcing {
    let c = a + a1u;
    let s = b + b1u;
    EffectiveForcing {
        gamma: c.hypot(s),
        phase: (-s).atan2(c),
    }
}

/// Delay-coordinate reconstruction `(x(t), x(t − τ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayEmbedding {
    pub tau: f64,
    pub delay_samples: usize,
    pub times: Vec<f64>,
    pub current: Vec<f64>,
    pub delayed: Vec<f64>,
}

impl DelayEmbedding {
    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    /// Phase `(t mod T) / T` of each embedded point.
    pub fn phases(&self, period: f64) -> Vec<f64> {
        self.times
            .iter()
            .map(|t| (t / period).rem_euclid(1.0))
            .collect()
    }
}

/// Pairs `x(t)` with `x(t − τ)` where `τ = delay_samples · dt`.
pub fn delay_embed(samples: &[f64], t0: f64, dt: f64, delay_samples: usize) -> Result<DelayEmbedding> {
    if delay_samples == 0 {
        return Err(Error::InvalidParameter("delay must be at least one sample".into()));
    }
    if delay_samples >= samples.len() {
        return Err(Error::DelayTooLong {
            delay: delay_samples,
            len: samples.len(),
        });
    }
    let n = samples.len() - delay_samples;
    Ok(DelayEmbedding {
        tau: delay_samples as f64 * dt,
        delay_samples,
        times: (0..n).map(|k| t0 + (k + delay_samples) as f64 * dt).collect(),
        current: samples[delay_samples..].to_vec(),
        delayed: samples[..n].to_vec(),
    })
}

/// Converts a delay in seconds to a whole number of samples, rejecting delays
/// that are not (within 1e-6 of) a sample multiple.
pub fn delay_in_samples(tau: f64, dt: f64) -> Result<usize> {
    let k = tau / dt;
    let r = k.round();
    if r < 1.0 || (k - r).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "delay {tau} s is not a positive multiple of the sample interval {dt} s"
        )));
    }
    Ok(r as usize)
}
