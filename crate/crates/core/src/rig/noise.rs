//! Perturbation generator: Box-Muller Gaussian samples passed through a
//! digital Butterworth low-pass filter.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator `[1, a1, a2]`, leading one implied.
    pub a: [f64; 2],
}

impl Biquad {
    fn process(&self, x: f64, s: &mut [f64; 2]) -> f64 {
        let y = self.b[0] * x + s[0];
        s[0] = self.b[1] * x - self.a[0] * y + s[1];
        s[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[0] * z_inv + self.a[1] * z2)
    }
}

/// Low-pass Butterworth filter as a cascade of second-order sections,
/// discretised by the bilinear transform with the cutoff prewarped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Butterworth {
    pub order: usize,
    pub cutoff: f64,
    pub sample_rate: f64,
    sections: Vec<Biquad>,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff: f64, sample_rate: f64) -> Self {
        assert!(order >= 1, "filter order must be positive");
        assert!(
            cutoff > 0.0 && cutoff < 0.5 * sample_rate,
            "cutoff {cutoff} Hz must lie below the Nyquist frequency of {sample_rate} Hz"
        );
        let k = 2.0 * sample_rate;
        let wc = k * (PI * cutoff / sample_rate).tan();
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for idx in 0..order / 2 {
            // analog pole pair at wc·exp(±iθ) in the left half plane
            let theta = PI * (2 * idx + 1 + order) as f64 / (2 * order) as f64;
            let a1 = -2.0 * wc * theta.cos();
            let a0 = wc * wc;
            let d = k * k + a1 * k + a0;
            sections.push(Biquad {
                b: [a0 / d, 2.0 * a0 / d, a0 / d],
                a: [(2.0 * a0 - 2.0 * k * k) / d, (k * k - a1 * k + a0) / d],
            });
        }
        if order % 2 == 1 {
            let d = k + wc;
            sections.push(Biquad {
                b: [wc / d, wc / d, 0.0],
                a: [(wc - k) / d, 0.0],
            });
        }
        Self {
            order,
            cutoff,
            sample_rate,
            sections,
        }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / self.sample_rate);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    /// Filters one sample; `state` holds two values per section.
    pub fn process(&self, x: f64, state: &mut [f64]) -> f64 {
        debug_assert_eq!(state.len(), 2 * self.sections.len());
        self.sections
            .iter()
            .zip(state.chunks_exact_mut(2))
            .fold(x, |acc, (sec, s)| {
                let mut pair = [s[0], s[1]];
                let y = sec.process(acc, &mut pair);
                s.copy_from_slice(&pair);
                y
            })
    }
}

/// Standard normal samples via the Box-Muller transform; two uniforms yield a
/// pair, the second of which is cached.
#[derive(Debug, Clone)]
pub struct BoxMuller {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl BoxMuller {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // (0, 1] keeps the logarithm finite
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Filtered Gaussian noise source.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    amplitude: f64,
    filter: Butterworth,
    filter_state: Vec<f64>,
    gaussian: BoxMuller,
}

impl NoiseSource {
    pub fn new(amplitude: f64, order: usize, cutoff: f64, sample_rate: f64, seed: u64) -> Self {
        let filter = Butterworth::lowpass(order, cutoff, sample_rate);
        let filter_state = vec![0.0; 2 * filter.sections().len()];
        Self {
            amplitude,
            filter,
            filter_state,
            gaussian: BoxMuller::new(seed),
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn filter(&self) -> &Butterworth {
        &self.filter
    }

    pub fn filter_state(&self) -> &[f64] {
        &self.filter_state
    }

    /// Redesigns the filter for a new sample rate, keeping the internal state
    /// and the random stream.
    pub fn set_sample_rate(&mut self, sample_rate: f64) {
        if sample_rate != self.filter.sample_rate {
            self.filter = Butterworth::lowpass(self.filter.order, self.filter.cutoff, sample_rate);
        }
    }

    /// Unfiltered sample: standard Gaussian scaled by the amplitude.
    pub fn raw_sample(&mut self) -> f64 {
        self.amplitude * self.gaussian.next_gaussian()
    }

    /// One filtered sample. A zero amplitude yields exactly zero and leaves
    /// the random stream untouched.
    pub fn sample(&mut self) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let raw = self.raw_sample();
        self.filter.process(raw, &mut self.filter_state)
    }
}
