use std::io::Write;

use serde::{Deserialize, Serialize};

use super::Forcing;
use crate::error::Result;
use crate::signals::{fourier_coeffs, FourierSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Position,
    Velocity,
    Control,
    Input,
    Noise,
}

/// Uniformly sampled rig signals over a whole number of forcing periods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampledRecord {
    pub dt: f64,
    pub steps_per_period: usize,
    pub forcing: Forcing,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
    pub u: Vec<f64>,
    pub i: Vec<f64>,
    pub eta: Vec<f64>,
}

impl SampledRecord {
    pub(crate) fn with_capacity(dt: f64, steps_per_period: usize, forcing: Forcing, n: usize) -> Self {
        Self {
            dt,
            steps_per_period,
            forcing,
            t: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            xdot: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            i: Vec::with_capacity(n),
            eta: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn periods(&self) -> usize {
        self.len() / self.steps_per_period.max(1)
    }

    pub fn channel(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Position => &self.x,
            Channel::Velocity => &self.xdot,
            Channel::Control => &self.u,
            Channel::Input => &self.i,
            Channel::Noise => &self.eta,
        }
    }

    /// Fourier coefficients of `channel` over the final `periods` periods
    /// (all of them when `periods` is zero or exceeds the record).
    pub fn fourier(&self, channel: Channel, n_harmonics: usize, periods: usize) -> Result<FourierSeries> {
        let total = self.periods();
        let p = if periods == 0 || periods > total { total } else { periods };
        let start = (total - p) * self.steps_per_period;
        let end = total * self.steps_per_period;
        let data = &self.channel(channel)[start..end];
        let t0 = self.t.get(start).copied().unwrap_or(0.0);
        fourier_coeffs(data, t0, self.dt, self.forcing.omega, n_harmonics)
    }

    /// Coefficients of each individual period, oldest first.
    pub fn per_period_fourier(&self, channel: Channel, n_harmonics: usize) -> Result<Vec<FourierSeries>> {
        let n = self.steps_per_period;
        (0..self.periods())
            .map(|p| {
                let data = &self.channel(channel)[p * n..(p + 1) * n];
                fourier_coeffs(data, self.t[p * n], self.dt, self.forcing.omega, n_harmonics)
            })
            .collect()
    }

    /// CSV with header `t,x,xdot,u,i,eta`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,xdot,u,i,eta")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.t[k], self.x[k], self.xdot[k], self.u[k], self.i[k], self.eta[k]
            )?;
        }
        Ok(())
    }

    /// Reads the CSV produced by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: std::io::Read>(r: R, steps_per_period: usize, forcing: Forcing) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let mut rec = SampledRecord {
            steps_per_period,
            forcing,
            ..Default::default()
        };
        for row in reader.deserialize() {
            let (t, x, xdot, u, i, eta): (f64, f64, f64, f64, f64, f64) = row?;
            rec.t.push(t);
            rec.x.push(x);
            rec.xdot.push(xdot);
            rec.u.push(u);
            rec.i.push(i);
            rec.eta.push(eta);
        }
        if rec.t.len() > 1 {
            rec.dt = rec.t[1] - rec.t[0];
        }
        Ok(rec)
    }
}
