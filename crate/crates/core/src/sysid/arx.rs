//! Periodic banded ARX model, least-squares fit, order selection and the
//! one-period map.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{FloquetResult, PerturbationRecord};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, eigen_decomposition};

/// Fitting options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Rows whose regressor matrix exceeds this condition number are rejected
    /// (or regularised when `ridge` is set).
    pub condition_limit: f64,
    /// Tikhonov fallback with `λ = 1e-8 · trace(ΦᵀΦ)` for ill-conditioned rows.
    pub ridge: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            condition_limit: 1e10,
            ridge: false,
        }
    }
}

/// Periodic ARX model `B(q⁻¹) y(T) = A(q⁻¹) k(T) + e(T)` on an `m`-point
/// grid with bandwidth `n`.
///
/// Entry `i` of the period vector is the sample taken `i/m` of a period
/// before the period end. Row `i` reads
///
/// ```text
/// y_i + Σ_{j=1..n} b[i][j-1] y_{i+j}  =  Σ_{j=0..n} a[i][j] k_{i+j} + e_i
/// ```
///
/// where an index `i + j ≥ m` refers to entry `i + j − m` of the previous
/// period vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArxModel {
    pub m_samples: usize,
    pub n_order: usize,
    /// `m × n`
    pub b: Vec<Vec<f64>>,
    /// `m × (n + 1)`
    pub a: Vec<Vec<f64>>,
    /// Residual sum of squares per row.
    pub rss: Vec<f64>,
    /// Equations used per row.
    pub equations: Vec<usize>,
    /// Regressor condition number per row.
    pub condition: Vec<f64>,
}

impl ArxModel {
    pub fn coefficient_count(&self) -> usize {
        self.b.iter().map(Vec::len).sum::<usize>() + self.a.iter().map(Vec::len).sum::<usize>()
    }

    pub fn total_rss(&self) -> f64 {
        self.rss.iter().sum()
    }

    pub fn total_equations(&self) -> usize {
        self.equations.iter().sum()
    }

    /// Constant and `q⁻¹` parts of `B(q⁻¹)`.
    pub fn b_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.m_samples;
        let mut b0 = DMatrix::identity(m, m);
        let mut b1 = DMatrix::zeros(m, m);
        for (i, row) in self.b.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let col = i + j + 1;
                if col < m {
                    b0[(i, col)] = c;
                } else {
                    b1[(i, col - m)] = c;
                }
            }
        }
        (b0, b1)
    }

    /// Constant and `q⁻¹` parts of `A(q⁻¹)`.
    pub fn a_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.m_samples;
        let mut a0 = DMatrix::zeros(m, m);
        let mut a1 = DMatrix::zeros(m, m);
        for (i, row) in self.a.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let col = i + j;
                if col < m {
                    a0[(i, col)] = c;
                } else {
                    a1[(i, col - m)] = c;
                }
            }
        }
        (a0, a1)
    }

    /// One-step-ahead predictions of `y` on the grid sequence; entries whose
    /// regressors fall before the start are `None`.
    pub fn predict(&self, y: &[f64], k: &[f64]) -> Vec<Option<f64>> {
        let (m, n) = (self.m_samples, self.n_order);
        (0..y.len())
            .map(|g| {
                if g < n {
                    return None;
                }
                let i = (m - g % m) % m;
                let mut v = 0.0;
                for j in 1..=n {
                    v -= self.b[i][j - 1] * y[g - j];
                }
                for j in 0..=n {
                    v += self.a[i][j] * k[g - j];
                }
                Some(v)
            })
            .collect()
    }
}

/// Least-squares fit of every phase row.
pub fn fit_arx(data: &PerturbationRecord, m_samples: usize, n_order: usize, options: &FitOptions) -> Result<ArxModel> {
    let (m, n) = (m_samples, n_order);
    if n == 0 || n >= m {
        return Err(Error::InvalidParameter(format!("ARX order must satisfy 0 < n < m (got m = {m}, n = {n})")));
    }
    let (y, k) = data.on_grid(m)?;
    let len = y.len();
    let unknowns = 2 * n + 1;

    let mut model = ArxModel {
        m_samples: m,
        n_order: n,
        b: Vec::with_capacity(m),
        a: Vec::with_capacity(m),
        rss: Vec::with_capacity(m),
        equations: Vec::with_capacity(m),
        condition: Vec::with_capacity(m),
    };

    for i in 0..m {
        // samples g = R m − i with g − n ≥ 0
        let first = {
            let mut g = (m - i) % m;
            while g < n {
                g += m;
            }
            g
        };
        let rows: Vec<usize> = (first..len).step_by(m).collect();
        if rows.len() < unknowns {
            return Err(Error::InvalidParameter(format!(
                "phase row {i} has {} equations for {unknowns} unknowns",
                rows.len()
            )));
        }
        let mut phi = DMatrix::zeros(rows.len(), unknowns);
        let mut rhs = DVector::zeros(rows.len());
        for (r, &g) in rows.iter().enumerate() {
            rhs[r] = y[g];
            for j in 1..=n {
                phi[(r, j - 1)] = -y[g - j];
            }
            for j in 0..=n {
                phi[(r, n + j)] = k[g - j];
            }
        }

        let cond = condition_number(&phi);
        let theta = if cond <= options.condition_limit {
            let svd = phi.clone().svd(true, true);
            svd.solve(&rhs, 0.0).map_err(|e| Error::InvalidParameter(e.to_string()))?
        } else if options.ridge {
            let gram = phi.transpose() * &phi;
            let lambda = 1e-8 * gram.trace().max(f64::MIN_POSITIVE);
            let reg = gram + DMatrix::identity(unknowns, unknowns) * lambda;
            let chol = reg.cholesky().ok_or(Error::RankDeficient { row: i, condition: cond })?;
            chol.solve(&(phi.transpose() * &rhs))
        } else {
            return Err(Error::RankDeficient { row: i, condition: cond });
        };
        let resid = &rhs - &phi * &theta;

        model.b.push(theta.rows(0, n).iter().copied().collect());
        model.a.push(theta.rows(n, n + 1).iter().copied().collect());
        model.rss.push(resid.norm_squared());
        model.equations.push(rows.len());
        model.condition.push(cond);
    }
    Ok(model)
}

/// AIC score of one candidate order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderScore {
    pub m_samples: usize,
    pub n_order: usize,
    pub aic: f64,
}

/// Akaike information criterion summed over phase rows:
/// `Σ_i N_i ln(RSS_i / N_i) + 2 m (2n + 1)`.
pub fn aic(model: &ArxModel) -> f64 {
    let fit: f64 = model
        .rss
        .iter()
        .zip(&model.equations)
        .map(|(&rss, &n)| n as f64 * (rss.max(f64::MIN_POSITIVE) / n as f64).ln())
        .sum();
    fit + 2.0 * model.coefficient_count() as f64
}

/// Scores every `(m, n)` pair with `n < m` and returns the minimiser. Ties go
/// to the smaller `n`, then the smaller `m`.
pub fn select_order(
    data: &PerturbationRecord,
    m_range: &[usize],
    n_range: &[usize],
    options: &FitOptions,
) -> Result<(usize, usize, Vec<OrderScore>)> {
    let mut table = Vec::new();
    for &m in m_range {
        for &n in n_range {
            if n == 0 || n >= m {
                continue;
            }
            let model = fit_arx(data, m, n, options)?;
            table.push(OrderScore {
                m_samples: m,
                n_order: n,
                aic: aic(&model),
            });
        }
    }
    let best = table
        .iter()
        .min_by(|x, y| {
            x.aic
                .total_cmp(&y.aic)
                .then(x.n_order.cmp(&y.n_order))
                .then(x.m_samples.cmp(&y.m_samples))
        })
        .ok_or_else(|| Error::InvalidParameter("no candidate order satisfies n < m".into()))?;
    Ok((best.m_samples, best.n_order, table))
}

/// Above this condition number `B(0)` is treated as singular.
const B0_CONDITION_LIMIT: f64 = 1e12;

/// One-period map of the fitted model and its eigen-decomposition.
///
/// Setting `k ≡ 0, e ≡ 0` gives `B(0) y(T) = −(B(1) − B(0)) y(T − 1)`, so the
/// period map is `−B(0)⁻¹ (B(1) − B(0))`; only its first `n` columns are
/// non-zero and the leading `n × n` block maps the `n` most recent samples of
/// one period onto those of the next.
pub fn monodromy(model: &ArxModel) -> Result<FloquetResult> {
    let n = model.n_order;
    let (b0, b1) = model.b_matrices();
    let condition = condition_number(&b0);
    if !condition.is_finite() || condition > B0_CONDITION_LIMIT {
        return Err(Error::SingularB0 { condition });
    }
    let map = b0
        .solve_upper_triangular(&b1)
        .ok_or(Error::SingularB0 { condition })?
        * -1.0;
    let block = map.view((0, 0), (n, n)).into_owned();
    let (values, vectors) = eigen_decomposition(&block);
    Ok(FloquetResult::from_parts(
        "sysid",
        &block,
        values,
        vectors,
        model.m_samples,
        model.n_order,
        model.total_rss(),
        condition,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_from_rows(m: usize, n: usize, b: Vec<Vec<f64>>) -> ArxModel {
        ArxModel {
            m_samples: m,
            n_order: n,
            a: vec![vec![0.0; n + 1]; m],
            rss: vec![0.0; m],
            equations: vec![0; m],
            condition: vec![1.0; m],
            b,
        }
    }

    #[test]
    fn identity_b_has_zero_monodromy() {
        let model = model_from_rows(5, 2, vec![vec![0.0; 2]; 5]);
        let f = monodromy(&model).unwrap();
        assert!(f.monodromy.iter().flatten().all(|&v| v == 0.0));
        assert!(f.multipliers.iter().all(|mu| mu.re == 0.0 && mu.im == 0.0));
    }

    #[test]
    fn scalar_period_map() {
        // y_s = 0.8^{1/2} y_{s-1} on a 2-point grid: one period maps y -> 0.8 y
        let r = 0.8f64.sqrt();
        let model = model_from_rows(2, 1, vec![vec![-r], vec![-r]]);
        let f = monodromy(&model).unwrap();
        assert_eq!(f.multipliers.len(), 1);
        assert!((f.multipliers[0].re - 0.8).abs() < 1e-12);
        assert!(f.multipliers[0].im.abs() < 1e-12);
    }

    #[test]
    fn banded_layout() {
        let b: Vec<Vec<f64>> = (0..4).map(|i| vec![10.0 * i as f64 + 1.0, 10.0 * i as f64 + 2.0]).collect();
        let model = model_from_rows(4, 2, b);
        let (b0, b1) = model.b_matrices();
        assert_eq!(b0[(0, 1)], 1.0);
        assert_eq!(b0[(0, 2)], 2.0);
        assert_eq!(b0[(2, 3)], 21.0);
        assert_eq!(b1[(2, 0)], 22.0);
        assert_eq!(b1[(3, 0)], 31.0);
        assert_eq!(b1[(3, 1)], 32.0);
        for i in 0..4 {
            assert_eq!(b0[(i, i)], 1.0);
            assert_eq!(b0.row(i).iter().filter(|v| **v != 0.0).count() + b1.row(i).iter().filter(|v| **v != 0.0).count(), 3);
        }
        assert_eq!(model.coefficient_count(), 4 * 2 + 4 * 3);
    }
}
