//! Gaussian-process regression of the forcing amplitude over
//! (frequency, response amplitude), plus fold-curve and fixed-forcing slice
//! tracing on the fitted sheet.
//!
//! The surface is `Γ = G(ω, A)`. In this orientation the folded response
//! sheet is single valued and folds are the zero set of `∂G/∂A`.

use std::cell::RefCell;
use std::io::{Read, Write};

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbc::ContinuationRun;
use crate::{Error, Result};

/// One observation of the response sheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    /// Forcing frequency, rad/s.
    pub omega: f64,
    /// Response amplitude, m.
    pub amplitude: f64,
    /// Forcing amplitude, input units.
    pub gamma: f64,
}

impl SurfacePoint {
    pub fn is_valid(&self) -> bool {
        self.omega.is_finite()
            && self.amplitude.is_finite()
            && self.gamma.is_finite()
            && self.amplitude >= 0.0
            && self.gamma >= 0.0
    }
}

/// Collects `(ω, response amplitude, Γ)` from continuation runs.
pub fn points_from_runs(runs: &[ContinuationRun]) -> Vec<SurfacePoint> {
    runs.iter()
        .flat_map(|run| {
            run.points.iter().map(|p| SurfacePoint {
                omega: p.omega,
                amplitude: p.response_amplitude,
                gamma: p.gamma,
            })
        })
        .collect()
}

/// Reads a sweep CSV with at least the columns `omega`, `gamma` and
/// `response_amplitude`.
pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<SurfacePoint>> {
    #[derive(Deserialize)]
    struct Row {
        omega: f64,
        gamma: f64,
        response_amplitude: f64,
    }
    let mut reader = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        out.push(SurfacePoint {
            omega: row.omega,
            amplitude: row.response_amplitude,
            gamma: row.gamma,
        });
    }
    Ok(out)
}

/// Kernel hyperparameters in standardised units: inputs are z-scored and the
/// output is centred and scaled to unit variance before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub signal_variance: f64,
    /// Length scales for (ω, A).
    pub length_scales: [f64; 2],
    pub noise_variance: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            length_scales: [1.0, 1.0],
            noise_variance: 1e-4,
        }
    }
}

/// Log-space bounds on (σ_f², ℓ_ω, ℓ_A, σ_n²) in standardised units.
pub const HYPER_BOUNDS: [(f64, f64); 4] = [(1e-2, 1e2), (1e-2, 2e1), (1e-2, 2e1), (1e-8, 1.0)];

impl Hyperparameters {
    fn to_array(self) -> [f64; 4] {
        [self.signal_variance, self.length_scales[0], self.length_scales[1], self.noise_variance]
    }

    /// Optimiser coordinates: each log parameter is a logistic function of
    /// an unconstrained variable, which keeps it inside `HYPER_BOUNDS`.
    fn to_unconstrained(self) -> Vec<f64> {
        self.to_array()
            .iter()
            .zip(HYPER_BOUNDS)
            .map(|(v, (lo, hi))| {
                let s = ((v.ln() - lo.ln()) / (hi.ln() - lo.ln())).clamp(1e-9, 1.0 - 1e-9);
                (s / (1.0 - s)).ln()
            })
            .collect()
    }

    /// Parameters and `d ln v / dφ` for each coordinate.
    fn from_unconstrained(phi: &[f64]) -> (Self, [f64; 4]) {
        let mut v = [0.0; 4];
        let mut dlog = [0.0; 4];
        for k in 0..4 {
            let (lo, hi) = (HYPER_BOUNDS[k].0.ln(), HYPER_BOUNDS[k].1.ln());
            let s = 1.0 / (1.0 + (-phi[k]).exp());
            v[k] = (lo + (hi - lo) * s).exp();
            dlog[k] = (hi - lo) * s * (1.0 - s);
        }
        let h = Self {
            signal_variance: v[0],
            length_scales: [v[1], v[2]],
            noise_variance: v[3],
        };
        (h, dlog)
    }

    fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

const MAX_JITTER: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpFitOptions {
    /// Optimiser starts; the first uses the initial hyperparameters, the
    /// rest are drawn log-uniformly.
    pub starts: usize,
    pub max_iter: u64,
    pub seed: u64,
    /// Larger training sets are thinned by a uniform stride.
    pub max_points: usize,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iter: 200,
            seed: 0,
            max_points: 400,
        }
    }
}

/// Affine map between raw and standardised coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardisation {
    pub input_mean: [f64; 2],
    pub input_scale: [f64; 2],
    pub output_mean: f64,
    pub output_scale: f64,
}

impl Standardisation {
    fn from_points(points: &[SurfacePoint]) -> Self {
        let n = points.len() as f64;
        let stats = |f: &dyn Fn(&SurfacePoint) -> f64| {
            let mean = points.iter().map(f).sum::<f64>() / n;
            let var = points.iter().map(|p| (f(p) - mean).powi(2)).sum::<f64>() / n;
            let scale = var.sqrt();
            (mean, if scale > 0.0 { scale } else { 1.0 })
        };
        let (mw, sw) = stats(&|p| p.omega);
        let (ma, sa) = stats(&|p| p.amplitude);
        let (mg, sg) = stats(&|p| p.gamma);
        Self {
            input_mean: [mw, ma],
            input_scale: [sw, sa],
            output_mean: mg,
            output_scale: sg,
        }
    }

    fn input(&self, omega: f64, amplitude: f64) -> [f64; 2] {
        [
            (omega - self.input_mean[0]) / self.input_scale[0],
            (amplitude - self.input_mean[1]) / self.input_scale[1],
        ]
    }
}

/// Value and derivatives of a response surface at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurfaceJet {
    pub value: f64,
    pub d_omega: f64,
    pub d_amplitude: f64,
    pub d_amplitude2: f64,
    pub d_amplitude_omega: f64,
}

/// A smooth forcing-amplitude surface `Γ = G(ω, A)`.
pub trait ResponseSurface {
    fn jet(&self, omega: f64, amplitude: f64) -> SurfaceJet;
}

/// Trained Gaussian-process surface.
#[derive(Debug, Clone)]
pub struct GpSurface {
    points: Vec<SurfacePoint>,
    inputs: Vec<[f64; 2]>,
    hyper: Hyperparameters,
    scaling: Standardisation,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_marginal_likelihood: f64,
}

fn se_kernel(a: &[f64; 2], b: &[f64; 2], h: &Hyperparameters) -> f64 {
    let r2 = ((a[0] - b[0]) / h.length_scales[0]).powi(2) + ((a[1] - b[1]) / h.length_scales[1]).powi(2);
    h.signal_variance * (-0.5 * r2).exp()
}

fn signal_matrix(inputs: &[[f64; 2]], h: &Hyperparameters) -> DMatrix<f64> {
    let n = inputs.len();
    DMatrix::from_fn(n, n, |i, j| se_kernel(&inputs[i], &inputs[j], h))
}

/// Factorises `K + (σ² + jitter) I`, escalating the jitter from zero by
/// decades up to `MAX_JITTER · σ_f²`.
fn factorise(kf: &DMatrix<f64>, h: &Hyperparameters) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = kf.nrows();
    let mut jitter = 0.0;
    loop {
        let mut k = kf.clone();
        for i in 0..n {
            k[(i, i)] += h.noise_variance + jitter;
        }
        if let Some(c) = Cholesky::new(k) {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { 1e-12 * h.signal_variance } else { jitter * 10.0 };
        if jitter > MAX_JITTER * h.signal_variance {
            return Err(Error::IllConditionedKernel { jitter });
        }
    }
}

struct MarginalLikelihood<'a> {
    inputs: &'a [[f64; 2]],
    targets: &'a DVector<f64>,
    // argmin asks for cost and gradient separately at the same point
    last: RefCell<Option<(Vec<f64>, f64, Vec<f64>)>>,
}

impl MarginalLikelihood<'_> {
    fn cached(&self, phi: &[f64]) -> Result<(f64, Vec<f64>)> {
        if let Some((p, c, g)) = self.last.borrow().as_ref() {
            if p.as_slice() == phi {
                return Ok((*c, g.clone()));
            }
        }
        let (c, g) = self.evaluate(phi)?;
        *self.last.borrow_mut() = Some((phi.to_vec(), c, g.clone()));
        Ok((c, g))
    }

    /// Negative log marginal likelihood and its gradient in optimiser
    /// coordinates.
    fn evaluate(&self, phi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (h, dlog) = Hyperparameters::from_unconstrained(phi);
        if !h.is_valid() {
            return Err(Error::OptimFailed);
        }
        let n = self.inputs.len();
        let kf = signal_matrix(self.inputs, &h);
        let (chol, _) = factorise(&kf, &h)?;
        let alpha = chol.solve(self.targets);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let nll = 0.5 * self.targets.dot(&alpha) + 0.5 * log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

        // W = K⁻¹ − ααᵀ; ∂nll/∂θ = ½ tr(W ∂K/∂θ)
        let mut w = chol.inverse();
        w -= &alpha * alpha.transpose();
        let mut grad = [0.0; 4];
        for i in 0..n {
            for j in 0..n {
                let wij = w[(i, j)];
                let k = kf[(i, j)];
                grad[0] += wij * k;
                for d in 0..2 {
                    let dx = (self.inputs[i][d] - self.inputs[j][d]) / h.length_scales[d];
                    grad[1 + d] += wij * k * dx * dx;
                }
            }
            grad[3] += w[(i, i)];
        }
        grad[3] *= h.noise_variance;
        let grad: Vec<f64> = grad.iter().zip(dlog).map(|(g, d)| 0.5 * g * d).collect();
        if !nll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::OptimFailed);
        }
        Ok((nll, grad))
    }
}

impl CostFunction for MarginalLikelihood<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        self.cached(theta).map(|(c, _)| c).map_err(|e| argmin::core::Error::msg(e.to_string()))
    }
}

impl Gradient for MarginalLikelihood<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, theta: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.cached(theta).map(|(_, g)| g).map_err(|e| argmin::core::Error::msg(e.to_string()))
    }
}

// log-uniform ranges for random starts, standardised units
const START_SIGNAL: (f64, f64) = (0.1, 10.0);
const START_LENGTH: (f64, f64) = (0.1, 10.0);
const START_NOISE: (f64, f64) = (1e-7, 1e-2);

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn thin(points: &[SurfacePoint], max_points: usize) -> Vec<SurfacePoint> {
    if max_points == 0 || points.len() <= max_points {
        return points.to_vec();
    }
    let stride = points.len() as f64 / max_points as f64;
    (0..max_points).map(|k| points[(k as f64 * stride) as usize]).collect()
}

/// Fits `Γ = G(ω, A)` by maximising the log marginal likelihood over the
/// signal variance, two length scales and the noise variance.
pub fn gp_fit(points: &[SurfacePoint], init: Option<Hyperparameters>, opts: &GpFitOptions) -> Result<GpSurface> {
    if points.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "at least 10 surface points are needed, got {}",
            points.len()
        )));
    }
    if let Some(bad) = points.iter().find(|p| !p.is_valid()) {
        return Err(Error::InvalidParameter(format!("invalid surface point {bad:?}")));
    }
    let points = thin(points, opts.max_points);
    let scaling = Standardisation::from_points(&points);
    let inputs: Vec<[f64; 2]> = points.iter().map(|p| scaling.input(p.omega, p.amplitude)).collect();
    let targets = DVector::from_iterator(
        points.len(),
        points.iter().map(|p| (p.gamma - scaling.output_mean) / scaling.output_scale),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![init.unwrap_or_default()];
    while starts.len() < opts.starts.max(1) {
        starts.push(Hyperparameters {
            signal_variance: log_uniform(&mut rng, START_SIGNAL),
            length_scales: [log_uniform(&mut rng, START_LENGTH), log_uniform(&mut rng, START_LENGTH)],
            noise_variance: log_uniform(&mut rng, START_NOISE),
        });
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let problem = MarginalLikelihood {
            inputs: &inputs,
            targets: &targets,
            last: RefCell::new(None),
        };
        let theta0 = start.to_unconstrained();
        let Ok((c0, _)) = problem.evaluate(&theta0) else {
            continue;
        };
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7);
        let res = Executor::new(problem, solver)
            .configure(|s| s.param(theta0.clone()).max_iters(opts.max_iter))
            .run();
        let (cost, theta) = match res {
            Ok(r) => {
                let st = r.state();
                match st.get_best_param() {
                    Some(p) => (st.get_best_cost(), p.clone()),
                    None => (c0, theta0),
                }
            }
            // a failed line search still leaves the start as a candidate
            Err(_) => (c0, theta0),
        };
        if cost.is_finite() && best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, theta));
        }
    }
    let (nll, theta) = best.ok_or(Error::OptimFailed)?;
    let (hyper, _) = Hyperparameters::from_unconstrained(&theta);
    let mut surface = GpSurface::with_hyperparameters(&points, hyper, scaling)?;
    surface.log_marginal_likelihood = -nll;
    Ok(surface)
}

impl GpSurface {
    /// Conditions a GP with fixed hyperparameters on `points`.
    pub fn with_hyperparameters(points: &[SurfacePoint], hyper: Hyperparameters, scaling: Standardisation) -> Result<Self> {
        if !hyper.is_valid() {
            return Err(Error::InvalidParameter("hyperparameters must be positive and finite".into()));
        }
        let inputs: Vec<[f64; 2]> = points.iter().map(|p| scaling.input(p.omega, p.amplitude)).collect();
        let targets = DVector::from_iterator(
            points.len(),
            points.iter().map(|p| (p.gamma - scaling.output_mean) / scaling.output_scale),
        );
        let kf = signal_matrix(&inputs, &hyper);
        let (chol, jitter) = factorise(&kf, &hyper)?;
        let alpha = chol.solve(&targets);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let n = points.len() as f64;
        let lml = -0.5 * targets.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        Ok(Self {
            points: points.to_vec(),
            inputs,
            hyper,
            scaling,
            jitter,
            chol,
            alpha,
            log_marginal_likelihood: lml,
        })
    }

    pub fn points(&self) -> &[SurfacePoint] {
        &self.points
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        self.hyper
    }

    pub fn scaling(&self) -> Standardisation {
        self.scaling
    }

    /// Diagonal jitter that was needed for the factorisation.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    /// Observation noise variance in output units.
    pub fn noise_variance(&self) -> f64 {
        self.hyper.noise_variance * self.scaling.output_scale.powi(2)
    }

    /// Prior variance of the latent function in output units.
    pub fn signal_variance(&self) -> f64 {
        self.hyper.signal_variance * self.scaling.output_scale.powi(2)
    }

    /// Posterior mean and latent variance of `Γ` at `(ω, A)`.
    pub fn predict(&self, omega: f64, amplitude: f64) -> (f64, f64) {
        let x = self.scaling.input(omega, amplitude);
        let ks = DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| se_kernel(&x, xi, &self.hyper)));
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&ks).unwrap_or_else(|| DVector::zeros(ks.len()));
        let var = (self.hyper.signal_variance - v.dot(&v)).max(0.0);
        let s = self.scaling.output_scale;
        (self.scaling.output_mean + s * mean, var * s * s)
    }

    /// Bounding box of the training inputs as `((ω_min, ω_max), (A_min, A_max))`.
    pub fn input_range(&self) -> ((f64, f64), (f64, f64)) {
        let fold = |f: fn(&SurfacePoint) -> f64| {
            self.points
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        (fold(|p| p.omega), fold(|p| p.amplitude))
    }

    pub fn support(&self) -> Support {
        Support::from_points(&self.points)
    }

    /// Range of training `Γ`.
    pub fn gamma_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.gamma), hi.max(p.gamma)))
    }
}

impl ResponseSurface for GpSurface {
    fn jet(&self, omega: f64, amplitude: f64) -> SurfaceJet {
        let x = self.scaling.input(omega, amplitude);
        let [lw, la] = [self.hyper.length_scales[0].powi(2), self.hyper.length_scales[1].powi(2)];
        let mut j = SurfaceJet::default();
        for (xi, a) in self.inputs.iter().zip(self.alpha.iter()) {
            let k = se_kernel(&x, xi, &self.hyper) * a;
            let gw = (x[0] - xi[0]) / lw;
            let ga = (x[1] - xi[1]) / la;
            j.value += k;
            j.d_omega -= k * gw;
            j.d_amplitude -= k * ga;
            j.d_amplitude2 += k * (ga * ga - 1.0 / la);
            j.d_amplitude_omega += k * ga * gw;
        }
        let s = self.scaling.output_scale;
        let [sw, sa] = self.scaling.input_scale;
        SurfaceJet {
            value: self.scaling.output_mean + s * j.value,
            d_omega: s * j.d_omega / sw,
            d_amplitude: s * j.d_amplitude / sa,
            d_amplitude2: s * j.d_amplitude2 / (sa * sa),
            d_amplitude_omega: s * j.d_amplitude_omega / (sa * sw),
        }
    }
}

/// Region of the `(ω, A)` plane covered by data: the amplitude interval of
/// each sampled frequency, interpolated linearly between frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support {
    /// `(ω, A_min, A_max)` sorted by `ω`.
    pub columns: Vec<(f64, f64, f64)>,
}

impl Support {
    pub fn rectangle(omega: (f64, f64), amplitude: (f64, f64)) -> Self {
        Self {
            columns: vec![(omega.0, amplitude.0, amplitude.1), (omega.1, amplitude.0, amplitude.1)],
        }
    }

    /// Groups points whose frequencies agree to 1e-9 relative.
    pub fn from_points(points: &[SurfacePoint]) -> Self {
        let mut sorted: Vec<&SurfacePoint> = points.iter().collect();
        sorted.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        let mut columns: Vec<(f64, f64, f64)> = Vec::new();
        for p in sorted {
            match columns.last_mut() {
                Some(c) if (p.omega - c.0).abs() <= 1e-9 * c.0.abs().max(1.0) => {
                    c.1 = c.1.min(p.amplitude);
                    c.2 = c.2.max(p.amplitude);
                }
                _ => columns.push((p.omega, p.amplitude, p.amplitude)),
            }
        }
        Self { columns }
    }

    pub fn omega_range(&self) -> (f64, f64) {
        match (self.columns.first(), self.columns.last()) {
            (Some(a), Some(b)) => (a.0, b.0),
            _ => (0.0, 0.0),
        }
    }

    /// Smallest and largest amplitude over all frequencies.
    pub fn amplitude_hull(&self) -> (f64, f64) {
        self.columns
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.1), hi.max(c.2)))
    }

    /// Amplitude interval at `omega`, `None` outside the frequency range.
    pub fn range_at(&self, omega: f64) -> Option<(f64, f64)> {
        let (w_lo, w_hi) = self.omega_range();
        let eps = 1e-9 * w_hi.abs().max(1.0);
        if self.columns.is_empty() || omega < w_lo - eps || omega > w_hi + eps {
            return None;
        }
        let k = self.columns.partition_point(|c| c.0 < omega);
        if k == 0 {
            let c = self.columns[0];
            return Some((c.1, c.2));
        }
        if k == self.columns.len() {
            let c = self.columns[k - 1];
            return Some((c.1, c.2));
        }
        let (a, b) = (self.columns[k - 1], self.columns[k]);
        let s = (omega - a.0) / (b.0 - a.0);
        Some((a.1 + s * (b.1 - a.1), a.2 + s * (b.2 - a.2)))
    }

    pub fn contains(&self, omega: f64, amplitude: f64) -> bool {
        self.range_at(omega).is_some_and(|(lo, hi)| {
            let eps = 1e-9 * (hi - lo).abs().max(f64::MIN_POSITIVE);
            amplitude >= lo - eps && amplitude <= hi + eps
        })
    }
}

/// Point on the fold curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldPoint {
    pub omega: f64,
    pub amplitude: f64,
    pub gamma: f64,
    /// Index of the fold branch this point belongs to.
    pub branch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldOptions {
    pub omega_steps: usize,
    /// Scan resolution used to find new roots of `∂G/∂A`.
    pub scan_points: usize,
    pub tol: f64,
    pub max_newton: usize,
}

impl Default for FoldOptions {
    fn default() -> Self {
        Self {
            omega_steps: 201,
            scan_points: 400,
            tol: 1e-8,
            max_newton: 30,
        }
    }
}

/// Newton in `A` on `∂G/∂A = 0` at fixed `ω`, kept inside `[lo, hi]`. It
/// iterates until the step stalls at rounding level and accepts the root if
/// `|∂G/∂A| ≤ tol` there.
fn newton_fold<S: ResponseSurface + ?Sized>(
    s: &S,
    omega: f64,
    guess: f64,
    (lo, hi): (f64, f64),
    opts: &FoldOptions,
) -> Option<f64> {
    let mut a = guess;
    let floor = 1e-14 * hi.abs().max(lo.abs()).max(hi - lo);
    for _ in 0..opts.max_newton {
        let j = s.jet(omega, a);
        if j.d_amplitude == 0.0 {
            return Some(a);
        }
        if j.d_amplitude2 == 0.0 || !j.d_amplitude2.is_finite() {
            return None;
        }
        let step = j.d_amplitude / j.d_amplitude2;
        a -= step;
        if !(lo..=hi).contains(&a) {
            return None;
        }
        if step.abs() <= floor {
            break;
        }
    }
    (s.jet(omega, a).d_amplitude.abs() <= opts.tol).then_some(a)
}

/// Brackets sign changes of `∂G/∂A` on a uniform scan and refines each by
/// bisection followed by Newton.
fn scan_folds<S: ResponseSurface + ?Sized>(s: &S, omega: f64, range: (f64, f64), opts: &FoldOptions) -> Vec<f64> {
    let n = opts.scan_points.max(2);
    let h = (range.1 - range.0) / (n - 1) as f64;
    let ga = |a: f64| s.jet(omega, a).d_amplitude;
    let mut roots = Vec::new();
    let mut prev = (range.0, ga(range.0));
    for k in 1..n {
        let a = range.0 + k as f64 * h;
        let cur = (a, ga(a));
        if prev.1 == 0.0 || prev.1.signum() != cur.1.signum() {
            let (mut l, mut r) = (prev, cur);
            for _ in 0..40 {
                let m = 0.5 * (l.0 + r.0);
                let gm = ga(m);
                if gm.signum() == l.1.signum() {
                    l = (m, gm);
                } else {
                    r = (m, gm);
                }
            }
            if let Some(root) = newton_fold(s, omega, 0.5 * (l.0 + r.0), range, opts) {
                roots.push(root);
            }
        }
        prev = cur;
    }
    roots
}

/// Traces `∂G/∂A = 0` across `ω_range` inside `support`. At each frequency
/// the branches found so far are continued by Newton in `A` from their
/// previous solution with a tangent predictor; new roots are picked up by a
/// scan. Two branches that meet are terminated there, which is where a cusp
/// sits.
pub fn fold_curve<S: ResponseSurface + ?Sized>(
    surface: &S,
    omega_range: (f64, f64),
    support: &Support,
    opts: &FoldOptions,
) -> Result<Vec<FoldPoint>> {
    let steps = opts.omega_steps.max(2);
    let dw = (omega_range.1 - omega_range.0) / (steps - 1) as f64;

    // live branches: (branch id, last ω, last A)
    let mut live: Vec<(usize, f64, f64)> = Vec::new();
    let mut next_id = 0;
    let mut out = Vec::new();
    for k in 0..steps {
        let omega = omega_range.0 + k as f64 * dw;
        let Some(amplitude_range) = support.range_at(omega) else {
            live.clear();
            continue;
        };
        let merge_tol = 0.5 * (amplitude_range.1 - amplitude_range.0) / opts.scan_points.max(2) as f64;
        let mut current: Vec<(usize, f64)> = Vec::new();
        for &(id, w_prev, a_prev) in &live {
            let j = surface.jet(w_prev, a_prev);
            let slope = if j.d_amplitude2 != 0.0 { -j.d_amplitude_omega / j.d_amplitude2 } else { 0.0 };
            let guess = (a_prev + slope * (omega - w_prev)).clamp(amplitude_range.0, amplitude_range.1);
            if let Some(a) = newton_fold(surface, omega, guess, amplitude_range, opts) {
                if current.iter().all(|&(_, b)| (a - b).abs() > merge_tol) {
                    current.push((id, a));
                }
            }
        }
        for a in scan_folds(surface, omega, amplitude_range, opts) {
            if current.iter().all(|&(_, b)| (a - b).abs() > merge_tol) {
                current.push((next_id, a));
                next_id += 1;
            }
        }
        current.sort_by(|x, y| x.1.total_cmp(&y.1));
        live = current.iter().map(|&(id, a)| (id, omega, a)).collect();
        for &(id, a) in &current {
            out.push(FoldPoint {
                omega,
                amplitude: a,
                gamma: surface.jet(omega, a).value,
                branch: id,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::NoFold);
    }
    Ok(out)
}

/// Fold curve of a trained surface within its data support.
pub fn gp_fold_curve(surface: &GpSurface, omega_range: Option<(f64, f64)>, opts: &FoldOptions) -> Result<Vec<FoldPoint>> {
    let support = surface.support();
    fold_curve(surface, omega_range.unwrap_or(support.omega_range()), &support, opts)
}

/// `omega,A,gamma`
pub fn write_fold_csv<W: Write>(mut w: W, fold: &[FoldPoint]) -> Result<()> {
    writeln!(w, "omega,A,gamma")?;
    for p in fold {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", p.omega, p.amplitude, p.gamma)?;
    }
    Ok(())
}

/// Point on a fixed-forcing slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicePoint {
    pub omega: f64,
    pub amplitude: f64,
    pub is_fold_point: bool,
}

/// Connected piece of the contour `G(ω, A) = Γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub points: Vec<SlicePoint>,
}

impl Branch {
    pub fn fold_points(&self) -> impl Iterator<Item = &SlicePoint> {
        self.points.iter().filter(|p| p.is_fold_point)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceOptions {
    /// Arclength step in coordinates scaled to the unit box.
    pub step: f64,
    pub max_steps: usize,
    pub scan_points: usize,
    pub tol: f64,
}

impl Default for SliceOptions {
    fn default() -> Self {
        Self {
            step: 0.01,
            max_steps: 5000,
            scan_points: 400,
            tol: 1e-10,
        }
    }
}

/// Traces the contour `G(ω, A) = Γ` inside `support`, restricted to the
/// frequencies spanned by `omega_grid`, by pseudo-arclength continuation, seeded from roots
/// found at each grid frequency. Fold points (vertical tangent in `ω`, i.e.
/// `∂G/∂A = 0`) are located by a two-dimensional Newton solve and inserted
/// into the branch.
pub fn frequency_response<S: ResponseSurface + ?Sized>(
    surface: &S,
    gamma: f64,
    omega_grid: &[f64],
    support: &Support,
    opts: &SliceOptions,
) -> Result<Vec<Branch>> {
    if omega_grid.is_empty() {
        return Err(Error::NoIntersection { gamma });
    }
    let w_lo = omega_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let w_hi = omega_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (a_lo, a_hi) = support.amplitude_hull();
    let tracer = Tracer {
        surface,
        gamma,
        support,
        box_lo: [w_lo, a_lo],
        box_hi: [w_hi, a_hi],
        opts,
    };

    let mut branches: Vec<Branch> = Vec::new();
    for &omega in omega_grid {
        let Some(range) = support.range_at(omega) else { continue };
        for a in tracer.roots_at(omega, range) {
            let seen = branches.iter().any(|b| tracer.near_branch(b, [omega, a]));
            if !seen {
                branches.push(tracer.trace([omega, a]));
            }
        }
    }
    if branches.is_empty() {
        return Err(Error::NoIntersection { gamma });
    }
    Ok(branches)
}

/// Slice of a trained surface within its data support.
pub fn gp_frequency_response(surface: &GpSurface, gamma: f64, omega_grid: &[f64], opts: &SliceOptions) -> Result<Vec<Branch>> {
    frequency_response(surface, gamma, omega_grid, &surface.support(), opts)
}

struct Tracer<'a, S: ?Sized> {
    surface: &'a S,
    gamma: f64,
    support: &'a Support,
    box_lo: [f64; 2],
    box_hi: [f64; 2],
    opts: &'a SliceOptions,
}

impl<S: ResponseSurface + ?Sized> Tracer<'_, S> {
    fn span(&self, d: usize) -> f64 {
        let s = self.box_hi[d] - self.box_lo[d];
        if s > 0.0 { s } else { 1.0 }
    }

    fn to_unit(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.box_lo[0]) / self.span(0), (p[1] - self.box_lo[1]) / self.span(1)]
    }

    fn from_unit(&self, u: [f64; 2]) -> [f64; 2] {
        [self.box_lo[0] + u[0] * self.span(0), self.box_lo[1] + u[1] * self.span(1)]
    }

    fn inside(&self, u: [f64; 2]) -> bool {
        let eps = 1e-9;
        let p = self.from_unit(u);
        (-eps..=1.0 + eps).contains(&u[0]) && self.support.contains(p[0], p[1])
    }

    /// Residual and gradient of `G − Γ` in unit coordinates.
    fn residual(&self, u: [f64; 2]) -> (f64, [f64; 2], SurfaceJet) {
        let p = self.from_unit(u);
        let j = self.surface.jet(p[0], p[1]);
        (j.value - self.gamma, [j.d_omega * self.span(0), j.d_amplitude * self.span(1)], j)
    }

    fn roots_at(&self, omega: f64, (lo, hi): (f64, f64)) -> Vec<f64> {
        let n = self.opts.scan_points.max(2);
        let h = (hi - lo) / (n - 1) as f64;
        let f = |a: f64| self.surface.jet(omega, a).value - self.gamma;
        let mut roots = Vec::new();
        let mut prev = (lo, f(lo));
        for k in 1..n {
            let a = lo + k as f64 * h;
            let cur = (a, f(a));
            if prev.1 == 0.0 || prev.1.signum() != cur.1.signum() {
                let (mut l, mut r) = (prev, cur);
                for _ in 0..60 {
                    let m = 0.5 * (l.0 + r.0);
                    let fm = f(m);
                    if fm.signum() == l.1.signum() {
                        l = (m, fm);
                    } else {
                        r = (m, fm);
                    }
                }
                roots.push(0.5 * (l.0 + r.0));
            }
            prev = cur;
        }
        roots
    }

    fn near_branch(&self, b: &Branch, p: [f64; 2]) -> bool {
        let u = self.to_unit(p);
        let tol = 2.0 * self.opts.step;
        b.points.windows(2).any(|w| {
            let a = self.to_unit([w[0].omega, w[0].amplitude]);
            let c = self.to_unit([w[1].omega, w[1].amplitude]);
            segment_distance(u, a, c) < tol
        }) || b.points.iter().any(|q| {
            let v = self.to_unit([q.omega, q.amplitude]);
            (v[0] - u[0]).hypot(v[1] - u[1]) < tol
        })
    }

    fn tangent(&self, u: [f64; 2], prev: Option<[f64; 2]>) -> [f64; 2] {
        let (_, g, _) = self.residual(u);
        let n = g[0].hypot(g[1]);
        let mut t = if n > 0.0 { [g[1] / n, -g[0] / n] } else { [1.0, 0.0] };
        let flip = match prev {
            Some(p) => t[0] * p[0] + t[1] * p[1] < 0.0,
            None => t[0] < 0.0,
        };
        if flip {
            t = [-t[0], -t[1]];
        }
        t
    }

    /// Pseudo-arclength corrector: `G = Γ` together with the hyperplane
    /// orthogonal to the tangent through the predictor.
    fn correct(&self, pred: [f64; 2], t: [f64; 2]) -> Option<[f64; 2]> {
        let mut u = pred;
        for _ in 0..30 {
            let (r, g, _) = self.residual(u);
            let c = t[0] * (u[0] - pred[0]) + t[1] * (u[1] - pred[1]);
            if r.abs() <= self.opts.tol && c.abs() <= 1e-12 {
                return Some(u);
            }
            let det = g[0] * t[1] - g[1] * t[0];
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            let du = [(-r * t[1] + c * g[1]) / det, (r * t[0] - c * g[0]) / det];
            u = [u[0] + du[0], u[1] + du[1]];
        }
        let (r, _, _) = self.residual(u);
        (r.abs() <= self.opts.tol * 1e3).then_some(u)
    }

    /// Newton on `(G − Γ, ∂G/∂A)` in raw coordinates, started between two
    /// consecutive branch points that straddle a vertical tangent.
    fn locate_fold(&self, a: [f64; 2], b: [f64; 2]) -> Option<[f64; 2]> {
        let mut p = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        for _ in 0..30 {
            let j = self.surface.jet(p[0], p[1]);
            let f = [j.value - self.gamma, j.d_amplitude];
            // Jacobian rows: [G_ω, G_A], [G_Aω, G_AA]
            let det = j.d_omega * j.d_amplitude2 - j.d_amplitude * j.d_amplitude_omega;
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            let dw = (f[0] * j.d_amplitude2 - j.d_amplitude * f[1]) / det;
            let da = (j.d_omega * f[1] - j.d_amplitude_omega * f[0]) / det;
            p = [p[0] - dw, p[1] - da];
            if dw.abs() <= 1e-12 * self.span(0) && da.abs() <= 1e-12 * self.span(1) {
                break;
            }
        }
        let u = self.to_unit(p);
        let ua = self.to_unit(a);
        let ub = self.to_unit(b);
        let radius = 2.0 * (ua[0] - ub[0]).hypot(ua[1] - ub[1]);
        (self.inside(u) && (u[0] - ua[0]).hypot(u[1] - ua[1]) <= radius).then_some(p)
    }

    fn walk(&self, start: [f64; 2], dir: f64) -> Vec<[f64; 2]> {
        let mut u = self.to_unit(start);
        let mut t = self.tangent(u, None);
        t = [dir * t[0], dir * t[1]];
        let origin = u;
        let mut path = Vec::new();
        for k in 0..self.opts.max_steps {
            let pred = [u[0] + self.opts.step * t[0], u[1] + self.opts.step * t[1]];
            let Some(next) = self.correct(pred, t) else { break };
            if !self.inside(next) {
                break;
            }
            // closed contour
            if k > 2 && (next[0] - origin[0]).hypot(next[1] - origin[1]) < 0.5 * self.opts.step {
                break;
            }
            path.push(self.from_unit(next));
            t = self.tangent(next, Some(t));
            u = next;
        }
        path
    }

    fn trace(&self, seed: [f64; 2]) -> Branch {
        let mut back = self.walk(seed, -1.0);
        back.reverse();
        let forward = self.walk(seed, 1.0);
        let raw: Vec<[f64; 2]> = back.into_iter().chain(std::iter::once(seed)).chain(forward).collect();

        let mut points = Vec::with_capacity(raw.len() + 4);
        for (i, p) in raw.iter().enumerate() {
            points.push(SlicePoint {
                omega: p[0],
                amplitude: p[1],
                is_fold_point: false,
            });
            if let Some(q) = raw.get(i + 1) {
                let ga = self.surface.jet(p[0], p[1]).d_amplitude;
                let gb = self.surface.jet(q[0], q[1]).d_amplitude;
                if ga.signum() != gb.signum() {
                    if let Some(f) = self.locate_fold(*p, *q) {
                        points.push(SlicePoint {
                            omega: f[0],
                            amplitude: f[1],
                            is_fold_point: true,
                        });
                    }
                }
            }
        }
        Branch { points }
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - s * ab[0]).hypot(p[1] - a[1] - s * ab[1])
}

/// `omega,A,branch_id,is_fold_point`
pub fn write_slice_csv<W: Write>(mut w: W, branches: &[Branch]) -> Result<()> {
    writeln!(w, "omega,A,branch_id,is_fold_point")?;
    for (id, b) in branches.iter().enumerate() {
        for p in &b.points {
            writeln!(w, "{:.16e},{:.16e},{},{}", p.omega, p.amplitude, id, p.is_fold_point)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Cubic;

    impl ResponseSurface for Cubic {
        fn jet(&self, _omega: f64, a: f64) -> SurfaceJet {
            SurfaceJet {
                value: a * a * a - a + 2.0,
                d_omega: 0.0,
                d_amplitude: 3.0 * a * a - 1.0,
                d_amplitude2: 6.0 * a,
                d_amplitude_omega: 0.0,
            }
        }
    }

    /// `G = (A − c(ω))³ − s(ω)(A − c(ω)) + 2`: folds for `s > 0`, a cusp where
    /// `s` crosses zero.
    struct Cusp;

    impl ResponseSurface for Cusp {
        fn jet(&self, w: f64, a: f64) -> SurfaceJet {
            let s = w;
            let z = a - 0.2 * w;
            SurfaceJet {
                value: z * z * z - s * z + 2.0,
                d_omega: -0.6 * z * z - z + 0.2 * s,
                d_amplitude: 3.0 * z * z - s,
                d_amplitude2: 6.0 * z,
                d_amplitude_omega: -1.2 * z - 1.0,
            }
        }
    }

    #[test]
    fn cubic_folds() {
        let fold = fold_curve(&Cubic, (0.0, 1.0), &Support::rectangle((0.0, 1.0), (-2.0, 2.0)), &FoldOptions::default()).unwrap();
        let r = 1.0 / 3f64.sqrt();
        for p in &fold {
            assert!((p.amplitude.abs() - r).abs() < 1e-6, "{p:?}");
        }
        assert_eq!(fold.iter().map(|p| p.branch).max(), Some(1));
    }

    #[test]
    fn cusp_branches_merge() {
        let fold = fold_curve(&Cusp, (-0.5, 1.0), &Support::rectangle((-0.5, 1.0), (-2.0, 2.0)), &FoldOptions::default()).unwrap();
        assert!(fold.iter().all(|p| p.omega >= -1e-9));
        let far: Vec<_> = fold.iter().filter(|p| (p.omega - 1.0).abs() < 1e-12).collect();
        assert_eq!(far.len(), 2);
        for p in &fold {
            assert!(Cusp.jet(p.omega, p.amplitude).d_amplitude.abs() <= 1e-8);
        }
    }

    #[test]
    fn cubic_slice_has_folds() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        // G = 2 has three roots in A: −1, 0, 1; the slice is three horizontal lines
        let br = frequency_response(&Cubic, 2.0, &grid, &Support::rectangle((0.0, 1.0), (-2.0, 2.0)), &SliceOptions::default()).unwrap();
        assert_eq!(br.len(), 3);
        assert!(br.iter().all(|b| b.fold_points().count() == 0));
    }

    #[test]
    fn cusp_slice_is_s_shaped() {
        // at Γ = 2 the contour is z = 0 or z² = s: a line and a parabola
        // opening in ω, with a vertical tangent at s = 0
        let grid: Vec<f64> = (0..=30).map(|k| -0.5 + k as f64 * 0.05).collect();
        let br = frequency_response(&Cusp, 2.2, &grid, &Support::rectangle((-0.5, 1.0), (-2.0, 2.0)), &SliceOptions::default()).unwrap();
        let folds: Vec<_> = br.iter().flat_map(|b| b.fold_points()).collect();
        assert!(!folds.is_empty());
        for f in folds {
            let j = Cusp.jet(f.omega, f.amplitude);
            assert!(j.d_amplitude.abs() < 1e-8 && (j.value - 2.2).abs() < 1e-8);
        }
    }

    #[test]
    fn gp_interpolates_single_point() {
        let p = [SurfacePoint {
            omega: 1.0,
            amplitude: 0.5,
            gamma: 3.0,
        }];
        let scaling = Standardisation {
            input_mean: [0.0, 0.0],
            input_scale: [1.0, 1.0],
            output_mean: 0.0,
            output_scale: 1.0,
        };
        let h = Hyperparameters {
            noise_variance: 1e-14,
            ..Default::default()
        };
        let gp = GpSurface::with_hyperparameters(&p, h, scaling).unwrap();
        assert!((gp.predict(1.0, 0.5).0 - 3.0).abs() < 1e-10);
    }

    #[test]
    fn jet_matches_finite_differences() {
        let pts: Vec<SurfacePoint> = (0..60)
            .map(|k| {
                let w = 1.0 + (k % 6) as f64 * 0.2;
                let a = 0.1 + (k / 6) as f64 * 0.1;
                SurfacePoint {
                    omega: w,
                    amplitude: a,
                    gamma: a * a * a - w * a + 2.0,
                }
            })
            .collect();
        let gp = gp_fit(&pts, None, &GpFitOptions::default()).unwrap();
        let (w, a) = (1.37, 0.52);
        let j = gp.jet(w, a);
        let h = 1e-4;
        let g = |w: f64, a: f64| gp.jet(w, a);
        // fourth-order central stencil
        let fd = |f: &dyn Fn(f64) -> f64| (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
        let fd_a = fd(&|d| g(w, a + d).value);
        let fd_w = fd(&|d| g(w + d, a).value);
        let fd_aa = fd(&|d| g(w, a + d).d_amplitude);
        let fd_aw = fd(&|d| g(w + d, a).d_amplitude);
        for (an, fd) in [(j.d_amplitude, fd_a), (j.d_omega, fd_w), (j.d_amplitude2, fd_aa), (j.d_amplitude_omega, fd_aw)] {
            assert!((an - fd).abs() <= 1e-6 * an.abs().max(1.0), "{an} vs {fd}");
        }
        assert!((gp.predict(w, a).0 - j.value).abs() < 1e-9);
    }
}
