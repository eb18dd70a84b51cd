//! Reference results for the simulated plant, computed without the
//! controller or the identification pipeline: variational and finite
//! difference monodromy matrices, Newton shooting, closed forms for the
//! linear oscillator and generators of data that lies exactly in the ARX
//! model class.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rig::{BoxMuller, Plant, RigParams};
use crate::sysid::{ArxModel, FloquetResult, PerturbationRecord};

/// Oracle steps per period relative to the rig.
pub const STEP_REFINEMENT: usize = 10;

/// Open-loop input `Γ cos(ωt + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitInput {
    pub gamma: f64,
    pub omega: f64,
    pub phase: f64,
}

impl OrbitInput {
    pub fn new(gamma: f64, omega: f64, phase: f64) -> Self {
        Self { gamma, omega, phase }
    }

    pub fn period(&self) -> f64 {
        TAU / self.omega
    }

    fn at(&self, t: f64) -> f64 {
        self.gamma * (self.omega * t + self.phase).cos()
    }
}

/// Integrates the plant (and optionally its variational equation) over
/// whole periods with classical RK4.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    plant: Plant,
    input: OrbitInput,
    steps: usize,
}

impl Integrator {
    pub fn new(params: &RigParams, input: OrbitInput) -> Result<Self> {
        params.validate()?;
        if !(input.omega > 0.0) {
            return Err(Error::InvalidParameter("forcing frequency must be positive".into()));
        }
        Ok(Self {
            plant: params.plant(),
            input,
            steps: params.steps_per_period(input.omega) * STEP_REFINEMENT,
        })
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps
    }

    fn rhs(&self, t: f64, x: f64, v: f64) -> (f64, f64) {
        (v, self.plant.acceleration(x, v, self.input.at(t)))
    }

    /// State after one period starting at `t = 0`.
    pub fn flow(&self, state: Vector2<f64>) -> Vector2<f64> {
        self.trajectory(state, 1, 0).0
    }

    /// State after `periods` periods; also returns the state at every
    /// `stride`-th step when `stride > 0`.
    pub fn trajectory(&self, state: Vector2<f64>, periods: usize, stride: usize) -> (Vector2<f64>, Vec<[f64; 2]>) {
        let h = self.input.period() / self.steps as f64;
        let (mut x, mut v) = (state[0], state[1]);
        let mut samples = Vec::new();
        for _ in 0..periods {
            for s in 0..self.steps {
                if stride > 0 && s % stride == 0 {
                    samples.push([x, v]);
                }
                let t = s as f64 * h;
                let k1 = self.rhs(t, x, v);
                let k2 = self.rhs(t + 0.5 * h, x + 0.5 * h * k1.0, v + 0.5 * h * k1.1);
                let k3 = self.rhs(t + 0.5 * h, x + 0.5 * h * k2.0, v + 0.5 * h * k2.1);
                let k4 = self.rhs(t + h, x + h * k3.0, v + h * k3.1);
                x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            }
        }
        (Vector2::new(x, v), samples)
    }

    /// One period of the plant together with `dΦ/dt = J(x(t)) Φ`, `Φ(0) = I`.
    pub fn flow_with_variation(&self, state: Vector2<f64>) -> (Vector2<f64>, Matrix2<f64>) {
        let h = self.input.period() / self.steps as f64;
        let c = self.plant.damping();
        let f = |t: f64, z: &[f64; 6]| -> [f64; 6] {
            let (x, v) = (z[0], z[1]);
            let k = self.plant.stiffness(x);
            // Φ = [[z2, z3], [z4, z5]]
            [
                v,
                self.plant.acceleration(x, v, self.input.at(t)),
                z[4],
                z[5],
                -k * z[2] - c * z[4],
                -k * z[3] - c * z[5],
            ]
        };
        let mut z = [state[0], state[1], 1.0, 0.0, 0.0, 1.0];
        let axpy = |z: &[f64; 6], a: f64, d: &[f64; 6]| -> [f64; 6] {
            let mut out = *z;
            out.iter_mut().zip(d).for_each(|(o, di)| *o += a * di);
            out
        };
        for s in 0..self.steps {
            let t = s as f64 * h;
            let k1 = f(t, &z);
            let k2 = f(t + 0.5 * h, &axpy(&z, 0.5 * h, &k1));
            let k3 = f(t + 0.5 * h, &axpy(&z, 0.5 * h, &k2));
            let k4 = f(t + h, &axpy(&z, h, &k3));
            for i in 0..6 {
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        (Vector2::new(z[0], z[1]), Matrix2::new(z[2], z[3], z[4], z[5]))
    }
}

/// Outcome of Newton shooting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingResult {
    pub state: Vector2<f64>,
    pub iterations: usize,
    /// `‖φ_T(s) − s‖` at the returned state.
    pub residual: f64,
}

pub const SHOOTING_TOL: f64 = 1e-10;

/// Newton iteration on the return map `φ_T(s) − s` with the variational
/// matrix as Jacobian.
pub fn refine_orbit_shooting(
    params: &RigParams,
    input: OrbitInput,
    guess: [f64; 2],
    max_iter: usize,
) -> Result<ShootingResult> {
    let integ = Integrator::new(params, input)?;
    let mut s = Vector2::new(guess[0], guess[1]);
    let mut iterations = 0;
    loop {
        let (end, phi) = integ.flow_with_variation(s);
        let r = end - s;
        let residual = r.norm();
        if !residual.is_finite() {
            return Err(Error::ShootingDiverged { iterations, residual });
        }
        if residual <= SHOOTING_TOL {
            return Ok(ShootingResult {
                state: s,
                iterations,
                residual,
            });
        }
        if iterations >= max_iter {
            return Err(Error::ShootingDiverged { iterations, residual });
        }
        let jac = phi - Matrix2::identity();
        let step = jac
            .lu()
            .solve(&r)
            .ok_or(Error::ShootingDiverged { iterations, residual })?;
        s -= step;
        iterations += 1;
    }
}

/// Variational monodromy of an orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalResult {
    pub monodromy: Matrix2<f64>,
    pub multipliers: [Complex64; 2],
    /// `(x, ẋ)` at `t = 0` on the orbit.
    pub state: Vector2<f64>,
    pub input: OrbitInput,
    pub shooting_iterations: usize,
    pub residual: f64,
}

impl VariationalResult {
    pub fn to_floquet(&self) -> FloquetResult {
        let m = DMatrix::from_fn(2, 2, |r, c| self.monodromy[(r, c)]);
        FloquetResult::from_matrix("oracle", &m, 0, 2, self.residual, 1.0)
    }

    pub fn determinant(&self) -> f64 {
        self.monodromy.determinant()
    }
}

/// Maximum Newton iterations used to put a guess on the orbit.
pub const DEFAULT_SHOOTING_ITER: usize = 20;

/// Refines `guess` onto the periodic orbit and integrates the variational
/// equation over one period.
pub fn variational_multipliers(params: &RigParams, input: OrbitInput, guess: [f64; 2]) -> Result<VariationalResult> {
    let shot = refine_orbit_shooting(params, input, guess, DEFAULT_SHOOTING_ITER).map_err(|e| match e {
        Error::ShootingDiverged { residual, .. } => Error::NotPeriodic {
            residual,
            tol: SHOOTING_TOL,
        },
        other => other,
    })?;
    let integ = Integrator::new(params, input)?;
    let (_, phi) = integ.flow_with_variation(shot.state);
    Ok(VariationalResult {
        monodromy: phi,
        multipliers: eigenvalues2(&phi),
        state: shot.state,
        input,
        shooting_iterations: shot.iterations,
        residual: shot.residual,
    })
}

/// Central-difference return-map Jacobian with steps `±ε` along each axis
/// (velocity steps scaled by `ω`).
pub fn brute_force_monodromy(params: &RigParams, input: OrbitInput, state: [f64; 2], eps: f64) -> Result<Matrix2<f64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
    }
    let integ = Integrator::new(params, input)?;
    let s = Vector2::new(state[0], state[1]);
    let ret = (integ.flow(s) - s).norm();
    if !(ret <= 1e-8) {
        return Err(Error::NotPeriodic { residual: ret, tol: 1e-8 });
    }
    let mut m = Matrix2::zeros();
    for axis in 0..2 {
        let h = if axis == 0 { eps } else { eps * input.omega };
        let mut dp = s;
        let mut dm = s;
        dp[axis] += h;
        dm[axis] -= h;
        let col = (integ.flow(dp) - integ.flow(dm)) / (2.0 * h);
        m.set_column(axis, &col);
    }
    Ok(m)
}

fn eigenvalues2(m: &Matrix2<f64>) -> [Complex64; 2] {
    let tr = m.trace();
    let det = m.determinant();
    let disc = Complex64::new(tr * tr - 4.0 * det, 0.0).sqrt();
    let a = (Complex64::new(tr, 0.0) + disc) / 2.0;
    let b = (Complex64::new(tr, 0.0) - disc) / 2.0;
    if a.norm() >= b.norm() {
        [a, b]
    } else {
        [b, a]
    }
}

/// `|H(iω)| = 1 / √((ω₀² − ω²)² + (2ζω₀ω)²)` of the linear plant, in m per
/// input unit.
pub fn linear_gain(params: &RigParams, omega: f64) -> f64 {
    let w0 = params.natural_frequency;
    let c = 2.0 * params.damping_ratio * w0;
    1.0 / ((w0 * w0 - omega * omega).powi(2) + (c * omega).powi(2)).sqrt()
}

/// Floquet multipliers `exp((−ζω₀ ± iω_d) T)` of the linear plant.
pub fn linear_multipliers(params: &RigParams, omega: f64) -> [Complex64; 2] {
    let w0 = params.natural_frequency;
    let z = params.damping_ratio;
    let wd = w0 * (1.0 - z * z).max(0.0).sqrt();
    let t = TAU / omega;
    let sigma = (-z * w0 * t).exp();
    [Complex64::from_polar(sigma, wd * t), Complex64::from_polar(sigma, -wd * t)]
}

/// Liouville's determinant `exp(−2ζω₀T)`.
pub fn liouville_determinant(params: &RigParams, omega: f64) -> f64 {
    (-2.0 * params.damping_ratio * params.natural_frequency * TAU / omega).exp()
}

/// Equivalent linear stiffness `(1/πA) ∫ N(A cos ψ) cos ψ dψ` of the
/// restoring force at amplitude `A`.
pub fn equivalent_stiffness(plant: &Plant, amplitude: f64) -> f64 {
    if amplitude == 0.0 {
        return plant.stiffness(0.0);
    }
    const NODES: usize = 256;
    let sum: f64 = (0..NODES)
        .map(|k| {
            let psi = TAU * k as f64 / NODES as f64;
            plant.restoring(amplitude * psi.cos()) * psi.cos()
        })
        .sum();
    2.0 * sum / (NODES as f64 * amplitude)
}

/// Single-harmonic balance: forcing amplitude and the state at `t = 0` of an
/// orbit with fundamental amplitude `A` under `Γ cos(ωt + φ)`.
pub fn harmonic_balance_guess(params: &RigParams, omega: f64, amplitude: f64, phase: f64) -> (OrbitInput, [f64; 2]) {
    let plant = params.plant();
    let k = equivalent_stiffness(&plant, amplitude) - omega * omega;
    let c = plant.damping() * omega;
    let gamma = amplitude * k.hypot(c);
    let lag = c.atan2(k);
    // x = A cos(ωt + φ − lag)
    let state = [amplitude * (phase - lag).cos(), -amplitude * omega * (phase - lag).sin()];
    (OrbitInput::new(gamma, omega, phase), state)
}

/// Zero-order-hold discretisation `(Φ, Γ)` of the linear plant over `dt`.
pub fn zoh_discretization(params: &RigParams, dt: f64) -> (Matrix2<f64>, Vector2<f64>) {
    let w0 = params.natural_frequency;
    let c = 2.0 * params.damping_ratio * w0;
    let aug = Matrix3::new(0.0, 1.0, 0.0, -w0 * w0, -c, 1.0, 0.0, 0.0, 0.0) * dt;
    let e = aug.exp();
    (
        Matrix2::new(e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]),
        Vector2::new(e[(0, 2)], e[(1, 2)]),
    )
}

/// Coefficients `(b, a)` of the exact order-2 ARX form of the sampled linear
/// plant: `y_s + b₁y_{s−1} + b₂y_{s−2} = a₀k_s + a₁k_{s−1} + a₂k_{s−2}`.
pub fn linear_arx_coefficients(params: &RigParams, dt: f64) -> ([f64; 2], [f64; 3]) {
    let (phi, g) = zoh_discretization(params, dt);
    let b = [-phi.trace(), phi.determinant()];
    let a = [0.0, g[0], phi[(0, 1)] * g[1] - phi[(1, 1)] * g[0]];
    (b, a)
}

/// ARX data from the sampled linear plant: Gaussian input `k` of standard
/// deviation `input_std`, white equation error of standard deviation
/// `error_std`, `m` samples per period at forcing frequency `omega`.
pub fn linear_arx_record(
    params: &RigParams,
    omega: f64,
    m: usize,
    periods: usize,
    input_std: f64,
    error_std: f64,
    seed: u64,
) -> Result<PerturbationRecord> {
    let (b, a) = linear_arx_coefficients(params, TAU / omega / m as f64);
    let model = ArxModel {
        m_samples: m,
        n_order: 2,
        b: vec![b.to_vec(); m],
        a: vec![a.to_vec(); m],
        rss: vec![0.0; m],
        equations: vec![0; m],
        condition: vec![1.0; m],
    };
    simulate_arx(&model, omega, periods, input_std, error_std, seed)
}

/// Simulates `model` driven by Gaussian input and equation error.
pub fn simulate_arx(
    model: &ArxModel,
    omega: f64,
    periods: usize,
    input_std: f64,
    error_std: f64,
    seed: u64,
) -> Result<PerturbationRecord> {
    let (m, n) = (model.m_samples, model.n_order);
    let len = periods * m;
    let mut gauss = BoxMuller::new(seed);
    let k: Vec<f64> = (0..len).map(|_| input_std * gauss.next_gaussian()).collect();
    let mut y = vec![0.0; len];
    for g in 0..len {
        let i = (m - g % m) % m;
        let mut v = error_std * gauss.next_gaussian();
        for j in 1..=n.min(g) {
            v -= model.b[i][j - 1] * y[g - j];
        }
        for j in 0..=n.min(g) {
            v += model.a[i][j] * k[g - j];
        }
        y[g] = v;
    }
    PerturbationRecord::from_samples(omega, m, y, k)
}

/// A random periodic ARX model whose one-period map has spectral radius
/// below one. Each row's `b` coefficients are those of a polynomial with real
/// roots of modulus below `radius`. Stable rows do not guarantee a stable
/// period map, so unstable draws are repeated with the radius shrunk by 10%;
/// as the radius vanishes the period map tends to a nilpotent shift.
pub fn random_stable_arx(m: usize, n: usize, radius: f64, seed: u64) -> ArxModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut radius = radius;
    loop {
        let model = random_arx(&mut rng, m, n, radius);
        let stable = crate::sysid::monodromy(&model).is_ok_and(|r| r.moduli().iter().all(|&x| x < 1.0));
        if stable {
            return model;
        }
        radius *= 0.9;
    }
}

fn random_arx(rng: &mut ChaCha8Rng, m: usize, n: usize, radius: f64) -> ArxModel {
    let mut b = Vec::with_capacity(m);
    let mut a = Vec::with_capacity(m);
    for _ in 0..m {
        // product of (1 − r_j q⁻¹) with real roots r_j
        let mut poly = vec![1.0];
        for _ in 0..n {
            let r: f64 = rng.gen_range(-radius..radius);
            let mut next = vec![0.0; poly.len() + 1];
            for (idx, &c) in poly.iter().enumerate() {
                next[idx] += c;
                next[idx + 1] -= r * c;
            }
            poly = next;
        }
        b.push(poly[1..].to_vec());
        a.push((0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    ArxModel {
        m_samples: m,
        n_order: n,
        b,
        a,
        rss: vec![0.0; m],
        equations: vec![0; m],
        condition: vec![1.0; m],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_multipliers_match_closed_form() {
        let p = RigParams::linear();
        let w = TAU * 2.8;
        let (input, guess) = harmonic_balance_guess(&p, w, 0.01, 0.0);
        let res = variational_multipliers(&p, input, guess).unwrap();
        let exact = linear_multipliers(&p, w);
        for (a, b) in res.multipliers.iter().zip(&exact) {
            assert!((a.norm() - b.norm()).abs() < 1e-10);
        }
        assert!((res.multipliers[0].im.abs() - exact[0].im.abs()).abs() < 1e-10);
        assert!((res.determinant() - liouville_determinant(&p, w)).abs() < 1e-12);
    }

    #[test]
    fn conservative_linear_flow_preserves_area() {
        let p = RigParams {
            damping_ratio: 0.0,
            cubic_stiffness: 0.0,
            ..RigParams::default()
        };
        let input = OrbitInput::new(0.0, TAU * 2.8, 0.0);
        let res = variational_multipliers(&p, input, [0.0, 0.0]).unwrap();
        for mu in res.multipliers {
            assert!((mu.norm() - 1.0).abs() < 1e-8);
        }
        assert_eq!(res.shooting_iterations, 0);
        let brute = brute_force_monodromy(&p, input, [0.0, 0.0], 1e-6).unwrap();
        assert!((brute - res.monodromy).abs().max() < 1e-7);
    }

    #[test]
    fn linear_harmonic_balance_is_exact() {
        let p = RigParams::linear();
        let w = TAU * 3.0;
        let (input, guess) = harmonic_balance_guess(&p, w, 0.02, 0.4);
        assert!((input.gamma - 0.02 / linear_gain(&p, w)).abs() < 1e-12);
        let shot = refine_orbit_shooting(&p, input, guess, 5).unwrap();
        assert!(shot.iterations <= 1);
        assert!((shot.state[0] - guess[0]).abs() < 1e-8);
    }

    #[test]
    fn zoh_matches_closed_form_period_map() {
        let p = RigParams::linear();
        let w = TAU * 2.8;
        let (phi, _) = zoh_discretization(&p, TAU / w / 10.0);
        let full = phi.pow(10);
        let mu = eigenvalues2(&full);
        let exact = linear_multipliers(&p, w);
        assert!((mu[0].norm() - exact[0].norm()).abs() < 1e-12);
        assert!((mu[0].im.abs() - exact[0].im.abs()).abs() < 1e-12);
    }

    #[test]
    fn shooting_guard() {
        let p = RigParams::default();
        let w = TAU * 3.0;
        let (input, _) = harmonic_balance_guess(&p, w, 0.04, 0.0);
        let err = refine_orbit_shooting(&p, input, [0.0, 0.0], 0).unwrap_err();
        assert!(matches!(err, Error::ShootingDiverged { .. }));
    }
}
