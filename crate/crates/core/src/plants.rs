//! Plant dynamics, disturbance generation and the fixed-step integrator.
//!
//! Three plants are provided: the diagonalised linear pendulum pair used by
//! the linear scheme, the full nonlinear pendulum (as a truth model for the
//! same scheme), and scalar nonlinear maps for the periodic scheme. States are
//! carried as `[f64; 2]`; scalar plants use the first entry only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type State = [f64; 2];
type Mat2 = [[f64; 2]; 2];

/// Physical parameters of the two-propeller inverted pendulum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    #[serde(rename = "m1_kg")]
    pub m1: f64,
    #[serde(rename = "m2_kg")]
    pub m2: f64,
    /// Mass entering the gravity torque `m·g·l`. Kept separate from `m1`
    /// and `m2` because the reported coefficients are not the plain sum.
    #[serde(rename = "total_mass_kg")]
    pub total_mass: f64,
    #[serde(rename = "length_m")]
    pub length: f64,
    #[serde(rename = "inertia_kg_m2")]
    pub inertia: f64,
    #[serde(rename = "g_acc_m_s2")]
    pub g_acc: f64,
    /// Thrust per unit of motor input (N).
    #[serde(rename = "k_xi_n")]
    pub k_xi: f64,
    /// Round the companion-form coefficients to this many decimals before
    /// diagonalising.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub printed_decimals: Option<u32>,
}

impl PendulumParams {
    /// The laboratory prototype. `total_mass` is back-solved from the
    /// reported gravity coefficient 53.58 and coefficients are rounded to
    /// two decimals, which reproduces the reported diagonal form.
    pub fn laboratory() -> Self {
        let inertia = 3.57e-4;
        let g_acc = 9.81;
        let length = 0.180;
        Self {
            m1: 0.030,
            m2: 0.010,
            total_mass: 53.58 * inertia / (g_acc * length),
            length,
            inertia,
            g_acc,
            k_xi: 0.001,
            printed_decimals: Some(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("total_mass", self.total_mass),
            ("length", self.length),
            ("inertia", self.inertia),
            ("g_acc", self.g_acc),
            ("k_xi", self.k_xi),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("pendulum parameter {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `(m·g·l/I, k_ξ·l/I)`: the nonzero entries of Ã and B̃.
    pub fn companion_coefficients(&self) -> (f64, f64) {
        let a21 = self.total_mass * self.g_acc * self.length / self.inertia;
        let b2 = self.k_xi * self.length / self.inertia;
        match self.printed_decimals {
            Some(d) => (round_to(a21, d), round_to(b2, d)),
            None => (a21, b2),
        }
    }
}

fn round_to(v: f64, decimals: u32) -> f64 {
    let s = 10f64.powi(decimals as i32);
    (v * s).round() / s
}

/// The pendulum after the change of coordinates `x = P⁻¹·x̃` that makes the
/// state matrix diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDiagonalSystem {
    pub lambda1: f64,
    pub lambda2: f64,
    pub b: [f64; 2],
    pub p: Mat2,
    pub p_inv: Mat2,
    pub a_tilde: Mat2,
    pub b_tilde: [f64; 2],
    /// Disturbance bound on each diagonal coordinate.
    pub m: f64,
    /// State-feedback row applied to the diagonal estimate: `u = −K·x̂`.
    pub k: [f64; 2],
}

impl LinearDiagonalSystem {
    pub fn with_disturbance_bound(mut self, m: f64) -> Self {
        self.m = m;
        self
    }

    pub fn with_gain(mut self, k: [f64; 2]) -> Self {
        self.k = k;
        self
    }

    pub fn to_diagonal(&self, physical: State) -> State {
        mat_vec(&self.p_inv, physical)
    }

    pub fn to_physical(&self, diagonal: State) -> State {
        mat_vec(&self.p, diagonal)
    }

    pub fn feedback(&self, xhat: State) -> f64 {
        -(self.k[0] * xhat[0] + self.k[1] * xhat[1])
    }

    /// `‖P·diag(λ₁,λ₂)·P⁻¹ − Ã‖∞ / ‖Ã‖∞`.
    pub fn round_trip_error(&self) -> f64 {
        let d = [[self.lambda1, 0.0], [0.0, self.lambda2]];
        let back = mat_mul(&mat_mul(&self.p, &d), &self.p_inv);
        let mut diff = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                diff[i][j] = back[i][j] - self.a_tilde[i][j];
            }
        }
        norm_inf(&diff) / norm_inf(&self.a_tilde)
    }
}

/// Linearise the pendulum about the upright equilibrium and diagonalise it.
///
/// Eigenvalues are sorted positive first; eigenvectors are unit-norm with a
/// non-negative second component.
pub fn linearize_and_diagonalize(params: &PendulumParams) -> Result<LinearDiagonalSystem> {
    params.validate()?;
    let (a21, b2) = params.companion_coefficients();
    let a_tilde = [[0.0, 1.0], [a21, 0.0]];
    let b_tilde = [0.0, b2];
    let (lambdas, p) = eigen_decompose(&a_tilde)?;
    let p_inv = mat_inv(&p).ok_or_else(|| Error::infeasible("eigenvector matrix P is singular"))?;
    let b = mat_vec(&p_inv, b_tilde);
    let sys = LinearDiagonalSystem {
        lambda1: lambdas[0],
        lambda2: lambdas[1],
        b,
        p,
        p_inv,
        a_tilde,
        b_tilde,
        m: 0.0,
        k: [0.0, 0.0],
    };
    if !(sys.lambda1 > 0.0 && sys.lambda2 < 0.0) {
        return Err(Error::infeasible(format!(
            "expected one unstable and one stable mode, got λ = ({}, {})",
            sys.lambda1, sys.lambda2
        )));
    }
    let err = sys.round_trip_error();
    if err > 1e-9 {
        return Err(Error::Internal(format!("eigen-decomposition round trip error {err:e}")));
    }
    Ok(sys)
}

/// Real, distinct eigen-decomposition of a 2×2 matrix.
fn eigen_decompose(a: &Mat2) -> Result<([f64; 2], Mat2)> {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = tr * tr / 4.0 - det;
    let scale = tr.abs().max(det.abs().sqrt()).max(f64::MIN_POSITIVE);
    if disc <= 1e-14 * scale * scale {
        return Err(Error::infeasible(
            "state matrix has complex or repeated eigenvalues; not diagonalisable over the reals",
        ));
    }
    let root = disc.sqrt();
    let lambdas = [tr / 2.0 + root, tr / 2.0 - root];
    let mut p = [[0.0; 2]; 2];
    for (col, &lam) in lambdas.iter().enumerate() {
        let v = if a[0][1].abs() >= a[1][0].abs() && a[0][1] != 0.0 {
            [a[0][1], lam - a[0][0]]
        } else if a[1][0] != 0.0 {
            [lam - a[1][1], a[1][0]]
        } else if (lam - a[0][0]).abs() < (lam - a[1][1]).abs() {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let flip = if v[1] < 0.0 || (v[1] == 0.0 && v[0] < 0.0) { -1.0 } else { 1.0 };
        p[0][col] = flip * v[0] / n;
        p[1][col] = flip * v[1] / n;
    }
    Ok((lambdas, p))
}

fn mat_vec(m: &Mat2, v: State) -> State {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat_inv(m: &Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn norm_inf(m: &Mat2) -> f64 {
    m.iter().map(|r| r[0].abs() + r[1].abs()).fold(0.0, f64::max)
}

/// Right-hand sides available for scalar nonlinear plants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "kebab-case")]
pub enum NonlinearMap {
    /// `f(x, u, w) = 2x + sin(x) + u + w`.
    Demo,
    /// `f(x, u, w) = a·x + b·u + w`.
    Linear { a: f64, b: f64 },
}

impl NonlinearMap {
    pub fn eval(&self, x: f64, u: f64, w: f64) -> f64 {
        match *self {
            NonlinearMap::Demo => 2.0 * x + x.sin() + u + w,
            NonlinearMap::Linear { a, b } => a * x + b * u + w,
        }
    }

    /// `∂f/∂x` at `x`, the pointwise entropy rate of the map.
    pub fn state_derivative(&self, x: f64) -> f64 {
        match *self {
            NonlinearMap::Demo => 2.0 + x.cos(),
            NonlinearMap::Linear { a, .. } => a,
        }
    }

    /// `inf_x ∂f/∂x`.
    pub fn entropy_lower_bound(&self) -> f64 {
        match *self {
            NonlinearMap::Demo => 1.0,
            NonlinearMap::Linear { a, .. } => a,
        }
    }

    /// `(L_x, L_w)` valid globally for this map.
    pub fn lipschitz_constants(&self) -> (f64, f64) {
        match *self {
            NonlinearMap::Demo => (3.0, 1.0),
            NonlinearMap::Linear { a, .. } => (a.abs(), 1.0),
        }
    }
}

/// A scalar plant `ẋ = f(x, u, w)` with `|w| ≤ M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarNonlinearPlant {
    pub map: NonlinearMap,
    pub lx: f64,
    pub lw: f64,
    pub m: f64,
}

impl ScalarNonlinearPlant {
    pub fn demo(m: f64) -> Self {
        Self { map: NonlinearMap::Demo, lx: 3.0, lw: 1.0, m }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lx > 0.0 && self.lw > 0.0 && self.m >= 0.0) {
            return Err(Error::config(format!(
                "scalar plant requires L_x > 0, L_w > 0, M ≥ 0 (got {}, {}, {})",
                self.lx, self.lw, self.m
            )));
        }
        Ok(())
    }

    pub fn rhs(&self, x: f64, u: f64, w: f64) -> f64 {
        self.map.eval(x, u, w)
    }
}

/// The full nonlinear pendulum `I·φ̈ = m·g·l·sin φ + k_ξ·l·u + noise`,
/// stepped in physical coordinates and exposed in diagonal coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumTruth {
    pub a21: f64,
    pub b2: f64,
    pub p: Mat2,
    pub p_inv: Mat2,
}

impl PendulumTruth {
    pub fn new(sys: &LinearDiagonalSystem) -> Self {
        Self { a21: sys.a_tilde[1][0], b2: sys.b_tilde[1], p: sys.p, p_inv: sys.p_inv }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantModel {
    Diagonal(LinearDiagonalSystem),
    /// Truth dynamics; `w[1]` is the angular-acceleration noise.
    Pendulum(PendulumTruth),
    Scalar(ScalarNonlinearPlant),
}

/// Integration rule for scalar linear blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stepper {
    Euler,
    /// Zero-order-hold exact discretisation: `e^{λδ}x + (e^{λδ}−1)/λ·(b·u + w)`.
    ExactExponential,
}

pub fn step_scalar_linear(lambda: f64, gain: f64, x: f64, u: f64, w: f64, delta: f64, stepper: Stepper) -> f64 {
    match stepper {
        Stepper::Euler => x + delta * (lambda * x + gain * u + w),
        Stepper::ExactExponential => {
            let e = (lambda * delta).exp();
            let forcing = if lambda == 0.0 { delta } else { (e - 1.0) / lambda };
            e * x + forcing * (gain * u + w)
        }
    }
}

/// One forward-Euler step of `model` from `x` under input `u` and
/// disturbance `w`.
pub fn step_dynamics(model: &PlantModel, x: State, u: f64, w: State, delta: f64) -> Result<State> {
    if !(delta > 0.0) {
        return Err(Error::config(format!("time step must be > 0, got {delta}")));
    }
    let next = match model {
        PlantModel::Diagonal(sys) => [
            step_scalar_linear(sys.lambda1, sys.b[0], x[0], u, w[0], delta, Stepper::Euler),
            step_scalar_linear(sys.lambda2, sys.b[1], x[1], u, w[1], delta, Stepper::Euler),
        ],
        PlantModel::Pendulum(p) => {
            let phys = mat_vec(&p.p, x);
            let (phi, phi_dot) = (phys[0], phys[1]);
            let next = [phi + delta * phi_dot, phi_dot + delta * (p.a21 * phi.sin() + p.b2 * u + w[1])];
            mat_vec(&p.p_inv, next)
        }
        PlantModel::Scalar(plant) => [x[0] + delta * plant.rhs(x[0], u, w[0]), 0.0],
    };
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { t: f64::NAN, detail: format!("non-finite state {next:?}") });
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceLaw {
    /// Independent uniform samples on `[−M, M]`.
    #[default]
    Uniform,
    ConstantPositive,
    ConstantNegative,
    Zero,
}

/// Seeded, bounded disturbance generator. One per simulation run.
#[derive(Debug, Clone)]
pub struct DisturbanceSource {
    bound: f64,
    law: DisturbanceLaw,
    rng: ChaCha8Rng,
}

impl DisturbanceSource {
    pub fn new(bound: f64, law: DisturbanceLaw, seed: u64) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::config(format!("disturbance bound must be finite and ≥ 0, got {bound}")));
        }
        Ok(Self { bound, law, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn sample(&mut self) -> f64 {
        let w = match self.law {
            DisturbanceLaw::Uniform => {
                if self.bound == 0.0 {
                    0.0
                } else {
                    self.bound * (2.0 * self.rng.random::<f64>() - 1.0)
                }
            }
            DisturbanceLaw::ConstantPositive => self.bound,
            DisturbanceLaw::ConstantNegative => -self.bound,
            DisturbanceLaw::Zero => 0.0,
        };
        assert!(w.abs() <= self.bound, "disturbance sample {w} exceeds bound {}", self.bound);
        w
    }
}

pub fn sample_disturbance(src: &mut DisturbanceSource) -> f64 {
    src.sample()
}
