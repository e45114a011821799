//! Stiff mechanical systems with Hamiltonian
//! `H(q, p) = ½ pᵀp + (1/2ε²) g(q)ᵀ K g(q) + V(q)` (unit mass matrix),
//! optionally coupled to a heat bath.
//!
//! A [`StiffSystem`] bundles the constraint map `g`, the diagonal force
//! constants `K`, the soft potential `V`, the stiffness parameter `ε` and
//! optional Langevin parameters. Concrete instances: the elastic double
//! pendulum, the elliptic elastic pendulum, and the (coupled) harmonic
//! oscillators used for linear stability analysis.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Phase-space point `z = (q, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl StateVector {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                actual: p.len(),
                context: "momentum length must equal position length",
            });
        }
        if q.is_empty() {
            return Err(Error::InvalidParameter("state dimension must be at least 1".into()));
        }
        Ok(Self { q, p })
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(p))
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Stacks into a single `2N` vector `(q, p)`.
    pub fn to_flat(&self) -> DVector<f64> {
        let n = self.dim();
        let mut z = DVector::zeros(2 * n);
        z.rows_mut(0, n).copy_from(&self.q);
        z.rows_mut(n, n).copy_from(&self.p);
        z
    }

    pub fn from_flat(z: &DVector<f64>) -> Result<Self> {
        if !z.len().is_multiple_of(2) || z.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "flattened state must have positive even length, got {}",
                z.len()
            )));
        }
        let n = z.len() / 2;
        Self::new(z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.q) && linalg::all_finite(&self.p)
    }

    pub fn norm(&self) -> f64 {
        (self.q.norm_squared() + self.p.norm_squared()).sqrt()
    }
}

/// The stiff constraint map `g: Rᴺ → Rᴸ` together with its derivatives.
pub trait Constraint: Send + Sync + fmt::Debug {
    fn n_dof(&self) -> usize;

    fn n_constraints(&self) -> usize;

    fn value(&self, q: &DVector<f64>) -> Result<DVector<f64>>;

    /// `G(q) = Dg(q)`, an `L × N` matrix.
    fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Second directional derivative `g_qq(q)[p, p]`. The default uses a
    /// central difference of the Jacobian along `p`.
    fn hessian_action(&self, q: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        let pn = p.norm();
        if pn == 0.0 {
            return Ok(DVector::zeros(self.n_constraints()));
        }
        let delta = 1e-5 * (1.0 + q.norm()) / pn;
        let gp = self.jacobian(&(q + p * delta))? * p;
        let gm = self.jacobian(&(q - p * delta))? * p;
        Ok((gp - gm) / (2.0 * delta))
    }

    /// Analytic gradient of the normal frequency `(G Gᵀ)^{1/2}` for scalar
    /// constraints, when a closed form exists.
    fn frequency_gradient(&self, _q: &DVector<f64>) -> Option<Result<DVector<f64>>> {
        None
    }
}

/// Elastic double pendulum: `g(q) = (‖q₁₂‖ − l₁, ‖q₁₂ − q₃₄‖ − l₂)`.
#[derive(Debug, Clone)]
pub struct DoublePendulumConstraint {
    pub l1: f64,
    pub l2: f64,
}

fn norm_hessian_action(x: &[f64; 2], v: &[f64; 2]) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let r = r2.sqrt();
    let xv = x[0] * v[0] + x[1] * v[1];
    (v[0] * v[0] + v[1] * v[1] - xv * xv / r2) / r
}

impl DoublePendulumConstraint {
    fn arms(q: &DVector<f64>) -> Result<([f64; 2], [f64; 2])> {
        if q.len() != 4 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                actual: q.len(),
                context: "double pendulum position",
            });
        }
        let a = [q[0], q[1]];
        let d = [q[0] - q[2], q[1] - q[3]];
        if a == [0.0, 0.0] || d == [0.0, 0.0] {
            return Err(Error::SingularPoint("double pendulum rod of zero length".into()));
        }
        Ok((a, d))
    }
}

impl Constraint for DoublePendulumConstraint {
    fn n_dof(&self) -> usize {
        4
    }

    fn n_constraints(&self) -> usize {
        2
    }

    fn value(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, d) = Self::arms(q)?;
        Ok(DVector::from_vec(vec![a[0].hypot(a[1]) - self.l1, d[0].hypot(d[1]) - self.l2]))
    }

    fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (a, d) = Self::arms(q)?;
        let ra = a[0].hypot(a[1]);
        let rd = d[0].hypot(d[1]);
        let (u1, u2) = ([a[0] / ra, a[1] / ra], [d[0] / rd, d[1] / rd]);
        Ok(DMatrix::from_row_slice(
            2,
            4,
            &[u1[0], u1[1], 0.0, 0.0, u2[0], u2[1], -u2[0], -u2[1]],
        ))
    }

    fn hessian_action(&self, q: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, d) = Self::arms(q)?;
        let va = [p[0], p[1]];
        let vd = [p[0] - p[2], p[1] - p[3]];
        Ok(DVector::from_vec(vec![
            norm_hessian_action(&a, &va),
            norm_hessian_action(&d, &vd),
        ]))
    }
}

/// Elliptic elastic pendulum: `g(q) = √(qᵀAq) − 1`, `A = diag(a)`.
#[derive(Debug, Clone)]
pub struct EllipticConstraint {
    pub a: [f64; 2],
}

impl EllipticConstraint {
    fn quad(&self, q: &DVector<f64>) -> Result<f64> {
        if q.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                actual: q.len(),
                context: "elliptic pendulum position",
            });
        }
        let s = self.a[0] * q[0] * q[0] + self.a[1] * q[1] * q[1];
        if s <= 0.0 {
            return Err(Error::SingularPoint("elliptic pendulum constraint undefined at the origin".into()));
        }
        Ok(s)
    }

    /// `ω₁² = qᵀAAq / qᵀAq`.
    pub fn frequency_squared(&self, q: &DVector<f64>) -> Result<f64> {
        let s = self.quad(q)?;
        let aa = self.a[0].powi(2) * q[0] * q[0] + self.a[1].powi(2) * q[1] * q[1];
        Ok(aa / s)
    }
}

impl Constraint for EllipticConstraint {
    fn n_dof(&self) -> usize {
        2
    }

    fn n_constraints(&self) -> usize {
        1
    }

    fn value(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.quad(q)?.sqrt() - 1.0))
    }

    fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let r = self.quad(q)?.sqrt();
        Ok(DMatrix::from_row_slice(1, 2, &[self.a[0] * q[0] / r, self.a[1] * q[1] / r]))
    }

    fn hessian_action(&self, q: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.quad(q)?;
        let r = s.sqrt();
        let pap = self.a[0] * p[0] * p[0] + self.a[1] * p[1] * p[1];
        let qap = self.a[0] * q[0] * p[0] + self.a[1] * q[1] * p[1];
        Ok(DVector::from_element(1, pap / r - qap * qap / (s * r)))
    }

    fn frequency_gradient(&self, q: &DVector<f64>) -> Option<Result<DVector<f64>>> {
        Some(self.quad(q).map(|b| {
            let [a1, a2] = self.a;
            let a = a1 * a1 * q[0] * q[0] + a2 * a2 * q[1] * q[1];
            let omega = (a / b).sqrt();
            // ∇(a/b) = (2AAq b − 2Aq a) / b²
            let grad_ratio = DVector::from_vec(vec![
                (2.0 * a1 * a1 * q[0] * b - 2.0 * a1 * q[0] * a) / (b * b),
                (2.0 * a2 * a2 * q[1] * b - 2.0 * a2 * q[1] * a) / (b * b),
            ]);
            grad_ratio / (2.0 * omega)
        }))
    }
}

/// Affine constraint `g(q) = C q − b`.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearConstraint {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != offset.len() || matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidParameter("linear constraint dimensions".into()));
        }
        Ok(Self { matrix, offset })
    }
}

impl Constraint for LinearConstraint {
    fn n_dof(&self) -> usize {
        self.matrix.ncols()
    }

    fn n_constraints(&self) -> usize {
        self.matrix.nrows()
    }

    fn value(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(q, self.n_dof(), "linear constraint position")?;
        Ok(&self.matrix * q - &self.offset)
    }

    fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len(q, self.n_dof(), "linear constraint position")?;
        Ok(self.matrix.clone())
    }

    fn hessian_action(&self, _q: &DVector<f64>, _p: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.n_constraints()))
    }

    fn frequency_gradient(&self, q: &DVector<f64>) -> Option<Result<DVector<f64>>> {
        Some(Ok(DVector::zeros(q.len())))
    }
}

fn check_len(v: &DVector<f64>, n: usize, context: &'static str) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: v.len(),
            context,
        });
    }
    Ok(())
}

/// Soft potential `V(q)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    /// `V(q) = cᵀq` (gravity-type, constant force `−c`).
    Linear(DVector<f64>),
    /// `V(q) = ½ Σ dᵢ qᵢ²`.
    Quadratic(DVector<f64>),
}

impl Potential {
    pub fn zero(n: usize) -> Self {
        Potential::Linear(DVector::zeros(n))
    }

    pub fn value(&self, q: &DVector<f64>) -> f64 {
        match self {
            Potential::Linear(c) => c.dot(q),
            Potential::Quadratic(d) => 0.5 * d.iter().zip(q.iter()).map(|(d, q)| d * q * q).sum::<f64>(),
        }
    }

    pub fn gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        match self {
            Potential::Linear(c) => c.clone(),
            Potential::Quadratic(d) => d.component_mul(q),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Potential::Linear(c) => c.len(),
            Potential::Quadratic(d) => d.len(),
        }
    }
}

/// Heat-bath coupling: friction `γ ≥ 0` and thermal energy `k_BT > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    pub gamma: f64,
    pub kbt: f64,
}

/// A stiff mechanical model instance. Immutable after construction and
/// cheap to clone (the constraint is shared).
#[derive(Debug, Clone)]
pub struct StiffSystem {
    constraint: Arc<dyn Constraint>,
    potential: Potential,
    epsilon: f64,
    force_constants: DVector<f64>,
    langevin: Option<LangevinParams>,
}

impl StiffSystem {
    pub fn new(
        constraint: Arc<dyn Constraint>,
        potential: Potential,
        epsilon: f64,
        force_constants: DVector<f64>,
        langevin: Option<LangevinParams>,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if force_constants.len() != constraint.n_constraints() {
            return Err(Error::DimensionMismatch {
                expected: constraint.n_constraints(),
                actual: force_constants.len(),
                context: "force constants",
            });
        }
        if force_constants.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidParameter("force constants must be positive".into()));
        }
        if potential.dim() != constraint.n_dof() {
            return Err(Error::DimensionMismatch {
                expected: constraint.n_dof(),
                actual: potential.dim(),
                context: "potential",
            });
        }
        if let Some(l) = langevin {
            if !(l.gamma >= 0.0 && l.kbt > 0.0 && l.gamma.is_finite() && l.kbt.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "Langevin parameters need gamma >= 0 and kbt > 0, got {l:?}"
                )));
            }
        }
        Ok(Self {
            constraint,
            potential,
            epsilon,
            force_constants,
            langevin,
        })
    }

    /// Scalar harmonic oscillator `H = ½Kq² + ½p²`, written as the stiff
    /// system `g(q) = q`, `ε = 1`, `V = 0`.
    pub fn harmonic_oscillator(k: f64) -> Result<Self> {
        let c = LinearConstraint::new(DMatrix::identity(1, 1), DVector::zeros(1))?;
        Self::new(Arc::new(c), Potential::zero(1), 1.0, DVector::from_element(1, k), None)
    }

    /// Coupled oscillator `H = ½|p|² + (K/2)(q₁ − q₂)² + ½q₂²` with the stiff
    /// part expressed through `g(q) = (q₁ − q₂)/2` and force constant `4K`.
    pub fn coupled_oscillator(k: f64) -> Result<Self> {
        let c = LinearConstraint::new(DMatrix::from_row_slice(1, 2, &[0.5, -0.5]), DVector::zeros(1))?;
        Self::new(
            Arc::new(c),
            Potential::Quadratic(DVector::from_vec(vec![0.0, 1.0])),
            1.0,
            DVector::from_element(1, 4.0 * k),
            None,
        )
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_dof(&self) -> usize {
        self.constraint.n_dof()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraint.n_constraints()
    }

    pub fn force_constants(&self) -> &DVector<f64> {
        &self.force_constants
    }

    pub fn langevin(&self) -> Option<LangevinParams> {
        self.langevin
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn constraint_model(&self) -> &dyn Constraint {
        self.constraint.as_ref()
    }

    /// Copy of this system with a different stiffness parameter.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(
            self.constraint.clone(),
            self.potential.clone(),
            epsilon,
            self.force_constants.clone(),
            self.langevin,
        )
    }

    /// Copy of this system with different (or no) heat-bath parameters.
    pub fn with_langevin(&self, langevin: Option<LangevinParams>) -> Result<Self> {
        Self::new(
            self.constraint.clone(),
            self.potential.clone(),
            self.epsilon,
            self.force_constants.clone(),
            langevin,
        )
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        check_len(q, self.n_dof(), "position")
    }

    pub fn eval_constraint(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_q(q)?;
        self.constraint.value(q)
    }

    pub fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_q(q)?;
        self.constraint.jacobian(q)
    }

    pub fn hessian_action(&self, q: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_q(q)?;
        check_len(p, self.n_dof(), "momentum")?;
        self.constraint.hessian_action(q, p)
    }

    pub fn potential_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        self.potential.gradient(q)
    }

    /// `−ε⁻² G(q)ᵀ K g(q) − ∇V(q)`.
    pub fn eval_stiff_force(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.eval_constraint(q)?;
        let jac = self.constraint.jacobian(q)?;
        let kg = self.force_constants.component_mul(&g);
        let f = -(jac.transpose() * kg) / (self.epsilon * self.epsilon) - self.potential.gradient(q);
        if !linalg::all_finite(&f) {
            return Err(Error::NonFinite("stiff force"));
        }
        Ok(f)
    }

    /// Multiplier `λ` of the constrained limit system, solving
    /// `G(q)[∇V(q) + G(q)ᵀKλ] = g_qq(q)[p, p]`.
    pub fn lagrange_multiplier(&self, z: &StateVector) -> Result<DVector<f64>> {
        let jac = self.jacobian(&z.q)?;
        let rhs = self.hessian_action(&z.q, &z.p)? - &jac * self.potential.gradient(&z.q);
        let mut ggtk = &jac * jac.transpose();
        for (j, k) in self.force_constants.iter().enumerate() {
            ggtk.column_mut(j).scale_mut(*k);
        }
        linalg::solve(&ggtk, &rhs, "G Gᵀ K").map_err(|_| {
            Error::SingularConfiguration("G(q) is rank deficient; multiplier undefined".into())
        })
    }

    /// Soft-constraint residual `g̃ = g(q) − ε²λ(q, p)`.
    pub fn soft_constraint_residual(&self, z: &StateVector) -> Result<DVector<f64>> {
        let lambda = self.lagrange_multiplier(z)?;
        Ok(self.eval_constraint(&z.q)? - lambda * self.epsilon.powi(2))
    }

    /// Projects `p` onto the tangent space `ker G(q)`.
    pub fn project_tangent(&self, q: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        let jac = self.jacobian(q)?;
        let ggt = &jac * jac.transpose();
        let mu = linalg::solve(&ggt, &(&jac * p), "G Gᵀ")
            .map_err(|_| Error::SingularConfiguration("G(q) is rank deficient".into()))?;
        Ok(p - jac.transpose() * mu)
    }

    /// Maps a raw state onto the tangent manifold `{g = 0, G p = 0}`: Newton
    /// (minimum-norm) iteration on positions, then orthogonal projection of
    /// the momentum.
    pub fn balance_initial_state(&self, z_raw: &StateVector, tol: f64) -> Result<StateVector> {
        self.newton_balance(z_raw, tol, false)
    }

    /// Like [`balance_initial_state`](Self::balance_initial_state) but
    /// targets the soft constraint `g(q) = ε²λ(q, p)` instead of `g(q) = 0`.
    pub fn balance_soft_initial_state(&self, z_raw: &StateVector, tol: f64) -> Result<StateVector> {
        self.newton_balance(z_raw, tol, true)
    }

    fn newton_balance(&self, z_raw: &StateVector, tol: f64, soft: bool) -> Result<StateVector> {
        const MAX_ITER: usize = 50;
        self.check_q(&z_raw.q)?;
        check_len(&z_raw.p, self.n_dof(), "momentum")?;
        let mut q = z_raw.q.clone();
        let mut p = z_raw.p.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_ITER {
            if soft {
                p = self.project_tangent(&q, &z_raw.p)?;
            }
            let target = if soft {
                self.soft_constraint_residual(&StateVector { q: q.clone(), p: p.clone() })?
            } else {
                self.eval_constraint(&q)?
            };
            residual = target.norm();
            if residual <= tol * 1e-2 {
                break;
            }
            let jac = self.jacobian(&q)?;
            let ggt = &jac * jac.transpose();
            let step = linalg::solve(&ggt, &target, "G Gᵀ")
                .map_err(|_| Error::SingularConfiguration("G(q) is rank deficient".into()))?;
            q -= jac.transpose() * step;
            if !linalg::all_finite(&q) {
                return Err(Error::NonFinite("balance Newton iterate"));
            }
        }
        if !(residual <= tol) {
            return Err(Error::NoConvergence {
                method: "initial-state balancing",
                iterations: MAX_ITER,
                residual,
            });
        }
        let p = self.project_tangent(&q, &z_raw.p)?;
        Ok(StateVector { q, p })
    }
}

/// Elastic double pendulum parameters. Defaults are the Scenario-A values
/// (`ε = 10⁻³`, `K = diag(1, 0.04)`, `g₀ = 10`, unit rod lengths).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublePendulumParams {
    pub l1: f64,
    pub l2: f64,
    pub g0: f64,
    pub k: [f64; 2],
    pub epsilon: f64,
}

impl Default for DoublePendulumParams {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            g0: 10.0,
            k: [1.0, 0.04],
            epsilon: 1e-3,
        }
    }
}

impl DoublePendulumParams {
    /// `V(q) = g₀(q₂ + q₄)`.
    pub fn into_system(self) -> Result<StiffSystem> {
        StiffSystem::new(
            Arc::new(DoublePendulumConstraint { l1: self.l1, l2: self.l2 }),
            Potential::Linear(DVector::from_vec(vec![0.0, self.g0, 0.0, self.g0])),
            self.epsilon,
            DVector::from_row_slice(&self.k),
            None,
        )
    }

    /// Configuration with both rods at rest length, at angles `θ₁, θ₂`
    /// measured from the downward vertical.
    pub fn configuration(&self, theta1: f64, theta2: f64) -> DVector<f64> {
        let x1 = self.l1 * theta1.sin();
        let y1 = -self.l1 * theta1.cos();
        DVector::from_vec(vec![
            x1,
            y1,
            x1 + self.l2 * theta2.sin(),
            y1 - self.l2 * theta2.cos(),
        ])
    }
}

/// Elliptic elastic pendulum parameters. Defaults are the Scenario-B values
/// (`A = diag(1, 36)`, `ε = 10⁻³`, `K = 1`, `V = 0`, `γ = 1`, `k_BT = 16`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticPendulumParams {
    /// Second diagonal entry of `A = diag(1, α)`.
    pub alpha: f64,
    pub epsilon: f64,
    pub k: f64,
    /// Constant gradient of the linear potential `V(q) = cᵀq`.
    pub force: [f64; 2],
    pub langevin: Option<LangevinParams>,
}

impl Default for EllipticPendulumParams {
    fn default() -> Self {
        Self {
            alpha: 36.0,
            epsilon: 1e-3,
            k: 1.0,
            force: [0.0, 0.0],
            langevin: Some(LangevinParams { gamma: 1.0, kbt: 16.0 }),
        }
    }
}

impl EllipticPendulumParams {
    pub fn into_system(self) -> Result<StiffSystem> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("ellipse alpha must be positive, got {}", self.alpha)));
        }
        StiffSystem::new(
            Arc::new(EllipticConstraint { a: [1.0, self.alpha] }),
            Potential::Linear(DVector::from_row_slice(&self.force)),
            self.epsilon,
            DVector::from_element(1, self.k),
            self.langevin,
        )
    }
}
