//! One-step maps: Störmer–Verlet for the full stiff system, a Verlet /
//! Ornstein–Uhlenbeck splitting for the Langevin extension, RATTLE and the
//! tangential-momentum method for the constrained limit system, and the
//! blended scheme that interpolates between the slow and the fast map.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{StateVector, StiffSystem};

/// Tolerance on `‖G(q_{n+1}) p_{n+1}‖` used by [`blended_step`].
pub const TANGENT_TOL: f64 = 1e-10;
/// Iteration cap for the multiplier fixed point used by [`blended_step`].
pub const TANGENT_MAX_ITER: usize = 50;
/// Tolerance of the RATTLE position (SHAKE) stage.
pub const RATTLE_TOL: f64 = 1e-10;

const RATTLE_MAX_ITER: usize = 50;

/// `h · ω_fast` with `ω_fast = √(max K)/ε`; Störmer–Verlet on the stiff
/// system needs this below 2.
pub fn verlet_stability_ratio(system: &StiffSystem, h: f64) -> f64 {
    let kmax = system.force_constants().iter().cloned().fold(0.0, f64::max);
    h * kmax.sqrt() / system.epsilon()
}

fn check_step(h: f64) -> Result<()> {
    if h == 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("step size must be finite and nonzero, got {h}")));
    }
    Ok(())
}

fn finite(z: StateVector, what: &'static str) -> Result<StateVector> {
    if z.is_finite() {
        Ok(z)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Position Störmer–Verlet (drift–kick–drift) for `q̇ = p`,
/// `ṗ = −ε⁻²GᵀKg − ∇V`. Symmetric, symplectic, time-reversible.
pub fn stormer_verlet_step(system: &StiffSystem, z: &StateVector, h: f64) -> Result<StateVector> {
    check_step(h)?;
    let q_half = &z.q + &z.p * (0.5 * h);
    let p = &z.p + system.eval_stiff_force(&q_half)? * h;
    let q = q_half + &p * (0.5 * h);
    finite(StateVector { q, p }, "Störmer–Verlet step")
}

/// Exact Ornstein–Uhlenbeck update `p ← e^{−γh}p + √(k_BT(1 − e^{−2γh})) ξ`.
pub fn ornstein_uhlenbeck<R: Rng + ?Sized>(p: &mut DVector<f64>, gamma: f64, kbt: f64, h: f64, rng: &mut R) {
    if gamma == 0.0 {
        return;
    }
    let decay = (-gamma * h).exp();
    let sigma = (kbt * (1.0 - decay * decay)).sqrt();
    for v in p.iter_mut() {
        let xi: f64 = rng.sample(StandardNormal);
        *v = decay * *v + sigma * xi;
    }
}

/// One step of the Langevin dynamics: a Störmer–Verlet step followed by the
/// exact Ornstein–Uhlenbeck momentum update. With `γ = 0` this is
/// bit-identical to [`stormer_verlet_step`] and draws no random numbers.
pub fn langevin_step<R: Rng + ?Sized>(
    system: &StiffSystem,
    z: &StateVector,
    h: f64,
    rng: &mut R,
) -> Result<StateVector> {
    let params = system
        .langevin()
        .ok_or_else(|| Error::InvalidParameter("Langevin step requires gamma and kbt".into()))?;
    let mut out = stormer_verlet_step(system, z, h)?;
    ornstein_uhlenbeck(&mut out.p, params.gamma, params.kbt, h, rng);
    finite(out, "Langevin step")
}

/// RATTLE for the constrained limit system `q̇ = p`, `ṗ = −Gᵀλ − ∇V`,
/// `g(q) = 0`. Newton on the position multiplier, then a linear momentum
/// projection, so the result lies on `TM` to `tol` regardless of `h`.
pub fn rattle_step(system: &StiffSystem, z: &StateVector, h: f64, tol: f64) -> Result<StateVector> {
    check_step(h)?;
    let jac0 = system.jacobian(&z.q)?;
    let p_bar = &z.p - system.potential_gradient(&z.q) * (0.5 * h);
    let q_free = &z.q + &p_bar * h;
    let c = 0.5 * h * h;
    let mut lambda = DVector::zeros(system.n_constraints());
    let mut q1 = q_free.clone();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..RATTLE_MAX_ITER {
        let g = system.eval_constraint(&q1)?;
        residual = g.norm();
        if residual <= tol {
            converged = true;
            break;
        }
        let m = system.jacobian(&q1)? * jac0.transpose() * c;
        lambda += linalg::solve(&m, &g, "RATTLE Newton matrix")?;
        q1 = &q_free - jac0.transpose() * &lambda * c;
        if !linalg::all_finite(&q1) {
            return Err(Error::NonFinite("RATTLE position iterate"));
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            method: "RATTLE position stage",
            iterations: RATTLE_MAX_ITER,
            residual,
        });
    }
    let p_half = p_bar - jac0.transpose() * &lambda * (0.5 * h);
    let p_unc = p_half - system.potential_gradient(&q1) * (0.5 * h);
    let p1 = system.project_tangent(&q1, &p_unc)?;
    finite(StateVector { q: q1, p: p1 }, "RATTLE step")
}

/// RATTLE composed with an Ornstein–Uhlenbeck momentum update whose noise is
/// projected onto the tangent space, keeping the state on `TM`.
pub fn constrained_langevin_step<R: Rng + ?Sized>(
    system: &StiffSystem,
    z: &StateVector,
    h: f64,
    tol: f64,
    rng: &mut R,
) -> Result<StateVector> {
    let params = system
        .langevin()
        .ok_or_else(|| Error::InvalidParameter("Langevin step requires gamma and kbt".into()))?;
    let mut out = rattle_step(system, z, h, tol)?;
    if params.gamma != 0.0 {
        ornstein_uhlenbeck(&mut out.p, params.gamma, params.kbt, h, rng);
        out.p = system.project_tangent(&out.q, &out.p)?;
    }
    finite(out, "constrained Langevin step")
}

/// Symmetric tangential-momentum method for the limit system:
///
/// ```text
/// q_{n+½} = q_n + (h/2) p_n
/// p_{n+1} = p_n − h∇V(q_{n+½}) − G(q_{n+½})ᵀ λ̃
/// q_{n+1} = q_{n+½} + (h/2) p_{n+1}
/// G(q_{n+1}) p_{n+1} = 0
/// ```
///
/// with `λ̃ = hλ` found by fixed-point iteration: update `p_{n+1}`, then
/// solve `G(q_{n+1}) G(q_{n+½})ᵀ λ̃ = G(q_{n+1})(p_n − h∇V(q_{n+½}))`.
/// Only the hidden constraint `G p = 0` is enforced; `g(q)` is left free.
pub fn tangential_momentum_step(
    system: &StiffSystem,
    z: &StateVector,
    h: f64,
    tol: f64,
    max_iter: usize,
) -> Result<StateVector> {
    check_step(h)?;
    let q_half = &z.q + &z.p * (0.5 * h);
    let free = &z.p - system.potential_gradient(&q_half) * h;
    let jac_half_t: DMatrix<f64> = system.jacobian(&q_half)?.transpose();
    let mut p1 = free.clone();
    let mut lambda = DVector::<f64>::zeros(system.n_constraints());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter.max(1) {
        let q1 = &q_half + &p1 * (0.5 * h);
        let jac1 = system.jacobian(&q1)?;
        let m = &jac1 * &jac_half_t;
        let next = linalg::solve(&m, &(&jac1 * &free), "tangential multiplier system")
            .map_err(|_| Error::SingularConfiguration("G(q_{n+1}) G(q_{n+½})ᵀ is singular".into()))?;
        let update = (&next - &lambda).norm();
        lambda = next;
        p1 = &free - &jac_half_t * &lambda;
        let q1 = &q_half + &p1 * (0.5 * h);
        residual = (system.jacobian(&q1)? * &p1).norm();
        if !residual.is_finite() {
            return Err(Error::NonFinite("tangential multiplier iterate"));
        }
        if residual <= 1e-3 * tol || (residual <= tol && update <= 1e-14 * (1.0 + lambda.norm())) {
            break;
        }
    }
    if !(residual <= tol) {
        return Err(Error::NoConvergence {
            method: "tangential multiplier fixed point",
            iterations: max_iter,
            residual,
        });
    }
    let q1 = q_half + &p1 * (0.5 * h);
    finite(StateVector { q: q1, p: p1 }, "tangential momentum step")
}

/// Convex combination `α ψ_fast(z) + (1 − α) ψ_slow(z)` of two one-step
/// outputs at the same input. `α = 1` and `α = 0` return the respective
/// map exactly, without evaluating the other one.
pub fn blend_with<F>(system: &StiffSystem, z: &StateVector, h: f64, alpha: f64, fast: F) -> Result<StateVector>
where
    F: FnOnce(&StateVector) -> Result<StateVector>,
{
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("blending weight must lie in [0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return fast(z);
    }
    let slow = tangential_momentum_step(system, z, h, TANGENT_TOL, TANGENT_MAX_ITER)?;
    if alpha == 0.0 {
        return Ok(slow);
    }
    let fast = fast(z)?;
    Ok(StateVector {
        q: fast.q * alpha + slow.q * (1.0 - alpha),
        p: fast.p * alpha + slow.p * (1.0 - alpha),
    })
}

/// Blended map with Störmer–Verlet as the fast integrator.
pub fn blended_step(system: &StiffSystem, z: &StateVector, h: f64, alpha: f64) -> Result<StateVector> {
    blend_with(system, z, h, alpha, |z| stormer_verlet_step(system, z, h))
}

/// Blended map with the Langevin step as the fast integrator.
pub fn blended_langevin_step<R: Rng + ?Sized>(
    system: &StiffSystem,
    z: &StateVector,
    h: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<StateVector> {
    blend_with(system, z, h, alpha, |z| langevin_step(system, z, h, rng))
}

/// Shape of the blending ramp between `α = 0` and `α = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Ramp {
    #[default]
    Linear,
    Cosine,
}

/// Blending weights `0 = α₁ < α₂ ≤ … ≤ α_{k−1} < α_k = 1` followed by
/// `η − k` pure full-model steps.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendSchedule {
    alphas: Vec<f64>,
    eta: usize,
}

impl BlendSchedule {
    pub fn new(alphas: Vec<f64>, eta: usize) -> Result<Self> {
        let k = alphas.len();
        if k < 2 {
            return Err(Error::InvalidParameter("blending schedule needs at least two weights".into()));
        }
        if eta < k {
            return Err(Error::InvalidParameter(format!(
                "forecast length {eta} shorter than blending window {k}"
            )));
        }
        if alphas[0] != 0.0 || alphas[k - 1] != 1.0 {
            return Err(Error::InvalidParameter("blending weights must start at 0 and end at 1".into()));
        }
        if !(alphas[1] > 0.0 && alphas[k - 2] < 1.0) {
            return Err(Error::InvalidParameter("interior blending weights must lie strictly inside (0, 1)".into()));
        }
        if alphas.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidParameter("blending weights must be non-decreasing".into()));
        }
        Ok(Self { alphas, eta })
    }

    /// A `k`-point ramp from 0 to 1.
    pub fn ramp(kind: Ramp, k: usize, eta: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParameter("blending window must be at least 2 steps".into()));
        }
        let alphas = (0..k)
            .map(|i| {
                let s = i as f64 / (k - 1) as f64;
                match kind {
                    Ramp::Linear => s,
                    Ramp::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * s).cos()),
                }
            })
            .map(|a| a.clamp(0.0, 1.0))
            .collect::<Vec<_>>();
        let mut alphas = alphas;
        alphas[0] = 0.0;
        alphas[k - 1] = 1.0;
        Self::new(alphas, eta)
    }

    pub fn linear(k: usize, eta: usize) -> Result<Self> {
        Self::ramp(Ramp::Linear, k, eta)
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn eta(&self) -> usize {
        self.eta
    }

    /// Weight used at step `i` (0-based) of a forecast cycle.
    pub fn alpha_at(&self, i: usize) -> f64 {
        self.alphas.get(i).copied().unwrap_or(1.0)
    }
}

/// Runs one blending/forecast cycle and returns all `η + 1` states.
pub fn blended_forecast(
    system: &StiffSystem,
    z: &StateVector,
    h: f64,
    schedule: &BlendSchedule,
) -> Result<Vec<StateVector>> {
    let mut out = Vec::with_capacity(schedule.eta() + 1);
    out.push(z.clone());
    let mut current = z.clone();
    for i in 0..schedule.eta() {
        current = blended_step(system, &current, h, schedule.alpha_at(i))?;
        out.push(current.clone());
    }
    Ok(out)
}
