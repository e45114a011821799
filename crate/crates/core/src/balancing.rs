//! Post-analysis rebalancing of ensemble members: a penalty functional
//! minimized by Newton's method, its closed-form linearization, and a
//! pseudo-observation EnKF step on the constraint.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filters::Ensemble;
use crate::linalg;
use crate::models::{StateVector, StiffSystem};

/// Settings of the penalty rebalancing.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    /// Weighting matrix; `None` uses the position block of the analysis
    /// ensemble covariance.
    pub b: Option<DMatrix<f64>>,
    pub use_soft_constraint: bool,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub project_momentum: bool,
}

impl PenaltyConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            b: None,
            use_soft_constraint: false,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            project_momentum: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "penalty weight must be finite and positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Result of a Newton minimization; `q` is the last iterate even when the
/// iteration cap was hit.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyOutcome {
    pub q: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Symmetrizes `b` and adds `10⁻¹⁰·tr(B)/N·I` when it is close to singular.
pub fn regularized_weight(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !b.is_square() {
        return Err(Error::DimensionMismatch {
            expected: b.nrows(),
            actual: b.ncols(),
            context: "weighting matrix columns",
        });
    }
    let n = b.nrows();
    let sym = (b + b.transpose()) * 0.5;
    let trace = sym.trace();
    if !(trace > 0.0 && trace.is_finite()) {
        return Err(Error::SingularMatrix("weighting matrix has no positive variance"));
    }
    let eig = sym.clone().symmetric_eigenvalues();
    if eig.min() <= 1e-10 * eig.max() {
        Ok(sym + DMatrix::identity(n, n) * (1e-10 * trace / n as f64))
    } else {
        Ok(sym)
    }
}

fn residual(system: &StiffSystem, q: &DVector<f64>, p_hat: &DVector<f64>, soft: bool) -> Result<DVector<f64>> {
    if soft {
        system.soft_constraint_residual(&StateVector { q: q.clone(), p: p_hat.clone() })
    } else {
        system.eval_constraint(q)
    }
}

/// Penalty cost `½(q − q̂)ᵀB⁻¹(q − q̂) + (λ/2) gᵀKg`.
pub fn penalty_cost(system: &StiffSystem, q: &DVector<f64>, q_hat: &DVector<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let d = q - q_hat;
    let g = system.eval_constraint(q)?;
    let bd = linalg::solve(b, &d, "weighting matrix")?;
    Ok(0.5 * d.dot(&bd) + 0.5 * lambda * g.component_mul(system.force_constants()).dot(&g))
}

/// Newton iteration for the penalty functional with the Jacobian frozen at
/// the analysis point in the outer factor:
///
/// ```text
/// qⁿ⁺¹ = qⁿ − (B⁻¹ + λG_iᵀK G(qⁿ))⁻¹ (B⁻¹(qⁿ − q̂) + λG_iᵀK g(qⁿ))
/// ```
///
/// solved in the equivalent form `(I + λBG_iᵀKG(qⁿ)) δ = (qⁿ − q̂) + λBG_iᵀKg(qⁿ)`
/// so that an ill-conditioned `B` is never inverted.
pub fn penalty_newton(system: &StiffSystem, z_hat: &StateVector, b: &DMatrix<f64>, cfg: &PenaltyConfig) -> Result<PenaltyOutcome> {
    cfg.validate()?;
    let n = system.n_dof();
    let q_hat = &z_hat.q;
    let gi = system.jacobian(q_hat)?;
    let bgk = b * gi.transpose() * DMatrix::from_diagonal(system.force_constants()) * cfg.lambda;
    let identity = DMatrix::<f64>::identity(n, n);
    let mut q = q_hat.clone();
    for it in 1..=cfg.newton_max_iter {
        let g = residual(system, &q, &z_hat.p, cfg.use_soft_constraint)?;
        let jac = system.jacobian(&q)?;
        let matrix = &identity + &bgk * jac;
        let rhs = (&q - q_hat) + &bgk * g;
        let step = linalg::solve(&matrix, &rhs, "penalty Newton matrix")?;
        q -= &step;
        if !linalg::all_finite(&q) {
            return Err(Error::NonFinite("penalty Newton iterate"));
        }
        if step.norm() <= cfg.newton_tol {
            return Ok(PenaltyOutcome { q, iterations: it, converged: true });
        }
    }
    Ok(PenaltyOutcome { q, iterations: cfg.newton_max_iter, converged: false })
}

/// First Newton step from `q̂`, in the form `q̂ − (B⁻¹ + λG_iᵀKG_i)⁻¹λG_iᵀKg(q̂)`.
pub fn penalty_linearized(system: &StiffSystem, z_hat: &StateVector, b: &DMatrix<f64>, cfg: &PenaltyConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    let q_hat = &z_hat.q;
    let gi = system.jacobian(q_hat)?;
    let g = residual(system, q_hat, &z_hat.p, cfg.use_soft_constraint)?;
    let b_inv = linalg::inverse(b, "weighting matrix")?;
    let k = DMatrix::from_diagonal(system.force_constants());
    let gtk = gi.transpose() * &k * cfg.lambda;
    let matrix = b_inv + &gtk * &gi;
    Ok(q_hat - linalg::solve(&matrix, &(gtk * g), "linearized penalty matrix")?)
}

/// The same update via Sherman–Morrison–Woodbury:
/// `q̂ − BG_iᵀ((λK)⁻¹ + G_iBG_iᵀ)⁻¹g(q̂)`.
pub fn penalty_linearized_smw(system: &StiffSystem, z_hat: &StateVector, b: &DMatrix<f64>, cfg: &PenaltyConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    let q_hat = &z_hat.q;
    let gi = system.jacobian(q_hat)?;
    let g = residual(system, q_hat, &z_hat.p, cfg.use_soft_constraint)?;
    let bgt = b * gi.transpose();
    let inner = DMatrix::from_diagonal(&system.force_constants().map(|k| 1.0 / (cfg.lambda * k))) + &gi * &bgt;
    Ok(q_hat - bgt * linalg::solve(&inner, &g, "SMW inner matrix")?)
}

/// Applies [`penalty_newton`] to every member. Returns the balanced ensemble
/// and the number of members whose Newton iteration hit the cap.
pub fn penalty_balance_ensemble(system: &StiffSystem, ens: &Ensemble, cfg: &PenaltyConfig) -> Result<(Ensemble, usize)> {
    let b = match &cfg.b {
        Some(b) => regularized_weight(b)?,
        None => regularized_weight(&ens.position_covariance())?,
    };
    let mut failures = 0;
    let members = ens
        .members()
        .iter()
        .map(|m| {
            let out = penalty_newton(system, m, &b, cfg)?;
            if !out.converged {
                failures += 1;
            }
            let p = if cfg.project_momentum {
                system.project_tangent(&out.q, &m.p)?
            } else {
                m.p.clone()
            };
            Ok(StateVector { q: out.q, p })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Ensemble::new(members)?, failures))
}

/// Treats `g(q) = 0` as an observation with noise covariance `k_BTε²K⁻¹`
/// and updates each member's positions with a perturbed-observation EnKF
/// step using the position block of the ensemble covariance. Momenta are
/// passed through untouched.
pub fn pseudo_obs_balance<R: Rng + ?Sized>(system: &StiffSystem, ens: &Ensemble, rng: &mut R) -> Result<Ensemble> {
    pseudo_obs_update(system, ens, |var| var.map(|v| v.sqrt() * rng.sample::<f64, _>(StandardNormal)))
}

/// [`pseudo_obs_balance`] with the pseudo-observation perturbation set to zero.
pub fn pseudo_obs_balance_noiseless(system: &StiffSystem, ens: &Ensemble) -> Result<Ensemble> {
    pseudo_obs_update(system, ens, |var| DVector::zeros(var.len()))
}

fn pseudo_obs_update<F>(system: &StiffSystem, ens: &Ensemble, mut noise: F) -> Result<Ensemble>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let params = system
        .langevin()
        .ok_or_else(|| Error::InvalidParameter("pseudo-observation balancing requires kbt".into()))?;
    let p = regularized_weight(&ens.position_covariance())?;
    let noise_var = system
        .force_constants()
        .map(|k| params.kbt * system.epsilon().powi(2) / k);
    let noise_cov = DMatrix::from_diagonal(&noise_var);
    let members = ens
        .members()
        .iter()
        .map(|m| {
            let gi = system.jacobian(&m.q)?;
            let g = system.eval_constraint(&m.q)?;
            let xi = noise(&noise_var);
            let pgt = &p * gi.transpose();
            let innovation = &noise_cov + &gi * &pgt;
            let q = &m.q - pgt * linalg::solve(&innovation, &(g + xi), "pseudo-observation innovation")?;
            Ok(StateVector { q, p: m.p.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DoublePendulumParams, EllipticPendulumParams, LinearConstraint, Potential};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn linear_system(rng: &mut ChaCha8Rng, n: usize, l: usize) -> StiffSystem {
        let c = DMatrix::from_fn(l, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(l, |_, _| rng.random_range(-1.0..1.0));
        let k = DVector::from_fn(l, |_, _| rng.random_range(0.2..2.0));
        StiffSystem::new(Arc::new(LinearConstraint::new(c, b).unwrap()), Potential::zero(n), 0.01, k, None).unwrap()
    }

    fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> StateVector {
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        StateVector::from_slices(&q, &p).unwrap()
    }

    fn perturbed_pendulum(rng: &mut ChaCha8Rng) -> (StiffSystem, StateVector) {
        let dp = DoublePendulumParams::default();
        let sys = dp.into_system().unwrap();
        let mut z = StateVector { q: dp.configuration(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)), p: DVector::zeros(4) };
        for v in z.q.iter_mut().chain(z.p.iter_mut()) {
            *v += rng.random_range(-0.1..0.1);
        }
        (sys, z)
    }

    #[test]
    fn scalar_toy_first_iterate() {
        let sys = StiffSystem::harmonic_oscillator(1.0).unwrap();
        let z = StateVector::from_slices(&[1.0], &[0.0]).unwrap();
        let b = DMatrix::from_element(1, 1, 1.0);
        let cfg = PenaltyConfig { newton_max_iter: 1, ..PenaltyConfig::new(1.0) };
        let out = penalty_newton(&sys, &z, &b, &cfg).unwrap();
        assert!((out.q[0] - 0.5).abs() < 1e-15);
        assert!((penalty_linearized(&sys, &z, &b, &cfg).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!((penalty_linearized_smw(&sys, &z, &b, &cfg).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn vanishing_penalty_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (sys, z) = perturbed_pendulum(&mut rng);
        let b = spd(&mut rng, 4);
        let cfg = PenaltyConfig::new(1e-14);
        let out = penalty_newton(&sys, &z, &b, &cfg).unwrap();
        assert!((out.q - &z.q).norm() <= 1e-12);
        assert!((penalty_linearized(&sys, &z, &b, &cfg).unwrap() - &z.q).norm() <= 1e-12);
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let sys = StiffSystem::harmonic_oscillator(1.0).unwrap();
        let z = StateVector::from_slices(&[1.0], &[0.0]).unwrap();
        let b = DMatrix::from_element(1, 1, 1.0);
        assert!(penalty_newton(&sys, &z, &b, &PenaltyConfig::new(0.0)).is_err());
        assert!(penalty_linearized(&sys, &z, &b, &PenaltyConfig::new(f64::NAN)).is_err());
    }

    #[test]
    fn stiff_penalty_satisfies_linearized_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = linear_system(&mut rng, 4, 2);
        let z = random_state(&mut rng, 4, 1.0);
        let b = spd(&mut rng, 4);
        let q = penalty_linearized_smw(&sys, &z, &b, &PenaltyConfig::new(1e12)).unwrap();
        assert!(sys.eval_constraint(&q).unwrap().norm() < 1e-8);
    }

    #[test]
    fn singular_weight_gets_regularized() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = regularized_weight(&b).unwrap();
        assert!(r.clone().cholesky().is_some());
        assert!((r - b).amax() <= 2e-10);
        assert!(regularized_weight(&DMatrix::zeros(2, 2)).is_err());
        let good = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(regularized_weight(&good).unwrap(), good);
    }

    #[test]
    fn soft_variant_uses_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (sys, z) = perturbed_pendulum(&mut rng);
        let b = spd(&mut rng, 4);
        let hard = penalty_linearized(&sys, &z, &b, &PenaltyConfig::new(10.0)).unwrap();
        let cfg = PenaltyConfig { use_soft_constraint: true, ..PenaltyConfig::new(10.0) };
        let soft = penalty_linearized(&sys, &z, &b, &cfg).unwrap();
        let soft_smw = penalty_linearized_smw(&sys, &z, &b, &cfg).unwrap();
        assert!((&soft - &soft_smw).norm() <= 1e-10 * soft.norm());
        assert!((soft - hard).norm() > 0.0);
    }

    #[test]
    fn pseudo_obs_keeps_balanced_noiseless_ensemble() {
        let params = EllipticPendulumParams::default();
        let sys = params.into_system().unwrap();
        let members: Vec<StateVector> = [0.3f64, 1.0, 2.0, -1.5]
            .iter()
            .map(|&t| {
                // point on the ellipse qᵀAq = 1
                let q = DVector::from_column_slice(&[t.cos(), t.sin() / 6.0]);
                StateVector { q, p: DVector::from_column_slice(&[t, -t]) }
            })
            .collect();
        let ens = Ensemble::new(members).unwrap();
        let out = pseudo_obs_balance_noiseless(&sys, &ens).unwrap();
        for (a, b) in out.members().iter().zip(ens.members()) {
            assert!((&a.q - &b.q).norm() < 1e-14);
            assert_eq!(a.p, b.p);
        }
    }

    #[test]
    fn pseudo_obs_requires_temperature() {
        let sys = EllipticPendulumParams { langevin: None, ..Default::default() }.into_system().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ens = Ensemble::new(vec![random_state(&mut rng, 2, 1.0), random_state(&mut rng, 2, 1.0)]).unwrap();
        assert!(pseudo_obs_balance(&sys, &ens, &mut rng).is_err());
    }

    #[test]
    fn pseudo_obs_equals_penalty_with_thermal_weight() {
        let sys = EllipticPendulumParams::default().into_system().unwrap();
        let kbt = sys.langevin().unwrap().kbt;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let members: Vec<StateVector> = (0..8).map(|_| random_state(&mut rng, 2, 1.0)).collect();
        let ens = Ensemble::new(members).unwrap();
        let b = regularized_weight(&ens.position_covariance()).unwrap();
        let cfg = PenaltyConfig::new(1.0 / (kbt * sys.epsilon().powi(2)));
        let out = pseudo_obs_balance_noiseless(&sys, &ens).unwrap();
        for (a, m) in out.members().iter().zip(ens.members()) {
            let expected = penalty_linearized(&sys, m, &b, &cfg).unwrap();
            assert!((&a.q - &expected).norm() <= 1e-10 * expected.norm());
        }
        let noisy = pseudo_obs_balance(&sys, &ens, &mut rng).unwrap();
        for (a, m) in noisy.members().iter().zip(ens.members()) {
            assert_eq!(a.p, m.p);
        }
    }

    #[test]
    fn ensemble_balancing_counts_failures_and_projects() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dp = DoublePendulumParams::default();
        let sys = dp.into_system().unwrap();
        let members: Vec<StateVector> = (0..6).map(|_| perturbed_pendulum(&mut rng).1).collect();
        let ens = Ensemble::new(members).unwrap();
        let cfg = PenaltyConfig { project_momentum: true, ..PenaltyConfig::new(1e6) };
        let (out, failures) = penalty_balance_ensemble(&sys, &ens, &cfg).unwrap();
        assert_eq!(failures, 0);
        for m in out.members() {
            assert!((sys.jacobian(&m.q).unwrap() * &m.p).norm() < 1e-10);
        }
        let capped = PenaltyConfig { newton_max_iter: 1, ..PenaltyConfig::new(1e6) };
        let (_, failures) = penalty_balance_ensemble(&sys, &ens, &capped).unwrap();
        assert_eq!(failures, 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn direct_and_woodbury_forms_agree(seed in any::<u64>(), log_lambda in -3.0f64..6.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (sys, z) = perturbed_pendulum(&mut rng);
            let b = spd(&mut rng, 4);
            let cfg = PenaltyConfig::new(10f64.powf(log_lambda));
            let a = penalty_linearized(&sys, &z, &b, &cfg).unwrap();
            let w = penalty_linearized_smw(&sys, &z, &b, &cfg).unwrap();
            prop_assert!((&a - &w).norm() <= 1e-10 * a.norm().max(1.0));
        }

        #[test]
        fn first_newton_step_is_linearized_update(seed in any::<u64>(), log_lambda in -2.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (sys, z) = perturbed_pendulum(&mut rng);
            let b = spd(&mut rng, 4);
            let cfg = PenaltyConfig { newton_max_iter: 1, ..PenaltyConfig::new(10f64.powf(log_lambda)) };
            let newton = penalty_newton(&sys, &z, &b, &cfg).unwrap().q;
            let lin = penalty_linearized(&sys, &z, &b, &cfg).unwrap();
            prop_assert!((&newton - &lin).norm() <= 1e-10 * lin.norm().max(1.0));
        }

        #[test]
        fn linear_constraint_balance_improves(seed in any::<u64>(), log_lambda in -2.0f64..8.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sys = linear_system(&mut rng, 4, 2);
            let z = random_state(&mut rng, 4, 2.0);
            let b = spd(&mut rng, 4);
            let q = penalty_linearized(&sys, &z, &b, &PenaltyConfig::new(10f64.powf(log_lambda))).unwrap();
            let weighted = |q: &DVector<f64>| {
                let g = sys.eval_constraint(q).unwrap();
                g.component_mul(&sys.force_constants().map(f64::sqrt)).norm()
            };
            prop_assert!(weighted(&q) <= weighted(&z.q) * (1.0 + 1e-12) + 1e-14);
        }

        #[test]
        fn converged_newton_lowers_cost(seed in any::<u64>(), log_lambda in -2.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (sys, z) = perturbed_pendulum(&mut rng);
            let b = spd(&mut rng, 4);
            let lambda = 10f64.powf(log_lambda);
            let out = penalty_newton(&sys, &z, &b, &PenaltyConfig::new(lambda)).unwrap();
            if out.converged {
                let after = penalty_cost(&sys, &out.q, &z.q, &b, lambda).unwrap();
                let before = penalty_cost(&sys, &z.q, &z.q, &b, lambda).unwrap();
                prop_assert!(after <= before + 1e-12);
            }
        }
    }
}
