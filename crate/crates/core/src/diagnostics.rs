//! Scalar functionals of states and ensembles: energies, balance residuals,
//! the action of the fast oscillation, and error metrics.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::Ensemble;
use crate::linalg;
use crate::models::{StateVector, StiffSystem};

/// `H = ½pᵀp + gᵀKg/(2ε²) + V(q)`.
pub fn total_energy(system: &StiffSystem, z: &StateVector) -> Result<f64> {
    let g = system.eval_constraint(&z.q)?;
    let stiff = g.component_mul(system.force_constants()).dot(&g) / (2.0 * system.epsilon().powi(2));
    Ok(0.5 * z.p.norm_squared() + stiff + system.potential().value(&z.q))
}

/// Energy of the motion normal to the constraint manifold,
/// `½(Gp)ᵀ(GGᵀ)⁻¹Gp + gᵀKg/(2ε²)`.
pub fn oscillatory_energy(system: &StiffSystem, z: &StateVector) -> Result<f64> {
    let g = system.eval_constraint(&z.q)?;
    let jac = system.jacobian(&z.q)?;
    let gp = &jac * &z.p;
    let ggt = &jac * jac.transpose();
    let w = linalg::solve(&ggt, &gp, "G Gᵀ")
        .map_err(|_| Error::SingularConfiguration("G Gᵀ is singular".into()))?;
    let stiff = g.component_mul(system.force_constants()).dot(&g) / (2.0 * system.epsilon().powi(2));
    Ok(0.5 * gp.dot(&w) + stiff)
}

fn scalar_constraint(system: &StiffSystem) -> Result<()> {
    if system.n_constraints() != 1 {
        return Err(Error::InvalidParameter(format!(
            "frequency diagnostics need a single constraint, model has {}",
            system.n_constraints()
        )));
    }
    Ok(())
}

/// `ω₁(q) = ‖G(q)‖` for a scalar constraint.
pub fn normal_frequency(system: &StiffSystem, q: &DVector<f64>) -> Result<f64> {
    scalar_constraint(system)?;
    Ok(system.jacobian(q)?.norm())
}

/// Fast frequency `ω^ε(q) = ε⁻¹(G Gᵀ)^{1/2}`.
pub fn fast_frequency(system: &StiffSystem, q: &DVector<f64>) -> Result<f64> {
    Ok(normal_frequency(system, q)? / system.epsilon())
}

/// The action of the normal oscillation computed two ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionForms {
    /// `ε⁻¹ H_osc / ω^ε`.
    pub from_energy: f64,
    /// `(ω₁² p_x² + K g²/ε²) / (2ω₁)` with the normal momentum
    /// `p_x = Gp/ω₁²`.
    pub explicit: f64,
}

pub fn action_forms(system: &StiffSystem, z: &StateVector) -> Result<ActionForms> {
    let w1 = normal_frequency(system, &z.q)?;
    if !(w1 > 0.0) {
        return Err(Error::SingularPoint("normal frequency vanishes".into()));
    }
    let eps = system.epsilon();
    let from_energy = oscillatory_energy(system, z)? / (w1 / eps) / eps;
    let g = system.eval_constraint(&z.q)?[0];
    let px = (system.jacobian(&z.q)? * &z.p)[0] / (w1 * w1);
    let k = system.force_constants()[0];
    let explicit = (w1 * w1 * px * px + k * g * g / (eps * eps)) / (2.0 * w1);
    Ok(ActionForms { from_energy, explicit })
}

/// Action `J = H_osc/ω₁` of the fast normal oscillation (scalar constraint).
/// Both evaluation routes are computed and must agree to 10⁻⁸.
pub fn action_variable(system: &StiffSystem, z: &StateVector) -> Result<f64> {
    let forms = action_forms(system, z)?;
    let scale = forms.explicit.abs().max(f64::MIN_POSITIVE);
    if (forms.from_energy - forms.explicit).abs() > 1e-8 * scale {
        return Err(Error::InvalidParameter(format!("action variable routes disagree: {forms:?}")));
    }
    Ok(forms.explicit)
}

/// Gradient of `ω₁`; analytic when the model provides it, otherwise a
/// central difference.
pub fn normal_frequency_gradient(system: &StiffSystem, q: &DVector<f64>) -> Result<DVector<f64>> {
    scalar_constraint(system)?;
    if let Some(grad) = system.constraint_model().frequency_gradient(q) {
        return grad;
    }
    finite_difference_frequency_gradient(system, q)
}

pub fn finite_difference_frequency_gradient(system: &StiffSystem, q: &DVector<f64>) -> Result<DVector<f64>> {
    let n = q.len();
    let mut grad = DVector::zeros(n);
    for i in 0..n {
        let d = 1e-6 * (1.0 + q[i].abs());
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += d;
        qm[i] -= d;
        grad[i] = (normal_frequency(system, &qp)? - normal_frequency(system, &qm)?) / (2.0 * d);
    }
    Ok(grad)
}

/// Effective force `−J ∇ω₁` exerted by the fast oscillation on the slow
/// motion.
pub fn correction_force(system: &StiffSystem, z: &StateVector) -> Result<DVector<f64>> {
    let j = action_variable(system, z)?;
    if j == 0.0 {
        return Ok(DVector::zeros(system.n_dof()));
    }
    Ok(normal_frequency_gradient(system, &z.q)? * -j)
}

/// `‖q̄ − q_ref‖/√N` and `‖Π_T(q_ref)(p̄ − p_ref)‖/√N`.
pub fn rmse(system: &StiffSystem, mean: &StateVector, reference: &StateVector) -> Result<(f64, f64)> {
    let n = reference.dim() as f64;
    let eq = (&mean.q - &reference.q).norm() / n.sqrt();
    let dp = &mean.p - &reference.p;
    let ep = system.project_tangent(&reference.q, &dp)?.norm() / n.sqrt();
    Ok((eq, ep))
}

/// RMSE pair at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RmseRecord {
    pub time: f64,
    pub rmse_q: f64,
    pub rmse_p_tan: f64,
}

/// RMSE of a mean trajectory against a reference sampled at the same times.
pub fn rmse_metrics(
    system: &StiffSystem,
    means: &[(f64, StateVector)],
    reference: &[(f64, StateVector)],
) -> Result<Vec<RmseRecord>> {
    if means.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            actual: means.len(),
            context: "trajectory length",
        });
    }
    means
        .iter()
        .zip(reference)
        .map(|((t, m), (tr, r))| {
            if (t - tr).abs() > 1e-9 * tr.abs().max(1.0) {
                return Err(Error::InvalidParameter(format!("time grids differ: {t} vs {tr}")));
            }
            let (rmse_q, rmse_p_tan) = rmse(system, m, r)?;
            Ok(RmseRecord { time: *t, rmse_q, rmse_p_tan })
        })
        .collect()
}

/// Diagnostics of an ensemble at one analysis time. `mean_j` is only
/// defined for scalar constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub time: f64,
    pub rmse_q: f64,
    pub rmse_p_tan: f64,
    pub mean_hosc: f64,
    pub mean_j: Option<f64>,
    pub mean_abs_g: f64,
    pub mean_abs_gtilde: f64,
}

impl MetricsRecord {
    pub fn from_ensemble(system: &StiffSystem, time: f64, ens: &Ensemble, reference: &StateVector) -> Result<Self> {
        let (rmse_q, rmse_p_tan) = rmse(system, &ens.mean_state(), reference)?;
        let m = ens.size() as f64;
        let scalar = system.n_constraints() == 1;
        let (mut hosc, mut j, mut g, mut gt) = (0.0, 0.0, 0.0, 0.0);
        for z in ens.members() {
            hosc += oscillatory_energy(system, z)?;
            if scalar {
                j += action_variable(system, z)?;
            }
            g += system.eval_constraint(&z.q)?.norm();
            gt += system.soft_constraint_residual(z)?.norm();
        }
        Ok(Self {
            time,
            rmse_q,
            rmse_p_tan,
            mean_hosc: hosc / m,
            mean_j: scalar.then_some(j / m),
            mean_abs_g: g / m,
            mean_abs_gtilde: gt / m,
        })
    }
}

/// Time-averaged diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub rmse_q: f64,
    pub rmse_p_tan: f64,
    pub mean_hosc: f64,
    pub mean_j: Option<f64>,
    pub mean_abs_g: f64,
    pub mean_abs_gtilde: f64,
}

/// Per-analysis-time records of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub records: Vec<MetricsRecord>,
}

impl RunMetrics {
    /// Arithmetic means over records with `time ≥ burn_in`.
    pub fn summary(&self, burn_in: f64) -> Option<MetricsSummary> {
        let kept: Vec<&MetricsRecord> = self.records.iter().filter(|r| r.time >= burn_in).collect();
        if kept.is_empty() {
            return None;
        }
        let n = kept.len() as f64;
        let avg = |f: &dyn Fn(&MetricsRecord) -> f64| kept.iter().map(|r| f(r)).sum::<f64>() / n;
        let mean_j = if kept.iter().all(|r| r.mean_j.is_some()) {
            Some(avg(&|r| r.mean_j.unwrap_or(0.0)))
        } else {
            None
        };
        Some(MetricsSummary {
            rmse_q: avg(&|r| r.rmse_q),
            rmse_p_tan: avg(&|r| r.rmse_p_tan),
            mean_hosc: avg(&|r| r.mean_hosc),
            mean_j,
            mean_abs_g: avg(&|r| r.mean_abs_g),
            mean_abs_gtilde: avg(&|r| r.mean_abs_gtilde),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DoublePendulumParams, EllipticPendulumParams};
    use proptest::prelude::*;

    fn ellipse(alpha: f64, eps: f64) -> StiffSystem {
        EllipticPendulumParams { alpha, epsilon: eps, ..Default::default() }.into_system().unwrap()
    }

    fn sv(q: &[f64], p: &[f64]) -> StateVector {
        StateVector::from_slices(q, p).unwrap()
    }

    #[test]
    fn energy_examples() {
        let ho = StiffSystem::harmonic_oscillator(1.0).unwrap();
        assert!((total_energy(&ho, &sv(&[1.0], &[1.0])).unwrap() - 1.0).abs() < 1e-15);
        let e = ellipse(36.0, 1e-3);
        assert_eq!(total_energy(&e, &sv(&[1.0, 0.0], &[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(oscillatory_energy(&e, &sv(&[1.0, 0.0], &[0.0, 3.0])).unwrap(), 0.0);
    }

    #[test]
    fn frequency_examples() {
        let e = ellipse(36.0, 1.0);
        assert!((fast_frequency(&e, &DVector::from_vec(vec![1.0, 0.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!((fast_frequency(&e, &DVector::from_vec(vec![0.0, 1.0 / 6.0])).unwrap() - 6.0).abs() < 1e-14);
        let e = ellipse(36.0, 1e-3);
        assert!((fast_frequency(&e, &DVector::from_vec(vec![1.0, 0.0])).unwrap() - 1e3).abs() < 1e-9);
        let dp = DoublePendulumParams::default().into_system().unwrap();
        assert!(fast_frequency(&dp, &DVector::from_vec(vec![0.0, -1.0, 0.0, -2.0])).is_err());
    }

    #[test]
    fn circular_pendulum_has_no_correction_force() {
        let c = ellipse(1.0, 1e-2);
        for t in [0.1f64, 1.0, 2.5] {
            let z = sv(&[1.01 * t.cos(), 1.01 * t.sin()], &[0.3, -2.0]);
            assert!(correction_force(&c, &z).unwrap().norm() < 1e-12);
            assert!((fast_frequency(&c, &z.q).unwrap() - 100.0).abs() < 1e-10);
        }
    }

    #[test]
    fn action_zero_on_tangent_manifold() {
        let e = ellipse(36.0, 1e-3);
        let t: f64 = 0.7;
        let q = [t.cos(), t.sin() / 6.0];
        let z = sv(&q, &[0.0, 0.0]);
        assert_eq!(action_variable(&e, &z).unwrap(), 0.0);
        assert_eq!(correction_force(&e, &z).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn rmse_examples() {
        let dp = DoublePendulumParams::default();
        let sys = dp.into_system().unwrap();
        let q = dp.configuration(0.4, 1.1);
        let reference = StateVector { q: q.clone(), p: DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]) };
        assert_eq!(rmse(&sys, &reference, &reference).unwrap(), (0.0, 0.0));
        let mut shifted = reference.clone();
        shifted.q[2] += 0.3;
        let (eq, _) = rmse(&sys, &shifted, &reference).unwrap();
        assert!((eq - 0.3 / 2.0).abs() < 1e-15);
        let jac = sys.jacobian(&q).unwrap();
        let normal = jac.transpose() * DVector::from_vec(vec![0.5, -1.0]);
        let off = StateVector { q: q.clone(), p: &reference.p + normal };
        let (_, ep) = rmse(&sys, &off, &reference).unwrap();
        assert!(ep < 1e-14);
        let means = vec![(0.0, reference.clone()), (1.0, shifted.clone())];
        let refs = vec![(0.0, reference.clone()), (1.0, reference.clone())];
        let recs = rmse_metrics(&sys, &means, &refs).unwrap();
        assert_eq!(recs[0].rmse_q, 0.0);
        let bad = vec![(0.0, reference.clone()), (2.0, reference.clone())];
        assert!(rmse_metrics(&sys, &means, &bad).is_err());
        assert!(rmse_metrics(&sys, &means[..1], &refs).is_err());
    }

    #[test]
    fn summary_averages_records_after_burn_in() {
        let rec = |t: f64, v: f64| MetricsRecord {
            time: t,
            rmse_q: v,
            rmse_p_tan: 2.0 * v,
            mean_hosc: v,
            mean_j: None,
            mean_abs_g: v,
            mean_abs_gtilde: v,
        };
        let m = RunMetrics { records: vec![rec(0.0, 1.0), rec(1.0, 2.0), rec(2.0, 4.0)] };
        let s = m.summary(0.0).unwrap();
        assert!((s.rmse_q - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.mean_j, None);
        assert_eq!(m.summary(1.0).unwrap().rmse_p_tan, 6.0);
        assert!(m.summary(5.0).is_none());
    }

    proptest! {
        #[test]
        fn action_routes_agree(t in 0.0f64..std::f64::consts::TAU, r in 0.9f64..1.1, px in -5.0f64..5.0, py in -5.0f64..5.0, eps in 1e-3f64..1.0) {
            let e = ellipse(36.0, eps);
            let z = sv(&[r * t.cos(), r * t.sin() / 6.0], &[px, py]);
            let f = action_forms(&e, &z).unwrap();
            prop_assert!((f.from_energy - f.explicit).abs() <= 1e-8 * f.explicit.abs().max(1e-300));
        }

        #[test]
        fn frequency_gradient_matches_finite_difference(t in 0.0f64..std::f64::consts::TAU, r in 0.5f64..2.0) {
            let e = ellipse(36.0, 1.0);
            let q = DVector::from_vec(vec![r * t.cos(), r * t.sin() / 6.0]);
            let a = normal_frequency_gradient(&e, &q).unwrap();
            let f = finite_difference_frequency_gradient(&e, &q).unwrap();
            prop_assert!((&a - &f).norm() <= 1e-6 * a.norm().max(1.0));
        }

        #[test]
        fn oscillatory_energy_nonnegative(th1 in -3.0f64..3.0, th2 in -3.0f64..3.0, p in prop::collection::vec(-3.0f64..3.0, 4), d in -0.05f64..0.05) {
            let dp = DoublePendulumParams::default();
            let sys = dp.into_system().unwrap();
            let mut q = dp.configuration(th1, th2);
            q[0] += d;
            let z = StateVector { q, p: DVector::from_vec(p) };
            prop_assert!(oscillatory_energy(&sys, &z).unwrap() >= 0.0);
            prop_assert!(total_energy(&sys, &z).unwrap() >= -20.0 * (dp.l1 + dp.l2) - 1.0);
        }
    }
}
