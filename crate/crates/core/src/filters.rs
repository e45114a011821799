//! Ensemble analysis steps and the exact Kalman update used to check them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::StateVector;

/// Ensemble of `M ≥ 2` states of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<StateVector>,
}

impl Ensemble {
    pub fn new(members: Vec<StateVector>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "ensemble needs at least two members, got {}",
                members.len()
            )));
        }
        let n = members[0].dim();
        for m in &members {
            if m.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: m.dim(),
                    context: "ensemble member",
                });
            }
        }
        Ok(Self { members })
    }

    /// Builds an ensemble from a `2N × M` matrix of flattened members.
    pub fn from_matrix(z: &DMatrix<f64>) -> Result<Self> {
        let members = z
            .column_iter()
            .map(|c| StateVector::from_flat(&c.into_owned()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn members(&self) -> &[StateVector] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [StateVector] {
        &mut self.members
    }

    pub fn into_members(self) -> Vec<StateVector> {
        self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Degrees of freedom `N` of each member.
    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    /// `2N × M` matrix whose columns are the flattened members.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = self.members.iter().map(StateVector::to_flat).collect();
        DMatrix::from_columns(&cols)
    }

    pub fn mean(&self) -> DVector<f64> {
        let z = self.to_matrix();
        z.column_mean()
    }

    pub fn mean_state(&self) -> StateVector {
        StateVector::from_flat(&self.mean()).expect("ensemble mean has even length")
    }

    /// Anomaly matrix `A = [z₁ − z̄, …, z_M − z̄]`.
    pub fn anomalies(&self) -> DMatrix<f64> {
        let mut z = self.to_matrix();
        let mean = z.column_mean();
        for mut c in z.column_iter_mut() {
            c -= &mean;
        }
        z
    }

    /// Empirical covariance `AAᵀ/(M − 1)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let a = self.anomalies();
        let cov = &a * a.transpose() / (self.size() as f64 - 1.0);
        (&cov + cov.transpose()) * 0.5
    }

    /// Empirical covariance of the position components only.
    pub fn position_covariance(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.covariance().view((0, 0), (n, n)).into_owned()
    }
}

/// Linear observation `y = Hz + e` with `e ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl ObservationModel {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if r.nrows() != h.nrows() || r.ncols() != h.nrows() {
            return Err(Error::DimensionMismatch {
                expected: h.nrows(),
                actual: r.nrows(),
                context: "observation covariance",
            });
        }
        if (&r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) {
            return Err(Error::InvalidParameter("observation covariance must be symmetric".into()));
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("observation covariance must be positive definite".into()));
        }
        Ok(Self { h, r })
    }

    /// Observes the positions (`observe_momenta = false`) or the momenta of
    /// an `n`-degree-of-freedom state with `R = ρI`.
    pub fn selection(n: usize, observe_momenta: bool, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("observation variance must be positive, got {rho}")));
        }
        let mut h = DMatrix::zeros(n, 2 * n);
        let offset = if observe_momenta { n } else { 0 };
        for i in 0..n {
            h[(i, offset + i)] = 1.0;
        }
        Self::new(h, DMatrix::identity(n, n) * rho)
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    fn check(&self, state_dim: usize, y: &DVector<f64>) -> Result<()> {
        if self.h.ncols() != state_dim {
            return Err(Error::DimensionMismatch {
                expected: state_dim,
                actual: self.h.ncols(),
                context: "observation operator columns",
            });
        }
        if y.len() != self.obs_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.obs_dim(),
                actual: y.len(),
                context: "observation vector",
            });
        }
        Ok(())
    }

    /// Draws `Hz + e`.
    pub fn observe<R: Rng + ?Sized>(&self, z: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        &self.h * z + self.sample_noise(rng)
    }

    fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let l = self.r.clone().cholesky().expect("R checked positive definite").l();
        let xi = DVector::from_fn(self.obs_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        l * xi
    }
}

/// Exact Kalman analysis of a Gaussian prior `N(mean, cov)`.
pub fn kalman_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    obs: &ObservationModel,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    obs.check(mean.len(), y)?;
    let hp = &obs.h * cov;
    let s = &hp * obs.h.transpose() + &obs.r;
    // K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ
    let gain = linalg::solve_matrix(&s, &hp, "innovation covariance")?.transpose();
    let post_mean = mean - &gain * (&obs.h * mean - y);
    let post_cov = cov - &gain * hp;
    Ok((post_mean, (&post_cov + post_cov.transpose()) * 0.5))
}

/// Deterministic ensemble-transform square-root analysis.
///
/// With `Y = HA`, `S = I + YᵀR⁻¹Y/(M − 1)` and its symmetric inverse square
/// root `T`, the weights `w = 1/M − S⁻¹YᵀR⁻¹(Hz̄ − y)/(M − 1)` and
/// `d_ij = w_i − 1/M + T_ij` give the members `z_jᵃ = Σ_i z_i d_ij`.
pub fn esrf_analysis(ens: &Ensemble, obs: &ObservationModel, y: &DVector<f64>) -> Result<Ensemble> {
    let m = ens.size();
    let z = ens.to_matrix();
    let mean = z.column_mean();
    obs.check(mean.len(), y)?;
    let a = ens.anomalies();
    let y_anom = &obs.h * &a;
    let r_inv_y = linalg::solve_matrix(&obs.r, &y_anom, "observation covariance")?;
    let mf = m as f64 - 1.0;
    let s = DMatrix::identity(m, m) + y_anom.transpose() * &r_inv_y / mf;
    let s = (&s + s.transpose()) * 0.5;
    let (t, s_inv) = linalg::sym_inverse_sqrt(&s, 1e-12);
    if !t.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("ensemble transform square root"));
    }
    let innovation = &obs.h * &mean - y;
    let w = DVector::from_element(m, 1.0 / m as f64) - &s_inv * (r_inv_y.transpose() * innovation) / mf;
    let mut d = t;
    for j in 0..m {
        for i in 0..m {
            d[(i, j)] += w[i] - 1.0 / m as f64;
        }
    }
    Ensemble::from_matrix(&(z * d))
}

/// Stochastic EnKF with perturbed observations and the empirical gain.
pub fn enkf_perturbed_analysis<R: Rng + ?Sized>(
    ens: &Ensemble,
    obs: &ObservationModel,
    y: &DVector<f64>,
    rng: &mut R,
) -> Result<Ensemble> {
    let z = ens.to_matrix();
    obs.check(z.nrows(), y)?;
    let p = ens.covariance();
    let hp = &obs.h * &p;
    let s = &hp * obs.h.transpose() + &obs.r;
    let gain = linalg::solve_matrix(&s, &hp, "innovation covariance")?.transpose();
    let members = ens
        .members()
        .iter()
        .map(|m| {
            let zi = m.to_flat();
            let innovation = &obs.h * &zi + obs.sample_noise(rng) - y;
            StateVector::from_flat(&(zi - &gain * innovation))
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members)
}

/// Multiplicative inflation `z_i ← z̄ + f(z_i − z̄)`.
pub fn inflate(ens: &Ensemble, factor: f64) -> Result<Ensemble> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::InvalidParameter(format!("inflation factor must be ≥ 1, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(ens.clone());
    }
    let mean = ens.mean_state();
    let members = ens
        .members()
        .iter()
        .map(|m| StateVector {
            q: &mean.q + (&m.q - &mean.q) * factor,
            p: &mean.p + (&m.p - &mean.p) * factor,
        })
        .collect();
    Ensemble::new(members)
}
