//! Flat experiment configuration with scenario presets.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::ObservationModel;
use crate::integrators::{BlendSchedule, Ramp};
use crate::models::{DoublePendulumParams, EllipticPendulumParams, LangevinParams, StateVector, StiffSystem};

/// Which model and protocol a configuration describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Elastic double pendulum, Störmer–Verlet dynamics, positions observed.
    A,
    /// Thermally embedded elliptic pendulum, Langevin dynamics, momenta
    /// observed.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observed {
    Q,
    P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalysisKind {
    Esrf,
    Enkf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancingKind {
    None,
    Penalty,
    PseudoObs,
    Blending,
}

/// One-step map used by `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorKind {
    Verlet,
    Langevin,
    /// RATTLE; with friction configured, RATTLE plus tangent-projected
    /// Ornstein–Uhlenbeck noise.
    Rattle,
    Tangential,
}

/// Whether cycle diagnostics are taken from the forecast ensemble or from
/// the analysed (and balanced) ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordAt {
    Forecast,
    Analysis,
}

/// How the `simulate` initial state is prepared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialBalance {
    None,
    Hard,
    Soft,
}

/// Every tunable of a run. Keys absent from a configuration file take the
/// value of the preset selected by `scenario`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,

    pub epsilon: f64,
    /// Diagonal of the force-constant matrix `K`, one entry per constraint.
    pub stiffness: Vec<f64>,
    /// Scenario A: gravity `g₀` in `V = g₀(q₂ + q₄)`.
    pub gravity: f64,
    /// Scenario A: rest lengths of the two rods.
    pub rod_lengths: [f64; 2],
    /// Scenario B: second diagonal entry of `A = diag(1, α)`.
    pub ellipse_alpha: f64,
    /// Scenario B: gradient `c` of the linear potential `V = cᵀq`.
    pub force: [f64; 2],
    /// Friction; `0` disables the heat bath.
    pub gamma: f64,
    pub kbt: f64,

    pub step: f64,
    pub total_time: f64,

    /// Scenario A reference: rod angles from the downward vertical.
    pub theta: [f64; 2],
    /// Initial momentum before balancing (empty means zero).
    pub initial_momentum: Vec<f64>,
    /// Scenario B reference position (on the constraint manifold).
    pub initial_position: [f64; 2],
    /// Scenario B: size of the momentum kick normal to the manifold.
    pub normal_impulse: f64,

    pub ensemble_size: usize,
    pub observe: Observed,
    pub obs_interval: f64,
    pub obs_variance: f64,
    pub init_variance: f64,
    pub inflation: f64,
    pub analysis: AnalysisKind,

    pub balancing: BalancingKind,
    pub lambda: f64,
    pub soft_constraint: bool,
    pub project_momentum: bool,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Number of blending weights `k` (ramp from 0 to 1 over `k` steps).
    pub window: usize,
    pub ramp: Ramp,
    /// Records before this time are excluded from time averages.
    pub burn_in: f64,
    pub record_at: RecordAt,

    pub integrator: IntegratorKind,
    pub initial_balance: InitialBalance,
    /// `simulate` writes every n-th step.
    pub record_every: usize,
}

impl ExperimentConfig {
    /// Double-pendulum twin experiment over 200 time units.
    pub fn scenario_a() -> Self {
        Self {
            scenario: Scenario::A,
            seed: 20240501,
            epsilon: 1e-3,
            stiffness: vec![1.0, 0.04],
            gravity: 10.0,
            rod_lengths: [1.0, 1.0],
            ellipse_alpha: 36.0,
            force: [0.0, 0.0],
            gamma: 0.0,
            kbt: 0.0,
            step: 1e-3,
            total_time: 200.0,
            theta: [std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2 + 0.5],
            initial_momentum: Vec::new(),
            initial_position: [1.0, 0.0],
            normal_impulse: 0.0,
            ensemble_size: 20,
            observe: Observed::Q,
            obs_interval: 0.02,
            obs_variance: 0.05,
            init_variance: 0.1,
            inflation: 1.05,
            analysis: AnalysisKind::Esrf,
            balancing: BalancingKind::Penalty,
            lambda: 1e4,
            soft_constraint: false,
            project_momentum: false,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            window: 20,
            ramp: Ramp::Linear,
            burn_in: 0.0,
            record_at: RecordAt::Forecast,
            integrator: IntegratorKind::Verlet,
            initial_balance: InitialBalance::Hard,
            record_every: 1,
        }
    }

    /// Thermally embedded elliptic pendulum twin experiment over 200 time
    /// units.
    pub fn scenario_b() -> Self {
        Self {
            scenario: Scenario::B,
            stiffness: vec![1.0],
            gamma: 1.0,
            kbt: 16.0,
            step: 5e-6,
            normal_impulse: 4.0,
            observe: Observed::P,
            obs_interval: 0.01,
            obs_variance: 0.1,
            inflation: 1.0,
            balancing: BalancingKind::PseudoObs,
            window: 2000,
            integrator: IntegratorKind::Langevin,
            initial_balance: InitialBalance::None,
            ..Self::scenario_a()
        }
    }

    pub fn preset(scenario: Scenario) -> Self {
        match scenario {
            Scenario::A => Self::scenario_a(),
            Scenario::B => Self::scenario_b(),
        }
    }

    /// Parses a TOML document. The `scenario` key (default `"A"`) selects
    /// the preset that supplies every key not given; unknown keys are
    /// rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let scenario = match table.get("scenario") {
            None => Scenario::A,
            Some(v) => v
                .clone()
                .try_into::<Scenario>()
                .map_err(|e| Error::Config(format!("scenario: {e}")))?,
        };
        let mut merged = toml::Table::try_from(Self::preset(scenario)).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in table {
            merged.insert(k, v);
        }
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn positive(name: &str, v: f64) -> Result<()> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
        }
    }

    /// Checks internal consistency of the time grid and parameters.
    pub fn validate(&self) -> Result<()> {
        Self::positive("epsilon", self.epsilon)?;
        Self::positive("step", self.step)?;
        Self::positive("obs_interval", self.obs_interval)?;
        Self::positive("obs_variance", self.obs_variance)?;
        if !(self.total_time >= 0.0 && self.total_time.is_finite()) {
            return Err(Error::Config(format!("total_time must be non-negative, got {}", self.total_time)));
        }
        if !(self.init_variance >= 0.0) {
            return Err(Error::Config("init_variance must be non-negative".into()));
        }
        if !(self.inflation >= 1.0) {
            return Err(Error::Config(format!("inflation must be at least 1, got {}", self.inflation)));
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble_size must be at least 2".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        let expected_k = match self.scenario {
            Scenario::A => 2,
            Scenario::B => 1,
        };
        if self.stiffness.len() != expected_k {
            return Err(Error::Config(format!(
                "stiffness needs {expected_k} entries for scenario {:?}, got {}",
                self.scenario,
                self.stiffness.len()
            )));
        }
        if !self.initial_momentum.is_empty() && self.initial_momentum.len() != self.n_dof() {
            return Err(Error::Config(format!(
                "initial_momentum needs {} entries, got {}",
                self.n_dof(),
                self.initial_momentum.len()
            )));
        }
        self.steps_per_obs()?;
        self.n_cycles()?;
        if self.balancing == BalancingKind::Blending {
            BlendSchedule::ramp(self.ramp, self.window, self.steps_per_obs()?)
                .map_err(|e| Error::Config(format!("blending window: {e}")))?;
        }
        if self.balancing == BalancingKind::Penalty {
            Self::positive("lambda", self.lambda)?;
        }
        if self.balancing == BalancingKind::PseudoObs && !(self.kbt > 0.0) {
            return Err(Error::Config("pseudo_obs balancing needs kbt > 0".into()));
        }
        if self.gamma < 0.0 || (self.gamma > 0.0 && !(self.kbt > 0.0)) {
            return Err(Error::Config("gamma must be non-negative and needs kbt > 0".into()));
        }
        self.system()?;
        Ok(())
    }

    fn ratio(a: f64, b: f64, what: &str) -> Result<usize> {
        let r = (a / b).round();
        if (r * b - a).abs() > 1e-9 * a.abs().max(b) {
            return Err(Error::Config(format!("{what} must be an integer multiple, got ratio {}", a / b)));
        }
        Ok(r as usize)
    }

    /// Model steps per observation interval.
    pub fn steps_per_obs(&self) -> Result<usize> {
        let n = Self::ratio(self.obs_interval, self.step, "obs_interval / step")?;
        if n == 0 {
            return Err(Error::Config("obs_interval shorter than step".into()));
        }
        Ok(n)
    }

    /// Number of assimilation cycles.
    pub fn n_cycles(&self) -> Result<usize> {
        Self::ratio(self.total_time, self.obs_interval, "total_time / obs_interval")
    }

    /// Model steps of a `simulate` run.
    pub fn n_steps(&self) -> Result<usize> {
        Self::ratio(self.total_time, self.step, "total_time / step")
    }

    pub fn n_dof(&self) -> usize {
        match self.scenario {
            Scenario::A => 4,
            Scenario::B => 2,
        }
    }

    pub fn langevin(&self) -> Option<LangevinParams> {
        (self.kbt > 0.0).then_some(LangevinParams { gamma: self.gamma, kbt: self.kbt })
    }

    pub fn system(&self) -> Result<StiffSystem> {
        match self.scenario {
            Scenario::A => {
                let sys = DoublePendulumParams {
                    l1: self.rod_lengths[0],
                    l2: self.rod_lengths[1],
                    g0: self.gravity,
                    k: [self.stiffness[0], self.stiffness[1]],
                    epsilon: self.epsilon,
                }
                .into_system()?;
                sys.with_langevin(self.langevin())
            }
            Scenario::B => EllipticPendulumParams {
                alpha: self.ellipse_alpha,
                epsilon: self.epsilon,
                k: self.stiffness[0],
                force: self.force,
                langevin: self.langevin(),
            }
            .into_system(),
        }
    }

    pub fn observation_model(&self) -> Result<ObservationModel> {
        ObservationModel::selection(self.n_dof(), self.observe == Observed::P, self.obs_variance)
    }

    pub fn blend_schedule(&self) -> Result<BlendSchedule> {
        BlendSchedule::ramp(self.ramp, self.window, self.steps_per_obs()?)
    }

    fn raw_momentum(&self) -> DVector<f64> {
        if self.initial_momentum.is_empty() {
            DVector::zeros(self.n_dof())
        } else {
            DVector::from_column_slice(&self.initial_momentum)
        }
    }

    /// Initial state of the reference trajectory. Scenario A: rods at the
    /// configured angles, balanced. Scenario B: the configured point on the
    /// manifold with a momentum kick of size `normal_impulse` along the
    /// normal plus the tangential part of `initial_momentum`.
    pub fn reference_initial_state(&self, system: &StiffSystem) -> Result<StateVector> {
        match self.scenario {
            Scenario::A => {
                let dp = DoublePendulumParams {
                    l1: self.rod_lengths[0],
                    l2: self.rod_lengths[1],
                    ..Default::default()
                };
                let raw = StateVector { q: dp.configuration(self.theta[0], self.theta[1]), p: self.raw_momentum() };
                match self.initial_balance {
                    InitialBalance::None => Ok(raw),
                    InitialBalance::Hard => system.balance_initial_state(&raw, 1e-12),
                    InitialBalance::Soft => system.balance_soft_initial_state(&raw, 1e-12),
                }
            }
            Scenario::B => {
                let q = DVector::from_row_slice(&self.initial_position);
                let jac = system.jacobian(&q)?;
                let normal = jac.row(0).transpose().normalize();
                let p = system.project_tangent(&q, &self.raw_momentum())? + normal * self.normal_impulse;
                Ok(StateVector { q, p })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        ExperimentConfig::scenario_a().validate().unwrap();
        ExperimentConfig::scenario_b().validate().unwrap();
        assert_eq!(ExperimentConfig::scenario_a().steps_per_obs().unwrap(), 20);
        assert_eq!(ExperimentConfig::scenario_b().steps_per_obs().unwrap(), 2000);
        assert_eq!(ExperimentConfig::scenario_b().n_cycles().unwrap(), 20000);
    }

    #[test]
    fn toml_overlays_scenario_preset() {
        let cfg = ExperimentConfig::from_toml_str("scenario = \"B\"\ntotal_time = 20.0\nseed = 7\n").unwrap();
        assert_eq!(cfg.scenario, Scenario::B);
        assert_eq!(cfg.total_time, 20.0);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.kbt, 16.0);
        let a = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(a, ExperimentConfig::scenario_a());
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = ExperimentConfig::scenario_b();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_inconsistent_keys() {
        assert!(matches!(ExperimentConfig::from_toml_str("lamda = 3.0"), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml_str("step = 0.003").is_err());
        assert!(ExperimentConfig::from_toml_str("total_time = 0.03").is_err());
        assert!(ExperimentConfig::from_toml_str("balancing = \"blending\"\nwindow = 40").is_err());
        assert!(ExperimentConfig::from_toml_str("scenario = \"C\"").is_err());
        assert!(ExperimentConfig::from_toml_str("stiffness = [1.0]").is_err());
        assert!(ExperimentConfig::from_toml_str("inflation = 0.5").is_err());
    }

    #[test]
    fn zero_total_time_is_allowed() {
        let cfg = ExperimentConfig::from_toml_str("total_time = 0.0").unwrap();
        assert_eq!(cfg.n_cycles().unwrap(), 0);
    }

    #[test]
    fn reference_initial_states() {
        let a = ExperimentConfig::scenario_a();
        let sys = a.system().unwrap();
        let z = a.reference_initial_state(&sys).unwrap();
        assert!((sys.jacobian(&z.q).unwrap() * &z.p).norm() < 1e-10);
        let b = ExperimentConfig::scenario_b();
        let sys = b.system().unwrap();
        let z = b.reference_initial_state(&sys).unwrap();
        assert_eq!(sys.eval_constraint(&z.q).unwrap()[0], 0.0);
        assert!((z.p.norm() - 4.0).abs() < 1e-15);
        assert!(sys.project_tangent(&z.q, &z.p).unwrap().norm() < 1e-15);
    }
}
