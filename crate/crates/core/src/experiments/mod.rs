//! Twin experiments: a reference run serves as truth, noisy observations
//! of it are assimilated into an ensemble, and the ensemble is scored
//! against the reference.

mod config;
pub mod output;

pub use config::{
    AnalysisKind, BalancingKind, ExperimentConfig, InitialBalance, IntegratorKind, Observed, RecordAt, Scenario,
};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::balancing::{self, PenaltyConfig};
use crate::diagnostics::{self, MetricsRecord, MetricsSummary, RunMetrics};
use crate::error::{Error, Result};
use crate::filters::{self, Ensemble, ObservationModel};
use crate::integrators::{self, BlendSchedule, RATTLE_TOL, TANGENT_MAX_ITER, TANGENT_TOL};
use crate::models::{StateVector, StiffSystem};

const STREAM_TRUTH: u64 = 1;
const STREAM_OBS: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_ANALYSIS: u64 = 4;
const STREAM_MEMBER_BASE: u64 = 100;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A state at a given time.
pub type Timed<T> = (f64, T);

/// Full-model one-step map of a configuration: Störmer–Verlet without a
/// heat bath, the Langevin step with one.
fn full_step<R: Rng + ?Sized>(system: &StiffSystem, z: &StateVector, h: f64, rng: &mut R) -> Result<StateVector> {
    match system.langevin() {
        Some(l) if l.gamma > 0.0 => integrators::langevin_step(system, z, h, rng),
        _ => integrators::stormer_verlet_step(system, z, h),
    }
}

/// Integrates the true model from the reference initial state and keeps
/// the states at the observation times `0, Δt_obs, …`.
pub fn generate_reference(cfg: &ExperimentConfig) -> Result<Vec<Timed<StateVector>>> {
    let system = cfg.system()?;
    let steps = cfg.steps_per_obs()?;
    let n = cfg.n_cycles()?;
    let mut rng = stream(cfg.seed, STREAM_TRUTH);
    let mut z = cfg.reference_initial_state(&system)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push((0.0, z.clone()));
    for k in 1..=n {
        for _ in 0..steps {
            z = full_step(&system, &z, cfg.step, &mut rng).map_err(|e| Error::Cycle { cycle: k, source: Box::new(e) })?;
        }
        out.push((k as f64 * cfg.obs_interval, z.clone()));
    }
    Ok(out)
}

/// `y_k = H z_ref(t_k) + ξ_k` for every reference state after the initial
/// one. With zero noise variance (`obs.r = 0` is not allowed, so this is
/// only reachable through [`observe_exact`]) observations equal `H z_ref`.
pub fn generate_observations<R: Rng + ?Sized>(
    reference: &[Timed<StateVector>],
    obs: &ObservationModel,
    rng: &mut R,
) -> Vec<Timed<DVector<f64>>> {
    reference
        .iter()
        .skip(1)
        .map(|(t, z)| (*t, obs.observe(&z.to_flat(), rng)))
        .collect()
}

/// Noise-free observations `H z_ref(t_k)`.
pub fn observe_exact(reference: &[Timed<StateVector>], obs: &ObservationModel) -> Vec<Timed<DVector<f64>>> {
    reference.iter().skip(1).map(|(t, z)| (*t, &obs.h * z.to_flat())).collect()
}

/// Reference run plus the observations drawn from it.
#[derive(Debug, Clone)]
pub struct Truth {
    pub reference: Vec<Timed<StateVector>>,
    pub observations: Vec<Timed<DVector<f64>>>,
}

pub fn generate_truth(cfg: &ExperimentConfig) -> Result<Truth> {
    let reference = generate_reference(cfg)?;
    let mut rng = stream(cfg.seed, STREAM_OBS);
    let observations = generate_observations(&reference, &cfg.observation_model()?, &mut rng);
    Ok(Truth { reference, observations })
}

/// Result of one assimilation run.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub summary: Option<MetricsSummary>,
    /// Penalty balancing calls that hit the Newton iteration cap.
    pub newton_nonconverged: usize,
    pub warnings: Vec<String>,
}

/// Warnings about a configuration that is allowed but likely unintended.
pub fn config_warnings(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let system = cfg.system()?;
    let mut out = Vec::new();
    let ratio = integrators::verlet_stability_ratio(&system, cfg.step);
    if ratio >= 2.0 {
        out.push(format!(
            "h·ω_fast = {ratio:.3} ≥ 2: Störmer–Verlet is linearly unstable for the stiff model"
        ));
    }
    if cfg.scenario == Scenario::B && (cfg.step - 5e-6).abs() < 1e-18 {
        out.push("step = 5e-6; the alternative reading 5^-6 = 6.4e-5 is available by setting step = 6.4e-5".into());
    }
    Ok(out)
}

fn initial_ensemble(cfg: &ExperimentConfig, system: &StiffSystem, z0: &StateVector, seed: u64) -> Result<Ensemble> {
    let mut rng = stream(seed, STREAM_INIT);
    let sd = cfg.init_variance.sqrt();
    let mut members = Vec::with_capacity(cfg.ensemble_size);
    for _ in 0..cfg.ensemble_size {
        let mut z = z0.clone();
        for v in z.q.iter_mut().chain(z.p.iter_mut()) {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
        let z = match cfg.scenario {
            Scenario::A => system.balance_initial_state(&z, 1e-12)?,
            // positions back onto the manifold, momenta keep their spread
            Scenario::B => {
                let balanced = system.balance_initial_state(&z, 1e-12)?;
                StateVector { q: balanced.q, p: z.p }
            }
        };
        members.push(z);
    }
    Ensemble::new(members)
}

/// Runs the assimilation cycle against a given truth. `seed` drives the
/// initial ensemble, member noise and analysis randomness.
pub fn assimilate(cfg: &ExperimentConfig, truth: &Truth, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let system = cfg.system()?;
    let obs = cfg.observation_model()?;
    let steps = cfg.steps_per_obs()?;
    let h = cfg.step;
    let schedule: Option<BlendSchedule> = match cfg.balancing {
        BalancingKind::Blending => Some(cfg.blend_schedule()?),
        _ => None,
    };
    let penalty = PenaltyConfig {
        lambda: cfg.lambda,
        b: None,
        use_soft_constraint: cfg.soft_constraint,
        newton_tol: cfg.newton_tol,
        newton_max_iter: cfg.newton_max_iter,
        project_momentum: cfg.project_momentum,
    };
    if truth.reference.len() != truth.observations.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: truth.reference.len() - 1,
            actual: truth.observations.len(),
            context: "observations per reference state",
        });
    }

    let mut ens = initial_ensemble(cfg, &system, &truth.reference[0].1, seed)?;
    let mut member_rngs: Vec<ChaCha8Rng> = (0..cfg.ensemble_size)
        .map(|i| stream(seed, STREAM_MEMBER_BASE + i as u64))
        .collect();
    let mut analysis_rng = stream(seed, STREAM_ANALYSIS);
    let mut metrics = RunMetrics::default();
    let mut nonconverged = 0;

    for (k, (t, y)) in truth.observations.iter().enumerate() {
        let cycle = k + 1;
        let wrap = |e: Error| Error::Cycle { cycle, source: Box::new(e) };
        ens.members_mut()
            .par_iter_mut()
            .zip(member_rngs.par_iter_mut())
            .try_for_each(|(z, rng)| -> Result<()> {
                for s in 0..steps {
                    let next = match &schedule {
                        Some(sched) if s < sched.alphas().len() => {
                            let alpha = sched.alpha_at(s);
                            integrators::blend_with(&system, z, h, alpha, |z| full_step(&system, z, h, rng))?
                        }
                        _ => full_step(&system, z, h, rng)?,
                    };
                    *z = next;
                }
                Ok(())
            })
            .map_err(wrap)?;

        let zref = &truth.reference[cycle].1;
        if cfg.record_at == RecordAt::Forecast {
            metrics.records.push(MetricsRecord::from_ensemble(&system, *t, &ens, zref).map_err(wrap)?);
        }

        ens = match cfg.analysis {
            AnalysisKind::Esrf => filters::esrf_analysis(&ens, &obs, y),
            AnalysisKind::Enkf => filters::enkf_perturbed_analysis(&ens, &obs, y, &mut analysis_rng),
        }
        .map_err(wrap)?;
        ens = filters::inflate(&ens, cfg.inflation).map_err(wrap)?;
        ens = match cfg.balancing {
            BalancingKind::Penalty => {
                let (balanced, failures) = balancing::penalty_balance_ensemble(&system, &ens, &penalty).map_err(wrap)?;
                nonconverged += failures;
                balanced
            }
            BalancingKind::PseudoObs => balancing::pseudo_obs_balance(&system, &ens, &mut analysis_rng).map_err(wrap)?,
            BalancingKind::None | BalancingKind::Blending => ens,
        };
        if cfg.record_at == RecordAt::Analysis {
            metrics.records.push(MetricsRecord::from_ensemble(&system, *t, &ens, zref).map_err(wrap)?);
        }
    }

    let summary = metrics.summary(cfg.burn_in);
    Ok(RunOutput {
        metrics,
        summary,
        newton_nonconverged: nonconverged,
        warnings: config_warnings(cfg)?,
    })
}

/// Reference, observations and assimilation for one configuration.
pub fn run_twin_experiment(cfg: &ExperimentConfig) -> Result<(Truth, RunOutput)> {
    cfg.validate()?;
    let truth = generate_truth(cfg)?;
    let out = assimilate(cfg, &truth, cfg.seed)?;
    Ok((truth, out))
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Lambda,
    Window,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "window" => Ok(Self::Window),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?} (expected lambda or window)"))),
        }
    }
}

/// One row of a sweep table; failed values keep their error message.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub summary: Option<MetricsSummary>,
    pub newton_nonconverged: usize,
    pub error: Option<String>,
}

/// Analysis seed of the `i`-th swept value; the first value uses the
/// configuration seed so a one-element sweep equals a single run.
pub fn sweep_seed(seed: u64, index: usize) -> u64 {
    if index == 0 {
        seed
    } else {
        let mut rng = stream(seed, 1_000_000 + index as u64);
        rng.random()
    }
}

/// Configuration with the swept parameter set to `value`.
pub fn with_param(cfg: &ExperimentConfig, param: SweepParam, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match param {
        SweepParam::Lambda => {
            if cfg.balancing != BalancingKind::Penalty {
                return Err(Error::Config("lambda sweep needs balancing = \"penalty\"".into()));
            }
            c.lambda = value;
        }
        SweepParam::Window => {
            if cfg.balancing != BalancingKind::Blending {
                return Err(Error::Config("window sweep needs balancing = \"blending\"".into()));
            }
            if value.fract() != 0.0 || value < 2.0 {
                return Err(Error::Config(format!("window must be an integer ≥ 2, got {value}")));
            }
            c.window = value as usize;
        }
    }
    c.validate()?;
    Ok(c)
}

/// One assimilation per value against a shared truth. Per-value failures
/// are kept in the table instead of aborting the sweep.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<(Truth, Vec<SweepRow>)> {
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| with_param(cfg, param, v))
        .collect::<Result<_>>()?;
    let truth = generate_truth(cfg)?;
    let rows = configs
        .iter()
        .zip(values)
        .enumerate()
        .map(|(i, (c, &value))| match assimilate(c, &truth, sweep_seed(cfg.seed, i)) {
            Ok(out) => SweepRow { value, summary: out.summary, newton_nonconverged: out.newton_nonconverged, error: None },
            Err(e) => SweepRow { value, summary: None, newton_nonconverged: 0, error: Some(e.to_string()) },
        })
        .collect();
    Ok((truth, rows))
}

/// Diagnostics of one state of a free run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub time: f64,
    pub state: StateVector,
    pub energy: f64,
    pub hosc: f64,
    pub action: Option<f64>,
    pub abs_g: f64,
    pub abs_gtilde: f64,
}

impl SimRecord {
    pub fn new(system: &StiffSystem, time: f64, z: &StateVector) -> Result<Self> {
        Ok(Self {
            time,
            state: z.clone(),
            energy: diagnostics::total_energy(system, z)?,
            hosc: diagnostics::oscillatory_energy(system, z)?,
            action: if system.n_constraints() == 1 {
                Some(diagnostics::action_variable(system, z)?)
            } else {
                None
            },
            abs_g: system.eval_constraint(&z.q)?.norm(),
            abs_gtilde: system.soft_constraint_residual(z)?.norm(),
        })
    }
}

/// Free run of a single trajectory with the configured integrator,
/// recorded every `record_every` steps.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<SimRecord>> {
    cfg.validate()?;
    let system = cfg.system()?;
    let n = cfg.n_steps()?;
    let h = cfg.step;
    let mut rng = stream(cfg.seed, STREAM_TRUTH);
    let mut z = cfg.reference_initial_state(&system)?;
    if cfg.integrator == IntegratorKind::Rattle {
        z = system.balance_initial_state(&z, RATTLE_TOL * 1e-2)?;
    }
    let mut out = vec![SimRecord::new(&system, 0.0, &z)?];
    for i in 1..=n {
        z = match cfg.integrator {
            IntegratorKind::Verlet => integrators::stormer_verlet_step(&system, &z, h),
            IntegratorKind::Langevin => integrators::langevin_step(&system, &z, h, &mut rng),
            IntegratorKind::Rattle => match system.langevin() {
                Some(l) if l.gamma > 0.0 => integrators::constrained_langevin_step(&system, &z, h, RATTLE_TOL, &mut rng),
                _ => integrators::rattle_step(&system, &z, h, RATTLE_TOL),
            },
            IntegratorKind::Tangential => integrators::tangential_momentum_step(&system, &z, h, TANGENT_TOL, TANGENT_MAX_ITER),
        }
        .map_err(|e| Error::Cycle { cycle: i, source: Box::new(e) })?;
        if i % cfg.record_every == 0 {
            out.push(SimRecord::new(&system, i as f64 * h, &z)?);
        }
    }
    Ok(out)
}
