use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use balanced_da::experiments::{self, output, ExperimentConfig, SweepParam};
use balanced_da::stability::{self, LinearModel};
use balanced_da::Error;

#[derive(Parser)]
#[command(name = "bda", version, about = "Balanced ensemble data assimilation for stiff mechanical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; keys not given take the values of the preset
    /// named by `scenario`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
    /// Worker threads for the ensemble forecast. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a single trajectory and write its diagnostics.
    Simulate(Common),
    /// Run a twin experiment.
    Assimilate(Common),
    /// Repeat a twin experiment over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Spectral scan of the blended one-step map for a linear test problem.
    Stability {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long = "Kh2")]
        kh2: f64,
        /// Force constant; the step is h = √(Kh²/K).
        #[arg(long = "K", default_value_t = 1.0)]
        k: f64,
        /// Number of equally spaced weights on [0, 1].
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ho,
    Coupled,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::scenario_a(),
    };
    cfg.validate()?;
    for w in experiments::config_warnings(&cfg)? {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn stability(model: ModelArg, kh2: f64, k: f64, points: usize, out: &Path, force: bool) -> Result<(), Failure> {
    output::prepare_dir(out, &["grid.csv", "bifurcation.csv", "comparison.csv"], force)?;
    let linear = match model {
        ModelArg::Ho => LinearModel::Harmonic,
        ModelArg::Coupled => LinearModel::Coupled,
    };
    let alphas = stability::alpha_grid(points, Some(kh2))?;
    let rows = stability::scan_alpha(linear, k, kh2, &alphas)?;
    output::write_grid(&out.join("grid.csv"), &rows)?;

    let kh2_axis: Vec<f64> = (1..=80).map(|i| i as f64 * 0.05).collect();
    output::write_bifurcation(&out.join("bifurcation.csv"), &kh2_axis)?;

    let h = (kh2 / k).sqrt();
    let mut entries = Vec::new();
    for &a in &[0.0, 0.25, 0.5, 0.75, 1.0] {
        let (extracted, printed) = match linear {
            LinearModel::Harmonic => (stability::harmonic_flow_matrix(k, h, a)?, stability::printed_harmonic_matrix(k, h, a)),
            LinearModel::Coupled => (stability::coupled_flow_matrix(k, h, a)?, stability::printed_coupled_matrix(k, h, a)),
        };
        entries.extend(stability::compare_matrices(&extracted, &printed).into_iter().map(|e| (a, e)));
    }
    output::write_comparison(&out.join("comparison.csv"), &entries)?;
    let (lo, hi) = stability::alpha_pm(kh2)?;
    println!("alpha_minus = {lo:.6}, alpha_plus = {hi:.6}; wrote {} grid rows to {}", rows.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = load(&common)?;
            let records = experiments::simulate(&cfg)?;
            output::write_simulation(&common.out, common.force, &cfg, &records)?;
            println!("wrote {} records to {}", records.len(), common.out.display());
        }
        Command::Assimilate(common) => {
            let cfg = load(&common)?;
            let (truth, out) = experiments::run_twin_experiment(&cfg)?;
            output::write_assimilation(&common.out, common.force, &cfg, &truth, &out)?;
            if let Some(s) = out.summary {
                println!(
                    "rmse_q = {:.4e}, rmse_p_tan = {:.4e}, mean_Hosc = {:.4e}",
                    s.rmse_q, s.rmse_p_tan, s.mean_hosc
                );
            }
            if out.newton_nonconverged > 0 {
                eprintln!("warning: {} penalty solves hit the iteration cap", out.newton_nonconverged);
            }
        }
        Command::Sweep { common, param, values } => {
            let cfg = load(&common)?;
            let (truth, rows) = experiments::sweep(&cfg, param, &values)?;
            let name = match param {
                SweepParam::Lambda => "lambda",
                SweepParam::Window => "window",
            };
            output::write_sweep_run(&common.out, common.force, &cfg, name, &truth, &rows)?;
            for r in &rows {
                match (&r.summary, &r.error) {
                    (_, Some(e)) => eprintln!("{name} = {}: failed: {e}", r.value),
                    (Some(s), None) => println!("{name} = {}: rmse_q = {:.4e}, rmse_p_tan = {:.4e}", r.value, s.rmse_q, s.rmse_p_tan),
                    (None, None) => println!("{name} = {}: no records", r.value),
                }
            }
        }
        Command::Stability { model, kh2, k, points, out, force } => stability(model, kh2, k, points, &out, force)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
