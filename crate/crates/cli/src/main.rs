use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lcdesign::harness::{design_model, design_problem, initial_signal, plant_dataset, read_study};
use lcdesign::ident::{noe_simulate_from_rest, train_lm};
use lcdesign::plant::{integrate_rk4, Provenance};
use lcdesign::seed::derive_seed;
use lcdesign::signals::{multisine_sequence, read_signal_csv, write_signal_csv};
use lcdesign::{
    compute_gamma, covering_radius, rmse, run_study, solve_classical, solve_least_costly, write_report, Dataset,
    DesignMode, Error, IoModel, NoeModel, Profile, Result, StudyConfig,
};

#[derive(Parser)]
#[command(name = "lcdesign", version, about = "Least-costly space-filling input design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Classical,
    LeastCostly,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Design one excitation signal.
    Design {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Master seed; the design uses realization 0 of this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the nonlinear plant driven by an input CSV.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        signal: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a neural output-error model to a dataset CSV.
    Identify {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the free-run RMSE of a model on a test CSV (columns u, y).
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Run the Monte Carlo study and write its report.
    Montecarlo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate tables and plots from a study.json.
    Report {
        #[arg(long)]
        study: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(profile: ProfileArg, path: Option<&Path>) -> Result<StudyConfig> {
    match path {
        Some(p) => StudyConfig::from_file(profile.into(), p),
        None => Ok(StudyConfig::profile(profile.into())),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn design(config: StudyConfig, mode: Mode, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let (model, _) = design_model(&config, 0)?;
    let mut problem = design_problem(&config, model, initial_signal(&config, 0))?;
    let classical = solve_classical(&problem)?;
    let outcome = match mode {
        Mode::Classical => classical,
        Mode::LeastCostly => {
            let gamma = compute_gamma(&classical, config.least_costly.margin)?;
            write_json(&out.join("classical.json"), &classical)?;
            problem.mode = DesignMode::LeastCostly;
            problem.gamma = Some(gamma);
            problem.theta0 = classical.theta.clone();
            problem.settings = config.least_costly.clone();
            solve_least_costly(&problem)?
        }
    };
    write_json(&out.join("design.json"), &outcome)?;
    let u = multisine_sequence(&outcome.theta, &config.signal, config.signal.n)?;
    write_signal_csv(&out.join("signal.csv"), &u)?;
    let ds = plant_dataset(&config, &outcome.theta, config.classical.warmup_periods)?;
    ds.write_csv(&out.join("dataset.csv"))?;
    let rho = covering_radius(
        &ds.feature_points(config.classical.increment_scale_for(config.signal.fs)),
        &config.region,
        &config.eval_counts,
    )?;
    println!(
        "power {:.6e}  v_cost {:.6e}  covering_radius {:.6e}  (plant dataset radius {:.6e})",
        outcome.power, outcome.v_cost, outcome.covering_radius.radius, rho.radius
    );
    Ok(())
}

fn simulate(config: StudyConfig, signal: &Path, out: &Path) -> Result<()> {
    let u = read_signal_csv(signal)?;
    let plant = IoModel::nonlinear(config.plant, config.signal.fs)?;
    let traj = integrate_rk4(&plant, config.x0, &u, plant.dt())?;
    let y = traj[..u.len()].iter().map(|x| x[0]).collect();
    let provenance = Provenance { model: Some(plant.kind()), ..Provenance::default() };
    Dataset::from_sequences(u, y, config.x0[0], provenance)?.write_csv(out)
}

fn identify(config: StudyConfig, train: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::read_csv(train)?;
    let fit = train_lm(&ds.u, &ds.y, &config.train, derive_seed(config.master_seed, 0, "train"))?;
    fit.model.write_json(out)?;
    fit.write_trace_csv(&out.with_extension("trace.csv"))?;
    println!("cost {:.6e}  iterations {}  stop {:?}", fit.cost, fit.iterations, fit.stop);
    Ok(())
}

fn evaluate(model: &Path, test: &Path) -> Result<()> {
    let model = NoeModel::read_json(model)?;
    let ds = Dataset::read_csv(test)?;
    let y_hat = noe_simulate_from_rest(&model, &ds.u)?;
    println!("{:.9e}", rmse(&ds.y, &y_hat)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design { config, mode, seed, profile, out } => {
            let mut cfg = load_config(profile, config.as_deref())?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            design(cfg, mode, &out)
        }
        Command::Simulate { config, signal, profile, out } => {
            simulate(load_config(profile, config.as_deref())?, &signal, &out)
        }
        Command::Identify { train, config, profile, out } => {
            identify(load_config(profile, config.as_deref())?, &train, &out)
        }
        Command::Evaluate { model, test } => evaluate(&model, &test),
        Command::Montecarlo { config, realizations, profile, out } => {
            let mut cfg = load_config(profile, config.as_deref())?;
            if let Some(r) = realizations {
                cfg.realizations = r;
                cfg.validate()?;
            }
            let result = run_study(&cfg)?;
            let files = write_report(&result, &out)?;
            println!(
                "{} realizations succeeded, {} failed; report in {}",
                result.realizations.len(),
                result.failures.len(),
                files.study.display()
            );
            Ok(())
        }
        Command::Report { study, out } => {
            let files = write_report(&read_study(&study)?, &out)?;
            println!("report in {}", files.study.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
