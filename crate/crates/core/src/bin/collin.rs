use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use collin_core::datagen::{compute_vif, load_correlation_matrix, scale_collinearity, solve_scale_for_vif, GaussianPopulation, SettingName};
use collin_core::methods::{fit, hyperparameter_space, Method, MethodSpec};
use collin_core::model::{standardize_fit, Dataset, LinearModel};
use collin_core::optim::OptimizerConfig;
use collin_core::simrunner::{emit_report, run_repeated_kfold, run_setting, RunConfig, DEFAULT_REPS, DEFAULT_VALIDATION};
use collin_core::tuner::tune_with;
use collin_core::{CollinError, Result};

#[derive(Parser)]
#[command(name = "collin", version, about = "Risk-model benchmarking under multi-collinearity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated simulation study on a registry setting.
    Simulate {
        #[arg(long)]
        setting: SettingName,
        #[arg(long, default_value_t = DEFAULT_REPS)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated method names or `all`.
        #[arg(long, default_value = "all")]
        methods: String,
        #[arg(long, default_value_t = DEFAULT_VALIDATION)]
        n_val: usize,
        /// Use default hyperparameters instead of tuning each replication.
        #[arg(long)]
        no_tune: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one method on a CSV dataset.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: Method,
        #[command(flatten)]
        hp: HyperArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune one method's hyperparameters by cross-validated log-likelihood.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional path for the trial trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Variance inflation factors of a correlation matrix.
    Vif {
        #[arg(long)]
        corr: PathBuf,
    },
    /// Scale a correlation matrix to a target median VIF.
    Scale {
        #[arg(long)]
        corr: PathBuf,
        #[arg(long)]
        target_vif: f64,
        /// Where to write the scaled matrix (printed to stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated k-fold evaluation on observed data.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 5)]
        kfold: usize,
        #[arg(long, default_value_t = DEFAULT_REPS)]
        repeats: usize,
        #[arg(long, default_value = "all")]
        methods: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_tune: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV with predictor columns followed by `outcome`.
    #[arg(long)]
    data: PathBuf,
    /// File listing dose predictor names, one per line.
    #[arg(long)]
    dose: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        Dataset::from_csv(&self.data, self.dose.as_deref())
    }
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    c_l1: Option<f64>,
    #[arg(long)]
    c_l2: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    c_lae: Option<f64>,
}

fn parse_methods(list: &str, d: usize) -> Result<Vec<MethodSpec>> {
    if list.eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.iter().map(|&m| MethodSpec::default_for(m, d)).collect());
    }
    list.split(',').map(|s| Ok(MethodSpec::default_for(s.trim().parse()?, d))).collect()
}

fn write_model(model: &LinearModel, path: &std::path::Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(model)? + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { setting, reps, seed, methods, n_val, no_tune, out } => {
            let d = collin_core::datagen::setting_spec(setting).d;
            let mut config = RunConfig::new(setting, parse_methods(&methods, d)?);
            config.n_reps = reps;
            config.base_seed = seed;
            config.n_validation = n_val;
            config.tune = !no_tune;
            config.output_dir = Some(out.clone());
            let report = run_setting(&config)?;
            println!("{}", serde_json::to_string_pretty(&report.summaries)?);
            eprintln!("wrote {}", out.display());
        }
        Command::Fit { data, method, hp, seed, out } => {
            let ds = data.load()?;
            let mut spec = MethodSpec::default_for(method, ds.d());
            let given = [("c_l1", hp.c_l1), ("c_l2", hp.c_l2), ("delta", hp.delta), ("k", hp.k.map(|k| k as f64)), ("c_lae", hp.c_lae)];
            for (name, value) in given {
                if let Some(v) = value {
                    if !hyperparameter_space(method, ds.d()).iter().any(|h| h.name == name) {
                        return Err(CollinError::InvalidHyperparameter(format!("{method} has no `{name}`")));
                    }
                    spec.set(name, v)?;
                }
            }
            let params = standardize_fit(ds.x(), Some(ds.feature_names()))?;
            let model = fit(&spec, &params.apply_dataset(&ds)?, &OptimizerConfig::default().with_seed(seed))?;
            fs::create_dir_all(&out)?;
            write_model(&model, &out.join("model.json"))?;
            write_model(&params.to_raw_scale(&model), &out.join("model_raw_scale.json"))?;
            fs::write(out.join("standardization.json"), serde_json::to_string_pretty(&params)? + "\n")?;
            println!("{}", serde_json::to_string_pretty(&model)?);
        }
        Command::Tune { data, method, seed, trace } => {
            let ds = data.load()?;
            let params = standardize_fit(ds.x(), Some(ds.feature_names()))?;
            let spec = MethodSpec::default_for(method, ds.d());
            let result = tune_with(&spec, &params.apply_dataset(&ds)?, seed, &OptimizerConfig::default().with_seed(seed))?;
            if let Some(path) = trace {
                result.write_trace(&path)?;
            }
            let best: serde_json::Map<String, serde_json::Value> =
                result.best_params_map().into_iter().map(|(k, v)| (k, v.into())).collect();
            println!("{}", serde_json::json!({ "method": method.name(), "best": best, "mean_heldout_loglik": result.best_value }));
        }
        Command::Vif { corr } => {
            let c = load_correlation_matrix(&corr)?;
            let report = compute_vif(&c.matrix)?;
            for (name, v) in c.names.iter().zip(&report.vifs) {
                println!("{name}\t{v:.4}");
            }
            println!("median\t{:.4}", report.median);
        }
        Command::Scale { corr, target_vif, out } => {
            let c = load_correlation_matrix(&corr)?;
            let names = c.names.clone();
            let pop = GaussianPopulation::new(c, LinearModel::zeros(names.clone()))?;
            let s = solve_scale_for_vif(&pop, target_vif)?;
            let scaled = scale_collinearity(&pop, s)?;
            eprintln!("scale factor {s:.6}, median VIF {:.4}", scaled.median_vif()?);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&names)?;
            for row in scaled.covariance.row_iter() {
                w.write_record(row.iter().map(|v| format!("{v:.10}")))?;
            }
            let bytes = w.into_inner().map_err(|e| CollinError::InvalidInput(e.to_string()))?;
            match out {
                Some(path) => fs::write(path, bytes)?,
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
        }
        Command::Eval { data, kfold, repeats, methods, seed, no_tune, out } => {
            let ds = data.load()?;
            let specs = parse_methods(&methods, ds.d())?;
            let report = run_repeated_kfold(&ds, &specs, kfold, repeats, seed, !no_tune, &OptimizerConfig::default())?;
            emit_report(&report, &out)?;
            println!("{}", serde_json::to_string_pretty(&report.summaries)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
