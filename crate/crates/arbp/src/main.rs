use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arbp::benchmark::{self, benchmark, density_grid, format_table, kde_benchmark, single_run, write_report, Trained};
use arbp::config::{parse_kernel, parse_model, RunConfig, TaskKind};
use arbp::model_file::{load_model, save_model, ModelFile, StoredModel};
use arbp::table::{load_csv, write_csv, RawTable};
use arbp::{exit, threads_from_env, Error, Result};
use arbp_core::data::preprocess;
use arbp_core::sampling::{importance_sample, inverse_sample, smc_sample};
use arbp_core::supervised::{predict_log_density_regression, predict_proba};
use arbp_core::{eval_log_density, KernelKind, ModelKind, SupervisedModel, Task, UnitInterval};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "arbp", version, about = "Autoregressive Bayesian predictive density estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune and fit a model on a CSV file and save it.
    Fit(FitArgs),
    /// Log densities of the rows of a CSV file under a saved density model.
    EvalDensity(EvalArgs),
    /// Conditional predictions from a saved regression or classification model.
    Predict(EvalArgs),
    /// Draw samples from a saved density model.
    Sample(SampleArgs),
    /// Repeated seeded train/test runs with a report.
    Benchmark(BenchArgs),
    /// The cross-validated Gaussian KDE baseline under the benchmark protocol.
    BaselineKde(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<KernelKind>,
    /// Number of sample/feature permutations averaged over.
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    task: Option<TaskKind>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(k) = self.kernel {
            cfg.kernel = k;
        }
        if let Some(m) = self.permutations {
            cfg.permutations = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.task {
            cfg.task = t;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    train: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an N × N log-density grid next to the model (d ≤ 2).
    #[arg(long, value_name = "N")]
    grid: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model_file: PathBuf,
    /// Refuse a model file of another family.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    #[arg(long)]
    test: PathBuf,
    /// CSV of per-row results.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleMethod {
    Smc,
    Importance,
    Inverse,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    #[arg(long, default_value_t = arbp_core::sampling::DEFAULT_PARTICLES)]
    particles: usize,
    #[arg(long, value_enum, default_value = "smc")]
    method: SampleMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    train: Option<PathBuf>,
    /// Held-out file; without it each run splits the training file.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Report file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    /// Name used in the report; defaults to the training file stem.
    #[arg(long)]
    dataset: Option<String>,
    /// Runs executed concurrently; defaults to the ARBP_THREADS variable.
    #[arg(long)]
    parallel_runs: Option<usize>,
    /// Also write an N × N log-density grid of the first run's model (d ≤ 2).
    #[arg(long, value_name = "N")]
    grid: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::EvalDensity(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Benchmark(a) => cmd_benchmark(a, false),
        Command::BaselineKde(a) => cmd_benchmark(a, true),
    };
    match outcome {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn required(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Usage(format!("--{flag} is required (flag or config field)")))
}

fn grid_path(out: &Path) -> PathBuf {
    out.with_extension("grid.csv")
}

fn write_grid(trained: &Trained, data: &RawTable, points: usize, out: &Path) -> Result<()> {
    let Trained::Density(model) = trained else {
        return Err(Error::Usage("density grids need a density model".into()));
    };
    let (names, values) = density_grid(model, data, points)?;
    let path = grid_path(out);
    write_csv(&path, &names, &values)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let mut cfg = a.common.config()?;
    cfg.validate()?;
    let train = required(a.train.or(cfg.train.clone()), "train")?;
    let out = required(a.out.or(cfg.out.clone()), "out")?;
    cfg.train = Some(train.clone());
    cfg.out = Some(out.clone());
    let data = load_csv(&train)?;
    let run = single_run(&data, &data, &cfg, cfg.seed)?;
    let trained = run.model.expect("model runs return a model");
    let file = match &trained {
        Trained::Density(m) => ModelFile::from_density(m, &cfg),
        Trained::Supervised(m) => ModelFile::from_supervised(m, &cfg),
    };
    save_model(&file, &out)?;
    println!(
        "fitted {} on {} rows, {} dimensions; in-sample NLL {:.4}",
        cfg.model.name(),
        data.rows(),
        run.dim,
        run.mean_nll
    );
    if let Some(n) = a.grid {
        write_grid(&trained, &data, n, &out)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let StoredModel::Density(model) = load_model(&a.model_file, a.model)? else {
        return Err(Error::Usage("eval-density needs a density model; use predict".into()));
    };
    let data = load_csv(&a.test)?;
    let st = model
        .standardization()
        .ok_or_else(|| Error::Usage("model file has no standardization record".into()))?;
    let z = preprocess(&data.values, &data.names, Some(st))?;
    let jac = st.log_jacobian();
    let lp = eval_log_density(&model, z.values())?;
    let nll = -lp.iter().sum::<f64>() / lp.len() as f64;
    println!("rows {}  mean NLL {nll:.6} (standardized)  {:.6} (raw)", lp.len(), nll - jac);
    if let Some(out) = a.out {
        let values: Vec<f64> = lp.iter().flat_map(|&l| [l, l + jac]).collect();
        write_csv(&out, &["log_density_standardized".into(), "log_density".into()], &values)?;
    }
    Ok(())
}

/// Half-width and resolution of the standardized response grid used for the
/// predictive mean.
const MEAN_GRID_HALF_WIDTH: f64 = 8.0;
const MEAN_GRID_POINTS: usize = 801;

fn predictive_mean(model: &SupervisedModel, x: &[f64]) -> Result<f64> {
    let h = 2.0 * MEAN_GRID_HALF_WIDTH / (MEAN_GRID_POINTS - 1) as f64;
    let (mut mass, mut first) = (0.0, 0.0);
    for k in 0..MEAN_GRID_POINTS {
        let y = -MEAN_GRID_HALF_WIDTH + k as f64 * h;
        let w = if k == 0 || k + 1 == MEAN_GRID_POINTS { 0.5 } else { 1.0 };
        let p = predict_log_density_regression(model, x, y)?.exp() * w;
        mass += p;
        first += p * y;
    }
    Ok(first / mass)
}

fn cmd_predict(a: EvalArgs) -> Result<()> {
    let StoredModel::Supervised(model) = load_model(&a.model_file, a.model)? else {
        return Err(Error::Usage("predict needs a regression or classification model".into()));
    };
    let data = load_csv(&a.test)?;
    let st = model
        .covariate_standardization()
        .ok_or_else(|| Error::Usage("model file has no standardization record".into()))?;
    let (x, y) = if data.cols() == st.raw_columns + 1 {
        let (x, y) = data.split_last()?;
        (x, Some(y))
    } else {
        (data, None)
    };
    let z = preprocess(&x.values, &x.names, Some(st))?;
    let d = model.dim();
    let mut names = Vec::new();
    let mut values = Vec::new();
    let mut nll = 0.0;
    match model.task() {
        Task::Classification => {
            names.push("p1".to_string());
            for (i, row) in z.values().chunks_exact(d).enumerate() {
                let q = predict_proba(&model, row)?.get();
                values.push(q);
                if let Some(y) = &y {
                    nll -= if y[i] > 0.5 { q.ln() } else { (1.0 - q).ln() };
                }
            }
        }
        Task::Regression => {
            let (mean, sd) = model.response_stats().unwrap_or((0.0, 1.0));
            names.push("mean".to_string());
            if y.is_some() {
                names.push("log_density".to_string());
            }
            for (i, row) in z.values().chunks_exact(d).enumerate() {
                values.push(mean + sd * predictive_mean(&model, row)?);
                if let Some(y) = &y {
                    let lp = predict_log_density_regression(&model, row, (y[i] - mean) / sd)?;
                    nll -= lp;
                    values.push(lp + model.response_log_jacobian());
                }
            }
        }
    }
    let rows = z.n();
    match &y {
        Some(_) => println!("rows {rows}  mean conditional NLL {:.6}", nll / rows as f64),
        None => println!("rows {rows}"),
    }
    if let Some(out) = a.out {
        write_csv(&out, &names, &values)?;
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let StoredModel::Density(model) = load_model(&a.model_file, a.model)? else {
        return Err(Error::Usage("sampling needs a density model".into()));
    };
    if a.particles == 0 {
        return Err(Error::Usage("--particles must be positive".into()));
    }
    let d = model.dim();
    let set = match a.method {
        SampleMethod::Smc => {
            let cfg = arbp_core::SmcConfig {
                particles: a.particles,
                seed: a.seed,
                ..arbp_core::SmcConfig::default()
            };
            let set = smc_sample(&model, &cfg)?;
            eprintln!("resampled at steps {:?}; final ESS {:.1}", set.resample_steps, set.ess);
            set.particles.clone()
        }
        SampleMethod::Importance => importance_sample(&model, a.particles, a.seed)?.particles,
        SampleMethod::Inverse => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut out = Vec::with_capacity(a.particles * d);
            for _ in 0..a.particles {
                let u: Vec<UnitInterval> = (0..d)
                    .map(|_| UnitInterval::new(rng.random_range(1e-9..1.0 - 1e-9)))
                    .collect::<arbp_core::Result<_>>()?;
                out.extend(inverse_sample(&model, &u)?);
            }
            out
        }
    };
    let (names, values) = match model.standardization() {
        Some(st) => (st.names.clone(), set.chunks_exact(d).flat_map(|z| st.invert_row(z)).collect()),
        None => (arbp_core::data::default_names(d), set),
    };
    println!("drew {} samples in {d} dimensions", values.len() / d);
    if let Some(out) = a.out {
        write_csv(&out, &names, &values)?;
    }
    Ok(())
}

fn cmd_benchmark(a: BenchArgs, kde: bool) -> Result<()> {
    let mut cfg = a.common.config()?;
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    let train = required(a.train.or(cfg.train.clone()), "train")?;
    let test = a.test.or(cfg.test.clone());
    let out = a.out.or(cfg.out.clone());
    cfg.train = Some(train.clone());
    cfg.test = test.clone();
    cfg.out = out.clone();
    let data = load_csv(&train)?;
    let test_data = test.as_deref().map(load_csv).transpose()?;
    let dataset = a.dataset.unwrap_or_else(|| {
        train
            .file_stem()
            .map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
    });
    let parallel = a.parallel_runs.unwrap_or_else(threads_from_env);
    let report = if kde {
        kde_benchmark(&dataset, &data, test_data.as_ref(), &cfg, parallel)?
    } else {
        benchmark(&dataset, &data, test_data.as_ref(), &cfg, parallel)?
    };
    print!("{}", format_table(&report));
    if let Some(out) = &out {
        write_report(&report, out)?;
    }
    if let Some(n) = a.grid {
        let out = out.ok_or_else(|| Error::Usage("--grid needs --out".into()))?;
        if kde {
            return Err(Error::Usage("density grids are not available for the KDE baseline".into()));
        }
        let (tr, te) = match &test_data {
            Some(t) => (data.clone(), t.clone()),
            None => data.split(cfg.train_fraction, cfg.seed),
        };
        let run = benchmark::single_run(&tr, &te, &cfg, cfg.seed)?;
        write_grid(run.model.as_ref().expect("model runs return a model"), &data, n, &out)?;
    }
    if report.partial {
        return Err(Error::Core(arbp_core::Error::NumericFault {
            step: 0,
            detail: "some benchmark runs failed; see the report".into(),
        }));
    }
    Ok(())
}
