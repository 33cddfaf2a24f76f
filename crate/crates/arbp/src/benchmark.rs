//! Repeated seeded train/test runs and their report.

use std::path::Path;
use std::time::Instant;

use arbp_core::data::{preprocess, response_stats, Standardization};
use arbp_core::engine::{eval_log_density, fit};
use arbp_core::kde::kde_baseline;
use arbp_core::supervised::{fit_classification, fit_regression, mean_conditional_nll, training_rows, SupervisedConfig};
use arbp_core::train::Objective;
use arbp_core::{optimize, BandwidthModel, FitConfig, FittedDensityModel, SupervisedModel, Task};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TaskKind};
use crate::error::{Error, Result};
use crate::table::RawTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub mean_nll: Option<f64>,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub task: TaskKind,
    pub model: String,
    pub kernel: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub runs: Vec<RunRecord>,
    pub mean_nll: Option<f64>,
    pub se_nll: Option<f64>,
    pub wall_seconds: f64,
    /// Some run failed; the summary covers the others.
    pub partial: bool,
    pub config: RunConfig,
}

/// Mean and standard error (sample standard deviation over `√R`).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

/// Data and model for one run.
pub enum Trained {
    Density(FittedDensityModel),
    Supervised(SupervisedModel),
}

pub struct RunOutcome {
    pub mean_nll: f64,
    pub dim: usize,
    /// Absent for baselines.
    pub model: Option<Trained>,
}

fn tune(values: &[f64], dim: usize, cfg: &RunConfig, seed: u64, objective: Objective) -> Result<BandwidthModel> {
    let init = BandwidthModel::init(cfg.model, cfg.kernel, dim, seed);
    if cfg.no_tuning {
        return Ok(init);
    }
    let opt = arbp_core::OptimizerConfig {
        seed,
        objective,
        initial: cfg.initial,
        ..cfg.optimizer.clone()
    };
    Ok(optimize(values, dim, &init, &opt)?.bandwidth)
}

/// Tunes, fits and scores a joint density model on standardized splits.
pub fn density_run(train: &RawTable, test: &RawTable, cfg: &RunConfig, seed: u64) -> Result<RunOutcome> {
    let tr = preprocess(&train.values, &train.names, None)?;
    let te = preprocess(&test.values, &test.names, Some(tr.standardization()))?;
    let bandwidth = tune(tr.values(), tr.dim(), cfg, seed, Objective::Density)?;
    let fit_cfg = FitConfig {
        permutations: cfg.permutations,
        seed,
        initial: cfg.initial,
        ..FitConfig::default()
    };
    let model = fit(&tr, &bandwidth, &fit_cfg)?;
    let lp = eval_log_density(&model, te.values())?;
    let mean_nll = -lp.iter().sum::<f64>() / lp.len() as f64;
    Ok(RunOutcome {
        mean_nll,
        dim: tr.dim(),
        model: Some(Trained::Density(model)),
    })
}

/// Supervised split pieces: standardized covariates and responses.
pub struct SupervisedSplit {
    pub x_train: Vec<f64>,
    pub y_train: Vec<f64>,
    pub x_test: Vec<f64>,
    pub y_test: Vec<f64>,
    pub dim: usize,
    pub covariates: Standardization,
    pub response: Option<(f64, f64)>,
}

/// Prunes and standardizes covariates on the training split; regression responses
/// are standardized, classification labels must be 0 or 1.
pub fn supervised_split(train: &RawTable, test: &RawTable, task: Task) -> Result<SupervisedSplit> {
    let (xtr, ytr) = train.split_last()?;
    let (xte, yte) = test.split_last()?;
    let tr = preprocess(&xtr.values, &xtr.names, None)?;
    let te = preprocess(&xte.values, &xte.names, Some(tr.standardization()))?;
    let (y_train, y_test, response) = match task {
        Task::Regression => {
            let (mean, sd) = response_stats(&ytr)?;
            let z = |v: &[f64]| v.iter().map(|y| (y - mean) / sd).collect::<Vec<_>>();
            (z(&ytr), z(&yte), Some((mean, sd)))
        }
        Task::Classification => {
            if ytr.iter().chain(&yte).any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Usage("classification labels must be 0 or 1".into()));
            }
            (ytr, yte, None)
        }
    };
    Ok(SupervisedSplit {
        x_train: tr.values().to_vec(),
        y_train,
        x_test: te.values().to_vec(),
        y_test,
        dim: tr.dim(),
        covariates: tr.standardization().clone(),
        response,
    })
}

/// Tunes, fits and scores a conditional model; the NLL is on the standardized
/// response scale for regression.
pub fn supervised_run(train: &RawTable, test: &RawTable, cfg: &RunConfig, seed: u64, task: Task) -> Result<RunOutcome> {
    let s = supervised_split(train, test, task)?;
    let rows = training_rows(&s.x_train, &s.y_train, s.dim)?;
    let objective = match task {
        Task::Regression => Objective::Regression,
        Task::Classification => Objective::Classification,
    };
    let bandwidth = tune(&rows, s.dim + 1, cfg, seed, objective)?;
    let sup_cfg = SupervisedConfig {
        permutations: cfg.permutations,
        seed,
        ..SupervisedConfig::new(task)
    };
    let mut model = match task {
        Task::Regression => fit_regression(&s.x_train, &s.y_train, s.dim, &bandwidth, &sup_cfg)?,
        Task::Classification => fit_classification(&s.x_train, &s.y_train, s.dim, &bandwidth, &sup_cfg)?,
    };
    model.set_standardization(Some(s.covariates.clone()), s.response);
    let mean_nll = mean_conditional_nll(&model, &s.x_test, &s.y_test)?;
    Ok(RunOutcome {
        mean_nll,
        dim: s.dim,
        model: Some(Trained::Supervised(model)),
    })
}

/// One run of the configured task.
pub fn single_run(train: &RawTable, test: &RawTable, cfg: &RunConfig, seed: u64) -> Result<RunOutcome> {
    match cfg.task {
        TaskKind::Density => density_run(train, test, cfg, seed),
        TaskKind::Regression => supervised_run(train, test, cfg, seed, Task::Regression),
        TaskKind::Classification => supervised_run(train, test, cfg, seed, Task::Classification),
    }
}

/// Split for run `r`: the given test file, or a seeded split of `data`.
fn splits(data: &RawTable, test: Option<&RawTable>, cfg: &RunConfig, seed: u64) -> (RawTable, RawTable) {
    match test {
        Some(t) => (data.clone(), t.clone()),
        None => data.split(cfg.train_fraction, seed),
    }
}

fn record(run: usize, seed: u64, train: &RawTable, test: &RawTable, out: &Result<RunOutcome>, secs: f64) -> RunRecord {
    RunRecord {
        run,
        seed,
        n_train: train.rows(),
        n_test: test.rows(),
        dim: out.as_ref().map_or(0, |o| o.dim),
        mean_nll: out.as_ref().ok().map(|o| o.mean_nll),
        wall_seconds: secs,
        error: out.as_ref().err().map(|e| e.to_string()),
    }
}

fn summarize(dataset: &str, cfg: &RunConfig, model: String, kernel: String, runs: Vec<RunRecord>, wall: f64) -> Report {
    let ok: Vec<f64> = runs.iter().filter_map(|r| r.mean_nll).collect();
    let (mean_nll, se_nll) = if ok.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_se(&ok);
        (Some(m), Some(s))
    };
    Report {
        dataset: dataset.into(),
        task: cfg.task,
        model,
        kernel,
        m: cfg.permutations,
        seed: cfg.seed,
        partial: ok.len() < runs.len(),
        runs,
        mean_nll,
        se_nll,
        wall_seconds: wall,
        config: cfg.clone(),
    }
}

/// Runs `cfg.runs` seeded runs (seed `cfg.seed + r`), optionally on `parallel`
/// threads. Failed runs are recorded and mark the report partial.
pub fn benchmark(dataset: &str, data: &RawTable, test: Option<&RawTable>, cfg: &RunConfig, parallel: usize) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let one = |r: usize| {
        let seed = cfg.seed.wrapping_add(r as u64);
        let (train, test) = splits(data, test, cfg, seed);
        let t = Instant::now();
        let out = single_run(&train, &test, cfg, seed);
        record(r, seed, &train, &test, &out, t.elapsed().as_secs_f64())
    };
    let runs = run_all(cfg.runs, parallel, one)?;
    Ok(summarize(
        dataset,
        cfg,
        cfg.model.name().into(),
        cfg.kernel.name().into(),
        runs,
        start.elapsed().as_secs_f64(),
    ))
}

fn run_all(runs: usize, parallel: usize, one: impl Fn(usize) -> RunRecord + Sync + Send) -> Result<Vec<RunRecord>> {
    if parallel <= 1 {
        return Ok((0..runs).map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {parallel} threads: {e}")))?;
    Ok(pool.install(|| (0..runs).into_par_iter().map(one).collect()))
}

/// The KDE baseline under the same splits as [`benchmark`].
pub fn kde_benchmark(dataset: &str, data: &RawTable, test: Option<&RawTable>, cfg: &RunConfig, parallel: usize) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let one = |r: usize| {
        let seed = cfg.seed.wrapping_add(r as u64);
        let (train, test) = splits(data, test, cfg, seed);
        let t = Instant::now();
        let out = (|| -> Result<RunOutcome> {
            let tr = preprocess(&train.values, &train.names, None)?;
            let te = preprocess(&test.values, &test.names, Some(tr.standardization()))?;
            let res = kde_baseline(tr.values(), te.values(), tr.dim(), seed)?;
            Ok(RunOutcome {
                mean_nll: res.mean_nll,
                dim: tr.dim(),
                model: None,
            })
        })();
        record(r, seed, &train, &test, &out, t.elapsed().as_secs_f64())
    };
    let runs = run_all(cfg.runs, parallel, one)?;
    Ok(summarize(dataset, cfg, "kde".into(), "gaussian".into(), runs, start.elapsed().as_secs_f64()))
}

/// Plain-text summary table.
pub fn format_table(report: &Report) -> String {
    let mut s = format!(
        "dataset {}  task {:?}  model {}  kernel {}  M {}  seed {}\n",
        report.dataset, report.task, report.model, report.kernel, report.m, report.seed
    );
    s.push_str("run  seed        n_train  n_test  dim  mean_nll      seconds\n");
    for r in &report.runs {
        let nll = r.mean_nll.map_or_else(|| "failed".to_string(), |v| format!("{v:.4}"));
        s.push_str(&format!(
            "{:<4} {:<11} {:<8} {:<7} {:<4} {:<13} {:.2}\n",
            r.run, r.seed, r.n_train, r.n_test, r.dim, nll, r.wall_seconds
        ));
        if let Some(e) = &r.error {
            s.push_str(&format!("     error: {e}\n"));
        }
    }
    match (report.mean_nll, report.se_nll) {
        (Some(m), Some(se)) => s.push_str(&format!("mean NLL {m:.4} ± {se:.4}")),
        _ => s.push_str("mean NLL unavailable"),
    }
    if report.partial {
        s.push_str("  (partial)");
    }
    s.push_str(&format!("  wall {:.1}s\n", report.wall_seconds));
    s
}

pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Log densities of a density model on a regular grid over the raw-scale
/// bounding box of `bounds` (one or two columns), on the raw scale.
pub fn density_grid(model: &FittedDensityModel, bounds: &RawTable, points: usize) -> Result<(Vec<String>, Vec<f64>)> {
    let st = model
        .standardization()
        .ok_or_else(|| Error::Usage("density grids need a model with a stored standardization".into()))?;
    let d = st.dim();
    if d > 2 || points < 2 {
        return Err(Error::Usage("density grids are available for one or two dimensions".into()));
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut buf = Vec::new();
    for i in 0..bounds.rows() {
        buf.clear();
        st.apply_row(bounds.row(i), &mut buf);
        for (j, z) in st.invert_row(&buf).into_iter().enumerate() {
            lo[j] = lo[j].min(z);
            hi[j] = hi[j].max(z);
        }
    }
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..points).map(|k| lo[j] + (hi[j] - lo[j]) * k as f64 / (points - 1) as f64).collect())
        .collect();
    let cells: Vec<Vec<f64>> = if d == 1 {
        axes[0].iter().map(|&a| vec![a]).collect()
    } else {
        axes[0].iter().flat_map(|&a| axes[1].iter().map(move |&b| vec![a, b])).collect()
    };
    let eval = arbp_core::Evaluator::new(model);
    let jac = st.log_jacobian();
    let mut out = Vec::with_capacity(cells.len() * (d + 1));
    for raw in cells {
        let z: Vec<f64> = raw.iter().enumerate().map(|(j, v)| (v - st.means[j]) / st.sds[j]).collect();
        let lp = eval.log_density(&z)? + jac;
        out.extend(raw);
        out.push(lp);
    }
    let mut names = st.names.clone();
    names.push("log_density".into());
    Ok((names, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_error_of_known_values() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[3.0]), (3.0, 0.0));
    }
}
