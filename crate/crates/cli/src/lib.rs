//! Command logic for the `spam` binary. [`run`] parses arguments, writes the
//! machine-readable payload to `out` and diagnostics to `err`, and returns
//! the process exit code.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;

use spam_core::data::read_table;
use spam_core::lasso::GroupedDesign;
use spam_core::logistic::{fit_logistic_with, logistic_lambda_max};
use spam_core::selection::{cp_from_rss, path_from_backfitter, residual_mean_square, PathOptions};
use spam_core::{
    effective_df, generate_synthetic, grouped_lasso, lasso_cd, load_csv, Backfitter, Criterion, Dataset,
    FitConfig, SmootherSpec, SpamError, SpamModel, SyntheticSpec,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_NUMERIC: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "spam", version, about = "Sparse additive models: fit, predict, paths and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and print it as JSON.
    Fit(FitArgs),
    /// Predict from a saved model.
    Predict(PredictArgs),
    /// Write the regularisation path as CSV.
    Path(PathArgs),
    /// Generate synthetic data with a ground-truth sidecar.
    Gensynth(GensynthArgs),
    /// Support-recovery benchmark over (p, n) on synthetic data.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SmootherChoice {
    Series,
    Loclin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Gaussian,
    Logistic,
    Lasso,
    GroupLasso,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Select {
    Cp,
    Gcv,
}

impl From<Select> for Criterion {
    fn from(s: Select) -> Self {
        match s {
            Select::Cp => Criterion::Cp,
            Select::Gcv => Criterion::Gcv,
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    response: String,
}

#[derive(Args, Debug)]
struct SmootherArgs {
    #[arg(long, value_enum, default_value_t = SmootherChoice::Series)]
    smoother: SmootherChoice,
    /// Series truncation; defaults to round(n^(1/5)) clamped to [3, n/4].
    #[arg(long)]
    d: Option<usize>,
    /// Local linear bandwidth; defaults to the plug-in rule per column.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Convergence tolerance on the relative change of the fit.
    #[arg(long, default_value_t = FitConfig::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = FitConfig::DEFAULT_MAX_ITERS)]
    max_iter: usize,
}

impl SmootherArgs {
    fn spec(&self, n: usize) -> SmootherSpec {
        match self.smoother {
            SmootherChoice::Series => match self.d {
                Some(d) => SmootherSpec::cosine(d),
                None => SmootherSpec::default_series(n),
            },
            SmootherChoice::Loclin => SmootherSpec::local_linear(self.bandwidth),
        }
    }

    fn config(&self, n: usize) -> FitConfig {
        FitConfig::new(0.0, self.spec(n))
            .with_tol(self.tol)
            .with_max_iters(self.max_iter)
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Penalty level. Without it the penalty is chosen along a path.
    #[arg(long, conflicts_with = "select")]
    lambda: Option<f64>,
    /// Criterion for choosing the penalty along the path.
    #[arg(long, value_enum)]
    select: Option<Select>,
    #[arg(long, value_enum, default_value_t = Mode::Gaussian)]
    mode: Mode,
    #[command(flatten)]
    smoother: SmootherArgs,
    /// Groups for group-lasso mode, e.g. "x1,x2;x3". Unlisted columns form
    /// singleton groups.
    #[arg(long)]
    groups: Option<String>,
    /// Noise variance for Cp; estimated when omitted.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, default_value_t = spam_core::selection::DEFAULT_GRID_SIZE)]
    grid_size: usize,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// CSV with the covariate columns in training order.
    #[arg(long)]
    data: PathBuf,
    /// Column to drop from `--data` before predicting, if present.
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PathArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    smoother: SmootherArgs,
    #[arg(long, default_value_t = spam_core::selection::DEFAULT_GRID_SIZE)]
    grid_size: usize,
    #[arg(long, default_value_t = spam_core::selection::DEFAULT_MIN_RATIO)]
    min_ratio: f64,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GensynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, env = "SPAM_SEED", default_value_t = 0)]
    seed: u64,
    /// Output CSV. The ground truth goes next to it as `<stem>.truth.json`.
    #[arg(long)]
    out: PathBuf,
    /// Explicit path for the ground-truth sidecar.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long = "p", value_delimiter = ',', required = true)]
    p: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, env = "SPAM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    /// Series truncation used in every trial.
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, value_enum, default_value_t = Select::Cp)]
    select: Select,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_INPUT
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}

/// 2 for numeric failures, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<SpamError>()) {
        Some(se) if !se.is_input_error() => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(&a, out, err),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Path(a) => cmd_path(&a, out),
        Command::Gensynth(a) => cmd_gensynth(&a, err),
        Command::Benchmark(a) => cmd_benchmark(&a, out, err),
    }
}

/// Runs `f` against the `--out` file when given, otherwise against stdout.
fn with_output(
    path: Option<&Path>,
    out: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(out),
    }
}

fn format_set(set: &BTreeSet<usize>) -> String {
    let items: Vec<String> = set.iter().map(usize::to_string).collect();
    format!("{{{}}}", items.join(","))
}

fn read_dataset(a: &DataArgs) -> anyhow::Result<Dataset> {
    load_csv(&a.data, &a.response, true).with_context(|| format!("cannot load {}", a.data.display()))
}

fn cmd_fit(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    match a.mode {
        Mode::Lasso | Mode::GroupLasso => return fit_parametric(a, out, err),
        Mode::Gaussian | Mode::Logistic => {}
    }
    let data = read_dataset(&a.data)?;
    let cfg = a.smoother.config(data.n());
    let bf = Backfitter::new(&data, cfg.smoother)?;

    let (model, df, cp) = match (a.mode, a.lambda) {
        (Mode::Logistic, Some(lambda)) => {
            let model = fit_logistic_with(&bf, &cfg.with_lambda(lambda), None)?;
            let df = effective_df(&model, &bf.traces());
            (model, df, None)
        }
        (Mode::Logistic, None) => bail!(SpamError::Input(format!(
            "logistic mode needs --lambda (null-model threshold for these data: {})",
            logistic_lambda_max(&bf)
        ))),
        (_, Some(lambda)) => {
            let model = bf.fit(&cfg.with_lambda(lambda), None)?;
            let df = effective_df(&model, &bf.traces());
            let rss = residual_mean_square(&data, &model)?;
            let sigma2 = a.sigma2.unwrap_or_else(|| single_fit_sigma2(&data, rss, df));
            let cp = cp_from_rss(rss, data.n(), df, sigma2);
            (model, df, Some(cp))
        }
        (_, None) => {
            let opts = PathOptions {
                grid_size: a.grid_size,
                sigma2: a.sigma2,
                ..PathOptions::default()
            };
            let path = path_from_backfitter(&bf, &cfg, &opts)?;
            let k = path.select(a.select.unwrap_or(Select::Cp).into());
            let risk = path.risk[k];
            (path.models[k].clone(), risk.df, Some(risk.cp))
        }
    };

    with_output(a.out.as_deref(), out, |w| {
        model.write_json(&mut *w)?;
        writeln!(w)?;
        Ok(())
    })?;
    let cp = cp.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
    writeln!(
        err,
        "lambda {:.6e}  active set {}  df {:.3}  Cp {}  converged {} after {} iterations",
        model.lambda,
        format_set(&model.active_set()),
        df,
        cp,
        model.converged,
        model.n_iters
    )?;
    Ok(())
}

/// Noise variance for a single fit: `RSS/(n - df)` when `df < n/2`, else the
/// sample variance of the response.
fn single_fit_sigma2(data: &Dataset, rss_mean: f64, df: f64) -> f64 {
    let n = data.n() as f64;
    if df < n / 2.0 && rss_mean > 0.0 {
        rss_mean * n / (n - df)
    } else {
        let m = data.y_mean();
        data.y().iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
    }
}

/// Lasso and grouped lasso on the raw (unscaled, uncentered) columns.
fn fit_parametric(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let lambda = a
        .lambda
        .ok_or_else(|| SpamError::Input("lasso modes need --lambda".into()))?;
    let file = File::open(&a.data.data).with_context(|| format!("cannot open {}", a.data.data.display()))?;
    let table = read_table(BufReader::new(file))?;
    let target = table
        .header
        .iter()
        .position(|h| *h == a.data.response)
        .ok_or_else(|| SpamError::Input(format!("response column '{}' not found", a.data.response)))?;
    let cols: Vec<usize> = (0..table.header.len()).filter(|&c| c != target).collect();
    let names: Vec<String> = cols.iter().map(|&c| table.header[c].clone()).collect();
    let n = table.rows.len();
    let x = DMatrix::from_fn(n, cols.len(), |i, j| table.rows[i][cols[j]]);
    let y = DVector::from_iterator(n, table.rows.iter().map(|r| r[target]));

    let report = if a.mode == Mode::Lasso {
        let fit = lasso_cd(&x, &y, lambda)?;
        let coefs = fit.coefficients();
        let active: BTreeSet<usize> = (0..coefs.len()).filter(|&j| coefs[j] != 0.0).map(|j| j + 1).collect();
        writeln!(err, "lambda {lambda:.6e}  active set {}  sweeps {}", format_set(&active), fit.n_sweeps)?;
        json!({
            "mode": "lasso",
            "lambda": lambda,
            "names": names,
            "coefficients": coefs.as_slice(),
            "objective": fit.objective,
            "converged": fit.converged,
        })
    } else {
        let members = parse_groups(a.groups.as_deref(), &names)?;
        let groups = members
            .iter()
            .map(|m| {
                let label = m.iter().map(|&j| names[j].as_str()).collect::<Vec<_>>().join(",");
                let g = DMatrix::from_fn(n, m.len(), |i, k| x[(i, m[k])]);
                (label, g)
            })
            .collect();
        let design = GroupedDesign::new(groups, y)?;
        let sol = grouped_lasso(&design, lambda)?;
        let active: BTreeSet<usize> = sol.active().into_iter().map(|g| g + 1).collect();
        writeln!(
            err,
            "lambda {lambda:.6e}  active groups {}  KKT residual {:.2e}",
            format_set(&active),
            sol.kkt_residual
        )?;
        let groups: Vec<_> = members
            .iter()
            .zip(&sol.beta)
            .map(|(m, b)| {
                json!({
                    "columns": m.iter().map(|&j| names[j].clone()).collect::<Vec<_>>(),
                    "coefficients": b.as_slice(),
                })
            })
            .collect();
        json!({
            "mode": "group-lasso",
            "lambda": lambda,
            "groups": groups,
            "objective": sol.objective,
            "kkt_residual": sol.kkt_residual,
            "converged": sol.converged,
        })
    };
    with_output(a.out.as_deref(), out, |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Parses `"a,b;c"` into column-index groups; unlisted columns become
/// singletons in their original order.
fn parse_groups(spec: Option<&str>, names: &[String]) -> anyhow::Result<Vec<Vec<usize>>> {
    let mut groups = Vec::new();
    let mut seen = BTreeSet::new();
    for part in spec.unwrap_or("").split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let mut group = Vec::new();
        for name in part.split(',').map(str::trim) {
            let j = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| SpamError::Input(format!("group column '{name}' not found")))?;
            if !seen.insert(j) {
                bail!(SpamError::Input(format!("column '{name}' is in more than one group")));
            }
            group.push(j);
        }
        groups.push(group);
    }
    groups.extend((0..names.len()).filter(|j| !seen.contains(j)).map(|j| vec![j]));
    Ok(groups)
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let file = File::open(&a.model).with_context(|| format!("cannot open {}", a.model.display()))?;
    let model = SpamModel::read_json(BufReader::new(file))?;
    let file = File::open(&a.data).with_context(|| format!("cannot open {}", a.data.display()))?;
    let table = read_table(BufReader::new(file))?;
    let drop = a.response.as_ref().and_then(|r| table.header.iter().position(|h| h == r));
    let cols: Vec<usize> = (0..table.header.len()).filter(|c| Some(*c) != drop).collect();
    let x = DMatrix::from_fn(table.rows.len(), cols.len(), |i, j| table.rows[i][cols[j]]);
    let pred = model.predict(&x)?;
    with_output(a.out.as_deref(), out, |w| {
        writeln!(w, "prediction")?;
        for v in pred {
            writeln!(w, "{v}")?;
        }
        Ok(())
    })
}

fn cmd_path(a: &PathArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let data = read_dataset(&a.data)?;
    let cfg = a.smoother.config(data.n());
    let bf = Backfitter::new(&data, cfg.smoother)?;
    let opts = PathOptions {
        grid: None,
        grid_size: a.grid_size,
        min_ratio: a.min_ratio,
        sigma2: a.sigma2,
    };
    let path = path_from_backfitter(&bf, &cfg, &opts)?;
    with_output(a.out.as_deref(), out, |w| Ok(path.write_csv(w)?))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.truth.json"))
}

fn cmd_gensynth(a: &GensynthArgs, err: &mut dyn Write) -> anyhow::Result<()> {
    let (data, truth) = generate_synthetic(&SyntheticSpec::new(a.n, a.p, a.noise_sd, a.seed))?;
    data.save_csv(&a.out)?;
    let truth_path = a.truth.clone().unwrap_or_else(|| sidecar_path(&a.out));
    let file = File::create(&truth_path).with_context(|| format!("cannot create {}", truth_path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &truth)?;
    writeln!(
        err,
        "wrote {} x {} to {} and ground truth to {}",
        a.n,
        a.p,
        a.out.display(),
        truth_path.display()
    )?;
    Ok(())
}

/// Seed for one benchmark trial; distinct per (p, n, trial) and stable.
fn trial_seed(base: u64, p: usize, n: usize, trial: usize) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for v in [p as u64, n as u64, trial as u64] {
        h = (h ^ v).wrapping_mul(0x100_0000_01B3).rotate_left(29);
    }
    h
}

/// Whether one synthetic trial recovers exactly the true support.
fn recovery_trial(p: usize, n: usize, seed: u64, a: &BenchmarkArgs) -> spam_core::Result<bool> {
    let (data, truth) = generate_synthetic(&SyntheticSpec::new(n, p, a.noise_sd, seed))?;
    let spec = SmootherSpec::cosine(a.d);
    let bf = Backfitter::new(&data, spec)?;
    let path = path_from_backfitter(&bf, &FitConfig::new(0.0, spec), &PathOptions::default())?;
    Ok(path.selected_model(a.select.into()).active_set() == truth.support_set())
}

fn cmd_benchmark(a: &BenchmarkArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    if a.trials == 0 {
        bail!(SpamError::Input("--trials must be >= 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = a.threads {
        if t == 0 {
            bail!(SpamError::Input("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| anyhow!("cannot start worker pool: {e}"))?;

    let mut rows = Vec::new();
    for &p in &a.p {
        for &n in &a.n_grid {
            let outcomes: Vec<spam_core::Result<bool>> = pool.install(|| {
                (0..a.trials)
                    .into_par_iter()
                    .map(|t| recovery_trial(p, n, trial_seed(a.seed, p, n, t), a))
                    .collect()
            });
            let hits = outcomes.iter().filter(|o| matches!(o, Ok(true))).count();
            let failures: Vec<&SpamError> = outcomes.iter().filter_map(|o| o.as_ref().err()).collect();
            if let Some(first) = failures.first() {
                writeln!(err, "p {p} n {n}: {} of {} trials failed ({first})", failures.len(), a.trials)?;
            }
            rows.push((p, n, hits as f64 / a.trials as f64));
        }
    }
    with_output(a.out.as_deref(), out, |w| {
        writeln!(w, "p,n,trials,proportion")?;
        for (p, n, prop) in &rows {
            writeln!(w, "{p},{n},{},{prop}", a.trials)?;
        }
        Ok(())
    })
}
