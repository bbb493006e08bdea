//! Regularisation paths and risk-based choice of the penalty.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backfit::{Backfitter, FitConfig};
use crate::data::Dataset;
use crate::error::{Result, SpamError};
use crate::model::SpamModel;

pub const DEFAULT_GRID_SIZE: usize = 50;
pub const DEFAULT_MIN_RATIO: f64 = 1e-3;

/// Risk estimates for one fitted model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimates {
    pub df: f64,
    /// `RSS / n`.
    pub rss_mean: f64,
    pub cp: f64,
    /// `+∞` when `df >= n`.
    pub gcv: f64,
    pub gcv_defined: bool,
    pub sigma2_hat: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Cp,
    Gcv,
}

/// `Σ_j ν_j · 1[f_j ≠ 0]`.
pub fn effective_df(model: &SpamModel, traces: &[f64]) -> f64 {
    model
        .components
        .iter()
        .zip(traces)
        .filter(|(c, _)| c.active)
        .fold(0.0, |acc, (_, t)| acc + t)
}

/// `(1/n) Σ_i (Y_i - m̂(X_i))²`, intercept included.
pub fn residual_mean_square(data: &Dataset, model: &SpamModel) -> Result<f64> {
    let fitted = if model.components.iter().all(|c| c.fitted.len() == data.n()) {
        model.fitted_values()
    } else {
        let raw = nalgebra::DMatrix::from_fn(data.n(), data.p(), |i, j| {
            data.column_scales()[j].unscale(data.x()[(i, j)])
        });
        model.predict(&raw)?
    };
    if fitted.len() != data.n() {
        return Err(SpamError::input("model and data have different row counts"));
    }
    Ok(data
        .y()
        .iter()
        .zip(&fitted)
        .map(|(y, f)| (y - f).powi(2))
        .sum::<f64>()
        / data.n() as f64)
}

/// `RSS/n + 2σ̂² df / n`.
pub fn cp_from_rss(rss_mean: f64, n: usize, df: f64, sigma2: f64) -> f64 {
    rss_mean + 2.0 * sigma2 * df / n as f64
}

/// `(RSS/n) / (1 - df/n)²`, or `+∞` when `df >= n`.
pub fn gcv_from_rss(rss_mean: f64, n: usize, df: f64) -> f64 {
    let n = n as f64;
    if df >= n {
        f64::INFINITY
    } else {
        rss_mean / (1.0 - df / n).powi(2)
    }
}

pub fn cp_score(data: &Dataset, model: &SpamModel, df: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(SpamError::input(format!("sigma2 must be positive, got {sigma2}")));
    }
    Ok(cp_from_rss(residual_mean_square(data, model)?, data.n(), df, sigma2))
}

pub fn gcv_score(data: &Dataset, model: &SpamModel, df: f64) -> Result<f64> {
    Ok(gcv_from_rss(residual_mean_square(data, model)?, data.n(), df))
}

/// `count` log-spaced values from `lambda_max` down to `min_ratio · lambda_max`.
pub fn default_grid(lambda_max: f64, count: usize, min_ratio: f64) -> Vec<f64> {
    if count == 1 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * min_ratio).ln());
    (0..count)
        .map(|k| (hi + (lo - hi) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathOptions {
    /// Explicit strictly decreasing grid; overrides the default grid.
    pub grid: Option<Vec<f64>>,
    pub grid_size: usize,
    pub min_ratio: f64,
    /// Noise variance for Cp; estimated from the path when `None`.
    pub sigma2: Option<f64>,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            grid: None,
            grid_size: DEFAULT_GRID_SIZE,
            min_ratio: DEFAULT_MIN_RATIO,
            sigma2: None,
        }
    }
}

/// Models fitted over a decreasing penalty grid, each warm started from the
/// previous one.
#[derive(Clone, Debug)]
pub struct LambdaPath {
    pub lambdas: Vec<f64>,
    pub models: Vec<SpamModel>,
    pub risk: Vec<RiskEstimates>,
    /// `Σ_k ‖f_k(λ)‖ / max_λ Σ_k ‖f_k(λ)‖` per grid point.
    pub normalized: Vec<f64>,
    pub traces: Vec<f64>,
    pub lambda_max: f64,
    pub sigma2_hat: f64,
}

impl LambdaPath {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Index minimising the criterion; ties go to the larger penalty.
    pub fn select(&self, criterion: Criterion) -> usize {
        let score = |r: &RiskEstimates| match criterion {
            Criterion::Cp => r.cp,
            Criterion::Gcv => r.gcv,
        };
        let mut best = 0;
        for (k, r) in self.risk.iter().enumerate() {
            if score(r) < score(&self.risk[best]) {
                best = k;
            }
        }
        best
    }

    pub fn selected_model(&self, criterion: Criterion) -> &SpamModel {
        &self.models[self.select(criterion)]
    }

    /// One row per `(λ, j)` with columns
    /// `lambda,normalized_coordinate,j,component_norm,active,df,cp,gcv`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lambda", "normalized_coordinate", "j", "component_norm", "active", "df", "cp", "gcv"])?;
        for (k, model) in self.models.iter().enumerate() {
            let r = &self.risk[k];
            for c in &model.components {
                w.write_record(&[
                    format!("{}", self.lambdas[k]),
                    format!("{}", self.normalized[k]),
                    c.j.to_string(),
                    format!("{}", c.norm),
                    c.active.to_string(),
                    format!("{}", r.df),
                    format!("{}", r.cp),
                    format!("{}", r.gcv),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(SpamError::input("lambda grid is empty"));
    }
    if grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(SpamError::input("lambda grid values must be finite and >= 0"));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SpamError::input("lambda grid must be strictly decreasing"));
    }
    Ok(())
}

/// Path over the default grid, or over `grid` when given.
pub fn compute_path(data: &Dataset, cfg_base: &FitConfig, grid: Option<&[f64]>) -> Result<LambdaPath> {
    let opts = PathOptions {
        grid: grid.map(<[f64]>::to_vec),
        ..Default::default()
    };
    compute_path_with(data, cfg_base, &opts)
}

pub fn compute_path_with(data: &Dataset, cfg_base: &FitConfig, opts: &PathOptions) -> Result<LambdaPath> {
    let bf = Backfitter::new(data, cfg_base.smoother)?;
    path_from_backfitter(&bf, cfg_base, opts)
}

/// Path computation reusing precomputed smoothers.
pub fn path_from_backfitter(bf: &Backfitter<'_>, cfg_base: &FitConfig, opts: &PathOptions) -> Result<LambdaPath> {
    let data = bf.data();
    let n = data.n();
    let lambda_max = bf.lambda_max();
    let lambdas = match &opts.grid {
        Some(g) => g.clone(),
        None => {
            if opts.grid_size == 0 || !(opts.min_ratio > 0.0 && opts.min_ratio < 1.0) {
                return Err(SpamError::input("grid size must be >= 1 and min_ratio in (0, 1)"));
            }
            default_grid(lambda_max, opts.grid_size, opts.min_ratio)
        }
    };
    check_grid(&lambdas)?;
    if let Some(s2) = opts.sigma2 {
        if !(s2 > 0.0) {
            return Err(SpamError::input("sigma2 must be positive"));
        }
    }

    let traces = bf.traces();
    let mut models: Vec<SpamModel> = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let cfg = cfg_base.with_lambda(lambda);
        let model = bf
            .fit(&cfg, models.last())
            .map_err(|e| SpamError::AtLambda {
                lambda,
                source: Box::new(e),
            })?;
        models.push(model);
    }

    let dfs: Vec<f64> = models.iter().map(|m| effective_df(m, &traces)).collect();
    let rss = models
        .iter()
        .map(|m| residual_mean_square(data, m))
        .collect::<Result<Vec<_>>>()?;

    let sigma2_hat = match opts.sigma2 {
        Some(s) => s,
        None => estimate_sigma2(&rss, &dfs, n, data),
    };

    let risk = dfs
        .iter()
        .zip(&rss)
        .map(|(&df, &r)| {
            let gcv = gcv_from_rss(r, n, df);
            RiskEstimates {
                df,
                rss_mean: r,
                cp: cp_from_rss(r, n, df, sigma2_hat),
                gcv,
                gcv_defined: gcv.is_finite(),
                sigma2_hat,
            }
        })
        .collect();

    let totals: Vec<f64> = models.iter().map(SpamModel::total_norm).collect();
    let top = totals.iter().cloned().fold(0.0, f64::max);
    let normalized = totals
        .iter()
        .map(|t| if top > 0.0 { t / top } else { 0.0 })
        .collect();

    Ok(LambdaPath {
        lambdas,
        models,
        risk,
        normalized,
        traces,
        lambda_max,
        sigma2_hat,
    })
}

/// `RSS/(n - df)` from the least-regularised model with `df < n/2`, or the
/// sample variance of `Y` when no such model exists.
fn estimate_sigma2(rss_mean: &[f64], dfs: &[f64], n: usize, data: &Dataset) -> f64 {
    let nf = n as f64;
    let chosen = (0..dfs.len()).rev().find(|&k| dfs[k] < nf / 2.0);
    let est = chosen.map(|k| rss_mean[k] * nf / (nf - dfs[k]));
    match est {
        Some(v) if v > 0.0 => v,
        _ => {
            let m = data.y_mean();
            let var = data.y().iter().map(|y| (y - m).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
            if var > 0.0 {
                var
            } else {
                f64::MIN_POSITIVE
            }
        }
    }
}
