//! Sparse additive logistic regression by penalised local scoring.
//!
//! The outer loop is Newton's method: from the current additive predictor
//! it forms probabilities, weights `w = p(1-p)` and the working response
//! `Z = η + (y - p)/w`. The inner loop is one sweep of weighted sparse
//! backfitting on `(Z, X)`. Each component solves
//!
//! ```text
//! f_j = S_j(w R_j) / (S_j w + λ√n / ‖f_j‖)
//! ```
//!
//! and is zero when `‖S_j(w R_j)‖ < λ√n`.
//!
//! For kernel smoothers the weighted smooth is the elementwise ratio above.
//! For series smoothers it is the weighted least-squares projection onto the
//! basis span with a ridge of `λ√n/‖f_j‖`. The two agree when the weights are
//! constant, and the projection form keeps the weighted smooth inside the
//! span so that the unpenalised fixed point is the maximum-likelihood fit.
//!
//! The implicit equation is solved for the scalar `t = ‖f_j‖`. Given `t` the
//! update is explicit, and `‖f_j(t)‖ / t` is strictly decreasing, so the
//! root is unique and is found by safeguarded Newton iteration.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::backfit::{mean, rms, Backfitter, FitConfig};
use crate::data::Dataset;
use crate::error::{Result, SpamError};
use crate::model::{logistic, ComponentFunction, ComponentRep, Link, SpamModel, RATIO_FLOOR};
use crate::smoothers::{dot, FittedSmoother, SmootherKind, SmootherSpec};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before
/// forming weights and working responses.
pub const PROB_CLAMP: f64 = 1e-5;

const ROOT_MAX_ITERS: usize = 200;

/// Relative slack on the zeroing test. At the boundary the active solution
/// has norm proportional to `‖S(wR)‖ - λ√n`, so values within rounding of
/// the threshold are treated as zero.
const THRESHOLD_SLACK: f64 = 1e-12;

/// Probabilities, weights and working response for the current predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFitState {
    /// Current additive predictor `η`.
    pub f: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
}

impl LogisticFitState {
    pub fn new(eta: &[f64], y: &[f64]) -> Self {
        let p_hat: Vec<f64> = eta
            .iter()
            .map(|&e| logistic(e).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
            .collect();
        let w: Vec<f64> = p_hat.iter().map(|p| p * (1.0 - p)).collect();
        let z = eta
            .iter()
            .zip(y)
            .zip(p_hat.iter().zip(&w))
            .map(|((e, yi), (p, wi))| e + (yi - p) / wi)
            .collect();
        LogisticFitState {
            f: eta.to_vec(),
            p_hat,
            w,
            z,
        }
    }

    /// State with constant weights, useful for probing the update in isolation.
    pub fn with_weights(w: Vec<f64>) -> Self {
        let n = w.len();
        LogisticFitState {
            f: vec![0.0; n],
            p_hat: vec![0.5; n],
            w,
            z: vec![0.0; n],
        }
    }
}

/// Result of one penalised weighted-smooth update.
#[derive(Clone, Debug)]
pub struct ScoringUpdate {
    /// Uncentered component values at the training points.
    pub values: Vec<f64>,
    /// `‖S_j(w R_j)‖ / √n`.
    pub s_hat: f64,
    /// Ridge term `λ√n / ‖f_j‖` at the fixed point (0 when inactive or unpenalised).
    pub shift: f64,
    pub active: bool,
    rep: ComponentRep,
}

/// Root of `Σ_k a_k² / (b_k t + κ)² = 1` for `t > 0`, given `Σ a_k² > κ²`.
fn solve_norm(a: &[f64], b: &[f64], kappa: f64) -> Result<f64> {
    let g = |t: f64| {
        let mut val = -1.0;
        let mut der = 0.0;
        for (ak, bk) in a.iter().zip(b) {
            let den = bk * t + kappa;
            val += ak * ak / (den * den);
            der -= 2.0 * ak * ak * bk / (den * den * den);
        }
        (val, der)
    };
    let mut lo = 0.0;
    let mut hi = a
        .iter()
        .zip(b)
        .map(|(ak, bk)| (ak / bk).powi(2))
        .sum::<f64>()
        .sqrt();
    if !hi.is_finite() || hi <= 0.0 {
        return Err(SpamError::Numeric("degenerate weighted smooth".into()));
    }
    let mut t = 0.5 * hi;
    for _ in 0..ROOT_MAX_ITERS {
        let (val, der) = g(t);
        if val > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if val == 0.0 || (hi - lo) <= 1e-15 * hi {
            return Ok(t);
        }
        let newton = t - val / der;
        t = if der < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (t - lo).min(hi - t) <= 1e-15 * hi {
            return Ok(t);
        }
    }
    Ok(t)
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(SpamError::Numeric(
            "non-finite or non-positive weights; probability clamping failed upstream".into(),
        ));
    }
    Ok(())
}

/// Penalised weighted-smooth update of one component.
pub fn scoring_update(
    state: &LogisticFitState,
    smoother: &FittedSmoother,
    r_j: &[f64],
    lambda: f64,
) -> Result<ScoringUpdate> {
    let n = r_j.len();
    if state.w.len() != n || smoother.len() != n {
        return Err(SpamError::input("weights, residual and smoother lengths differ"));
    }
    check_weights(&state.w)?;
    let kappa = lambda * (n as f64).sqrt();
    let wr: Vec<f64> = state.w.iter().zip(r_j).map(|(w, r)| w * r).collect();

    match smoother.kind() {
        SmootherKind::Series(s) => {
            let rank = s.rank();
            if rank == 0 {
                return Ok(zero_update(n, 0.0));
            }
            // b = Qᵀ W R, A = Qᵀ W Q
            let b = DVector::from_vec(s.coordinates(&wr));
            let s_hat = b.norm() / (n as f64).sqrt();
            if b.norm() <= kappa * (1.0 + THRESHOLD_SLACK) || b.norm() == 0.0 {
                return Ok(zero_update(n, s_hat));
            }
            let a = DMatrix::from_fn(rank, rank, |k, l| {
                let (qk, ql) = (s.q_column(k), s.q_column(l));
                qk.iter().zip(ql).zip(&state.w).map(|((x, y), w)| x * y * w).sum()
            });
            let eig = SymmetricEigen::new(a);
            let rotated = eig.eigenvectors.tr_mul(&b);
            let shift = if kappa > 0.0 {
                let t = solve_norm(rotated.as_slice(), eig.eigenvalues.as_slice(), kappa)?;
                kappa / t
            } else {
                0.0
            };
            let scaled = DVector::from_fn(rank, |k, _| rotated[k] / (eig.eigenvalues[k] + shift));
            let theta = &eig.eigenvectors * scaled;
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(SpamError::Numeric("weighted projection produced non-finite values".into()));
            }
            let mut values = vec![0.0; n];
            s.expand_into(theta.as_slice(), &mut values);
            Ok(ScoringUpdate {
                values,
                s_hat,
                shift,
                active: true,
                rep: ComponentRep::Series {
                    basis: s.basis(),
                    column_means: s.column_means().to_vec(),
                    coefficients: s.coefficients(theta.as_slice()),
                    offset: 0.0,
                },
            })
        }
        SmootherKind::LocalLinear(s) => {
            let num = smoother.apply(&wr)?;
            let den: Vec<f64> = smoother
                .apply(&state.w)?
                .into_iter()
                .map(|v| v.max(RATIO_FLOOR))
                .collect();
            let num_norm = num.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s_hat = num_norm / (n as f64).sqrt();
            if num_norm <= kappa * (1.0 + THRESHOLD_SLACK) || num_norm == 0.0 {
                return Ok(zero_update(n, s_hat));
            }
            let shift = if kappa > 0.0 {
                kappa / solve_norm(&num, &den, kappa)?
            } else {
                0.0
            };
            let values: Vec<f64> = num.iter().zip(&den).map(|(a, b)| a / (b + shift)).collect();
            Ok(ScoringUpdate {
                values,
                s_hat,
                shift,
                active: true,
                rep: ComponentRep::KernelRatio {
                    bandwidth: s.bandwidth(),
                    design: s.design().to_vec(),
                    training_targets: wr,
                    weights: state.w.clone(),
                    shift,
                    offset: 0.0,
                },
            })
        }
    }
}

fn zero_update(n: usize, s_hat: f64) -> ScoringUpdate {
    ScoringUpdate {
        values: vec![0.0; n],
        s_hat,
        shift: 0.0,
        active: false,
        rep: ComponentRep::Zero,
    }
}

/// The component returned by one penalised local-scoring update.
pub fn local_scoring_update(
    state: &LogisticFitState,
    smoother: &FittedSmoother,
    r_j: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    scoring_update(state, smoother, r_j, lambda).map(|u| u.values)
}

/// Penalty above which the null (intercept-only) model is stationary:
/// `max_j ‖S_j(y - ȳ)‖ / √n`.
pub fn logistic_lambda_max(backfitter: &Backfitter<'_>) -> f64 {
    let data = backfitter.data();
    let ybar = data.y_mean();
    let centered: Vec<f64> = data.y().iter().map(|v| v - ybar).collect();
    (0..data.p())
        .filter_map(|j| backfitter.smoother(j))
        .map(|s| {
            let num = match s.kind() {
                SmootherKind::Series(q) => q.coordinates(&centered).iter().map(|v| v * v).sum::<f64>().sqrt(),
                SmootherKind::LocalLinear(_) => {
                    let v = s.apply(&centered).expect("length checked at construction");
                    dot(&v, &v).sqrt()
                }
            };
            num / (data.n() as f64).sqrt()
        })
        .fold(0.0, f64::max)
}

fn check_binary(data: &Dataset) -> Result<()> {
    let y = data.y();
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(SpamError::input("logistic response must be coded 0/1"));
    }
    let ones = y.iter().filter(|v| **v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(SpamError::input("logistic response needs both classes"));
    }
    Ok(())
}

/// Logistic SpAM fit with per-sweep predictor history.
#[derive(Clone, Debug)]
pub struct LogisticTrace {
    pub model: SpamModel,
    /// Additive predictor at the training points after each outer iteration.
    pub predictors: Vec<Vec<f64>>,
}

/// Fits sparse additive logistic regression, recording the predictor after
/// every outer iteration. `warm_start` must be a logistic model on the same
/// columns.
pub fn fit_logistic_traced(
    backfitter: &Backfitter<'_>,
    cfg: &FitConfig,
    warm_start: Option<&SpamModel>,
) -> Result<LogisticTrace> {
    cfg.validate()?;
    let data = backfitter.data();
    check_binary(data)?;
    if cfg.smoother != backfitter.spec() {
        return Err(SpamError::input("config smoother differs from the backfitter's smoother"));
    }
    let n = data.n();
    let p = data.p();
    let y: Vec<f64> = data.y().iter().copied().collect();
    let scales = data.column_scales();
    let lambda = cfg.lambda;

    let ybar = data.y_mean();
    let (mut intercept, mut comps) = match warm_start {
        Some(m) if m.link == Link::Logistic && m.p() == p => {
            let comps = m
                .components
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let mut c = c.clone();
                    if c.fitted.len() != n {
                        let col = data.column(j);
                        c.fitted = col.iter().map(|&u| c.rep.eval(u)).collect();
                    }
                    c
                })
                .collect();
            (m.intercept, comps)
        }
        Some(_) => return Err(SpamError::input("warm start is not a logistic model on these columns")),
        None => (
            (ybar / (1.0 - ybar)).ln(),
            (0..p)
                .map(|j| ComponentFunction::zero(j + 1, n, scales[j]))
                .collect::<Vec<_>>(),
        ),
    };

    let predictor = |intercept: f64, comps: &[ComponentFunction]| {
        let mut eta = vec![intercept; n];
        for c in comps {
            for (e, f) in eta.iter_mut().zip(&c.fitted) {
                *e += f;
            }
        }
        eta
    };

    let mut eta = predictor(intercept, &comps);
    let mut predictors = Vec::new();
    let mut history = vec![penalized_deviance(&eta, &y, &comps, lambda)];
    let mut converged = false;
    let mut n_iters = 0;
    let mut partial = vec![0.0; n];

    while n_iters < cfg.max_outer_iters {
        n_iters += 1;
        let state = LogisticFitState::new(&eta, &y);
        // z - intercept - Σ f_k, kept up to date through the sweep
        let sum_w: f64 = state.w.iter().sum();
        let comp_sum: Vec<f64> = eta.iter().map(|e| e - intercept).collect();
        intercept = state
            .w
            .iter()
            .zip(state.z.iter().zip(&comp_sum))
            .map(|(w, (z, s))| w * (z - s))
            .sum::<f64>()
            / sum_w;
        let mut resid: Vec<f64> = state
            .z
            .iter()
            .zip(&comp_sum)
            .map(|(z, s)| z - intercept - s)
            .collect();

        for (j, comp) in comps.iter_mut().enumerate() {
            let Some(smoother) = backfitter.smoother(j) else {
                continue;
            };
            for i in 0..n {
                partial[i] = resid[i] + comp.fitted[i];
            }
            let upd = scoring_update(&state, smoother, &partial, lambda)?;
            let m = if upd.active { mean(&upd.values) } else { 0.0 };
            let values: Vec<f64> = upd.values.iter().map(|v| v - m).collect();
            intercept += m;
            for i in 0..n {
                resid[i] = partial[i] - values[i] - m;
            }
            comp.norm = rms(&values);
            comp.fitted = values;
            comp.s_hat = upd.s_hat;
            comp.active = upd.active;
            comp.rep = match upd.rep {
                ComponentRep::Series {
                    basis,
                    column_means,
                    coefficients,
                    offset,
                } => ComponentRep::Series {
                    basis,
                    column_means,
                    coefficients,
                    offset: offset + m,
                },
                ComponentRep::KernelRatio {
                    bandwidth,
                    design,
                    training_targets,
                    weights,
                    shift,
                    offset,
                } => ComponentRep::KernelRatio {
                    bandwidth,
                    design,
                    training_targets,
                    weights,
                    shift,
                    offset: offset + m,
                },
                other => other,
            };
        }

        let new_eta = predictor(intercept, &comps);
        let change = new_eta
            .iter()
            .zip(&eta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = new_eta.iter().map(|v| v.abs()).fold(1.0, f64::max);
        eta = new_eta;
        history.push(penalized_deviance(&eta, &y, &comps, lambda));
        predictors.push(eta.clone());
        if change / scale < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(LogisticTrace {
        model: SpamModel {
            link: Link::Logistic,
            intercept,
            lambda,
            converged,
            n_iters,
            objective: *history.last().unwrap(),
            objective_history: history,
            smoother: backfitter.spec(),
            components: comps,
        },
        predictors,
    })
}

/// Mean negative log-likelihood plus `λ Σ_j ‖f_j‖/√n`.
fn penalized_deviance(eta: &[f64], y: &[f64], comps: &[ComponentFunction], lambda: f64) -> f64 {
    let n = eta.len() as f64;
    let nll: f64 = eta
        .iter()
        .zip(y)
        .map(|(e, yi)| {
            // log(1 + e^η) - yη, stable for large |η|
            let soft = if *e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            soft - yi * e
        })
        .sum();
    nll / n + lambda * comps.iter().map(|c| c.norm).sum::<f64>()
}

/// Fits sparse additive logistic regression.
pub fn fit_logistic(data: &Dataset, cfg: &FitConfig) -> Result<SpamModel> {
    let bf = Backfitter::new(data, cfg.smoother)?;
    fit_logistic_traced(&bf, cfg, None).map(|t| t.model)
}

/// Logistic fit reusing precomputed smoothers, optionally warm started.
pub fn fit_logistic_with(backfitter: &Backfitter<'_>, cfg: &FitConfig, warm_start: Option<&SpamModel>) -> Result<SpamModel> {
    fit_logistic_traced(backfitter, cfg, warm_start).map(|t| t.model)
}

/// Convenience: default smoother spec for a logistic fit on `data`.
pub fn default_logistic_spec(data: &Dataset) -> SmootherSpec {
    SmootherSpec::default_series(data.n())
}
