//! Fitted additive models and out-of-sample evaluation.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ColumnScale;
use crate::error::{Result, SpamError};
use crate::smoothers::{basis_row, local_linear_weights, Basis, SmootherSpec};

/// Floor on the denominator of weighted kernel smooths.
pub(crate) const RATIO_FLOOR: f64 = 1e-10;

/// How the additive predictor maps to the response scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Identity,
    Logistic,
}

/// Enough of a component to evaluate it at new points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "representation", rename_all = "snake_case")]
pub enum ComponentRep {
    /// Inactive: identically zero.
    Zero,
    /// `f(x) = Σ_k β_k (ψ_k(x) - m_k) - offset`.
    Series {
        basis: Basis,
        column_means: Vec<f64>,
        coefficients: Vec<f64>,
        offset: f64,
    },
    /// `f(x) = Σ_i l_i(x) t_i - offset` with local linear weights `l`.
    Kernel {
        bandwidth: f64,
        design: Vec<f64>,
        training_targets: Vec<f64>,
        offset: f64,
    },
    /// `f(x) = Σ_i l_i(x) a_i / (Σ_i l_i(x) w_i + shift) - offset`,
    /// the weighted kernel smooth used by logistic fits.
    KernelRatio {
        bandwidth: f64,
        design: Vec<f64>,
        training_targets: Vec<f64>,
        weights: Vec<f64>,
        shift: f64,
        offset: f64,
    },
}

impl ComponentRep {
    /// Evaluates at a point on the unit scale.
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            ComponentRep::Zero => 0.0,
            ComponentRep::Series {
                basis,
                column_means,
                coefficients,
                offset,
            } => {
                let row = basis_row(*basis, coefficients.len(), u);
                row.iter()
                    .zip(column_means)
                    .zip(coefficients)
                    .map(|((psi, m), b)| b * (psi - m))
                    .sum::<f64>()
                    - offset
            }
            ComponentRep::Kernel {
                bandwidth,
                design,
                training_targets,
                offset,
            } => {
                let l = local_linear_weights(design, *bandwidth, u);
                l.iter().zip(training_targets).map(|(a, b)| a * b).sum::<f64>() - offset
            }
            ComponentRep::KernelRatio {
                bandwidth,
                design,
                training_targets,
                weights,
                shift,
                offset,
            } => {
                let l = local_linear_weights(design, *bandwidth, u);
                let num: f64 = l.iter().zip(training_targets).map(|(a, b)| a * b).sum();
                let den: f64 = l.iter().zip(weights).map(|(a, b)| a * b).sum();
                num / (den + shift).max(RATIO_FLOOR) - offset
            }
        }
    }
}

/// One additive component `f_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentFunction {
    /// 1-based column number.
    pub j: usize,
    pub active: bool,
    /// Root-mean-square of the smoothed partial residual before thresholding.
    pub s_hat: f64,
    /// Root-mean-square of the fitted values, `‖f_j‖ / √n`.
    pub norm: f64,
    pub scale: ColumnScale,
    #[serde(flatten)]
    pub rep: ComponentRep,
    /// Centered values at the training points. Not serialized.
    #[serde(skip)]
    pub fitted: Vec<f64>,
}

impl ComponentFunction {
    pub(crate) fn zero(j: usize, n: usize, scale: ColumnScale) -> Self {
        ComponentFunction {
            j,
            active: false,
            s_hat: 0.0,
            norm: 0.0,
            scale,
            rep: ComponentRep::Zero,
            fitted: vec![0.0; n],
        }
    }

    /// Evaluates at a raw (unscaled) covariate value.
    pub fn eval_raw(&self, x: f64) -> f64 {
        self.rep.eval(self.scale.scale(x))
    }
}

/// A fitted sparse additive model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpamModel {
    #[serde(default)]
    pub link: Link,
    pub intercept: f64,
    pub lambda: f64,
    pub converged: bool,
    pub n_iters: usize,
    pub objective: f64,
    /// Objective before the first sweep and after every sweep.
    #[serde(default)]
    pub objective_history: Vec<f64>,
    pub smoother: SmootherSpec,
    pub components: Vec<ComponentFunction>,
}

impl SpamModel {
    pub fn p(&self) -> usize {
        self.components.len()
    }

    /// 1-based indices of the active components.
    pub fn active_set(&self) -> BTreeSet<usize> {
        self.components.iter().filter(|c| c.active).map(|c| c.j).collect()
    }

    /// Sum of the component norms `Σ_j ‖f_j‖ / √n`.
    pub fn total_norm(&self) -> f64 {
        self.components.iter().map(|c| c.norm).sum()
    }

    /// Additive predictor at the training points (requires in-memory fit).
    pub fn training_predictor(&self) -> Vec<f64> {
        let n = self.components.first().map_or(0, |c| c.fitted.len());
        let mut eta = vec![self.intercept; n];
        for c in &self.components {
            for (e, f) in eta.iter_mut().zip(&c.fitted) {
                *e += f;
            }
        }
        eta
    }

    /// Training-point fitted values on the response scale.
    pub fn fitted_values(&self) -> Vec<f64> {
        let eta = self.training_predictor();
        match self.link {
            Link::Identity => eta,
            Link::Logistic => eta.into_iter().map(logistic).collect(),
        }
    }

    /// Additive predictor `intercept + Σ f_j(x_j)` for raw covariates.
    pub fn predict_link(&self, x_new: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x_new.ncols() != self.p() {
            return Err(SpamError::input(format!(
                "model has {} columns, new data has {}",
                self.p(),
                x_new.ncols()
            )));
        }
        Ok((0..x_new.nrows())
            .map(|i| {
                self.intercept
                    + self
                        .components
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| c.active)
                        .map(|(j, c)| c.eval_raw(x_new[(i, j)]))
                        .sum::<f64>()
            })
            .collect())
    }

    /// Predictions on the response scale (probabilities for logistic models).
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<Vec<f64>> {
        let eta = self.predict_link(x_new)?;
        Ok(match self.link {
            Link::Identity => eta,
            Link::Logistic => eta.into_iter().map(logistic).collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

/// Numerically stable `1 / (1 + e^{-t})`.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Free function form of [`SpamModel::predict`].
pub fn predict(model: &SpamModel, x_new: &DMatrix<f64>) -> Result<Vec<f64>> {
    model.predict(x_new)
}
