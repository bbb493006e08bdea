//! Parametric sparse solvers: cyclic coordinate-descent lasso and blockwise
//! coordinate descent for the grouped lasso.
//!
//! Both use the loss `(1/2)‖Y - Xβ‖²` without an intercept. The grouped
//! penalty is `λ Σ_j √d_j ‖X_j β_j‖`, which is `λ Σ_j √d_j ‖β_j‖` whenever
//! the groups are orthonormal; groups are orthonormalised internally by a
//! thin QR and coefficients are mapped back afterwards.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpamError};

const COEF_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000_000;

/// Output of [`lasso_cd`].
#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    /// Coefficients on the unit-norm columns.
    pub beta: DVector<f64>,
    /// Euclidean norm of each original column.
    pub column_norms: DVector<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub n_sweeps: usize,
    pub converged: bool,
}

impl LassoFit {
    /// Coefficients on the original column scale, `β_j / ‖X_j‖`.
    pub fn coefficients(&self) -> DVector<f64> {
        self.beta.component_div(&self.column_norms)
    }
}

#[inline]
fn soft(p: f64, lambda: f64) -> f64 {
    // [1 - λ/|P|]_+ P
    if p.abs() > lambda {
        p - lambda * p.signum()
    } else {
        0.0
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SpamError::input(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Minimises `(1/2)‖Y - Xβ‖² + λ‖β‖₁` over unit-normalised columns by cyclic
/// soft thresholding, until no coefficient moves by more than `1e-10`.
pub fn lasso_cd(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LassoFit> {
    check_lambda(lambda)?;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(SpamError::input(format!("response length {} does not match {n} rows", y.len())));
    }
    let norms = DVector::from_iterator(p, x.column_iter().map(|c| c.norm()));
    if let Some(j) = norms.iter().position(|v| *v == 0.0 || !v.is_finite()) {
        return Err(SpamError::input(format!("column {} is zero and cannot be normalised", j + 1)));
    }
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|j| x.column(j).iter().map(|v| v / norms[j]).collect())
        .collect();

    let mut beta = vec![0.0; p];
    let mut r: Vec<f64> = y.iter().copied().collect();
    let mut converged = false;
    let mut n_sweeps = 0;
    while n_sweeps < MAX_SWEEPS {
        n_sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let col = &cols[j];
            // P_j = X_jᵀ R_j with R_j = r + β_j X_j and X_jᵀX_j = 1
            let pj = col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() + beta[j];
            let new = soft(pj, lambda);
            let delta = new - beta[j];
            if delta != 0.0 {
                for (ri, ci) in r.iter_mut().zip(col) {
                    *ri -= delta * ci;
                }
                beta[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < COEF_TOL {
            converged = true;
            break;
        }
    }
    let objective = 0.5 * r.iter().map(|v| v * v).sum::<f64>() + lambda * beta.iter().map(|b| b.abs()).sum::<f64>();
    Ok(LassoFit {
        beta: DVector::from_vec(beta),
        column_norms: norms,
        lambda,
        objective,
        n_sweeps,
        converged,
    })
}

/// Lasso objective `(1/2)‖Y - Xβ‖² + λ‖β‖₁` for an arbitrary design.
pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (y - x * beta).norm_squared() + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Response plus a list of labelled column groups.
#[derive(Clone, Debug)]
pub struct GroupedDesign {
    groups: Vec<(String, DMatrix<f64>)>,
    y: DVector<f64>,
}

impl GroupedDesign {
    pub fn new(groups: Vec<(String, DMatrix<f64>)>, y: DVector<f64>) -> Result<Self> {
        if groups.is_empty() {
            return Err(SpamError::input("grouped design has no groups"));
        }
        for (label, g) in &groups {
            if g.nrows() != y.len() {
                return Err(SpamError::input(format!(
                    "group '{label}' has {} rows, response has {}",
                    g.nrows(),
                    y.len()
                )));
            }
            if g.ncols() == 0 {
                return Err(SpamError::input(format!("group '{label}' has no columns")));
            }
        }
        Ok(GroupedDesign { groups, y })
    }

    /// One single-column group per column of `x`.
    pub fn singletons(x: &DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let groups = (0..x.ncols())
            .map(|j| (format!("x{}", j + 1), x.columns(j, 1).into_owned()))
            .collect();
        Self::new(groups, y)
    }

    pub fn groups(&self) -> &[(String, DMatrix<f64>)] {
        &self.groups
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Stacked design `[X_1 ... X_G]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let total: usize = self.groups.iter().map(|(_, g)| g.ncols()).sum();
        let mut out = DMatrix::zeros(self.n(), total);
        let mut at = 0;
        for (_, g) in &self.groups {
            out.columns_mut(at, g.ncols()).copy_from(g);
            at += g.ncols();
        }
        out
    }

    /// `(1/2)‖Y - Σ X_j β_j‖² + λ Σ √d_j ‖X_j β_j‖`.
    pub fn objective(&self, beta: &[DVector<f64>], lambda: f64) -> f64 {
        let mut r = self.y.clone();
        let mut pen = 0.0;
        for ((_, g), b) in self.groups.iter().zip(beta) {
            let fit = g * b;
            r -= &fit;
            pen += (g.ncols() as f64).sqrt() * fit.norm();
        }
        0.5 * r.norm_squared() + lambda * pen
    }
}

#[derive(Clone, Debug)]
pub struct GroupLassoOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Block visited first in every sweep.
    pub start_block: usize,
    /// Record the objective after every block update.
    pub record_objective: bool,
}

impl Default for GroupLassoOptions {
    fn default() -> Self {
        GroupLassoOptions {
            tol: COEF_TOL,
            max_sweeps: MAX_SWEEPS,
            start_block: 0,
            record_objective: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroupedSolution {
    /// Coefficients on the original group columns.
    pub beta: Vec<DVector<f64>>,
    /// Coefficients on the orthonormalised groups.
    pub theta: Vec<DVector<f64>>,
    pub lambda: f64,
    /// Largest violation of the block optimality conditions.
    pub kkt_residual: f64,
    pub objective: f64,
    pub n_sweeps: usize,
    pub converged: bool,
    /// Objective after each block update, when requested.
    pub objective_trace: Vec<f64>,
}

impl GroupedSolution {
    /// Indices of the non-zero blocks.
    pub fn active(&self) -> Vec<usize> {
        self.theta
            .iter()
            .enumerate()
            .filter(|(_, t)| t.iter().any(|v| *v != 0.0))
            .map(|(j, _)| j)
            .collect()
    }
}

struct OrthoGroup {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    weight: f64,
}

fn orthonormalise(label: &str, g: &DMatrix<f64>) -> Result<OrthoGroup> {
    let d = g.ncols();
    if g.nrows() < d {
        return Err(SpamError::input(format!(
            "group '{label}' has more columns than rows and is rank deficient"
        )));
    }
    let qr = g.clone().qr();
    let r = qr.r();
    let diag_max = (0..d).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if diag_max == 0.0 || (0..d).any(|k| r[(k, k)].abs() <= 1e-10 * diag_max) {
        return Err(SpamError::input(format!("group '{label}' is rank deficient")));
    }
    Ok(OrthoGroup {
        q: qr.q(),
        r,
        weight: (d as f64).sqrt(),
    })
}

/// Grouped lasso by blockwise soft thresholding with default options.
pub fn grouped_lasso(design: &GroupedDesign, lambda: f64) -> Result<GroupedSolution> {
    grouped_lasso_with(design, lambda, &GroupLassoOptions::default())
}

/// Grouped lasso: iterates `θ_j = [1 - λ√d_j/‖S_j‖]_+ S_j` with
/// `S_j = Q_jᵀ(Y - Σ_{k≠j} Q_k θ_k)` until the largest block change is below
/// `opts.tol`.
pub fn grouped_lasso_with(design: &GroupedDesign, lambda: f64, opts: &GroupLassoOptions) -> Result<GroupedSolution> {
    check_lambda(lambda)?;
    let blocks = design
        .groups
        .iter()
        .map(|(label, g)| orthonormalise(label, g))
        .collect::<Result<Vec<_>>>()?;
    let g_count = blocks.len();
    let start = opts.start_block % g_count;

    let mut theta: Vec<DVector<f64>> = blocks.iter().map(|b| DVector::zeros(b.q.ncols())).collect();
    let mut r = design.y.clone();
    let mut trace = Vec::new();
    let objective = |theta: &[DVector<f64>], r: &DVector<f64>| {
        0.5 * r.norm_squared()
            + lambda * blocks.iter().zip(theta).map(|(b, t)| b.weight * t.norm()).sum::<f64>()
    };
    if opts.record_objective {
        trace.push(objective(&theta, &r));
    }

    let mut converged = false;
    let mut n_sweeps = 0;
    while n_sweeps < opts.max_sweeps {
        n_sweeps += 1;
        let mut max_change: f64 = 0.0;
        for step in 0..g_count {
            let j = (start + step) % g_count;
            let b = &blocks[j];
            let s = b.q.tr_mul(&r) + &theta[j];
            let s_norm = s.norm();
            let new = if s_norm > lambda * b.weight {
                s * (1.0 - lambda * b.weight / s_norm)
            } else {
                DVector::zeros(theta[j].len())
            };
            let delta = &new - &theta[j];
            let change = delta.amax();
            if change > 0.0 {
                r -= &b.q * &delta;
                theta[j] = new;
            }
            max_change = max_change.max(change);
            if opts.record_objective {
                trace.push(objective(&theta, &r));
            }
        }
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }

    let mut kkt: f64 = 0.0;
    for (b, t) in blocks.iter().zip(&theta) {
        let grad = b.q.tr_mul(&r);
        let tn = t.norm();
        let violation = if tn > 0.0 {
            (-&grad + t * (lambda * b.weight / tn)).norm()
        } else {
            (grad.norm() - lambda * b.weight).max(0.0)
        };
        kkt = kkt.max(violation);
    }

    let beta = blocks
        .iter()
        .zip(&theta)
        .map(|(b, t)| {
            b.r.clone()
                .solve_upper_triangular(t)
                .ok_or_else(|| SpamError::Numeric("triangular back-substitution failed".into()))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(GroupedSolution {
        objective: objective(&theta, &r),
        beta,
        theta,
        lambda,
        kkt_residual: kkt,
        n_sweeps,
        converged,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn orthonormal_unpenalized_is_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_matrix(&mut rng, 12, 4).qr().q();
        let y = random_vector(&mut rng, 12);
        let fit = lasso_cd(&q, &y, 0.0).unwrap();
        let expected = q.tr_mul(&y);
        for j in 0..4 {
            assert_abs_diff_eq!(fit.beta[j], expected[j], epsilon = 1e-9);
        }
    }

    #[test]
    fn large_penalty_zeroes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 20, 5);
        let y = random_vector(&mut rng, 20);
        let mut xn = x.clone();
        for mut c in xn.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        let lmax = xn.tr_mul(&y).amax();
        let fit = lasso_cd(&x, &y, lmax).unwrap();
        assert!(fit.beta.iter().all(|b| *b == 0.0));
        let fit = lasso_cd(&x, &y, 0.99 * lmax).unwrap();
        assert!(fit.beta.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn zero_column_is_rejected() {
        let mut x = DMatrix::from_element(5, 2, 1.0);
        x.column_mut(1).fill(0.0);
        assert!(matches!(lasso_cd(&x, &DVector::zeros(5), 0.1), Err(SpamError::Input(_))));
    }

    #[test]
    fn lasso_matches_brute_force_grid() {
        // Oracle: coarse-to-fine exhaustive grid over [-5, 5]^3 ending at
        // resolution 1e-3. The objective is convex, so refining around the
        // coarse minimiser finds the fine-grid minimiser.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 20, 3);
        let y = random_vector(&mut rng, 20) * 3.0;
        let lambda = 0.4;
        let fit = lasso_cd(&x, &y, lambda).unwrap();
        let mut xn = x.clone();
        for mut c in xn.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        let obj = |b: [f64; 3]| lasso_objective(&xn, &y, &DVector::from_row_slice(&b), lambda);
        let mut center = [0.0; 3];
        let mut half: f64 = 5.0;
        for step in [0.1f64, 0.01, 0.001] {
            let k = (half / step).round() as i64;
            let mut best = (f64::INFINITY, center);
            for a in -k..=k {
                for b in -k..=k {
                    for c in -k..=k {
                        let cand = [
                            (center[0] + a as f64 * step).clamp(-5.0, 5.0),
                            (center[1] + b as f64 * step).clamp(-5.0, 5.0),
                            (center[2] + c as f64 * step).clamp(-5.0, 5.0),
                        ];
                        let v = obj(cand);
                        if v < best.0 {
                            best = (v, cand);
                        }
                    }
                }
            }
            center = best.1;
            half = 2.0 * step;
        }
        let grid_min = obj(center);
        assert!(fit.objective <= grid_min + 1e-4);
        assert!((fit.objective - grid_min).abs() < 1e-4, "{} vs {}", fit.objective, grid_min);
    }

    #[test]
    fn singleton_groups_match_lasso() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 30, 6);
        let y = random_vector(&mut rng, 30) * 2.0;
        let lambda = 0.3;
        let lasso = lasso_cd(&x, &y, lambda).unwrap();
        let gl = grouped_lasso(&GroupedDesign::singletons(&x, y).unwrap(), lambda).unwrap();
        let coef = lasso.coefficients();
        for j in 0..6 {
            assert_abs_diff_eq!(gl.beta[j][0], coef[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn unpenalized_residual_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let groups = vec![
            ("a".to_string(), random_matrix(&mut rng, 25, 2)),
            ("b".to_string(), random_matrix(&mut rng, 25, 3)),
        ];
        let y = random_vector(&mut rng, 25);
        let design = GroupedDesign::new(groups, y).unwrap();
        let sol = grouped_lasso(&design, 0.0).unwrap();
        let stacked = design.stacked();
        let beta: Vec<f64> = sol.beta.iter().flat_map(|b| b.iter().copied()).collect();
        let resid = design.y() - &stacked * DVector::from_vec(beta);
        for v in stacked.tr_mul(&resid).iter() {
            assert!(v.abs() < 1e-8);
        }
    }

    #[test]
    fn objective_decreases_blockwise_and_kkt_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let groups = (0..4)
            .map(|k| (format!("g{k}"), random_matrix(&mut rng, 30, 1 + k % 3)))
            .collect();
        let y = random_vector(&mut rng, 30) * 2.0;
        let design = GroupedDesign::new(groups, y).unwrap();
        let opts = GroupLassoOptions {
            record_objective: true,
            ..Default::default()
        };
        let sol = grouped_lasso_with(&design, 0.5, &opts).unwrap();
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(sol.kkt_residual <= 1e-6);
        assert_abs_diff_eq!(sol.objective, design.objective(&sol.beta, 0.5), epsilon = 1e-9);
    }

    #[test]
    fn start_block_does_not_change_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let groups = (0..3)
            .map(|k| (format!("g{k}"), random_matrix(&mut rng, 20, 2)))
            .collect();
        let design = GroupedDesign::new(groups, random_vector(&mut rng, 20)).unwrap();
        let base = grouped_lasso(&design, 0.2).unwrap();
        for start in 1..3 {
            let opts = GroupLassoOptions {
                start_block: start,
                ..Default::default()
            };
            let other = grouped_lasso_with(&design, 0.2, &opts).unwrap();
            for (a, b) in base.beta.iter().zip(&other.beta) {
                for (x, y) in a.iter().zip(b.iter()) {
                    assert_abs_diff_eq!(x, y, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn rank_deficient_group_names_the_group() {
        let mut g = DMatrix::from_element(10, 2, 1.0);
        g.column_mut(1).fill(2.0);
        let design = GroupedDesign::new(vec![("dup".into(), g)], DVector::zeros(10)).unwrap();
        match grouped_lasso(&design, 0.1) {
            Err(SpamError::Input(msg)) => assert!(msg.contains("dup")),
            other => panic!("expected input error, got {other:?}"),
        }
    }
}
