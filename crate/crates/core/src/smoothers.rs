//! Univariate linear smoothers.
//!
//! Two families are provided:
//!
//! * orthogonal series smoothing, the least-squares projection onto a
//!   truncated basis `ψ_1..ψ_d` evaluated at the design points, and
//! * local linear regression with a Gaussian kernel.
//!
//! Both are linear in the response and expose their trace, which is the
//! effective degrees of freedom used by the risk estimates.
//!
//! Series bases exclude the constant function. Basis columns are centered
//! on their sample means before projecting, so the projection of any vector
//! is itself mean zero and the centering step of backfitting is exact.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpamError};

/// Relative eigenvalue floor below which a direction of the basis Gram
/// matrix is treated as numerically absent.
const RANK_TOL: f64 = 1e-10;

/// Which family of basis functions an orthogonal series smoother uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `ψ_k(x) = √2 cos(kπx)` for `k = 1..d`.
    Cosine,
    /// The single function `ψ(x) = x`. Only valid with truncation 1; after
    /// centering and normalisation this turns SpAM into the lasso.
    Linear,
}

/// Description of a smoother before it has seen a design column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmootherSpec {
    OrthogonalSeries { truncation: usize, basis: Basis },
    /// `bandwidth: None` selects the plug-in rule per column.
    LocalLinear { bandwidth: Option<f64> },
}

impl SmootherSpec {
    pub fn cosine(truncation: usize) -> Self {
        SmootherSpec::OrthogonalSeries {
            truncation,
            basis: Basis::Cosine,
        }
    }

    pub fn linear() -> Self {
        SmootherSpec::OrthogonalSeries {
            truncation: 1,
            basis: Basis::Linear,
        }
    }

    pub fn local_linear(bandwidth: Option<f64>) -> Self {
        SmootherSpec::LocalLinear { bandwidth }
    }

    /// Cosine series with the default truncation for `n` samples.
    pub fn default_series(n: usize) -> Self {
        Self::cosine(default_truncation(n))
    }

    /// Checks the spec against a sample size.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 3 {
            return Err(SpamError::input(format!(
                "smoothing needs at least 3 observations, got {n}"
            )));
        }
        match *self {
            SmootherSpec::OrthogonalSeries { truncation, basis } => {
                if truncation == 0 {
                    return Err(SpamError::input("series truncation must be >= 1"));
                }
                if truncation >= n {
                    return Err(SpamError::input(format!(
                        "series truncation {truncation} must be smaller than n = {n}"
                    )));
                }
                if basis == Basis::Linear && truncation != 1 {
                    return Err(SpamError::input("the linear basis has truncation 1"));
                }
            }
            SmootherSpec::LocalLinear { bandwidth } => {
                if let Some(h) = bandwidth {
                    if !(h > 0.0) {
                        return Err(SpamError::input(format!(
                            "bandwidth must be positive, got {h}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `round(n^{1/5})` clamped to `[3, n/4]`, and always in `[1, n)`.
pub fn default_truncation(n: usize) -> usize {
    let d = (n as f64).powf(0.2).round() as usize;
    let upper = (n / 4).max(1);
    d.max(3).min(upper).min(n.saturating_sub(1)).max(1)
}

/// Plug-in bandwidth `1.06 · sd(x) · n^{-1/5}`.
pub fn plugin_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let h = 1.06 * var.sqrt() * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        // constant column; any positive bandwidth gives the same (flat) fit
        1.0
    }
}

/// Unnormalised Gaussian kernel.
#[inline]
pub fn gaussian_kernel(u: f64) -> f64 {
    (-0.5 * u * u).exp()
}

#[inline]
fn cosine(k: usize, x: f64) -> f64 {
    SQRT_2 * (k as f64 * PI * x).cos()
}

fn check_unit(x: &[f64]) -> Result<()> {
    for (row, &value) in x.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(SpamError::Domain { row, value });
        }
    }
    Ok(())
}

/// Cosine basis matrix: entry `(i, k-1)` is `√2 cos(kπ x_i)`.
pub fn build_basis(x: &[f64], d: usize) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(SpamError::input("basis size must be >= 1"));
    }
    check_unit(x)?;
    Ok(DMatrix::from_fn(x.len(), d, |i, k| cosine(k + 1, x[i])))
}

/// Raw (uncentered) basis values at a single point.
pub fn basis_row(basis: Basis, d: usize, x: f64) -> Vec<f64> {
    match basis {
        Basis::Cosine => (1..=d).map(|k| cosine(k, x)).collect(),
        Basis::Linear => vec![x],
    }
}

/// Local linear weights `l_i(x0)` such that the fit at `x0` is `Σ l_i y_i`.
///
/// Falls back to kernel (Nadaraya-Watson) weights when the local design is
/// degenerate, and to the nearest design point when every kernel weight
/// underflows.
pub fn local_linear_weights(x: &[f64], bandwidth: f64, x0: f64) -> Vec<f64> {
    let kern: Vec<f64> = x
        .iter()
        .map(|&xi| gaussian_kernel((xi - x0) / bandwidth))
        .collect();
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (&k, &xi) in kern.iter().zip(x) {
        let u = xi - x0;
        s0 += k;
        s1 += k * u;
        s2 += k * u * u;
    }
    if s0 <= f64::MIN_POSITIVE {
        let mut w = vec![0.0; x.len()];
        let nearest = x
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - x0).abs().total_cmp(&(b.1 - x0).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        w[nearest] = 1.0;
        return w;
    }
    let denom = s0 * s2 - s1 * s1;
    if denom <= 1e-12 * s0 * s2.max(f64::MIN_POSITIVE) || denom <= 0.0 {
        return kern.iter().map(|k| k / s0).collect();
    }
    kern.iter()
        .zip(x)
        .map(|(&k, &xi)| k * (s2 - (xi - x0) * s1) / denom)
        .collect()
}

/// Series smoother internals: an orthonormal basis `Q` of the centered
/// basis span plus the map back to basis coefficients.
#[derive(Clone, Debug)]
pub struct SeriesSmoother {
    basis: Basis,
    truncation: usize,
    column_means: Vec<f64>,
    /// `n × rank`, column-major.
    q: Vec<f64>,
    rank: usize,
    /// `truncation × rank`: basis coefficients per unit of each `Q` column.
    to_coef: DMatrix<f64>,
}

impl SeriesSmoother {
    fn fit(basis: Basis, truncation: usize, x: &[f64]) -> Result<Self> {
        check_unit(x)?;
        let n = x.len();
        let mut psi = DMatrix::from_fn(n, truncation, |i, k| match basis {
            Basis::Cosine => cosine(k + 1, x[i]),
            Basis::Linear => x[i],
        });
        let column_means: Vec<f64> = (0..truncation).map(|k| psi.column(k).mean()).collect();
        // rank is judged against the raw basis energy so that rounding left
        // over from centering a constant column does not count as a direction
        let raw_energy = psi.norm_squared();
        for (k, m) in column_means.iter().enumerate() {
            psi.column_mut(k).add_scalar_mut(-m);
        }

        let gram = psi.transpose() * &psi;
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let floor = RANK_TOL * top.max(raw_energy);
        let keep: Vec<usize> = (0..truncation)
            .filter(|&k| top > 0.0 && eig.eigenvalues[k] > floor)
            .collect();
        let rank = keep.len();

        let mut to_coef = DMatrix::zeros(truncation, rank);
        for (c, &k) in keep.iter().enumerate() {
            let scale = eig.eigenvalues[k].sqrt().recip();
            to_coef.set_column(c, &(eig.eigenvectors.column(k) * scale));
        }
        let qm = &psi * &to_coef;
        Ok(SeriesSmoother {
            basis,
            truncation,
            column_means,
            q: qm.as_slice().to_vec(),
            rank,
            to_coef,
        })
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    /// Column `k` of the orthonormal basis `Q`.
    pub fn q_column(&self, k: usize) -> &[f64] {
        let n = self.q.len() / self.rank.max(1);
        &self.q[k * n..(k + 1) * n]
    }

    /// Coordinates `Qᵀ r`.
    pub fn coordinates(&self, r: &[f64]) -> Vec<f64> {
        (0..self.rank)
            .map(|k| dot(self.q_column(k), r))
            .collect()
    }

    /// `Q θ` written into `out`.
    pub fn expand_into(&self, theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &t) in theta.iter().enumerate() {
            if t != 0.0 {
                for (o, q) in out.iter_mut().zip(self.q_column(k)) {
                    *o += t * q;
                }
            }
        }
    }

    /// Basis coefficients `β` with `Ψ_c β = Q θ`.
    pub fn coefficients(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.truncation)
            .map(|row| {
                theta
                    .iter()
                    .enumerate()
                    .map(|(c, t)| self.to_coef[(row, c)] * t)
                    .sum()
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct LocalLinearSmoother {
    x: Vec<f64>,
    bandwidth: f64,
    /// `n × n`, row-major.
    hat: Vec<f64>,
}

impl LocalLinearSmoother {
    fn fit(bandwidth: f64, x: &[f64]) -> Self {
        let n = x.len();
        let mut hat = Vec::with_capacity(n * n);
        for &x0 in x {
            hat.extend(local_linear_weights(x, bandwidth, x0));
        }
        LocalLinearSmoother {
            x: x.to_vec(),
            bandwidth,
            hat,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn design(&self) -> &[f64] {
        &self.x
    }

    /// Row `i` of the hat matrix.
    pub fn hat_row(&self, i: usize) -> &[f64] {
        let n = self.x.len();
        &self.hat[i * n..(i + 1) * n]
    }

    /// Weights for evaluating the smooth at an arbitrary point.
    pub fn weights_at(&self, x0: f64) -> Vec<f64> {
        local_linear_weights(&self.x, self.bandwidth, x0)
    }
}

#[derive(Clone, Debug)]
pub enum SmootherKind {
    Series(SeriesSmoother),
    LocalLinear(LocalLinearSmoother),
}

/// A smoother fitted to one design column. Immutable once built.
#[derive(Clone, Debug)]
pub struct FittedSmoother {
    n: usize,
    trace: f64,
    kind: SmootherKind,
}

/// Fits `spec` to the design column `x`.
pub fn fit_smoother(spec: &SmootherSpec, x: &[f64]) -> Result<FittedSmoother> {
    spec.validate(x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SpamError::input("design column contains non-finite values"));
    }
    let n = x.len();
    match *spec {
        SmootherSpec::OrthogonalSeries { truncation, basis } => {
            let s = SeriesSmoother::fit(basis, truncation, x)?;
            Ok(FittedSmoother {
                n,
                trace: s.rank as f64,
                kind: SmootherKind::Series(s),
            })
        }
        SmootherSpec::LocalLinear { bandwidth } => {
            let h = bandwidth.unwrap_or_else(|| plugin_bandwidth(x));
            let s = LocalLinearSmoother::fit(h, x);
            let trace = (0..n).map(|i| s.hat[i * n + i]).sum();
            Ok(FittedSmoother {
                n,
                trace,
                kind: SmootherKind::LocalLinear(s),
            })
        }
    }
}

impl FittedSmoother {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Effective degrees of freedom `trace(S)`.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn kind(&self) -> &SmootherKind {
        &self.kind
    }

    /// `S r`.
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.n {
            return Err(SpamError::input(format!(
                "smoother fitted on {} points applied to a vector of length {}",
                self.n,
                r.len()
            )));
        }
        let mut out = vec![0.0; self.n];
        self.apply_into(r, &mut out);
        Ok(out)
    }

    /// `S r` into a caller-provided buffer. Lengths must already match.
    pub fn apply_into(&self, r: &[f64], out: &mut [f64]) {
        debug_assert_eq!(r.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        match &self.kind {
            SmootherKind::Series(s) => {
                let theta = s.coordinates(r);
                s.expand_into(&theta, out);
            }
            SmootherKind::LocalLinear(s) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(s.hat_row(i), r);
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        // small LCG; good enough to scatter design points
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..n)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    #[test]
    fn cosine_basis_at_known_points() {
        let b = build_basis(&[0.0, 0.5, 1.0], 1).unwrap();
        assert_abs_diff_eq!(b[(0, 0)], SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(b[(1, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[(2, 0)], -SQRT_2, epsilon = 1e-15);

        let b = build_basis(&[0.0], 2).unwrap();
        assert_abs_diff_eq!(b[(0, 0)], SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(b[(0, 1)], SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn basis_rejects_out_of_range() {
        match build_basis(&[0.2, 1.5], 2) {
            Err(SpamError::Domain { row, value }) => {
                assert_eq!(row, 1);
                assert_eq!(value, 1.5);
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn basis_is_orthonormal_on_fine_grid() {
        // Oracle: composite Simpson quadrature of ψ_j ψ_k over [0,1].
        let simpson = |j: usize, k: usize| {
            let m = 2000;
            let h = 1.0 / m as f64;
            let f = |x: f64| cosine(j, x) * cosine(k, x);
            let mut s = f(0.0) + f(1.0);
            for i in 1..m {
                s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let n = 500;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let d = 5;
        let b = build_basis(&x, d).unwrap();
        let gram = b.transpose() * &b / n as f64;
        for j in 0..d {
            for k in 0..d {
                let exact = simpson(j + 1, k + 1);
                let target = if j == k { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(exact, target, epsilon = 1e-9);
                assert!((gram[(j, k)] - exact).abs() < 5e-3, "({j},{k}) {}", gram[(j, k)]);
            }
        }
    }

    #[test]
    fn series_trace_is_dimension() {
        let x = pseudo_random(40, 3);
        let s = fit_smoother(&SmootherSpec::cosine(3), &x).unwrap();
        assert_eq!(s.trace(), 3.0);
    }

    #[test]
    fn series_handles_tied_design_without_error() {
        let x: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 0.25 } else { 0.75 }).collect();
        let s = fit_smoother(&SmootherSpec::cosine(4), &x).unwrap();
        // two distinct values leave a single centered direction
        assert_eq!(s.trace(), 1.0);
        let r: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let once = s.apply(&r).unwrap();
        let twice = s.apply(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn constant_column_has_zero_trace() {
        let x = vec![0.4; 10];
        let s = fit_smoother(&SmootherSpec::cosine(3), &x).unwrap();
        assert_eq!(s.trace(), 0.0);
        assert!(s.apply(&grid(10)).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn series_matches_dense_projector() {
        // Oracle: centered basis, normal equations solved by LU.
        let n = 50;
        let d = 4;
        let x = pseudo_random(n, 11);
        let r = pseudo_random(n, 12);
        let mut psi = build_basis(&x, d).unwrap();
        for k in 0..d {
            let m = psi.column(k).mean();
            psi.column_mut(k).add_scalar_mut(-m);
        }
        let rv = nalgebra::DVector::from_vec(r.clone());
        let gram = psi.transpose() * &psi;
        let coef = gram.lu().solve(&(psi.transpose() * &rv)).unwrap();
        let expected = &psi * coef;

        let s = fit_smoother(&SmootherSpec::cosine(d), &x).unwrap();
        let got = s.apply(&r).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(got[i], expected[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn series_fixes_its_range() {
        let n = 40;
        let x = pseudo_random(n, 5);
        let mut psi = build_basis(&x, 3).unwrap();
        for k in 0..3 {
            let m = psi.column(k).mean();
            psi.column_mut(k).add_scalar_mut(-m);
        }
        let r: Vec<f64> = (psi * nalgebra::DVector::from_vec(vec![0.7, -1.2, 0.3]))
            .iter()
            .cloned()
            .collect();
        let s = fit_smoother(&SmootherSpec::cosine(3), &x).unwrap();
        let out = s.apply(&r).unwrap();
        for (a, b) in out.iter().zip(&r) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let x = pseudo_random(20, 1);
        for spec in [SmootherSpec::cosine(3), SmootherSpec::local_linear(Some(0.2))] {
            let s = fit_smoother(&spec, &x).unwrap();
            assert!(s.apply(&[0.0; 20]).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn apply_rejects_length_mismatch() {
        let s = fit_smoother(&SmootherSpec::cosine(2), &grid(10)).unwrap();
        assert!(matches!(s.apply(&[1.0; 9]), Err(SpamError::Input(_))));
    }

    #[test]
    fn too_few_points_is_input_error() {
        assert!(fit_smoother(&SmootherSpec::cosine(1), &[0.1, 0.2]).is_err());
        assert!(fit_smoother(&SmootherSpec::cosine(5), &grid(5)).is_err());
        assert!(fit_smoother(&SmootherSpec::local_linear(Some(-1.0)), &grid(5)).is_err());
    }

    #[test]
    fn huge_bandwidth_gives_global_line() {
        let x = pseudo_random(25, 9);
        let s = fit_smoother(&SmootherSpec::local_linear(Some(1e8)), &x).unwrap();
        let out = s.apply(&x).unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        // and a non-linear response is mapped to its least-squares line
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let out = s.apply(&y).unwrap();
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        for (i, o) in out.iter().enumerate() {
            assert_abs_diff_eq!(*o, my + slope * (x[i] - mx), epsilon = 1e-6);
        }
    }

    #[test]
    fn local_linear_trace_matches_dense_hat() {
        // Oracle: assemble the hat matrix by solving each local weighted
        // least-squares problem explicitly and take its diagonal.
        let n = 10;
        let h = 0.2;
        let x = pseudo_random(n, 21);
        let mut trace = 0.0;
        for i in 0..n {
            let mut xtwx = nalgebra::Matrix2::<f64>::zeros();
            for &xk in &x {
                let k = (-0.5 * ((xk - x[i]) / h).powi(2)).exp();
                let row = nalgebra::Vector2::new(1.0, xk - x[i]);
                xtwx += row * row.transpose() * k;
            }
            let inv = xtwx.try_inverse().unwrap();
            let ki = 1.0; // kernel at its own point
            let e1 = nalgebra::Vector2::new(1.0, 0.0);
            trace += (e1.transpose() * inv * e1)[0] * ki;
        }
        let s = fit_smoother(&SmootherSpec::local_linear(Some(h)), &x).unwrap();
        assert_abs_diff_eq!(s.trace(), trace, epsilon = 1e-10);
    }

    #[test]
    fn default_truncation_rule() {
        assert_eq!(default_truncation(150), 3);
        assert_eq!(default_truncation(100_000), 10);
        assert_eq!(default_truncation(8), 2);
        assert_eq!(default_truncation(3), 1);
    }

    fn unit_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..=1.0f64, n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn smoothers_are_linear(
            x in unit_vec(15),
            u in prop::collection::vec(-5.0..5.0f64, 15),
            v in prop::collection::vec(-5.0..5.0f64, 15),
            a in -3.0..3.0f64,
            b in -3.0..3.0f64,
        ) {
            for spec in [SmootherSpec::cosine(3), SmootherSpec::local_linear(Some(0.15))] {
                let s = fit_smoother(&spec, &x).unwrap();
                let combo: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + b * q).collect();
                let lhs = s.apply(&combo).unwrap();
                let su = s.apply(&u).unwrap();
                let sv = s.apply(&v).unwrap();
                let scale = lhs.iter().map(|t| t.abs()).fold(1.0, f64::max);
                for i in 0..15 {
                    prop_assert!((lhs[i] - (a * su[i] + b * sv[i])).abs() <= 1e-10 * scale);
                }
            }
        }

        #[test]
        fn series_is_idempotent(x in unit_vec(20), r in prop::collection::vec(-5.0..5.0f64, 20)) {
            let s = fit_smoother(&SmootherSpec::cosine(4), &x).unwrap();
            let once = s.apply(&r).unwrap();
            let twice = s.apply(&once).unwrap();
            let scale = once.iter().map(|t| t.abs()).fold(1.0, f64::max);
            for i in 0..20 {
                prop_assert!((once[i] - twice[i]).abs() <= 1e-8 * scale);
            }
            prop_assert!(s.trace() <= 4.0);
        }

        #[test]
        fn local_linear_reproduces_affine(
            x in unit_vec(12),
            h in 0.05..5.0f64,
            a in -2.0..2.0f64,
            b in -2.0..2.0f64,
        ) {
            // needs some spread so the local design is not degenerate
            let spread = x.iter().cloned().fold(f64::MIN, f64::max)
                - x.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 0.2);
            let s = fit_smoother(&SmootherSpec::local_linear(Some(h)), &x).unwrap();
            let y: Vec<f64> = x.iter().map(|v| a + b * v).collect();
            let out = s.apply(&y).unwrap();
            let scale = y.iter().map(|t| t.abs()).fold(1.0, f64::max);
            for i in 0..12 {
                prop_assert!((out[i] - y[i]).abs() <= 1e-6 * scale);
            }
        }

        #[test]
        fn trace_is_permutation_invariant(x in unit_vec(12), shift in 1usize..11) {
            let mut y = x.clone();
            y.rotate_left(shift);
            y.swap(0, 5);
            for spec in [SmootherSpec::cosine(3), SmootherSpec::local_linear(Some(0.2))] {
                let a = fit_smoother(&spec, &x).unwrap().trace();
                let b = fit_smoother(&spec, &y).unwrap().trace();
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
