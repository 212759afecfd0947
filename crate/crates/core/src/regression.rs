//! Least-squares regression estimates of conditional expectations.
//!
//! A [`Projector`] is the orthogonal projection (with respect to the sample
//! inner product over paths) onto polynomials of standardized features. The
//! factorization is done once per feature set: thin QR of the design matrix,
//! then an SVD of the triangular factor, discarding singular values below
//! [`SINGULAR_CUTOFF`] times the largest. Projecting a target then costs one
//! pass to form `A^T b` and one pass to evaluate the fit.
//!
//! A [`Conditioner`] holds one projector per time step for an adapted
//! conditioning process `S`, with features `S(t)`, `S(t - delay)` or both.

use log::{debug, warn};
use nalgebra::DMatrix;

use crate::brownian::BrownianDriver;
use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::TimeGrid;

/// Relative singular-value cutoff of the rank-revealing solve.
pub const SINGULAR_CUTOFF: f64 = 1e-10;

/// Largest total size of cached basis values a [`Conditioner`] keeps.
pub const BASIS_CACHE_BYTES: usize = 1 << 30;

/// Which values of the conditioning process enter the regression at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSpec {
    Current,
    Delayed,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegressionBasis {
    pub degree: usize,
    pub features: FeatureSpec,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self { degree: 2, features: FeatureSpec::Both }
    }
}

impl RegressionBasis {
    pub fn new(degree: usize, features: FeatureSpec) -> Self {
        Self { degree, features }
    }

    /// Number of monomials of total degree `<= degree` in `raw` variables.
    pub fn basis_size(&self, raw: usize) -> usize {
        binomial(raw + self.degree, self.degree)
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Monomials as `(parent, variable)` products in graded order; entry 0 is the
/// constant.
fn monomial_recipe(vars: usize, degree: usize) -> Vec<(usize, usize)> {
    // Each monomial is a nondecreasing variable sequence; `last` tracks the
    // largest variable used so every product is generated once.
    let mut recipe = vec![(0usize, usize::MAX)];
    let mut last = vec![0usize];
    let mut level: Vec<usize> = vec![0];
    for _ in 0..degree {
        let mut next = Vec::new();
        for &parent in &level {
            let start = if parent == 0 { 0 } else { last[parent] };
            for v in start..vars {
                recipe.push((parent, v));
                last.push(v);
                next.push(recipe.len() - 1);
            }
        }
        level = next;
    }
    recipe
}

/// Orthogonal projection onto a polynomial basis of per-path features.
#[derive(Debug, Clone)]
pub struct Projector {
    width: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
    active: Vec<usize>,
    recipe: Vec<(usize, usize)>,
    pinv: Vec<f64>,
    rank: usize,
    n_paths: usize,
    /// Basis values per path, kept when the caller can afford the memory.
    cached: Option<Vec<f64>>,
}

impl Projector {
    /// Factorizes the design matrix for features `features(path, out)` of
    /// length `width`.
    pub fn fit<F>(n_paths: usize, width: usize, degree: usize, features: F) -> Result<Self>
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        Self::fit_with_cache(n_paths, width, degree, features, false)
    }

    /// Like [`Projector::fit`]; with `cache` the basis values are kept so
    /// later projections skip re-evaluating them.
    pub fn fit_with_cache<F>(n_paths: usize, width: usize, degree: usize, features: F, cache: bool) -> Result<Self>
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let moments = exec::chunked_sum(n_paths, 2 * width, |r, acc| {
            let mut x = vec![0.0; width];
            for p in r {
                features(p, &mut x);
                for c in 0..width {
                    acc[c] += x[c];
                }
            }
        });
        let mean: Vec<f64> = moments[..width].iter().map(|s| s / n_paths.max(1) as f64).collect();
        let var = exec::chunked_sum(n_paths, width, |r, acc| {
            let mut x = vec![0.0; width];
            for p in r {
                features(p, &mut x);
                for c in 0..width {
                    acc[c] += (x[c] - mean[c]) * (x[c] - mean[c]);
                }
            }
        });
        let std: Vec<f64> = var.iter().map(|v| (v / n_paths.max(1) as f64).sqrt()).collect();
        let active: Vec<usize> = (0..width).filter(|&c| std[c] > 1e-12 * (1.0 + mean[c].abs())).collect();
        let center: Vec<f64> = active.iter().map(|&c| mean[c]).collect();
        let scale: Vec<f64> = active.iter().map(|&c| 1.0 / std[c]).collect();
        let recipe = monomial_recipe(active.len(), degree);
        let k = recipe.len();
        if n_paths <= k {
            return Err(Error::TooFewPaths { paths: n_paths, basis: k });
        }
        if k * 10 > n_paths {
            warn!("regression with {k} basis functions on {n_paths} paths is ill-posed (more than paths/10)");
        }
        let mut proj = Self { width, center, scale, active, recipe, pinv: vec![0.0; k * k], rank: 0, n_paths, cached: None };

        let mut rows = vec![0.0; n_paths * k];
        exec::for_each_block(&mut rows, k, |first, block| {
            let mut x = vec![0.0; width];
            for (j, row) in block.chunks_mut(k).enumerate() {
                features(first + j, &mut x);
                proj.eval_basis(&x, row);
            }
        });
        let design = DMatrix::from_row_slice(n_paths, k, &rows);
        if cache {
            proj.cached = Some(rows);
        }
        let r = design.qr().r();
        let svd = r.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let s = &svd.singular_values;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        if !(smax > 0.0) || !smax.is_finite() {
            return Err(Error::RankDeficientBasis);
        }
        let mut rank = 0;
        for (j, &sj) in s.iter().enumerate() {
            if sj > SINGULAR_CUTOFF * smax {
                rank += 1;
                let w = 1.0 / (sj * sj);
                for a in 0..k {
                    for b in 0..k {
                        proj.pinv[a * k + b] += w * v_t[(j, a)] * v_t[(j, b)];
                    }
                }
            }
        }
        proj.rank = rank;
        Ok(proj)
    }

    pub fn basis_len(&self) -> usize {
        self.recipe.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    #[inline]
    fn eval_basis(&self, raw: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for (j, &(parent, var)) in self.recipe.iter().enumerate().skip(1) {
            let c = self.active[var];
            let z = (raw[c] - self.center[var]) * self.scale[var];
            out[j] = out[parent] * z;
        }
    }

    /// Fits `targets` (`n_paths` rows of `t_width` values) and returns the
    /// fitted values in the same layout.
    pub fn project<F>(&self, features: F, targets: &[f64], t_width: usize) -> Vec<f64>
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let coef = self.coefficients(&features, targets, t_width);
        let k = self.basis_len();
        let width = self.width;
        let mut fitted = vec![0.0; self.n_paths * t_width];
        if let Some(rows) = &self.cached {
            exec::for_each_block(&mut fitted, t_width, |first, block| {
                for (j, row) in block.chunks_mut(t_width).enumerate() {
                    let phi = &rows[(first + j) * k..(first + j + 1) * k];
                    combine(phi, &coef, row);
                }
            });
            return fitted;
        }
        exec::for_each_block(&mut fitted, t_width, |first, block| {
            let mut x = vec![0.0; width];
            let mut phi = vec![0.0; k];
            for (j, row) in block.chunks_mut(t_width).enumerate() {
                features(first + j, &mut x);
                self.eval_basis(&x, &mut phi);
                combine(&phi, &coef, row);
            }
        });
        fitted
    }

    /// Coefficients `(A^T A)^+ A^T b`, `basis_len x t_width`, row-major.
    fn coefficients<F>(&self, features: &F, targets: &[f64], t_width: usize) -> Vec<f64>
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        debug_assert_eq!(targets.len(), self.n_paths * t_width);
        let k = self.basis_len();
        let width = self.width;
        let atb = exec::chunked_sum(self.n_paths, k * t_width, |r, acc| {
            if let Some(rows) = &self.cached {
                for p in r {
                    let phi = &rows[p * k..(p + 1) * k];
                    let tgt = &targets[p * t_width..(p + 1) * t_width];
                    accumulate(phi, tgt, acc);
                }
                return;
            }
            let mut x = vec![0.0; width];
            let mut phi = vec![0.0; k];
            for p in r {
                features(p, &mut x);
                self.eval_basis(&x, &mut phi);
                let tgt = &targets[p * t_width..(p + 1) * t_width];
                accumulate(&phi, tgt, acc);
            }
        });
        let mut coef = vec![0.0; k * t_width];
        for a in 0..k {
            for c in 0..k {
                let m = self.pinv[a * k + c];
                for b in 0..t_width {
                    coef[a * t_width + b] += m * atb[c * t_width + b];
                }
            }
        }
        coef
    }
}

/// `acc += phi tgt^T`, row-major `phi.len() x tgt.len()`.
#[inline]
fn accumulate(phi: &[f64], tgt: &[f64], acc: &mut [f64]) {
    for (row, &ph) in acc.chunks_exact_mut(tgt.len()).zip(phi) {
        for (a, &t) in row.iter_mut().zip(tgt) {
            *a += ph * t;
        }
    }
}

/// `out = coef^T phi` for row-major `coef` of `phi.len() x out.len()`.
#[inline]
fn combine(phi: &[f64], coef: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (row, &ph) in coef.chunks_exact(out.len()).zip(phi) {
        for (o, &c) in out.iter_mut().zip(row) {
            *o += ph * c;
        }
    }
}

/// Least-squares projection of `targets` (`n x t_width`, row-major) onto the
/// polynomial basis of all `k` columns of `features` (`n x k`, row-major).
/// Returns the fitted values per path.
pub fn regress_conditional(
    features: &[f64],
    k: usize,
    targets: &[f64],
    t_width: usize,
    degree: usize,
) -> Result<Vec<f64>> {
    let n = if t_width == 0 { 0 } else { targets.len() / t_width };
    if features.len() != n * k || targets.len() != n * t_width {
        return Err(Error::ShapeMismatch(format!(
            "features {} and targets {} do not share a path count",
            features.len(),
            targets.len()
        )));
    }
    let feat = |p: usize, out: &mut [f64]| out.copy_from_slice(&features[p * k..(p + 1) * k]);
    let proj = Projector::fit(n, k, degree, feat)?;
    Ok(proj.project(feat, targets, t_width))
}

/// Per-step conditional expectation `E[. | F_t]` estimated by regression on an
/// adapted conditioning process.
#[derive(Debug, Clone)]
pub struct Conditioner {
    grid: TimeGrid,
    basis: RegressionBasis,
    process: PathEnsemble,
    projectors: Vec<Projector>,
}

impl Conditioner {
    /// Builds projectors for steps `0..N` from `process`, which must cover the
    /// indices `-delay_steps..=N-1`.
    pub fn new(grid: TimeGrid, process: PathEnsemble, basis: RegressionBasis) -> Result<Self> {
        let last_needed = grid.steps() as isize - 1;
        if process.first_index() > grid.first_index() || process.last_index() < last_needed {
            return Err(Error::ShapeMismatch(format!(
                "conditioning process covers {}..={}, need {}..={last_needed}",
                process.first_index(),
                process.last_index(),
                grid.first_index()
            )));
        }
        let mut c = Self { grid, basis, process, projectors: Vec::new() };
        let width = c.raw_width();
        let np = c.process.n_paths();
        let bytes = grid.steps() * np * basis.basis_size(width) * std::mem::size_of::<f64>();
        let cache = bytes <= BASIS_CACHE_BYTES;
        if !cache {
            debug!("basis cache of {bytes} bytes exceeds the budget; evaluating on the fly");
        }
        let fitted = exec::map_indexed(grid.steps(), |i| {
            Projector::fit_with_cache(np, width, basis.degree, |p, out| c.raw_features(i, p, out), cache)
        });
        c.projectors = fitted.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(c)
    }

    /// Conditions on the Brownian path `(W(t), W(t - delay))`.
    pub fn brownian(driver: &BrownianDriver, basis: RegressionBasis) -> Result<Self> {
        Self::new(*driver.grid(), driver.brownian_path(), basis)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn basis(&self) -> RegressionBasis {
        self.basis
    }

    pub fn n_paths(&self) -> usize {
        self.process.n_paths()
    }

    /// Rank of the design matrix at `step`.
    pub fn rank(&self, step: usize) -> usize {
        self.projectors[step].rank()
    }

    fn raw_width(&self) -> usize {
        match self.basis.features {
            FeatureSpec::Both => 2 * self.process.dim(),
            _ => self.process.dim(),
        }
    }

    #[inline]
    fn raw_features(&self, step: usize, path: usize, out: &mut [f64]) {
        let k = step as isize;
        let m = self.grid.delay_steps() as isize;
        let s = self.process.dim();
        match self.basis.features {
            FeatureSpec::Current => out.copy_from_slice(self.process.at(path, k)),
            FeatureSpec::Delayed => out.copy_from_slice(self.process.at(path, k - m)),
            FeatureSpec::Both => {
                out[..s].copy_from_slice(self.process.at(path, k));
                out[s..].copy_from_slice(self.process.at(path, k - m));
            }
        }
    }

    /// Regression estimate of `E[target | F_{t_step}]` per path.
    pub fn project(&self, step: usize, targets: &[f64], t_width: usize) -> Vec<f64> {
        self.projectors[step].project(|p, out| self.raw_features(step, p, out), targets, t_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_counts_match_binomials() {
        for vars in 0..4 {
            for deg in 0..4 {
                let b = RegressionBasis::new(deg, FeatureSpec::Current);
                assert_eq!(monomial_recipe(vars, deg).len(), b.basis_size(vars), "{vars} {deg}");
            }
        }
    }

    #[test]
    fn constant_target_is_reproduced() {
        let n = 200;
        let feats: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let targets = vec![4.25; n];
        let fit = regress_conditional(&feats, 1, &targets, 1, 3).unwrap();
        assert!(fit.iter().all(|v| (v - 4.25).abs() < 1e-12));
    }

    #[test]
    fn degenerate_feature_collapses_to_mean() {
        let n = 100;
        let feats = vec![0.0; n];
        let targets: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let fit = regress_conditional(&feats, 1, &targets, 1, 2).unwrap();
        assert!(fit.iter().all(|v| (v - 49.5).abs() < 1e-12));
    }

    #[test]
    fn too_few_paths() {
        let feats = vec![0.1, 0.2, 0.3];
        let targets = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            regress_conditional(&feats, 1, &targets, 1, 2),
            Err(Error::TooFewPaths { .. })
        ));
    }

    #[test]
    fn mismatched_shapes() {
        assert!(matches!(
            regress_conditional(&[1.0, 2.0], 1, &[1.0], 1, 1),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
