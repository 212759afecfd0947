//! Time-delayed backward equations
//!
//! ```text
//! -dY(t) = f(t, Y(t), Y(t - delay), Z(t)) dt - Z(t) dW(t),  Y(T) = xi,  Y = phi on [-delay, 0)
//! ```
//!
//! solved by the explicit regression scheme
//!
//! ```text
//! c_i = E_i[Y_{i+1}],  Z_i = E_i[Y_{i+1} dW_i] / dt,  Y_i = c_i + f(t_i, c_i, Y_{i-m}, Z_i) dt
//! ```
//!
//! inside a Picard loop over the path fed to the delayed slot.

use crate::brownian::BrownianDriver;
use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::TimeGrid;
use crate::model::CoefficientSet;
use crate::regression::Conditioner;
use crate::sdde::InitialSegment;

/// A grid point of one sample path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub step: usize,
    pub path: usize,
    pub t: f64,
}

/// Generator `f(t, y, y_delay, z)` of a delayed backward equation.
///
/// `z` is row-major `dim x noise_dim`. The node lets generators depend on
/// coefficient paths frozen along a previously solved state.
pub trait Generator: Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn eval(&self, node: Node, y: &[f64], y_delay: &[f64], z: &[f64], out: &mut [f64]);
}

/// A generator given by a closure.
pub struct FnGenerator<F> {
    dim: usize,
    noise_dim: usize,
    f: F,
}

impl<F> FnGenerator<F>
where
    F: Fn(Node, &[f64], &[f64], &[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, noise_dim: usize, f: F) -> Self {
        Self { dim, noise_dim, f }
    }
}

impl<F> Generator for FnGenerator<F>
where
    F: Fn(Node, &[f64], &[f64], &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn eval(&self, node: Node, y: &[f64], y_delay: &[f64], z: &[f64], out: &mut [f64]) {
        (self.f)(node, y, y_delay, z, out)
    }
}

/// The backward generator `-b(sigma^-1)` of a controlled model.
pub struct ModelGenerator<'a, M: ?Sized>(pub &'a M);

impl<M: CoefficientSet + ?Sized> Generator for ModelGenerator<'_, M> {
    fn dim(&self) -> usize {
        self.0.state_dim()
    }
    fn noise_dim(&self) -> usize {
        self.0.noise_dim()
    }
    fn eval(&self, node: Node, y: &[f64], y_delay: &[f64], z: &[f64], out: &mut [f64]) {
        self.0.generator(node.t, y, y_delay, z, out)
    }
}

/// Terminal data `xi`, one value in `R^n` per sample path.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalControl {
    values: Vec<f64>,
    n_paths: usize,
    dim: usize,
}

impl TerminalControl {
    pub fn new(values: Vec<f64>, n_paths: usize, dim: usize) -> Result<Self> {
        if values.len() != n_paths * dim {
            return Err(Error::ShapeMismatch(format!("{} values for {n_paths} paths x {dim}", values.len())));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("terminal value of path {} is not finite", p / dim.max(1))));
        }
        Ok(Self { values, n_paths, dim })
    }

    pub fn constant(n_paths: usize, value: &[f64]) -> Self {
        Self { values: value.repeat(n_paths), n_paths, dim: value.len() }
    }

    pub fn from_fn<F: Fn(usize, &mut [f64]) + Sync + Send>(n_paths: usize, dim: usize, f: F) -> Self {
        let mut values = vec![0.0; n_paths * dim];
        exec::for_each_row(&mut values, dim, f);
        Self { values, n_paths, dim }
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn at(&self, path: usize) -> &[f64] {
        &self.values[path * self.dim..(path + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Sample `E|xi|^2`.
    pub fn second_moment(&self) -> f64 {
        exec::mean_of(self.n_paths, |p| self.at(p).iter().map(|v| v * v).sum())
    }

    /// Per-path `self + s * (other - self)`.
    pub fn interpolate(&self, other: &Self, s: f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * (b - a)).collect();
        Self { values, n_paths: self.n_paths, dim: self.dim }
    }

    /// Per-path difference `self - other`.
    pub fn difference(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Self { values, n_paths: self.n_paths, dim: self.dim }
    }

    /// Sample `E|self - other|^2`.
    pub fn mean_square_distance(&self, other: &Self) -> f64 {
        let d = self.dim;
        exec::mean_of(self.n_paths, |p| {
            (0..d).map(|c| (self.values[p * d + c] - other.values[p * d + c]).powi(2)).sum()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsdeOptions {
    /// Picard stopping tolerance on the sup-over-time RMS gap between iterates.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BsdeOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50 }
    }
}

/// Solution `(Y, Z)` of a delayed backward equation.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    /// `Y` on indices `-delay_steps..=N`.
    pub y: PathEnsemble,
    /// `Z` on steps `0..N`, row-major `n x d` per point.
    pub z: PathEnsemble,
    /// Regression estimates `c_i = E_i[Y_{i+1}]` on steps `0..N`, the point
    /// at which the generator was evaluated.
    pub continuation: PathEnsemble,
    pub picard_iterations: usize,
    pub picard_residual: f64,
    pub gap_history: Vec<f64>,
    /// `sqrt(mean_paths sum_i |Y_i - Y_{i+1} - f_i dt + Z_i dW_i|^2)`, the
    /// one-step residual of the discrete equation in the returned solution.
    pub consistency_defect: f64,
    grid: TimeGrid,
}

impl BsdeSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.y.n_paths()
    }

    /// Sample mean of `Y(0)`.
    pub fn initial_mean(&self) -> Vec<f64> {
        self.y.mean_at(0)
    }

    /// Sample standard deviation of `Y(0)` over paths.
    pub fn initial_spread(&self) -> Vec<f64> {
        self.y.std_at(0)
    }
}

fn check_shapes(
    n: usize,
    d: usize,
    xi: &TerminalControl,
    phi: &InitialSegment,
    driver: &BrownianDriver,
    cond: &Conditioner,
) -> Result<()> {
    if xi.dim() != n || xi.n_paths() != driver.n_paths() {
        return Err(Error::ShapeMismatch("terminal data does not match generator/driver".into()));
    }
    if phi.dim() != n || phi.delay_steps() != driver.grid().delay_steps() {
        return Err(Error::ShapeMismatch("initial segment does not match generator/grid".into()));
    }
    if driver.dim() != d {
        return Err(Error::ShapeMismatch(format!("driver has {} coordinates, generator needs {d}", driver.dim())));
    }
    if cond.n_paths() != driver.n_paths() || cond.grid() != driver.grid() {
        return Err(Error::ShapeMismatch("conditioner was built for another grid or path count".into()));
    }
    Ok(())
}

/// Sup over grid indices `0..=N` of the RMS (over paths) of `a - b`.
pub(crate) fn sup_rms_gap(a: &PathEnsemble, b: &PathEnsemble, first: isize, last: isize) -> f64 {
    let n = a.n_paths();
    let d = a.dim();
    let per_index = exec::map_indexed((last - first + 1) as usize, |j| {
        let k = first + j as isize;
        let (ca, cb) = (a.column_slice(k), b.column_slice(k));
        exec::mean_of(n, |p| (p * d..(p + 1) * d).map(|c| (ca[c] - cb[c]) * (ca[c] - cb[c])).sum())
    });
    per_index.into_iter().map(f64::sqrt).fold(0.0, f64::max)
}

/// Detects three consecutive increases at the end of the gap history.
pub(crate) fn diverging(gaps: &[f64]) -> bool {
    gaps.len() >= 4 && gaps[gaps.len() - 4..].windows(2).all(|w| w[1] > w[0])
}

/// Solves the delayed backward equation by Picard iteration, starting from
/// `Y^0 = xi` on `[0, T]`. At least two sweeps are always made, so a
/// generator that ignores `y_delay` stops after exactly two.
pub fn solve_delayed_bsde<G: Generator + ?Sized>(
    gen: &G,
    xi: &TerminalControl,
    phi: &InitialSegment,
    driver: &BrownianDriver,
    cond: &Conditioner,
    opts: &BsdeOptions,
) -> Result<BsdeSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("Picard tolerance must be positive, got {}", opts.tol)));
    }
    let n = gen.dim();
    let d = gen.noise_dim();
    check_shapes(n, d, xi, phi, driver, cond)?;
    let g = *driver.grid();
    let big_n = g.steps() as isize;
    let m = g.delay_steps() as isize;

    let mut prev = PathEnsemble::from_fn(xi.n_paths(), -m, big_n, n, |p, k, out| {
        if k < 0 {
            out.copy_from_slice(phi.at(k))
        } else {
            out.copy_from_slice(xi.at(p))
        }
    });
    let mut gaps = Vec::new();
    loop {
        let (next, z, cont) = backward_sweep(gen, xi, phi, driver, cond, &prev)?;
        let gap = sup_rms_gap(&next, &prev, 0, big_n);
        gaps.push(gap);
        prev = next;
        let iterations = gaps.len();
        if gap <= opts.tol && iterations >= 2 {
            let defect = consistency_defect(gen, &prev, &z, &cont, driver);
            return Ok(BsdeSolution {
                y: prev,
                z,
                continuation: cont,
                picard_iterations: iterations,
                picard_residual: gap,
                gap_history: gaps,
                consistency_defect: defect,
                grid: g,
            });
        }
        if !gap.is_finite() || diverging(&gaps) || iterations >= opts.max_iter {
            return Err(Error::PicardDivergence { iterations, gap });
        }
    }
}

type Sweep = (PathEnsemble, PathEnsemble, PathEnsemble);

fn backward_sweep<G: Generator + ?Sized>(
    gen: &G,
    xi: &TerminalControl,
    phi: &InitialSegment,
    driver: &BrownianDriver,
    cond: &Conditioner,
    prev: &PathEnsemble,
) -> Result<Sweep> {
    let g = *driver.grid();
    let n = gen.dim();
    let d = gen.noise_dim();
    let nd = n * d;
    let big_n = g.steps();
    let m = g.delay_steps() as isize;
    let np = xi.n_paths();
    let dt = g.dt();
    let w = n + nd;

    let mut y = PathEnsemble::zeros(np, -m, big_n as isize, n);
    for p in 0..np {
        for k in -m..0 {
            y.at_mut(p, k).copy_from_slice(phi.at(k));
        }
        y.at_mut(p, big_n as isize).copy_from_slice(xi.at(p));
    }
    let mut z = PathEnsemble::zeros(np, 0, big_n as isize - 1, nd);
    let mut cont = PathEnsemble::zeros(np, 0, big_n as isize - 1, n);
    let mut targets = vec![0.0; np * w];
    let mut col = vec![0.0; np * n];
    for i in (0..big_n).rev() {
        let ii = i as isize;
        exec::for_each_row(&mut targets, w, |p, row| {
            let next = y.at(p, ii + 1);
            let dw = driver.increment(p, i);
            row[..n].copy_from_slice(next);
            for r in 0..n {
                for c in 0..d {
                    row[n + r * d + c] = next[r] * dw[c];
                }
            }
        });
        let mut fitted = cond.project(i, &targets, w);
        for row in fitted.chunks_mut(w) {
            row[n..].iter_mut().for_each(|v| *v /= dt);
        }
        let t = g.time(ii);
        exec::for_each_row(&mut col, n, |p, out| {
            let (c, zq) = fitted[p * w..(p + 1) * w].split_at(n);
            let delayed = if ii - m < 0 { phi.at(ii - m) } else { prev.at(p, ii - m) };
            gen.eval(Node { step: i, path: p, t }, c, delayed, zq, out);
            for r in 0..n {
                out[r] = c[r] + out[r] * dt;
            }
        });
        if let Some(p) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: ii, path: p / n });
        }
        y.set_column(ii, &col);
        for p in 0..np {
            let row = &fitted[p * w..(p + 1) * w];
            cont.at_mut(p, ii).copy_from_slice(&row[..n]);
            z.at_mut(p, ii).copy_from_slice(&row[n..]);
        }
    }
    Ok((y, z, cont))
}

fn consistency_defect<G: Generator + ?Sized>(
    gen: &G,
    y: &PathEnsemble,
    z: &PathEnsemble,
    cont: &PathEnsemble,
    driver: &BrownianDriver,
) -> f64 {
    let g = *driver.grid();
    let n = gen.dim();
    let d = gen.noise_dim();
    let m = g.delay_steps() as isize;
    let dt = g.dt();
    let np = y.n_paths();
    let mut acc = vec![0.0; np];
    for i in 0..g.steps() {
        let ii = i as isize;
        let t = g.time(ii);
        exec::for_each_block(&mut acc, 1, |first, block| {
            let mut f = vec![0.0; n];
            for (j, a) in block.iter_mut().enumerate() {
                let p = first + j;
                let zq = z.at(p, ii);
                gen.eval(Node { step: i, path: p, t }, cont.at(p, ii), y.at(p, ii - m), zq, &mut f);
                let dw = driver.increment(p, i);
                for r in 0..n {
                    let mut e = y.at(p, ii)[r] - y.at(p, ii + 1)[r] - f[r] * dt;
                    for c in 0..d {
                        e += zq[r * d + c] * dw[c];
                    }
                    *a += e * e;
                }
            }
        });
    }
    exec::mean_of(np, |p| acc[p]).sqrt()
}

/// Left and right sides of the stability estimate for two solutions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityGap {
    /// `E[sup_t |Y - Y'|^2 + 1/2 int |Z - Z'|^2 dt]`.
    pub lhs: f64,
    /// `E|xi - xi'|^2`.
    pub rhs: f64,
}

pub fn bsde_stability_gap(
    sol: &BsdeSolution,
    other: &BsdeSolution,
    xi: &TerminalControl,
    xi_other: &TerminalControl,
) -> Result<StabilityGap> {
    if sol.grid != other.grid || sol.n_paths() != other.n_paths() || xi.n_paths() != sol.n_paths() {
        return Err(Error::ShapeMismatch("solutions live on different grids or path sets".into()));
    }
    let g = sol.grid;
    let dt = g.dt();
    let lhs = exec::mean_of(sol.n_paths(), |p| {
        let mut sup: f64 = 0.0;
        for k in 0..=g.steps() as isize {
            let s: f64 = sol.y.at(p, k).iter().zip(other.y.at(p, k)).map(|(a, b)| (a - b) * (a - b)).sum();
            sup = sup.max(s);
        }
        let mut zz = 0.0;
        for k in 0..g.steps() as isize {
            zz += sol.z.at(p, k).iter().zip(other.z.at(p, k)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        sup + 0.5 * zz * dt
    });
    Ok(StabilityGap { lhs, rhs: xi.mean_square_distance(xi_other) })
}

/// Both sides of the a priori bound
/// `E[sup|Y|^2 + int |Z|^2] <= C E[|xi|^2 + int |f(t, 0, 0, 0)|^2 dt]`.
pub fn a_priori_terms<G: Generator + ?Sized>(gen: &G, sol: &BsdeSolution, xi: &TerminalControl) -> StabilityGap {
    let g = sol.grid;
    let n = gen.dim();
    let nd = n * gen.noise_dim();
    let dt = g.dt();
    let lhs = exec::mean_of(sol.n_paths(), |p| {
        let sup = (0..=g.steps() as isize)
            .map(|k| sol.y.at(p, k).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        let zz: f64 = (0..g.steps() as isize).map(|k| sol.z.at(p, k).iter().map(|v| v * v).sum::<f64>()).sum();
        sup + zz * dt
    });
    let zeros = vec![0.0; n.max(nd)];
    let forcing = exec::mean_of(sol.n_paths(), |p| {
        let mut f = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..g.steps() {
            gen.eval(Node { step: i, path: p, t: g.time(i as isize) }, &zeros[..n], &zeros[..n], &zeros[..nd], &mut f);
            acc += f.iter().map(|v| v * v).sum::<f64>() * dt;
        }
        acc
    });
    StabilityGap { lhs, rhs: xi.second_moment() + forcing }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::RegressionBasis;

    fn setup(n_paths: usize, horizon: f64, delay: f64, steps: usize) -> (BrownianDriver, Conditioner) {
        let g = TimeGrid::new(horizon, delay, steps).unwrap();
        let drv = BrownianDriver::sample(g, n_paths, 1, 11).unwrap();
        let cond = Conditioner::brownian(&drv, RegressionBasis::default()).unwrap();
        (drv, cond)
    }

    #[test]
    fn constant_terminal_value_is_a_martingale() {
        let (drv, cond) = setup(500, 1.0, 0.25, 20);
        let gen = FnGenerator::new(1, 1, |_, _, _, _, out: &mut [f64]| out[0] = 0.0);
        let xi = TerminalControl::constant(500, &[2.5]);
        let phi = InitialSegment::zeros(drv.grid(), 1);
        let sol = solve_delayed_bsde(&gen, &xi, &phi, &drv, &cond, &BsdeOptions::default()).unwrap();
        let unit = solve_delayed_bsde(&gen, &TerminalControl::constant(500, &[1.0]), &phi, &drv, &cond, &Default::default())
            .unwrap();
        for p in 0..500 {
            for k in 0..=20 {
                assert!((sol.y.at(p, k)[0] - 2.5).abs() < 1e-10);
            }
            // Z is pure regression noise here, linear in the terminal value.
            for k in 0..20 {
                assert!((sol.z.at(p, k)[0] - 2.5 * unit.z.at(p, k)[0]).abs() < 1e-9);
            }
        }
        // Noise band: |P[dW]| ~ sqrt(dt * basis / n), divided by dt.
        let dt = drv.grid().dt();
        let band = 2.5 * 3.0 * (6.0 / (500.0 * dt)).sqrt();
        for k in 0..20 {
            assert!(sol.z.std_at(k)[0] < band);
        }
        assert_eq!(sol.picard_iterations, 2);
    }

    #[test]
    fn boundary_conditions_are_bitwise() {
        let (drv, cond) = setup(300, 1.0, 0.25, 16);
        let gen = FnGenerator::new(1, 1, |_, y: &[f64], yd: &[f64], z: &[f64], out: &mut [f64]| {
            out[0] = 0.3 * y[0] - 0.2 * yd[0] + 0.1 * z[0]
        });
        let w = drv.brownian_path();
        let xi = TerminalControl::from_fn(300, 1, |p, out| out[0] = 1.0 + w.at(p, 16)[0].sin());
        let phi = InitialSegment::from_fn(drv.grid(), 1, |t| vec![0.5 + t]).unwrap();
        let sol = solve_delayed_bsde(&gen, &xi, &phi, &drv, &cond, &BsdeOptions::default()).unwrap();
        for p in 0..300 {
            assert_eq!(sol.y.at(p, 16), xi.at(p));
            for k in -4..0 {
                assert_eq!(sol.y.at(p, k), phi.at(k));
            }
        }
        assert!(sol.picard_residual <= 1e-10);
    }

    #[test]
    fn divergence_is_detected() {
        let (drv, cond) = setup(200, 1.8, 0.9, 18);
        let gen = FnGenerator::new(1, 1, |_, _: &[f64], yd: &[f64], _: &[f64], out: &mut [f64]| out[0] = 8.0 * yd[0]);
        let xi = TerminalControl::constant(200, &[1.0]);
        let phi = InitialSegment::constant(drv.grid(), &[1.0]).unwrap();
        let err = solve_delayed_bsde(&gen, &xi, &phi, &drv, &cond, &BsdeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::PicardDivergence { .. }), "{err:?}");
    }

    #[test]
    fn gap_history_rule() {
        assert!(diverging(&[1.0, 2.0, 3.0, 4.0]));
        assert!(!diverging(&[1.0, 2.0, 1.5, 4.0]));
        assert!(!diverging(&[1.0, 2.0, 3.0]));
    }
}
