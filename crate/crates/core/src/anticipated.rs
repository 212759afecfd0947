//! Anticipated (time-advanced) forward equations
//!
//! ```text
//! dm(t) = b(t, m(t), E_t[g(m(t + delay))]) dt + s(t, m(t), E_t[g(m(t + delay))]) dW(t)
//! m(0) = h1,  m = lambda on (T, T + delay]
//! ```
//!
//! The conditional expectation of the advanced value enters step `i` as
//! `A_i = E_i[g(m_{i+1+m})]`, the value one step ahead of the left point.
//! With this indexing the scheme is the discrete dual of the delayed term of
//! the backward scheme in [`crate::bsde`], and a deterministic equation on
//! two delay blocks is reproduced exactly. Steps whose advanced index lies
//! beyond `N` read `lambda` directly, so the final delay block never waits on
//! the Picard loop.
//!
//! By default the Euler step is conditioned as well,
//! `m_{i+1} = E_i[m_i + b_i dt] + E_i[s_i] dW_i`, which is the exact sample
//! transpose of the regression step of the backward scheme. Adapted
//! coefficients are unaffected in the continuum limit.

use crate::brownian::BrownianDriver;
use crate::bsde::{diverging, sup_rms_gap, Node};
use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::exec;
use crate::regression::Conditioner;

/// Coefficients of an anticipated equation.
pub trait AnticipatedDynamics: Sync {
    fn dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    /// `g` applied to the future value at grid index `node.step` before
    /// conditioning. Identity by default.
    fn advanced(&self, _node: Node, future: &[f64], out: &mut [f64]) {
        out.copy_from_slice(future);
    }

    /// Drift (`dim`) and diffusion (`dim x noise_dim`, row-major) at step
    /// `node.step`, given the conditioned advanced value `cond`.
    fn coefficients(&self, node: Node, m: &[f64], cond: &[f64], drift: &mut [f64], diffusion: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnticipatedOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Condition the Euler step on the current information (see module docs).
    pub projected_step: bool,
}

impl Default for AnticipatedOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, projected_step: true }
    }
}

/// Solution of an anticipated equation on `[0, T + delay]`.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    /// `m` on indices `0..=N+delay_steps`.
    pub m: PathEnsemble,
    /// Cost multiplier; zero for equations not built from a cost.
    pub h0: f64,
    pub h1: Vec<f64>,
    pub picard_iterations: usize,
    pub picard_residual: f64,
    pub gap_history: Vec<f64>,
    /// Per iteration, the largest RMS change of the advanced inputs on the
    /// final delay block relative to the previous iteration (zero for the
    /// first iteration).
    pub final_block_input_gap: Vec<f64>,
    steps: usize,
}

impl AdjointSolution {
    /// `m(T)` of one path.
    pub fn terminal(&self, path: usize) -> &[f64] {
        self.m.at(path, self.terminal_index())
    }

    /// Grid index of the horizon `T`.
    pub fn terminal_index(&self) -> isize {
        self.steps as isize
    }

    /// Multiplies `m`, `h0` and `h1` by `s`.
    pub fn scale(&mut self, s: f64) {
        self.m.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        self.h0 *= s;
        self.h1.iter_mut().for_each(|v| *v *= s);
    }

    /// Sample standard error `std(m(T)) / sqrt(n_paths)`, largest over coordinates.
    pub fn terminal_std_error(&self) -> f64 {
        let k = self.terminal_index();
        let n = self.m.n_paths() as f64;
        self.m.std_at(k).into_iter().fold(0.0, f64::max) / n.sqrt()
    }
}

/// Solves the anticipated equation by Picard iteration from `m^0 = h1`.
///
/// `lambda` must cover the indices `N+1..=N+delay_steps`.
pub fn solve_anticipated_sde<D: AnticipatedDynamics + ?Sized>(
    dynamics: &D,
    h1: &[f64],
    lambda: &PathEnsemble,
    driver: &BrownianDriver,
    cond: &Conditioner,
    opts: &AnticipatedOptions,
) -> Result<AdjointSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("Picard tolerance must be positive, got {}", opts.tol)));
    }
    let n = dynamics.dim();
    let d = dynamics.noise_dim();
    let g = *driver.grid();
    let big_n = g.steps() as isize;
    let md = g.delay_steps() as isize;
    let np = driver.n_paths();
    if h1.len() != n || driver.dim() != d {
        return Err(Error::ShapeMismatch("h1 or driver does not match the dynamics".into()));
    }
    if lambda.dim() != n
        || lambda.n_paths() != np
        || lambda.first_index() > big_n + 1
        || lambda.last_index() < big_n + md
    {
        return Err(Error::ShapeMismatch("terminal segment must cover (T, T + delay] on every path".into()));
    }
    if cond.n_paths() != np || cond.grid() != &g {
        return Err(Error::ShapeMismatch("conditioner was built for another grid or path count".into()));
    }

    let mut prev = PathEnsemble::from_fn(np, 0, big_n + md, n, |p, k, out| {
        if k <= big_n {
            out.copy_from_slice(h1)
        } else {
            out.copy_from_slice(lambda.at(p, k))
        }
    });
    let mut prev_inputs: Option<Vec<Vec<f64>>> = None;
    let final_start = (big_n - md).max(0) as usize;
    let mut gaps = Vec::new();
    let mut block_gaps = Vec::new();
    loop {
        let inputs = advanced_inputs(dynamics, &prev, lambda, cond, big_n, md);
        block_gaps.push(match &prev_inputs {
            Some(old) => input_gap(&inputs[final_start..], &old[final_start..], np),
            None => 0.0,
        });
        let next = forward_sweep(dynamics, h1, lambda, driver, cond, &inputs, opts.projected_step)?;
        let gap = sup_rms_gap(&next, &prev, 0, big_n);
        gaps.push(gap);
        prev = next;
        prev_inputs = Some(inputs);
        let iterations = gaps.len();
        if gap <= opts.tol && iterations >= 2 {
            return Ok(AdjointSolution {
                m: prev,
                h0: 0.0,
                h1: h1.to_vec(),
                picard_iterations: iterations,
                picard_residual: gap,
                gap_history: gaps,
                final_block_input_gap: block_gaps,
                steps: g.steps(),
            });
        }
        if !gap.is_finite() || diverging(&gaps) || iterations >= opts.max_iter {
            return Err(Error::PicardDivergence { iterations, gap });
        }
    }
}

/// `A_i` for every step, each a `n_paths x dim` column.
fn advanced_inputs<D: AnticipatedDynamics + ?Sized>(
    dynamics: &D,
    current: &PathEnsemble,
    lambda: &PathEnsemble,
    cond: &Conditioner,
    big_n: isize,
    md: isize,
) -> Vec<Vec<f64>> {
    let n = dynamics.dim();
    let np = current.n_paths();
    let g = *cond.grid();
    exec::map_indexed(big_n as usize, |i| {
        let j = i as isize + 1 + md;
        let mut col = vec![0.0; np * n];
        let source = if j <= big_n { current } else { lambda };
        exec::for_each_row(&mut col, n, |p, out| {
            dynamics.advanced(Node { step: j as usize, path: p, t: g.time(j) }, source.at(p, j), out)
        });
        if j <= big_n {
            cond.project(i, &col, n)
        } else {
            col
        }
    })
}

fn input_gap(a: &[Vec<f64>], b: &[Vec<f64>], np: usize) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / np as f64).sqrt())
        .fold(0.0, f64::max)
}

fn forward_sweep<D: AnticipatedDynamics + ?Sized>(
    dynamics: &D,
    h1: &[f64],
    lambda: &PathEnsemble,
    driver: &BrownianDriver,
    cond: &Conditioner,
    inputs: &[Vec<f64>],
    projected: bool,
) -> Result<PathEnsemble> {
    let g = *driver.grid();
    let n = dynamics.dim();
    let d = dynamics.noise_dim();
    let nd = n * d;
    let big_n = g.steps() as isize;
    let md = g.delay_steps() as isize;
    let np = driver.n_paths();
    let dt = g.dt();
    let w = n + nd;

    let mut m = PathEnsemble::zeros(np, 0, big_n + md, n);
    for p in 0..np {
        m.at_mut(p, 0).copy_from_slice(h1);
        for k in big_n + 1..=big_n + md {
            m.at_mut(p, k).copy_from_slice(lambda.at(p, k));
        }
    }
    let mut coef = vec![0.0; np * w];
    let mut col = vec![0.0; np * n];
    for i in 0..g.steps() {
        let ii = i as isize;
        let t = g.time(ii);
        let a = &inputs[i];
        exec::for_each_row(&mut coef, w, |p, row| {
            let (drift, diffusion) = row.split_at_mut(n);
            let mi = m.at(p, ii);
            dynamics.coefficients(Node { step: i, path: p, t }, mi, &a[p * n..(p + 1) * n], drift, diffusion);
            for r in 0..n {
                drift[r] = mi[r] + drift[r] * dt;
            }
        });
        let stepped = if projected { cond.project(i, &coef, w) } else { std::mem::take(&mut coef) };
        exec::for_each_row(&mut col, n, |p, out| {
            let row = &stepped[p * w..(p + 1) * w];
            let dw = driver.increment(p, i);
            for r in 0..n {
                let mut v = row[r];
                for c in 0..d {
                    v += row[n + r * d + c] * dw[c];
                }
                out[r] = v;
            }
        });
        if !projected {
            coef = stepped;
        }
        if let Some(p) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: ii + 1, path: p / n });
        }
        m.set_column(ii + 1, &col);
    }
    Ok(m)
}

/// Geometric fit of a Picard gap history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionReport {
    /// `exp` of the least-squares slope of `log(gap_k)` against `k`.
    pub rate: f64,
    pub converged: bool,
}

pub fn contraction_diagnostic(gaps: &[f64]) -> Result<ContractionReport> {
    if gaps.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 Picard gaps, got {}", gaps.len())));
    }
    if gaps.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::InvalidArgument("Picard gaps must be finite and non-negative".into()));
    }
    if gaps.iter().any(|&g| g == 0.0) {
        return Ok(ContractionReport { rate: 0.0, converged: true });
    }
    let k = gaps.len() as f64;
    let xm = (k - 1.0) / 2.0;
    let ym = gaps.iter().map(|g| g.ln()).sum::<f64>() / k;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, g) in gaps.iter().enumerate() {
        let x = i as f64 - xm;
        sxy += x * (g.ln() - ym);
        sxx += x * x;
    }
    let rate = (sxy / sxx).exp();
    Ok(ContractionReport { rate, converged: rate < 1.0 })
}
