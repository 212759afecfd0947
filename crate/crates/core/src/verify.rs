//! Sample checks of the first-order conditions: the duality identity between
//! the variational and adjoint equations, the variational inequality, and
//! the per-path maximum principle with its boundary/interior split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::anticipated::AdjointSolution;
use crate::bsde::TerminalControl;
use crate::constraint::ConvexSet;
use crate::error::{Error, Result};
use crate::exec;
use crate::linearize::FrozenCoefficients;
use crate::model::{CoefficientSet, Partials};
use crate::variational::VariationalSolution;

/// `E[<m(T), X^(T)> - <m(0), X^(0)>] = delta1 + delta2 + residual`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    pub lhs: f64,
    /// `E int [ (f_xd(t+delay))^T m(t+delay) X^(t) - f_xd(t) m(t) X^(t-delay) ] dt`.
    pub delta1: f64,
    /// `h0 E int [ l_x X^ + l_xd X^(t-delay) + l_q q^ ] dt`.
    pub delta2: f64,
    pub residual: f64,
    /// `E int |m| |X^| dt`, the natural size of the terms.
    pub scale: f64,
}

fn check_shapes<F: FrozenCoefficients + ?Sized>(var: &VariationalSolution, adj: &AdjointSolution, coeffs: &F) -> Result<()> {
    let g = coeffs.grid();
    let n = coeffs.state_dim();
    let np = coeffs.n_paths();
    let ok = var.solution.grid() == g
        && var.x_hat().n_paths() == np
        && adj.m.n_paths() == np
        && var.x_hat().dim() == n
        && adj.m.dim() == n
        && adj.terminal_index() == g.steps() as isize;
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch("variational, adjoint and coefficients disagree in grid or paths".into()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `<M^T u, v>` for a row-major `n x n` matrix.
fn bilinear(mat: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for r in 0..n {
        for c in 0..n {
            s += mat[r * n + c] * u[r] * v[c];
        }
    }
    s
}

/// Left-point quadrature on the Euler grid of both sides of the duality identity.
pub fn duality_report<F: FrozenCoefficients + ?Sized>(
    var: &VariationalSolution,
    adj: &AdjointSolution,
    coeffs: &F,
) -> Result<DualityReport> {
    check_shapes(var, adj, coeffs)?;
    let g = *coeffs.grid();
    let n = coeffs.state_dim();
    let d = coeffs.noise_dim();
    let big_n = g.steps() as isize;
    let m = g.delay_steps() as isize;
    let dt = g.dt();
    let h0 = adj.h0;
    let xh = var.x_hat();
    let qh = var.q_hat();
    let np = coeffs.n_paths();
    let zero = vec![0.0; n];
    // [lhs, delta1, delta2, scale]
    let sums = exec::chunked_sum(np, 4, |r, acc| {
        let mut p_now = Partials::zeros(n, d);
        let mut p_adv = Partials::zeros(n, d);
        for p in r {
            acc[0] += dot(adj.m.at(p, big_n), xh.at(p, big_n)) - dot(adj.m.at(p, 0), xh.at(p, 0));
            let (mut d1, mut d2, mut sc) = (0.0, 0.0, 0.0);
            for i in 0..big_n {
                coeffs.partials_at(i as usize, p, &mut p_now);
                let x = xh.at(p, i);
                let xd = if i - m >= 0 { xh.at(p, i - m) } else { &zero[..] };
                let mi = adj.m.at(p, i);
                if i + m < big_n {
                    coeffs.partials_at((i + m) as usize, p, &mut p_adv);
                    d1 += bilinear(&p_adv.f_xd, adj.m.at(p, i + m), x);
                }
                d1 -= bilinear(&p_now.f_xd, mi, xd);
                d2 += dot(&p_now.l_x, x) + dot(&p_now.l_xd, xd) + dot(&p_now.l_q, qh.at(p, i));
                sc += mi.iter().map(|v| v * v).sum::<f64>().sqrt() * x.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            acc[1] += d1 * dt;
            acc[2] += h0 * d2 * dt;
            acc[3] += sc * dt;
        }
    });
    let nf = np as f64;
    let (lhs, delta1, delta2, scale) = (sums[0] / nf, sums[1] / nf, sums[2] / nf, sums[3] / nf);
    let report = DualityReport { lhs, delta1, delta2, residual: lhs - delta1 - delta2, scale };
    if [lhs, delta1, delta2, scale].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: 0, path: 0 });
    }
    Ok(report)
}

/// Sample mean and standard error of a per-path quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleValue {
    pub value: f64,
    pub std_error: f64,
}

impl SampleValue {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len();
        let mean = exec::mean_of(n, |p| v[p]);
        let var = if n > 1 { exec::mean_of(n, |p| (v[p] - mean).powi(2)) * n as f64 / (n - 1) as f64 } else { 0.0 };
        SampleValue { value: mean, std_error: (var / n as f64).sqrt() }
    }
}

/// `(h0, h1) / sqrt(h0^2 + |h1|^2)`.
pub fn normalize_multipliers(h0: f64, h1: &[f64]) -> Result<(f64, Vec<f64>)> {
    if !(h0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("h0 must be non-negative, got {h0}")));
    }
    let s = (h0 * h0 + dot(h1, h1)).sqrt();
    if s == 0.0 {
        return Err(Error::DegenerateMultipliers);
    }
    if !s.is_finite() {
        return Err(Error::InvalidArgument("multipliers are not finite".into()));
    }
    Ok((h0 / s, h1.iter().map(|v| v / s).collect()))
}

/// Sample value of
/// `<h1, X^(0)> + h0 <phi_x(xi*), xi - xi*> + h0 int (<l_x, X^> + <l_xd, X^(t-delay)> + <l_q, q^>) dt`
/// with normalized multipliers. At an optimum it is non-negative for every
/// admissible `xi`.
#[allow(clippy::too_many_arguments)]
pub fn variational_inequality<M, F>(
    model: &M,
    coeffs: &F,
    xi: &TerminalControl,
    xi_star: &TerminalControl,
    h0: f64,
    h1: &[f64],
    var: &VariationalSolution,
) -> Result<SampleValue>
where
    M: CoefficientSet + ?Sized,
    F: FrozenCoefficients + ?Sized,
{
    let (h0, h1) = normalize_multipliers(h0, h1)?;
    let n = coeffs.state_dim();
    let d = coeffs.noise_dim();
    let np = coeffs.n_paths();
    if xi.n_paths() != np || xi_star.n_paths() != np || xi.dim() != n || h1.len() != n || var.x_hat().n_paths() != np {
        return Err(Error::ShapeMismatch("variational inequality inputs disagree in shape".into()));
    }
    let g = *coeffs.grid();
    let big_n = g.steps() as isize;
    let m = g.delay_steps() as isize;
    let xh = var.x_hat();
    let qh = var.q_hat();
    let zero = vec![0.0; n];
    let per_path = exec::map_indexed(np, |p| {
        let mut part = Partials::zeros(n, d);
        let mut grad = vec![0.0; n];
        model.terminal_cost_grad(xi_star.at(p), &mut grad);
        let dxi: Vec<f64> = xi.at(p).iter().zip(xi_star.at(p)).map(|(a, b)| a - b).collect();
        let mut run = 0.0;
        if h0 != 0.0 {
            for i in 0..big_n {
                coeffs.partials_at(i as usize, p, &mut part);
                let xd = if i - m >= 0 { xh.at(p, i - m) } else { &zero[..] };
                run += dot(&part.l_x, xh.at(p, i)) + dot(&part.l_xd, xd) + dot(&part.l_q, qh.at(p, i));
            }
        }
        dot(&h1, xh.at(p, 0)) + h0 * dot(&grad, &dxi) + h0 * run * g.dt()
    });
    Ok(SampleValue::from_samples(&per_path))
}

/// Per-path check of `<m(T) + h0 phi_x(xi*), eta - xi*> >= 0` for `eta` in `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpResidualReport {
    /// `g = m(T) + h0 phi_x(xi*)` per path, flattened, with normalized multipliers.
    pub g: Vec<f64>,
    pub dim: usize,
    /// Paths whose `xi*` lies within the boundary band of `K`.
    pub boundary_mask: Vec<bool>,
    /// Largest `|g|` off the boundary; zero when every path is on it.
    pub interior_violation: f64,
    /// Most negative `<g, eta - xi*>` over boundary paths and probes, `None`
    /// when no path is on the boundary.
    pub boundary_violation: Option<f64>,
    /// Largest per-coordinate `std(m(T)) / sqrt(n_paths)` with normalized multipliers.
    pub std_error: f64,
}

impl MpResidualReport {
    pub fn g_at(&self, path: usize) -> &[f64] {
        &self.g[path * self.dim..(path + 1) * self.dim]
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary_mask.iter().filter(|b| **b).count()
    }
}

/// Boundary band `1e-6 (1 + |xi*|)` per path; probes are projections onto `K`
/// of Gaussian perturbations of `xi*`, drawn from per-path streams so the
/// result does not depend on path order or thread count.
pub fn mp_residual<M: CoefficientSet + ?Sized>(
    xi_star: &TerminalControl,
    adj: &AdjointSolution,
    model: &M,
    set: &ConvexSet,
    probes: usize,
    seed: u64,
) -> Result<MpResidualReport> {
    set.validate()?;
    let n = xi_star.dim();
    let np = xi_star.n_paths();
    if set.dim() != n || adj.m.dim() != n || adj.m.n_paths() != np {
        return Err(Error::ShapeMismatch("constraint set, adjoint and xi* disagree in shape".into()));
    }
    let s = (adj.h0 * adj.h0 + dot(&adj.h1, &adj.h1)).sqrt();
    if s == 0.0 {
        return Err(Error::DegenerateMultipliers);
    }
    let h0 = adj.h0 / s;
    let mut g = vec![0.0; np * n];
    exec::for_each_row(&mut g, n, |p, row| {
        model.terminal_cost_grad(xi_star.at(p), row);
        for (r, mv) in row.iter_mut().zip(adj.terminal(p)) {
            *r = mv / s + h0 * *r;
        }
    });
    let boundary_mask: Vec<bool> = (0..np)
        .map(|p| {
            let x = xi_star.at(p);
            set.on_boundary(x, ConvexSet::boundary_tolerance(x))
        })
        .collect();
    let per_path = exec::map_indexed(np, |p| {
        let gp = &g[p * n..(p + 1) * n];
        if !boundary_mask[p] {
            return (gp.iter().map(|v| v * v).sum::<f64>().sqrt(), f64::INFINITY);
        }
        let x = xi_star.at(p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let spread = 1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut trial = vec![0.0; n];
        let mut eta = vec![0.0; n];
        let mut worst = f64::INFINITY;
        for _ in 0..probes {
            for (t, xv) in trial.iter_mut().zip(x) {
                *t = xv + spread * rng.sample::<f64, _>(StandardNormal);
            }
            set.project(&trial, &mut eta);
            let v: f64 = gp.iter().zip(&eta).zip(x).map(|((gv, e), xv)| gv * (e - xv)).sum();
            worst = worst.min(v);
        }
        (0.0, worst)
    });
    let interior_violation = per_path.iter().zip(&boundary_mask).filter(|(_, b)| !**b).map(|(v, _)| v.0).fold(0.0, f64::max);
    let boundary_violation = if boundary_mask.iter().any(|b| *b) {
        Some(per_path.iter().map(|v| v.1).fold(f64::INFINITY, f64::min))
    } else {
        None
    };
    // The Monte Carlo error sits in the adjoint estimate. The spread of g
    // itself vanishes at an interior optimum and says nothing about accuracy.
    let std_error = adj.terminal_std_error() / s;
    Ok(MpResidualReport { g, dim: n, boundary_mask, interior_violation, boundary_violation, std_error })
}
