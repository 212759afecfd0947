//! Controlled delayed dynamics and their backward reformulation.
//!
//! A model supplies the forward coefficients `b(t, x, x_d, u)` and
//! `sigma(t, x, x_d, u)`, the running cost `l~(t, x, u)` and the terminal
//! cost `phi(x)`. Writing `q = sigma(t, x, x_d, u)` and inverting for `u`
//! turns the forward equation into the delayed backward equation
//!
//! ```text
//! -dX = f(t, X, X(t - delay), q) dt - q dW,   f = -b(t, x, x_d, sigma^-1(t, x, x_d, q))
//! ```
//!
//! with running cost `l(t, x, x_d, q) = l~(t, x, sigma^-1(t, x, x_d, q))`.
//! Everything the backward solvers need (generator, cost, partial derivatives)
//! has a default derived from the forward coefficients: numerical inversion
//! by damped Newton and central finite differences. Models with closed forms
//! override them.
//!
//! Vectors are flat slices: `x` has `n` entries, `u` and `q` have `n * d`
//! (row-major `n x d`), and Jacobians are row-major.

use nalgebra::{DMatrix, DVector};

/// Newton tolerance of the numerical diffusion inverse.
pub const INVERSION_TOL: f64 = 1e-10;
/// Newton iteration cap of the numerical diffusion inverse.
pub const INVERSION_MAX_ITER: usize = 50;

/// Relative finite-difference step: `h = 1e-6 * (1 + |arg|)`.
#[inline]
pub fn fd_step(arg: f64) -> f64 {
    1e-6 * (1.0 + arg.abs())
}

/// Partial derivatives of the backward generator and running cost at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Partials {
    pub n: usize,
    pub d: usize,
    /// `df/dx`, `n x n`.
    pub f_x: Vec<f64>,
    /// `df/dx_d`, `n x n`.
    pub f_xd: Vec<f64>,
    /// `df/dq`, `n x (n*d)`.
    pub f_q: Vec<f64>,
    pub l_x: Vec<f64>,
    pub l_xd: Vec<f64>,
    pub l_q: Vec<f64>,
}

impl Partials {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            f_x: vec![0.0; n * n],
            f_xd: vec![0.0; n * n],
            f_q: vec![0.0; n * n * d],
            l_x: vec![0.0; n],
            l_xd: vec![0.0; n],
            l_q: vec![0.0; n * d],
        }
    }

    /// Sets every entry to zero without reallocating.
    pub fn clear(&mut self) {
        for v in [&mut self.f_x, &mut self.f_xd, &mut self.f_q, &mut self.l_x, &mut self.l_xd, &mut self.l_q] {
            v.iter_mut().for_each(|e| *e = 0.0);
        }
    }
}

/// Coefficients of a controlled stochastic delayed system and its cost.
pub trait CoefficientSet: Sync + Send {
    /// State dimension `n`.
    fn state_dim(&self) -> usize;

    /// Brownian dimension `d`.
    fn noise_dim(&self) -> usize;

    /// Control dimension; the control lives in `R^{n x d}` like `q`.
    fn control_dim(&self) -> usize {
        self.state_dim() * self.noise_dim()
    }

    fn drift(&self, t: f64, x: &[f64], x_delay: &[f64], u: &[f64], out: &mut [f64]);

    fn diffusion(&self, t: f64, x: &[f64], x_delay: &[f64], u: &[f64], out: &mut [f64]);

    fn running_cost(&self, _t: f64, _x: &[f64], _u: &[f64]) -> f64 {
        0.0
    }

    fn terminal_cost(&self, x: &[f64]) -> f64;

    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
        let mut xp = x.to_vec();
        for c in 0..x.len() {
            let h = fd_step(x[c]);
            xp[c] = x[c] + h;
            let up = self.terminal_cost(&xp);
            xp[c] = x[c] - h;
            let dn = self.terminal_cost(&xp);
            xp[c] = x[c];
            out[c] = (up - dn) / (2.0 * h);
        }
    }

    /// Declared Lipschitz bound `D` of drift and diffusion.
    fn lipschitz_bound(&self) -> f64;

    /// Declared inversion modulus `alpha`: `|sigma(u1) - sigma(u2)| >= alpha |u1 - u2|`.
    fn inversion_modulus(&self) -> f64;

    /// Solves `sigma(t, x, x_d, u) = q` for `u`, returning the final residual
    /// norm. The default is damped Newton from `u = 0`.
    fn diffusion_inverse(&self, t: f64, x: &[f64], x_delay: &[f64], q: &[f64], out: &mut [f64]) -> f64 {
        newton_inverse(self, t, x, x_delay, q, out)
    }

    /// Backward generator `f(t, x, x_d, q) = -b(t, x, x_d, sigma^-1(q))`.
    fn generator(&self, t: f64, x: &[f64], x_delay: &[f64], q: &[f64], out: &mut [f64]) {
        let mut u = vec![0.0; self.control_dim()];
        self.diffusion_inverse(t, x, x_delay, q, &mut u);
        self.drift(t, x, x_delay, &u, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }

    /// Backward running cost `l(t, x, x_d, q) = l~(t, x, sigma^-1(q))`.
    fn backward_running_cost(&self, t: f64, x: &[f64], x_delay: &[f64], q: &[f64]) -> f64 {
        let mut u = vec![0.0; self.control_dim()];
        self.diffusion_inverse(t, x, x_delay, q, &mut u);
        self.running_cost(t, x, &u)
    }

    /// Partial derivatives of `f` and `l`; central differences by default.
    fn backward_partials(&self, t: f64, x: &[f64], x_delay: &[f64], q: &[f64], out: &mut Partials) {
        finite_difference_partials(self, t, x, x_delay, q, out);
    }
}

/// Central finite-difference partials of the backward generator and cost.
pub fn finite_difference_partials<M: CoefficientSet + ?Sized>(
    model: &M,
    t: f64,
    x: &[f64],
    x_delay: &[f64],
    q: &[f64],
    out: &mut Partials,
) {
    let n = model.state_dim();
    let nq = q.len();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let mut args = [x.to_vec(), x_delay.to_vec(), q.to_vec()];
    for slot in 0..3 {
        let width = if slot == 2 { nq } else { n };
        for c in 0..width {
            let base = args[slot][c];
            let h = fd_step(base);
            args[slot][c] = base + h;
            model.generator(t, &args[0], &args[1], &args[2], &mut fp);
            let lp = model.backward_running_cost(t, &args[0], &args[1], &args[2]);
            args[slot][c] = base - h;
            model.generator(t, &args[0], &args[1], &args[2], &mut fm);
            let lm = model.backward_running_cost(t, &args[0], &args[1], &args[2]);
            args[slot][c] = base;
            let (jac, grad) = match slot {
                0 => (&mut out.f_x, &mut out.l_x),
                1 => (&mut out.f_xd, &mut out.l_xd),
                _ => (&mut out.f_q, &mut out.l_q),
            };
            for r in 0..n {
                jac[r * width + c] = (fp[r] - fm[r]) / (2.0 * h);
            }
            grad[c] = (lp - lm) / (2.0 * h);
        }
    }
}

/// Damped Newton solve of `sigma(t, x, x_d, u) = q`, starting from zero.
/// Returns the final residual norm; `out` holds the best iterate.
pub fn newton_inverse<M: CoefficientSet + ?Sized>(
    model: &M,
    t: f64,
    x: &[f64],
    x_delay: &[f64],
    q: &[f64],
    out: &mut [f64],
) -> f64 {
    let k = q.len();
    let tol = INVERSION_TOL * (1.0 + norm(q));
    let mut u = vec![0.0; k];
    let mut s = vec![0.0; k];
    let residual = |u: &[f64], s: &mut [f64]| {
        model.diffusion(t, x, x_delay, u, s);
        s.iter_mut().zip(q).for_each(|(a, b)| *a -= b);
        norm(s)
    };
    let mut r = residual(&u, &mut s);
    let mut jac = DMatrix::<f64>::zeros(k, k);
    let mut sp = vec![0.0; k];
    let mut sm = vec![0.0; k];
    for _ in 0..INVERSION_MAX_ITER {
        if r <= tol {
            break;
        }
        for c in 0..k {
            let base = u[c];
            let h = fd_step(base);
            u[c] = base + h;
            model.diffusion(t, x, x_delay, &u, &mut sp);
            u[c] = base - h;
            model.diffusion(t, x, x_delay, &u, &mut sm);
            u[c] = base;
            for row in 0..k {
                jac[(row, c)] = (sp[row] - sm[row]) / (2.0 * h);
            }
        }
        let Some(step) = jac.clone().lu().solve(&DVector::from_column_slice(&s)) else {
            break;
        };
        let mut damping = 1.0;
        let mut trial = vec![0.0; k];
        let mut improved = false;
        for _ in 0..30 {
            for c in 0..k {
                trial[c] = u[c] - damping * step[c];
            }
            let rt = residual(&trial, &mut sp);
            if rt < r {
                u.copy_from_slice(&trial);
                s.copy_from_slice(&sp);
                r = rt;
                improved = true;
                break;
            }
            damping *= 0.5;
        }
        if !improved {
            break;
        }
    }
    out.copy_from_slice(&u);
    r
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}
