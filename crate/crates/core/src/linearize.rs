//! Coefficients frozen along a solved state, the variational generator and
//! the adjoint equation built from them.
//!
//! Partial derivatives at step `i` are taken where the backward scheme
//! evaluates the generator: `(t_i, c_i, Y_{i-m}, Z_i)` with `c_i = E_i[Y_{i+1}]`.
//! The adjoint is
//!
//! ```text
//! dm = { f_x^T m + E_t[ f_xd(t+delay)^T m(t+delay) + h0 l_xd(t+delay) ] + h0 l_x } dt
//!    + { f_q^T m + h0 l_q } dW,
//! m(0) = h1,  m = 0 on (T, T + delay],
//! ```
//!
//! where the advanced coefficients vanish at and beyond `T`. The `l_xd` term
//! belongs to running costs that read the delayed state; it is zero otherwise.

use std::cell::RefCell;

use crate::anticipated::{solve_anticipated_sde, AdjointSolution, AnticipatedDynamics, AnticipatedOptions};
use crate::brownian::BrownianDriver;
use crate::bsde::{BsdeSolution, Generator, Node};
use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::TimeGrid;
use crate::model::{CoefficientSet, Partials};
use crate::regression::Conditioner;

/// Partial derivatives of the generator and running cost on every step and path.
pub trait FrozenCoefficients: Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn grid(&self) -> &TimeGrid;
    fn n_paths(&self) -> usize;
    /// Partials at step `step` in `0..N` of path `path`.
    fn partials_at(&self, step: usize, path: usize, out: &mut Partials);
}

thread_local! {
    static SCRATCH: RefCell<Partials> = RefCell::new(Partials::zeros(0, 0));
}

/// Runs `f` on the partials at `(step, path)` held in a per-thread buffer.
fn with_partials<F: FrozenCoefficients + ?Sized, R>(c: &F, step: usize, path: usize, f: impl FnOnce(&Partials) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut p = cell.borrow_mut();
        if p.n != c.state_dim() || p.d != c.noise_dim() {
            *p = Partials::zeros(c.state_dim(), c.noise_dim());
        }
        c.partials_at(step, path, &mut p);
        f(&p)
    })
}

/// Partials evaluated on demand along a solved state of a model.
pub struct Linearization<'a, M: ?Sized> {
    model: &'a M,
    state: &'a BsdeSolution,
}

impl<'a, M: CoefficientSet + ?Sized> Linearization<'a, M> {
    pub fn new(model: &'a M, state: &'a BsdeSolution) -> Result<Self> {
        if state.y.dim() != model.state_dim() || state.z.dim() != model.control_dim() {
            return Err(Error::ShapeMismatch("state does not belong to this model".into()));
        }
        Ok(Self { model, state })
    }

    pub fn state(&self) -> &BsdeSolution {
        self.state
    }
}

impl<M: CoefficientSet + ?Sized> FrozenCoefficients for Linearization<'_, M> {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }
    fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }
    fn grid(&self) -> &TimeGrid {
        self.state.grid()
    }
    fn n_paths(&self) -> usize {
        self.state.n_paths()
    }
    fn partials_at(&self, step: usize, path: usize, out: &mut Partials) {
        let g = self.state.grid();
        let i = step as isize;
        let m = g.delay_steps() as isize;
        self.model.backward_partials(
            g.time(i),
            self.state.continuation.at(path, i),
            self.state.y.at(path, i - m),
            self.state.z.at(path, i),
            out,
        );
    }
}

/// The same partials at every node.
#[derive(Debug, Clone)]
pub struct ConstantPartials {
    grid: TimeGrid,
    n_paths: usize,
    partials: Partials,
}

impl ConstantPartials {
    pub fn new(grid: TimeGrid, n_paths: usize, partials: Partials) -> Self {
        Self { grid, n_paths, partials }
    }
}

impl FrozenCoefficients for ConstantPartials {
    fn state_dim(&self) -> usize {
        self.partials.n
    }
    fn noise_dim(&self) -> usize {
        self.partials.d
    }
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn n_paths(&self) -> usize {
        self.n_paths
    }
    fn partials_at(&self, _step: usize, _path: usize, out: &mut Partials) {
        out.clone_from(&self.partials);
    }
}

/// `f_x X + f_xd X_delay + f_q q` with frozen coefficients.
pub struct LinearGenerator<'a, F: ?Sized>(pub &'a F);

impl<F: FrozenCoefficients + ?Sized> Generator for LinearGenerator<'_, F> {
    fn dim(&self) -> usize {
        self.0.state_dim()
    }
    fn noise_dim(&self) -> usize {
        self.0.noise_dim()
    }
    fn eval(&self, node: Node, y: &[f64], y_delay: &[f64], z: &[f64], out: &mut [f64]) {
        let n = self.0.state_dim();
        let nq = n * self.0.noise_dim();
        with_partials(self.0, node.step, node.path, |p| {
            for r in 0..n {
                let mut v = 0.0;
                for c in 0..n {
                    v += p.f_x[r * n + c] * y[c] + p.f_xd[r * n + c] * y_delay[c];
                }
                for c in 0..nq {
                    v += p.f_q[r * nq + c] * z[c];
                }
                out[r] = v;
            }
        });
    }
}

/// Coefficients of the adjoint equation for given multipliers.
pub struct AdjointDynamics<'a, F: ?Sized> {
    coeffs: &'a F,
    h0: f64,
}

impl<'a, F: FrozenCoefficients + ?Sized> AdjointDynamics<'a, F> {
    pub fn new(coeffs: &'a F, h0: f64) -> Self {
        Self { coeffs, h0 }
    }
}

impl<F: FrozenCoefficients + ?Sized> AnticipatedDynamics for AdjointDynamics<'_, F> {
    fn dim(&self) -> usize {
        self.coeffs.state_dim()
    }

    fn noise_dim(&self) -> usize {
        self.coeffs.noise_dim()
    }

    fn advanced(&self, node: Node, future: &[f64], out: &mut [f64]) {
        let n = self.dim();
        if node.step >= self.coeffs.grid().steps() {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        with_partials(self.coeffs, node.step, node.path, |p| {
            for c in 0..n {
                let mut v = self.h0 * p.l_xd[c];
                for r in 0..n {
                    v += p.f_xd[r * n + c] * future[r];
                }
                out[c] = v;
            }
        });
    }

    fn coefficients(&self, node: Node, m: &[f64], cond: &[f64], drift: &mut [f64], diffusion: &mut [f64]) {
        let n = self.dim();
        let nq = n * self.noise_dim();
        with_partials(self.coeffs, node.step, node.path, |p| {
            for c in 0..n {
                let mut v = cond[c] + self.h0 * p.l_x[c];
                for r in 0..n {
                    v += p.f_x[r * n + c] * m[r];
                }
                drift[c] = v;
            }
            for c in 0..nq {
                let mut v = self.h0 * p.l_q[c];
                for r in 0..n {
                    v += p.f_q[r * nq + c] * m[r];
                }
                diffusion[c] = v;
            }
        });
    }
}

/// Solves the adjoint equation with multipliers `(h0, h1)`.
pub fn solve_adjoint<F: FrozenCoefficients + ?Sized>(
    coeffs: &F,
    h0: f64,
    h1: &[f64],
    driver: &BrownianDriver,
    cond: &Conditioner,
    opts: &AnticipatedOptions,
) -> Result<AdjointSolution> {
    let g = coeffs.grid();
    if g != driver.grid() || coeffs.n_paths() != driver.n_paths() {
        return Err(Error::ShapeMismatch("coefficients were frozen on another grid or path set".into()));
    }
    let big_n = g.steps() as isize;
    let lambda = PathEnsemble::zeros(driver.n_paths(), big_n + 1, big_n + g.delay_steps() as isize, h1.len());
    let mut sol = solve_anticipated_sde(&AdjointDynamics::new(coeffs, h0), h1, &lambda, driver, cond, opts)?;
    sol.h0 = h0;
    Ok(sol)
}

/// Per-path discrete cost `sum_i l(t_i, c_i, Y_{i-m}, Z_i) dt + phi(Y_N)`.
pub fn path_costs<M: CoefficientSet + ?Sized>(model: &M, state: &BsdeSolution) -> Vec<f64> {
    let g = *state.grid();
    let m = g.delay_steps() as isize;
    let big_n = g.steps() as isize;
    let np = state.n_paths();
    let mut acc = vec![0.0; np];
    for i in 0..big_n {
        let t = g.time(i);
        exec::for_each_row(&mut acc, 1, |p, a| {
            a[0] += model.backward_running_cost(t, state.continuation.at(p, i), state.y.at(p, i - m), state.z.at(p, i));
        });
    }
    let dt = g.dt();
    exec::for_each_row(&mut acc, 1, |p, a| a[0] = a[0] * dt + model.terminal_cost(state.y.at(p, big_n)));
    acc
}

/// Sample cost `J(xi) = E[sum_i l dt + phi(xi)]` of a solved state.
pub fn discrete_cost<M: CoefficientSet + ?Sized>(model: &M, state: &BsdeSolution) -> f64 {
    let costs = path_costs(model, state);
    exec::mean_of(costs.len(), |p| costs[p])
}
