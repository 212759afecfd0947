//! Penalized projected gradient for the terminal-control problem
//!
//! ```text
//! minimize J(xi) over xi in K per path, subject to X^xi(0) = a.
//! ```
//!
//! Each penalty stage minimizes `J(xi) + lambda |X^xi(0) - a|^2`. The
//! gradient with respect to the per-path decision `xi_w` is
//! `m(T)_w + phi_x(xi_w)`, with the adjoint solved for `h0 = 1` and
//! `h1 = 2 lambda (X^xi(0) - a)`. Steps are Barzilai-Borwein with Armijo
//! backtracking along the projected arc.

use crate::anticipated::{AdjointSolution, AnticipatedOptions};
use crate::brownian::BrownianDriver;
use crate::bsde::{BsdeOptions, BsdeSolution, TerminalControl};
use crate::constraint::ConvexSet;
use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::exec;
use crate::linearize::{discrete_cost, solve_adjoint, Linearization};
use crate::model::{norm, CoefficientSet};
use crate::regression::Conditioner;
use crate::sdde::{lipschitz_probe, InitialSegment};
use crate::variational::Setting;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// Stages always run before feasibility is judged.
    pub stages: usize,
    /// Extra stages are added while the gap exceeds `feasibility_tol`, up to this many in total.
    pub max_stages: usize,
    pub max_inner: usize,
    /// Stop a stage when the projected-gradient RMS falls to this level.
    pub grad_tol: f64,
    pub feasibility_tol: f64,
    pub armijo: f64,
    pub max_halvings: usize,
    pub initial_step: f64,
    /// `|h1| / h0` above which the multipliers are flagged as possibly abnormal.
    pub abnormal_ratio: f64,
    pub bsde: BsdeOptions,
    pub adjoint: AnticipatedOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            stages: 4,
            max_stages: 8,
            max_inner: 200,
            grad_tol: 1e-7,
            feasibility_tol: 1e-2,
            armijo: 1e-4,
            max_halvings: 40,
            initial_step: 1.0,
            abnormal_ratio: 1e6,
            bsde: BsdeOptions::default(),
            adjoint: AnticipatedOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("solver option {what}")));
        if !(self.initial_penalty > 0.0) {
            return bad("initial_penalty must be positive");
        }
        if !(self.penalty_growth > 1.0) {
            return bad("penalty_growth must exceed 1");
        }
        if self.stages == 0 || self.max_stages < self.stages {
            return bad("stages must be positive and not exceed max_stages");
        }
        if !(self.grad_tol > 0.0 && self.feasibility_tol > 0.0 && self.initial_step > 0.0) {
            return bad("tolerances and the initial step must be positive");
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad("armijo must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One line of the iteration history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub stage: usize,
    pub lambda: f64,
    /// `J(xi)`.
    pub objective: f64,
    /// `|X^xi(0) - a|`.
    pub constraint_gap: f64,
    /// `J + lambda gap^2`.
    pub penalized: f64,
    /// Step accepted after this row, zero when the stage ended here.
    pub step_size: f64,
    pub grad_rms: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub xi_star: TerminalControl,
    /// Normalized so that `h0^2 + |h1|^2 = 1`.
    pub h0: f64,
    pub h1: Vec<f64>,
    pub state: BsdeSolution,
    /// Adjoint scaled to the normalized multipliers.
    pub adjoint: AdjointSolution,
    pub objective: f64,
    pub constraint_gap: f64,
    pub iterations: usize,
    pub stages: usize,
    pub final_penalty: f64,
    pub abnormal: bool,
    pub history: Vec<HistoryRow>,
}

struct Eval {
    xi: TerminalControl,
    state: BsdeSolution,
    cost: f64,
    x0: Vec<f64>,
}

impl Eval {
    fn gap(&self, a: &[f64]) -> f64 {
        self.x0.iter().zip(a).map(|(x, t)| (x - t) * (x - t)).sum::<f64>().sqrt()
    }

    fn penalized(&self, a: &[f64], lambda: f64) -> f64 {
        let g = self.gap(a);
        self.cost + lambda * g * g
    }
}

/// Orchestrates the penalty stages; the history survives a failed run.
pub struct Optimizer<'a, M: ?Sized> {
    model: &'a M,
    set: &'a ConvexSet,
    eta: &'a InitialSegment,
    driver: &'a BrownianDriver,
    cond: &'a Conditioner,
    opts: SolverOptions,
    history: Vec<HistoryRow>,
}

impl<'a, M: CoefficientSet + ?Sized> Optimizer<'a, M> {
    /// The target `a` is the origin value of `eta`.
    pub fn new(
        model: &'a M,
        set: &'a ConvexSet,
        eta: &'a InitialSegment,
        driver: &'a BrownianDriver,
        cond: &'a Conditioner,
        opts: SolverOptions,
    ) -> Result<Self> {
        opts.validate()?;
        set.validate()?;
        let n = model.state_dim();
        if set.dim() != n || eta.dim() != n || driver.dim() != model.noise_dim() {
            return Err(Error::ShapeMismatch("model, constraint set, initial segment and driver disagree".into()));
        }
        let probe = lipschitz_probe(model, 64, 0)?;
        if probe.inversion_violated {
            return Err(Error::DegenerateDiffusion(format!(
                "diffusion is not invertible in the control (probed modulus {:e})",
                probe.inversion_ratio
            )));
        }
        Ok(Self { model, set, eta, driver, cond, opts, history: Vec::new() })
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    fn setting(&self) -> Setting<'_, M> {
        Setting { model: self.model, eta: self.eta, driver: self.driver, cond: self.cond, opts: self.opts.bsde }
    }

    fn evaluate(&self, xi: TerminalControl) -> Result<Eval> {
        let state = self.setting().solve(&xi)?;
        let cost = discrete_cost(self.model, &state);
        let x0 = state.initial_mean();
        Ok(Eval { xi, state, cost, x0 })
    }

    fn adjoint(&self, e: &Eval, lambda: f64) -> Result<AdjointSolution> {
        let a = self.eta.origin();
        let h1: Vec<f64> = e.x0.iter().zip(a).map(|(x, t)| 2.0 * lambda * (x - t)).collect();
        let lin = Linearization::new(self.model, &e.state)?;
        solve_adjoint(&lin, 1.0, &h1, self.driver, self.cond, &self.opts.adjoint)
    }

    fn gradient(&self, e: &Eval, adj: &AdjointSolution) -> Vec<f64> {
        let n = self.model.state_dim();
        let mut g = vec![0.0; e.xi.values().len()];
        exec::for_each_row(&mut g, n, |p, row| {
            self.model.terminal_cost_grad(e.xi.at(p), row);
            for (r, m) in row.iter_mut().zip(adj.terminal(p)) {
                *r += m;
            }
        });
        g
    }

    /// `P_K(xi - s g)` per path.
    fn projected_step(&self, xi: &TerminalControl, g: &[f64], s: f64) -> TerminalControl {
        let n = xi.dim();
        TerminalControl::from_fn(xi.n_paths(), n, |p, out| {
            let trial: Vec<f64> = xi.at(p).iter().zip(&g[p * n..(p + 1) * n]).map(|(x, gv)| x - s * gv).collect();
            self.set.project(&trial, out);
        })
    }

    /// Runs the penalty stages from `start`, or from the projection of zero.
    pub fn run(&mut self, start: Option<TerminalControl>) -> Result<SolveResult> {
        self.history.clear();
        let n = self.model.state_dim();
        let np = self.driver.n_paths();
        let a = self.eta.origin().to_vec();
        let xi0 = match start {
            Some(x) => {
                if x.n_paths() != np || x.dim() != n {
                    return Err(Error::ShapeMismatch("starting control has the wrong shape".into()));
                }
                let mut y = x.clone();
                exec::for_each_row(y.values_mut(), n, |p, row| self.set.project(x.at(p), row));
                y
            }
            None => {
                let origin = self.set.projected(&vec![0.0; n]);
                TerminalControl::constant(np, &origin)
            }
        };
        let mut cur = self.evaluate(xi0)?;
        let mut iteration = 0;
        let mut lambda = self.opts.initial_penalty;
        let mut stage_gaps: Vec<f64> = Vec::new();
        let mut step = self.opts.initial_step;
        let mut stage = 0;
        let adj = loop {
            let mut adj = self.adjoint(&cur, lambda)?;
            let mut g = self.gradient(&cur, &adj);
            for _ in 0..self.opts.max_inner {
                let pg = self.projected_step(&cur.xi, &g, 1.0);
                let grad_rms = cur.xi.mean_square_distance(&pg).sqrt();
                let penalized = cur.penalized(&a, lambda);
                let mut row = HistoryRow {
                    iteration,
                    stage,
                    lambda,
                    objective: cur.cost,
                    constraint_gap: cur.gap(&a),
                    penalized,
                    step_size: 0.0,
                    grad_rms,
                };
                iteration += 1;
                if grad_rms <= self.opts.grad_tol {
                    self.history.push(row);
                    break;
                }
                let mut s = step;
                let mut accepted = None;
                for _ in 0..=self.opts.max_halvings {
                    let cand = self.projected_step(&cur.xi, &g, s);
                    let decrease = inner(&g, cand.values(), cur.xi.values(), n);
                    if !(decrease < 0.0) {
                        break;
                    }
                    let e = self.evaluate(cand)?;
                    if e.penalized(&a, lambda) <= penalized + self.opts.armijo * decrease {
                        accepted = Some((e, s));
                        break;
                    }
                    s *= 0.5;
                }
                let Some((next, s)) = accepted else {
                    log::debug!("stage {stage}: line search stalled at grad rms {grad_rms:e}");
                    self.history.push(row);
                    break;
                };
                row.step_size = s;
                self.history.push(row);
                let next_adj = self.adjoint(&next, lambda)?;
                let next_g = self.gradient(&next, &next_adj);
                step = barzilai_borwein(&cur.xi, &next.xi, &g, &next_g, n).unwrap_or(s);
                cur = next;
                adj = next_adj;
                g = next_g;
            }
            let gap = cur.gap(&a);
            stage_gaps.push(gap);
            stage += 1;
            log::info!("stage {stage}: lambda {lambda:e}, J {:.6e}, gap {gap:e}", cur.cost);
            let k = stage_gaps.len();
            if gap > self.opts.feasibility_tol
                && k >= 3
                && stage_gaps[k - 1] > 0.5 * stage_gaps[k - 2]
                && stage_gaps[k - 2] > 0.5 * stage_gaps[k - 3]
            {
                return Err(Error::InfeasibleStall { stage, gap });
            }
            if stage >= self.opts.stages && gap <= self.opts.feasibility_tol {
                break adj;
            }
            if stage >= self.opts.max_stages {
                return Err(Error::InfeasibleStall { stage, gap });
            }
            lambda *= self.opts.penalty_growth;
        };
        let mut adjoint = adj;
        let h1_raw = adjoint.h1.clone();
        let scale = (1.0 + h1_raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let abnormal = norm(&h1_raw) > self.opts.abnormal_ratio;
        if abnormal {
            log::warn!("multipliers look abnormal: |h1| / h0 = {:e}", norm(&h1_raw));
        }
        adjoint.scale(1.0 / scale);
        Ok(SolveResult {
            xi_star: cur.xi,
            h0: adjoint.h0,
            h1: adjoint.h1.clone(),
            objective: cur.cost,
            constraint_gap: stage_gaps.last().copied().unwrap_or(f64::NAN),
            state: cur.state,
            adjoint,
            iterations: iteration,
            stages: stage,
            final_penalty: lambda,
            abnormal,
            history: self.history.clone(),
        })
    }
}

/// Sample inner product `E<g, x - y>`.
fn inner(g: &[f64], x: &[f64], y: &[f64], n: usize) -> f64 {
    let np = g.len() / n;
    exec::mean_of(np, |p| (p * n..(p + 1) * n).map(|k| g[k] * (x[k] - y[k])).sum())
}

fn barzilai_borwein(x0: &TerminalControl, x1: &TerminalControl, g0: &[f64], g1: &[f64], n: usize) -> Option<f64> {
    let (a, b) = (x1.values(), x0.values());
    let np = x0.n_paths();
    let ss = exec::mean_of(np, |p| (p * n..(p + 1) * n).map(|k| (a[k] - b[k]).powi(2)).sum());
    let sy = exec::mean_of(np, |p| (p * n..(p + 1) * n).map(|k| (a[k] - b[k]) * (g1[k] - g0[k])).sum());
    let s = ss / sy;
    (sy > 0.0 && s.is_finite()).then(|| s.clamp(1e-8, 1e8))
}

/// Solves the constrained problem with target `a = eta(0)`.
pub fn solve_problem_b<M: CoefficientSet + ?Sized>(
    model: &M,
    set: &ConvexSet,
    eta: &InitialSegment,
    driver: &BrownianDriver,
    cond: &Conditioner,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    Optimizer::new(model, set, eta, driver, cond, opts.clone())?.run(None)
}

/// Relative residual above which a recovered control is rejected.
pub const RECOVERY_TOL: f64 = 1e-8;

/// `u(t_i) = sigma^-1(t_i, c_i, Y_{i-m}, Z_i)` on steps `0..N`.
pub fn recover_control<M: CoefficientSet + ?Sized>(state: &BsdeSolution, model: &M) -> Result<PathEnsemble> {
    let g = *state.grid();
    let big_n = g.steps() as isize;
    let m = g.delay_steps() as isize;
    let k = model.control_dim();
    let np = state.n_paths();
    let mut u = PathEnsemble::zeros(np, 0, big_n - 1, k);
    for i in 0..big_n {
        exec::try_for_each_row(u.column_slice_mut(i), k, |p, out| {
            let q = state.z.at(p, i);
            let residual =
                model.diffusion_inverse(g.time(i), state.continuation.at(p, i), state.y.at(p, i - m), q, out);
            if !(residual <= RECOVERY_TOL * (1.0 + norm(q))) {
                return Err(Error::InversionFailure { step: i as usize, path: p, residual });
            }
            Ok(())
        })?;
    }
    Ok(u)
}
