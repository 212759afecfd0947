//! The variational (linearized) backward equation, its convergence
//! diagnostic, and the penalty functional
//!
//! ```text
//! F_eps(xi) = { |X^xi(0) - a|^2 + max(0, J(xi) - J(xi*) + eps)^2 }^(1/2).
//! ```

use crate::brownian::BrownianDriver;
use crate::bsde::{solve_delayed_bsde, BsdeOptions, BsdeSolution, ModelGenerator, TerminalControl};
use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::exec;
use crate::linearize::{discrete_cost, FrozenCoefficients, LinearGenerator};
use crate::model::CoefficientSet;
use crate::regression::Conditioner;
use crate::sdde::InitialSegment;

/// Solution `(X^, q^)` of the variational equation with terminal value
/// `xi - xi*` and zero initial segment.
#[derive(Debug, Clone)]
pub struct VariationalSolution {
    pub solution: BsdeSolution,
}

impl VariationalSolution {
    pub fn x_hat(&self) -> &PathEnsemble {
        &self.solution.y
    }

    pub fn q_hat(&self) -> &PathEnsemble {
        &self.solution.z
    }
}

pub fn solve_variational<F: FrozenCoefficients + ?Sized>(
    xi: &TerminalControl,
    xi_star: &TerminalControl,
    frozen: &F,
    driver: &BrownianDriver,
    cond: &Conditioner,
    opts: &BsdeOptions,
) -> Result<VariationalSolution> {
    if xi.n_paths() != xi_star.n_paths() || xi.dim() != xi_star.dim() {
        return Err(Error::ShapeMismatch("xi and xi* differ in shape".into()));
    }
    let diff = xi.difference(xi_star);
    let zero = InitialSegment::zeros(driver.grid(), frozen.state_dim());
    let solution = solve_delayed_bsde(&LinearGenerator(frozen), &diff, &zero, driver, cond, opts)?;
    Ok(VariationalSolution { solution })
}

/// `sup_t E|X~(t)|^2` and `E int |q~|^2 dt` for the difference quotients
/// `X~ = (X^rho - X*)/rho - X^`, `q~ = (q^rho - q*)/rho - q^`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationalGap {
    pub rho: f64,
    pub state_gap: f64,
    pub diffusion_gap: f64,
}

/// Inputs shared by repeated nonlinear solves of one model.
pub struct Setting<'a, M: ?Sized> {
    pub model: &'a M,
    pub eta: &'a InitialSegment,
    pub driver: &'a BrownianDriver,
    pub cond: &'a Conditioner,
    pub opts: BsdeOptions,
}

impl<M: CoefficientSet + ?Sized> Setting<'_, M> {
    /// Solves the backward form of the model with terminal value `xi`.
    pub fn solve(&self, xi: &TerminalControl) -> Result<BsdeSolution> {
        solve_delayed_bsde(&ModelGenerator(self.model), xi, self.eta, self.driver, self.cond, &self.opts)
    }
}

pub fn variational_gap<M: CoefficientSet + ?Sized>(
    setting: &Setting<'_, M>,
    rho: f64,
    xi: &TerminalControl,
    xi_star: &TerminalControl,
    star: &BsdeSolution,
    variational: &VariationalSolution,
) -> Result<VariationalGap> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0, 1], got {rho}")));
    }
    let perturbed = setting.solve(&xi_star.interpolate(xi, rho))?;
    let g = *star.grid();
    let big_n = g.steps() as isize;
    let np = star.n_paths();
    let xh = variational.x_hat();
    let qh = variational.q_hat();
    let state = exec::chunked_sum(np, big_n as usize + 1, |r, acc| {
        for p in r {
            for (k, slot) in acc.iter_mut().enumerate() {
                let k = k as isize;
                *slot += quotient_sq(perturbed.y.at(p, k), star.y.at(p, k), xh.at(p, k), rho);
            }
        }
    });
    let state_gap = state.into_iter().map(|s| s / np as f64).fold(0.0, f64::max);
    let diffusion_gap = exec::mean_of(np, |p| {
        (0..big_n).map(|k| quotient_sq(perturbed.z.at(p, k), star.z.at(p, k), qh.at(p, k), rho)).sum::<f64>() * g.dt()
    });
    Ok(VariationalGap { rho, state_gap, diffusion_gap })
}

fn quotient_sq(a: &[f64], b: &[f64], lin: &[f64], rho: f64) -> f64 {
    a.iter().zip(b).zip(lin).map(|((x, y), l)| ((x - y) / rho - l).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyParams {
    pub epsilon: f64,
    pub xi_star: TerminalControl,
    /// The required initial value `a`.
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyReport {
    pub value: f64,
    /// `|mean Y(0) - a|`.
    pub initial_gap: f64,
    /// Largest per-coordinate spread of `Y(0)` over paths.
    pub initial_spread: f64,
    /// `J(xi) - J(xi*)`.
    pub cost_difference: f64,
}

/// `F_eps` with the reference cost `J(xi*)` solved once.
pub struct PenaltyFunctional<'s, 'a, M: ?Sized> {
    setting: &'s Setting<'a, M>,
    epsilon: f64,
    target: Vec<f64>,
    reference_cost: f64,
}

impl<'s, 'a, M: CoefficientSet + ?Sized> PenaltyFunctional<'s, 'a, M> {
    pub fn new(setting: &'s Setting<'a, M>, params: &PenaltyParams) -> Result<Self> {
        if !(params.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", params.epsilon)));
        }
        if params.target.len() != setting.model.state_dim() {
            return Err(Error::ShapeMismatch("target has the wrong dimension".into()));
        }
        let reference = setting.solve(&params.xi_star)?;
        Ok(Self {
            setting,
            epsilon: params.epsilon,
            target: params.target.clone(),
            reference_cost: discrete_cost(setting.model, &reference),
        })
    }

    /// `J(xi*)`.
    pub fn reference_cost(&self) -> f64 {
        self.reference_cost
    }

    pub fn eval(&self, xi: &TerminalControl) -> Result<PenaltyReport> {
        let state = self.setting.solve(xi)?;
        let x0 = state.initial_mean();
        let gap2: f64 = x0.iter().zip(&self.target).map(|(x, a)| (x - a) * (x - a)).sum();
        let cost_difference = discrete_cost(self.setting.model, &state) - self.reference_cost;
        let excess = (cost_difference + self.epsilon).max(0.0);
        Ok(PenaltyReport {
            value: (gap2 + excess * excess).sqrt(),
            initial_gap: gap2.sqrt(),
            initial_spread: state.initial_spread().into_iter().fold(0.0, f64::max),
            cost_difference,
        })
    }
}

/// Evaluates `F_eps(xi)`. The cost part is `J(xi) - J(xi*)`, which reduces
/// to the terminal-cost difference when the running cost vanishes.
pub fn penalty_value<M: CoefficientSet + ?Sized>(
    setting: &Setting<'_, M>,
    xi: &TerminalControl,
    params: &PenaltyParams,
) -> Result<PenaltyReport> {
    PenaltyFunctional::new(setting, params)?.eval(xi)
}
