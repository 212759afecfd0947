//! The named experiments.

use delaymp::linearize::{discrete_cost, solve_adjoint, Linearization};
use delaymp::models::{lq_closed_form_oracle, LqModel, LqParams, RamseyModel, RamseyParams, DEFAULT_UTILITY_CAP};
use delaymp::sdde::solve_sdde;
use delaymp::{
    contraction_diagnostic, duality_report, lipschitz_probe, mp_residual, recover_control, solve_variational,
    BrownianDriver, BsdeOptions, CoefficientSet, Conditioner, ConvexSet, DualityReport, FeatureSpec, InitialSegment,
    Optimizer, PathEnsemble, RegressionBasis, Setting, SolveResult, SolverOptions, TerminalControl, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{expression, ConfigError, ConstraintConfig, ExperimentConfig, Kind, ModelConfig};
use crate::expr::{Expr, Var, Vars};
use crate::model::ExprModel;
use crate::output::{num, Artifacts, Report, Table};

/// Stream offset for probe coefficients, kept apart from the path streams.
const PROBE_STREAM: u64 = 0x5eed_0f_9e0b;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{location}: {error}")]
    Solver { location: &'static str, error: delaymp::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 3,
            RunError::Solver { .. } => 2,
        }
    }

    pub fn location(&self) -> Option<&'static str> {
        match self {
            RunError::Config(_) => None,
            RunError::Solver { location, .. } => Some(location),
        }
    }
}

type RunResult<T> = Result<T, RunError>;

trait At<T> {
    fn at(self, location: &'static str) -> RunResult<T>;
}

impl<T> At<T> for delaymp::Result<T> {
    fn at(self, location: &'static str) -> RunResult<T> {
        self.map_err(|error| RunError::Solver { location, error })
    }
}

fn setup<T>(r: delaymp::Result<T>) -> RunResult<T> {
    r.map_err(|e| RunError::Config(ConfigError::Model(e)))
}

/// Grid, Brownian paths and conditional-expectation operator.
pub struct Sample {
    pub driver: BrownianDriver,
    pub cond: Conditioner,
}

impl Sample {
    fn new(cfg: &ExperimentConfig, steps: usize, paths: usize) -> RunResult<Self> {
        let g = setup(TimeGrid::new(cfg.grid.horizon, cfg.grid.delay, steps))?;
        let driver = setup(BrownianDriver::sample(g, paths, 1, cfg.monte_carlo.seed))?;
        let basis = RegressionBasis::new(cfg.monte_carlo.basis_degree, FeatureSpec::Both);
        let cond = setup(Conditioner::brownian(&driver, basis))?;
        Ok(Self { driver, cond })
    }

    fn grid(&self) -> &TimeGrid {
        self.driver.grid()
    }
}

fn build_model(cfg: &ExperimentConfig) -> RunResult<Box<dyn CoefficientSet>> {
    Ok(match cfg.model()? {
        ModelConfig::Lq { a, b } => Box::new(setup(LqModel::new(LqParams::new(*a, *b)))?),
        ModelConfig::Ramsey { .. } => Box::new(setup(RamseyModel::new(ramsey_params(cfg)?))?),
        ModelConfig::Expression { drift, diffusion, running_cost, terminal_cost, inverse, lipschitz, inversion_modulus } => {
            Box::new(ExprModel::new(
                drift,
                diffusion,
                running_cost.as_deref(),
                terminal_cost,
                inverse.as_deref(),
                *lipschitz,
                *inversion_modulus,
            )?)
        }
    })
}

fn ramsey_params(cfg: &ExperimentConfig) -> RunResult<RamseyParams> {
    match cfg.model()? {
        ModelConfig::Ramsey { k_prod, labor, sigma0, sigma1, r, gamma, lower, upper, utility_cap } => Ok(RamseyParams {
            k_prod: *k_prod,
            labor: *labor,
            sigma0: *sigma0,
            sigma1: *sigma1,
            r: *r,
            gamma: *gamma,
            admissible: setup(ConvexSet::boxed(vec![*lower], vec![*upper]))?,
            utility_cap: utility_cap.unwrap_or(DEFAULT_UTILITY_CAP),
        }),
        _ => Err(ConfigError::Invalid("expected a ramsey model".into()).into()),
    }
}

fn constraint_set(c: &ConstraintConfig) -> RunResult<ConvexSet> {
    setup(match c {
        ConstraintConfig::Whole => Ok(ConvexSet::whole(1)),
        ConstraintConfig::Lower { lower } => ConvexSet::lower_bound(*lower),
        ConstraintConfig::Box { lower, upper } => ConvexSet::boxed(vec![*lower], vec![*upper]),
    })
}

fn initial_segment(cfg: &ExperimentConfig, g: &TimeGrid) -> RunResult<InitialSegment> {
    setup(InitialSegment::constant(g, &[cfg.initial()?.value]))
}

fn terminal_expr(cfg: &ExperimentConfig) -> RunResult<Expr> {
    Ok(expression(&cfg.terminal()?.xi, &[Var::T, Var::X])?)
}

/// `xi(W_T)` per path.
fn terminal_values(e: &Expr, driver: &BrownianDriver) -> RunResult<TerminalControl> {
    let t = driver.grid().horizon();
    let xi = TerminalControl::from_fn(driver.n_paths(), 1, |p, out| {
        out[0] = e.eval(&Vars { t, x: driver.terminal(p)[0], ..Vars::default() })
    });
    if let Some(p) = xi.values().iter().position(|v| !v.is_finite()) {
        return Err(ConfigError::Invalid(format!("terminal expression is not finite on path {p}")).into());
    }
    Ok(xi)
}

fn bsde_options(cfg: &ExperimentConfig) -> BsdeOptions {
    let d = BsdeOptions::default();
    BsdeOptions { tol: cfg.solver.bsde_tol.unwrap_or(d.tol), max_iter: cfg.solver.bsde_max_iter.unwrap_or(d.max_iter) }
}

fn solver_options(cfg: &ExperimentConfig) -> RunResult<SolverOptions> {
    let s = &cfg.solver;
    let d = SolverOptions::default();
    let mut adjoint = d.adjoint;
    adjoint.tol = s.adjoint_tol.unwrap_or(adjoint.tol);
    adjoint.max_iter = s.adjoint_max_iter.unwrap_or(adjoint.max_iter);
    let opts = SolverOptions {
        initial_penalty: s.initial_penalty.unwrap_or(d.initial_penalty),
        penalty_growth: s.penalty_growth.unwrap_or(d.penalty_growth),
        stages: s.stages.unwrap_or(d.stages),
        max_stages: s.max_stages.unwrap_or(d.max_stages),
        max_inner: s.max_inner.unwrap_or(d.max_inner),
        grad_tol: s.grad_tol.unwrap_or(d.grad_tol),
        feasibility_tol: s.feasibility_tol.unwrap_or(d.feasibility_tol),
        initial_step: s.initial_step.unwrap_or(d.initial_step),
        bsde: bsde_options(cfg),
        adjoint,
        ..d
    };
    setup(opts.validate())?;
    Ok(opts)
}

fn moments_table(name: &str, label: &str, e: &PathEnsemble, g: &TimeGrid, first: isize, last: isize) -> Table {
    let (mean, std) = (format!("mean_{label}"), format!("std_{label}"));
    let mut t = Table::new(name, &["index", "t", &mean, &std]);
    for k in first..=last {
        t.push(vec![k.to_string(), num(g.time(k)), num(e.mean_at(k)[0]), num(e.std_at(k)[0])]);
    }
    t
}

pub fn run(cfg: &ExperimentConfig) -> (Artifacts, RunResult<()>) {
    let mut art = Artifacts::default();
    let r = match cfg.kind {
        Kind::SimulateSdde => simulate_sdde(cfg, &mut art),
        Kind::SolveBsde => solve_bsde(cfg, &mut art),
        Kind::SolveAdjoint => solve_adjoint_kind(cfg, &mut art),
        Kind::CheckDuality => check_duality(cfg, &mut art),
        Kind::Optimize => optimize(cfg, &mut art),
        Kind::LqDemo => lq_demo(cfg, &mut art),
        Kind::RamseyDemo => ramsey_demo(cfg, &mut art),
        Kind::ConvergenceSweep => convergence_sweep(cfg, &mut art),
    };
    (art, r)
}

fn simulate_sdde(cfg: &ExperimentConfig, art: &mut Artifacts) -> RunResult<()> {
    let model = build_model(cfg)?;
    let s = Sample::new(cfg, cfg.grid.steps, cfg.monte_carlo.paths)?;
    let g = *s.grid();
    let eta = initial_segment(cfg, &g)?;
    let control = expression(&cfg.control()?.u, &[Var::T, Var::X])?;
    let w = s.driver.brownian_path();
    let big_n = g.steps() as isize;
    let u = PathEnsemble::from_fn(s.driver.n_paths(), 0, big_n - 1, 1, |p, k, out| {
        out[0] = control.eval(&Vars { t: g.time(k), x: w.at(p, k)[0], ..Vars::default() })
    });
    let x = solve_sdde(model.as_ref(), &eta, &u, &s.driver).at("simulate-sdde: forward Euler")?;
    art.table(moments_table("moments", "x", &x, &g, 0, big_n));
    let mut term = Table::new("terminal", &["path_id", "x_terminal"]);
    for p in 0..s.driver.n_paths() {
        term.push(vec![p.to_string(), num(x.at(p, big_n)[0])]);
    }
    art.table(term);
    let probe = lipschitz_probe(model.as_ref(), 256, cfg.monte_carlo.seed).at("simulate-sdde: coefficient probe")?;
    let r = &mut art.report;
    r.put_num("mean_x_terminal", x.mean_at(big_n)[0]);
    r.put_num("std_x_terminal", x.std_at(big_n)[0]);
    r.put_num("drift_lipschitz_ratio", probe.drift_ratio);
    r.put_num("diffusion_lipschitz_ratio", probe.diffusion_ratio);
    r.put_num("inversion_ratio", probe.inversion_ratio);
    r.put("inversion_violated", probe.inversion_violated);
    Ok(())
}

fn solve_bsde(cfg: &ExperimentConfig, art: &mut Artifacts) -> RunResult<()> {
    let model = build_model(cfg)?;
    let s = Sample::new(cfg, cfg.grid.steps, cfg.monte_carlo.paths)?;
    let g = *s.grid();
    let eta = initial_segment(cfg, &g)?;
    let xi = terminal_values(&terminal_expr(cfg)?, &s.driver)?;
    let setting = Setting { model: model.as_ref(), eta: &eta, driver: &s.driver, cond: &s.cond, opts: bsde_options(cfg) };
    let state = setting.solve(&xi).at("solve-bsde: Picard iteration")?;
    let big_n = g.steps() as isize;
    art.table(moments_table("state", "x", &state.y, &g, 0, big_n));
    art.table(moments_table("diffusion", "q", &state.z, &g, 0, big_n - 1));
    let r = &mut art.report;
    let a = cfg.initial()?.value;
    r.put_num("x0_mean", state.initial_mean()[0]);
    r.put_num("x0_spread", state.initial_spread()[0]);
    r.put_num("initial_gap", (state.initial_mean()[0] - a).abs());
    r.put_num("cost", discrete_cost(model.as_ref(), &state));
    r.put("picard_iterations", state.picard_iterations);
    r.put_num("picard_residual", state.picard_residual);
    r.put_num("consistency_defect", state.consistency_defect);
    Ok(())
}

fn solve_adjoint_kind(cfg: &ExperimentConfig, art: &mut Artifacts) -> RunResult<()> {
    let model = build_model(cfg)?;
    let s = Sample::new(cfg, cfg.grid.steps, cfg.monte_carlo.paths)?;
    let g = *s.grid();
    let eta = initial_segment(cfg, &g)?;
    let xi = terminal_values(&terminal_expr(cfg)?, &s.driver)?;
    let setting = Setting { model: model.as_ref(), eta: &eta, driver: &s.driver, cond: &s.cond, opts: bsde_options(cfg) };
    let state = setting.solve(&xi).at("solve-adjoint: state equation")?;
    let lin = Linearization::new(model.as_ref(), &state).at("solve-adjoint: linearization")?;
    let h = cfg.adjoint.clone().unwrap_or_default();
    let opts = solver_options(cfg)?.adjoint;
    let adj = solve_adjoint(&lin, h.h0, &[h.h1], &s.driver, &s.cond, &opts).at("solve-adjoint: anticipated equation")?;
    let big_n = g.steps() as isize;
    art.table(moments_table("adjoint", "m", &adj.m, &g, 0, big_n));
    let r = &mut art.report;
    r.put_num("m_terminal_mean", adj.m.mean_at(big_n)[0]);
    r.put_num("m_terminal_std_error", adj.terminal_std_error());
    r.put("picard_iterations", adj.picard_iterations);
    r.put_num("picard_residual", adj.picard_residual);
    if let Ok(c) = contraction_diagnostic(&adj.gap_history) {
        r.put_num("contraction_rate", c.rate);
    }
    r.put_num("final_block_input_gap", adj.final_block_input_gap.iter().fold(0.0, |a: f64, b| a.max(*b)));
    Ok(())
}

/// Probe coefficients `(c0, c1)` drawn from the config seed.
fn probe_coefficients(cfg: &ExperimentConfig) -> Vec<(f64, f64)> {
    let p = cfg.probes.clone().unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.monte_carlo.seed ^ PROBE_STREAM);
    (0..p.count)
        .map(|_| (rng.random_range(-p.amplitude..=p.amplitude), rng.random_range(-p.amplitude..=p.amplitude)))
        .collect()
}

/// Duality terms at `xi` for every probe `xi + c0 + c1 W_T`.
fn duality_at(
    cfg: &ExperimentConfig,
    model: &dyn CoefficientSet,
    s: &Sample,
    probes: &[(f64, f64)],
) -> RunResult<Vec<DualityReport>> {
    let g = *s.grid();
    let eta = initial_segment(cfg, &g)?;
    let xi = terminal_values(&terminal_expr(cfg)?, &s.driver)?;
    let opts = bsde_options(cfg);
    let setting = Setting { model, eta: &eta, driver: &s.driver, cond: &s.cond, opts };
    let state = setting.solve(&xi).at("check-duality: state equation")?;
    let lin = Linearization::new(model, &state).at("check-duality: linearization")?;
    let h = cfg.adjoint.clone().unwrap_or_default();
    let adj = solve_adjoint(&lin, h.h0, &[h.h1], &s.driver, &s.cond, &solver_options(cfg)?.adjoint)
        .at("check-duality: adjoint equation")?;
    probes
        .iter()
        .map(|&(c0, c1)| {
            let probe =
                TerminalControl::from_fn(s.driver.n_paths(), 1, |p, o| o[0] = xi.at(p)[0] + c0 + c1 * s.driver.terminal(p)[0]);
            let var = solve_variational(&probe, &xi, &lin, &s.driver, &s.cond, &opts).at("check-duality: variational equation")?;
            duality_report(&var, &adj, &lin).at("check-duality: quadrature")
        })
        .collect()
}

fn check_duality(cfg: &ExperimentConfig, art: &mut Artifacts) -> RunResult<()> {
    let model = build_model(cfg)?;
    let s = Sample::new(cfg, cfg.grid.steps, cfg.monte_carlo.paths)?;
    let probes = probe_coefficients(cfg);
    let reports = duality_at(cfg, model.as_ref(), &s, &probes)?;
    let mut t = Table::new("duality", &["probe", "c0", "c1", "lhs", "delta1", "delta2", "residual", "scale"]);
    let (mut d1, mut res): (f64, f64) = (0.0, 0.0);
    for (j, (rep, (c0, c1))) in reports.iter().zip(&probes).enumerate() {
        t.push(vec![
            j.to_string(),
            num(*c0),
            num(*c1),
            num(rep.lhs),
            num(rep.delta1),
            num(rep.delta2),
            num(rep.residual),
            num(rep.scale),
        ]);
        d1 = d1.max(rep.delta1.abs() / rep.scale);
        res = res.max(rep.residual.abs() / rep.scale);
    }
    art.table(t);
    art.report.put("probes", probes.len());
    art.report.put_num("max_relative_delta1", d1);
    art.report.put_num("max_relative_residual", res);
    Ok(())
}

fn convergence_sweep(cfg: &ExperimentConfig, art: &mut Artifacts) -> RunResult<()> {
    let model = build_model(cfg)?;
    let sweep = cfg.sweep.clone().unwrap_or_default();
    let probes = probe_coefficients(cfg);
    let mut t = Table::new(
        "sweep",
        &["level", "steps", "paths", "dt", "abs_delta1", "abs_residual", "scale", "rel_delta1", "rel_residual"],
    );
    let mut rows: Vec<[f64; 2]> = Vec::new();
    for level in 0..sweep.levels {
        let steps = cfg.grid.steps << level;
        let paths = cfg.monte_carlo.paths * sweep.path_factor.pow(level as u32);
        let s = Sample::new(cfg, steps, paths)?;
        let reports = duality_at(cfg, model.as_ref(), &s, &probes)?;
        let max = |f: &dyn Fn(&DualityReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
        let d1 = max(&|r| r.delta1.abs());
        let res = max(&|r| r.residual.abs());
        let scale = reports.iter().map(|r| r.scale).fold(f64::INFINITY, f64::min);
        t.push(vec![
            level.to_string(),
            steps.to_string(),
            paths.to_string(),
            num(s.grid().dt()),
            num(d1),
            num(res),
            num(scale),
            num(max(&|r| r.delta1.abs() / r.scale)),
            num(max(&|r| r.residual.abs() / r.scale)),
        ]);
        rows.push([d1, res]);
    }
    art.table(t);
    let r = &mut art.report;
    r.put("levels", sweep.levels);
    for (l, w) in rows.windows(2).enumerate() {
        r.put_num(&format!("delta1_shrink_{}_{}", l, l + 1), w[0][0] / w[1][0]);
        r.put_num(&format!("residual_shrink_{}_{}", l, l + 1), w[0][1] / w[1][1]);
    }
    Ok(())
}

fn history_table(history: &[delaymp::HistoryRow]) -> Table {
    let mut t = Table::new("history", &["iteration", "lambda", "objective", "constraint_gap", "step_size", "grad_rms"]);
    for h in history {
        t.push(vec![
            h.iteration.to_string(),
            num(h.lambda),
            num(h.objective),
            num(h.constraint_gap),
            num(h.step_size),
            num(h.grad_rms),
        ]);
    }
    t
}

/// Runs the optimizer, writing the history even when it fails.
fn run_optimizer(
    cfg: &ExperimentConfig,
    model: &dyn CoefficientSet,
    set: &ConvexSet,
    s: &Sample,
    art: &mut Artifacts,
) -> RunResult<(SolveResult, InitialSegment)> {
    let eta = initial_segment(cfg, s.grid())?;
    let opts = solver_options(cfg)?;
    let mut opt = setup(Optimizer::new(model, set, &eta, &s.driver, &s.cond, opts))?;
    let result = opt.run(None);
    art.table(history_table(opt.history()));
    let result = result.at("optimize: penalty iteration")?;
    Ok((result, eta))
}

/// Solution summary, maximum-principle check and control round trip.
fn report_solution(
    cfg: &ExperimentConfig,
    model: &dyn CoefficientSet,
    set: &ConvexSet,
    s: &Sample,
    eta: &InitialSegment,
    res: &SolveResult,
    art: &mut Artifacts,
) -> RunResult<()> {
    let probes = cfg.solver.mp_probes.unwrap_or(20);
    let mp = mp_residual(&res.xi_star, &res.adjoint, model, set, probes, cfg.monte_carlo.seed).at("verify: maximum principle")?;
    let u = recover_control(&res.state, model).at("verify: control recovery")?;
    let x = solve_sdde(model, eta, &u, &s.driver).at("verify: forward replay")?;
    let big_n = s.grid().steps() as isize;
    let np = s.driver.n_paths();
    let rms = (x.column_slice(big_n).iter().zip(res.xi_star.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / np as f64)
        .sqrt();
    let tolerance = bsde_options(cfg).tol + res.state.consistency_defect;

    let mut t = Table::new("terminal", &["path_id", "xi_star", "x_replayed", "g", "on_boundary"]);
    for p in 0..np {
        t.push(vec![
            p.to_string(),
            num(res.xi_star.at(p)[0]),
            num(x.at(p, big_n)[0]),
            num(mp.g_at(p)[0]),
            (mp.boundary_mask[p] as u8).to_string(),
        ]);
    }
    art.table(t);

    let se = mp.std_error;
    let r: &mut Report = &mut art.report;
    r.put_num("objective", res.objective);
    r.put_num("constraint_gap", res.constraint_gap);
    r.put_num("h0", res.h0);
    r.put_num("h1", res.h1[0]);
    r.put("abnormal", res.abnormal);
    r.put("iterations", res.iterations);
    r.put("stages", res.stages);
    r.put_num("final_penalty", res.final_penalty);
    r.put("boundary_paths", mp.boundary_count());
    r.put_num("mp_std_error", se);
    r.put_num("mp_interior_violation", mp.interior_violation);
    match mp.boundary_violation {
        Some(v) => r.put_num("mp_boundary_violation", v),
        None => r.put("mp_boundary_violation", "none"),
    }
    let mp_ok = mp.interior_violation <= 3.0 * se && mp.boundary_violation.is_none_or(|v| v >= -3.0 * se);
    r.put("mp_pass", mp_ok);
    r.put_num("consistency_defect", res.state.consistency_defect);
    r.put_num("round_trip_rms", rms);
    r.put_num("round_trip_tolerance", tolerance);
    r.put("round_trip_pass", rms <= 10.0 * tolerance);
    Ok(())
}

fn optimize(cfg: &ExperimentConfig, art: &mut Artifacts) -> RunResult<()> {
    let model = build_model(cfg)?;
    let set = constraint_set(cfg.constraint()?)?;
    let s = Sample::new(cfg, cfg.grid.steps, cfg.monte_carlo.paths)?;
    let (res, eta) = run_optimizer(cfg, model.as_ref(), &set, &s, art)?;
    report_solution(cfg, model.as_ref(), &set, &s, &eta, &res, art)
}

fn lq_demo(cfg: &ExperimentConfig, art: &mut Artifacts) -> RunResult<()> {
    let ModelConfig::Lq { a, b } = cfg.model()? else {
        return Err(ConfigError::Invalid("lq-demo needs an lq model".into()).into());
    };
    let params = LqParams::new(*a, *b);
    let model = setup(LqModel::new(params))?;
    let set = match &cfg.constraint {
        Some(c) => constraint_set(c)?,
        None => setup(ConvexSet::lower_bound(0.0))?,
    };
    let s = Sample::new(cfg, cfg.grid.steps, cfg.monte_carlo.paths)?;
    let target = cfg.initial()?.value;
    let oracle = setup(lq_closed_form_oracle(target, &params, &s.driver))?;
    if oracle.values().iter().any(|v| !set.contains(&[*v])) {
        return Err(ConfigError::Invalid("the closed-form optimum leaves the constraint set".into()).into());
    }
    let (res, eta) = run_optimizer(cfg, &model, &set, &s, art)?;
    let mut t = Table::new("lq_demo", &["path_id", "xi_star", "xi_oracle", "abs_err"]);
    for p in 0..s.driver.n_paths() {
        let (x, o) = (res.xi_star.at(p)[0], oracle.at(p)[0]);
        t.push(vec![p.to_string(), num(x), num(o), num((x - o).abs())]);
    }
    art.table(t);
    let rel = res.xi_star.mean_square_distance(&oracle).sqrt() / oracle.second_moment().sqrt();
    art.report.put_num("rms_relative_error", rel);
    art.report.put("oracle_pass", rel <= 2e-2);
    report_solution(cfg, &model, &set, &s, &eta, &res, art)
}

fn ramsey_demo(cfg: &ExperimentConfig, art: &mut Artifacts) -> RunResult<()> {
    let params = ramsey_params(cfg)?;
    let set = params.admissible.clone();
    let model = setup(RamseyModel::new(params))?;
    let s = Sample::new(cfg, cfg.grid.steps, cfg.monte_carlo.paths)?;
    let (res, eta) = run_optimizer(cfg, &model, &set, &s, art)?;
    report_solution(cfg, &model, &set, &s, &eta, &res, art)?;
    art.report.put("utility_cap_reached", model.cap_reached());
    Ok(())
}
