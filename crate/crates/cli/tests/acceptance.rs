//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::Instant;

use delaymp::bsde::{a_priori_terms, FnGenerator};
use delaymp::linearize::{solve_adjoint, ConstantPartials, Linearization};
use delaymp::models::{lq_closed_form_oracle, lq_gamma, LqModel, LqParams, RamseyModel, RamseyParams, DEFAULT_UTILITY_CAP};
use delaymp::{
    bsde_stability_gap, mp_residual, recover_control, solve_anticipated_sde, solve_delayed_bsde, solve_problem_b,
    solve_sdde, solve_variational, variational_gap, AnticipatedDynamics, AnticipatedOptions, BrownianDriver,
    BsdeOptions, CoefficientSet, Conditioner, ConvexSet, InitialSegment, Node, Partials, PathEnsemble,
    PenaltyFunctional, PenaltyParams, RegressionBasis, Setting, SolveResult, SolverOptions, TerminalControl, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sample(t: f64, delay: f64, n: usize, paths: usize, seed: u64) -> (BrownianDriver, Conditioner) {
    let g = TimeGrid::new(t, delay, n).unwrap();
    let drv = BrownianDriver::sample(g, paths, 1, seed).unwrap();
    let cond = Conditioner::brownian(&drv, RegressionBasis::default()).unwrap();
    (drv, cond)
}

fn lq_params() -> LqParams {
    LqParams::new([0.1, 0.0, 0.2], [0.3, 0.0, 1.0])
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_delaymp")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn report_value(dir: &Path, key: &str) -> Option<String> {
    let text = fs::read_to_string(dir.join("report.txt")).ok()?;
    text.lines().find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
}

// Criterion 1: duality identity under joint refinement.
fn duality() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = Command::new(bin())
        .arg("run")
        .arg(configs().join("convergence-sweep.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    if !status.status.success() {
        return outcome(false, format!("sweep failed: {}", String::from_utf8_lossy(&status.stderr).trim()));
    }
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        rdr.records().map(|r| r.unwrap().iter().map(|v| v.parse::<f64>().unwrap()).collect()).collect();
    // Columns: level, steps, paths, dt, abs_delta1, abs_residual, scale, rel_delta1, rel_residual.
    // The discrete scheme makes delta1 telescope to zero, so it is held to
    // rounding instead of a shrink factor.
    let delta1_zero = rows.iter().all(|r| r[4] <= 1e-12 * r[6]);
    let shrinks: Vec<f64> = rows.windows(2).map(|w| w[0][5] / w[1][5]).collect();
    let refined = rows.windows(2).all(|w| w[1][1] == 2.0 * w[0][1] && w[1][2] == 4.0 * w[0][2]);
    let finest = rows.last().unwrap()[8];
    let pass = rows.len() >= 3 && refined && delta1_zero && shrinks.iter().all(|s| *s >= 1.5) && finest <= 1e-2;
    let max_d1 = rows.iter().map(|r| r[7]).fold(0.0, f64::max);
    outcome(pass, format!("max |delta1|/scale {max_d1:.1e}, residual shrinks {shrinks:.2?}, finest relative residual {finest:.2e}"))
}

struct LqRun {
    drv: BrownianDriver,
    model: LqModel,
    eta: InitialSegment,
    set: ConvexSet,
    result: SolveResult,
}

fn lq_run() -> &'static LqRun {
    static RUN: OnceLock<LqRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let (drv, cond) = sample(1.0, 0.1, 100, 10_000, 2024);
        let model = LqModel::new(lq_params()).unwrap();
        let eta = InitialSegment::constant(drv.grid(), &[1.0]).unwrap();
        let set = ConvexSet::lower_bound(0.0).unwrap();
        let result = solve_problem_b(&model, &set, &eta, &drv, &cond, &SolverOptions::default()).unwrap();
        LqRun { drv, model, eta, set, result }
    })
}

// Criterion 2: closed-form LQ optimum and the per-path necessary condition.
fn lq_optimum() -> Outcome {
    let run = lq_run();
    let r = &run.result;
    let oracle = lq_closed_form_oracle(1.0, &lq_params(), &run.drv).unwrap();
    let err = r.xi_star.mean_square_distance(&oracle).sqrt() / oracle.second_moment().sqrt();
    let mp = mp_residual(&r.xi_star, &r.adjoint, &run.model, &run.set, 20, 7).unwrap();
    let pass = err <= 2e-2 && mp.interior_violation <= 3.0 * mp.std_error && mp.boundary_count() == 0;
    outcome(
        pass,
        format!(
            "rms relative error {err:.2e}, max |m(T) + h0 xi*| {:.2e} vs 3 SE {:.2e}",
            mp.interior_violation,
            3.0 * mp.std_error
        ),
    )
}

fn block_stepping_oracle(delay: f64, blocks: usize, per_block: usize) -> f64 {
    let n = blocks * per_block;
    let dt = delay / per_block as f64;
    let mut y = vec![1.0; n + 1];
    for _ in 0..200 {
        let prev = y.clone();
        for i in (0..n).rev() {
            let delayed = if i >= per_block { prev[i - per_block] } else { 0.0 };
            y[i] = y[i + 1] + delayed * dt;
        }
        if y.iter().zip(&prev).all(|(a, b)| (a - b).abs() < 1e-14) {
            break;
        }
    }
    y[0]
}

fn linear(a: f64, b: f64, c: f64, k: f64) -> impl delaymp::Generator {
    FnGenerator::new(1, 1, move |_: Node, y: &[f64], yd: &[f64], z: &[f64], out: &mut [f64]| {
        out[0] = a * y[0] + b * yd[0] + c * z[0] + k;
    })
}

/// Frozen from the observed battery maxima 5.02 and 5.68.
const STABILITY_C: f64 = 7.5;

// Criterion 3: delayed BSDE oracle, stability constant and Picard count.
fn delayed_bsde() -> Outcome {
    let delay = 0.25;
    let oracle = block_stepping_oracle(delay, 2, 5);
    let (drv, cond) = sample(2.0 * delay, delay, 100, 2_000, 32);
    let xi = TerminalControl::constant(2_000, &[1.0]);
    let phi = InitialSegment::zeros(drv.grid(), 1);
    let f = FnGenerator::new(1, 1, |_: Node, _y: &[f64], yd: &[f64], _z: &[f64], out: &mut [f64]| out[0] = yd[0]);
    let sol = solve_delayed_bsde(&f, &xi, &phi, &drv, &cond, &BsdeOptions::default()).unwrap();
    let y0_err = (sol.initial_mean()[0] - oracle).abs();

    let (drv, cond) = sample(1.0, 0.25, 40, 2_000, 36);
    let phi = InitialSegment::zeros(drv.grid(), 1);
    let xis = [
        TerminalControl::constant(2_000, &[1.0]),
        TerminalControl::from_fn(2_000, 1, |p, o| o[0] = drv.terminal(p)[0]),
        TerminalControl::from_fn(2_000, 1, |p, o| o[0] = 1.0 + 0.5 * drv.terminal(p)[0].powi(2)),
    ];
    let battery =
        [[0.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0], [-0.5, 0.0, 0.0, 0.2], [0.0, 0.8, 0.0, 0.0], [0.3, -0.4, 0.5, 0.1], [
            0.0, 0.2, -0.8, 0.3,
        ]];
    let (mut a_priori, mut stability): (f64, f64) = (0.0, 0.0);
    let mut two_sweeps = true;
    for c in battery {
        let f = linear(c[0], c[1], c[2], c[3]);
        let sols: Vec<_> =
            xis.iter().map(|xi| solve_delayed_bsde(&f, xi, &phi, &drv, &cond, &BsdeOptions::default()).unwrap()).collect();
        for (xi, s) in xis.iter().zip(&sols) {
            let t = a_priori_terms(&f, s, xi);
            a_priori = a_priori.max(t.lhs / t.rhs);
            if c[1] == 0.0 {
                two_sweeps &= s.picard_iterations == 2;
            }
        }
        for i in 0..xis.len() {
            for j in i + 1..xis.len() {
                let gap = bsde_stability_gap(&sols[i], &sols[j], &xis[i], &xis[j]).unwrap();
                stability = stability.max(gap.lhs / gap.rhs);
            }
        }
    }
    let pass = y0_err <= 5e-3 && a_priori <= STABILITY_C && stability <= STABILITY_C && two_sweeps;
    outcome(
        pass,
        format!(
            "|Y(0) - oracle| {y0_err:.1e}, ratios {a_priori:.2} / {stability:.2} within {STABILITY_C}, delay-free generators stop after 2 sweeps: {two_sweeps}"
        ),
    )
}

/// `dm = k E_t[m(t + delay)] dt`.
struct Advanced(f64);

impl AnticipatedDynamics for Advanced {
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn coefficients(&self, _: Node, _m: &[f64], cond: &[f64], drift: &mut [f64], diffusion: &mut [f64]) {
        drift[0] = self.0 * cond[0];
        diffusion[0] = 0.0;
    }
}

// Criterion 4: anticipated SDE fixed point, LQ adjoint moment, final block.
fn anticipated() -> Outcome {
    let (drv, cond) = sample(1.0, 0.5, 100, 500, 41);
    let n = drv.grid().steps() as isize;
    let tail = PathEnsemble::zeros(500, n + 1, n + drv.grid().delay_steps() as isize, 1);
    let sol = solve_anticipated_sde(&Advanced(1.0), &[1.0], &tail, &drv, &cond, &AnticipatedOptions::default()).unwrap();
    let fixed_err = (sol.m.mean_at(n)[0] - 2.0).abs();
    let block_gap = sol.final_block_input_gap.iter().fold(0.0, |a: f64, g| a.max(g.abs()));

    let bar = lq_params().bar();
    let (drv, cond) = sample(1.0, 0.1, 100, 10_000, 43);
    let mut p = Partials::zeros(1, 1);
    p.f_x[0] = bar.a1;
    p.f_q[0] = bar.a3;
    let frozen = ConstantPartials::new(*drv.grid(), 10_000, p);
    let adj = solve_adjoint(&frozen, 0.0, &[1.0], &drv, &cond, &AnticipatedOptions::default()).unwrap();
    let moment_err = (adj.m.mean_at(100)[0] - bar.a1.exp()).abs();
    let se = adj.terminal_std_error();
    let pass = fixed_err <= 2e-2 && moment_err <= 3.0 * se && block_gap == 0.0;
    outcome(
        pass,
        format!("|m(T) - 2| {fixed_err:.1e}, |E m(T) - h1 exp(A1 T)| {moment_err:.1e} vs 3 SE {:.1e}, final block gap {block_gap}", 3.0 * se),
    )
}

/// Backward generator `a x + b x_d + k q^2`.
struct QuadraticControl {
    a: f64,
    b: f64,
    k: f64,
}

impl CoefficientSet for QuadraticControl {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, _t: f64, x: &[f64], xd: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = -(self.a * x[0] + self.b * xd[0] + self.k * u[0] * u[0]);
    }
    fn diffusion(&self, _t: f64, _x: &[f64], _xd: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn terminal_cost(&self, x: &[f64]) -> f64 {
        0.5 * x[0] * x[0]
    }
    fn lipschitz_bound(&self) -> f64 {
        self.a.abs() + self.b.abs() + 1.0
    }
    fn inversion_modulus(&self) -> f64 {
        1.0
    }
    fn diffusion_inverse(&self, _t: f64, _x: &[f64], _xd: &[f64], q: &[f64], out: &mut [f64]) -> f64 {
        out[0] = q[0];
        0.0
    }
}

const RHOS: [f64; 4] = [1.0, 0.3, 0.1, 0.03];

// Criterion 5: difference quotients of the state against the variational solution.
fn variational() -> Outcome {
    let opts = BsdeOptions::default();
    let (drv, cond) = sample(1.0, 0.25, 40, 2_000, 54);
    let eta = InitialSegment::constant(drv.grid(), &[1.0]).unwrap();
    let model = LqModel::new(LqParams::new([0.1, 0.3, 0.2], [0.3, 0.2, 1.0])).unwrap();
    let setting = Setting { model: &model, eta: &eta, driver: &drv, cond: &cond, opts };
    let star_xi = TerminalControl::from_fn(2_000, 1, |p, o| o[0] = (0.2 * drv.terminal(p)[0]).exp());
    let xi = TerminalControl::from_fn(2_000, 1, |p, o| o[0] = drv.terminal(p)[0].abs());
    let star = setting.solve(&star_xi).unwrap();
    let lin = Linearization::new(&model, &star).unwrap();
    let v = solve_variational(&xi, &star_xi, &lin, &drv, &cond, &opts).unwrap();
    let mut floor_ok = true;
    let mut lq_worst: f64 = 0.0;
    for rho in RHOS {
        let gap = variational_gap(&setting, rho, &xi, &star_xi, &star, &v).unwrap();
        let worst = gap.state_gap.sqrt().max(gap.diffusion_gap.sqrt());
        lq_worst = lq_worst.max(worst * rho);
        floor_ok &= worst <= 10.0 * opts.tol / rho;
    }

    let (drv, cond) = sample(1.0, 0.25, 40, 2_000, 55);
    let eta = InitialSegment::constant(drv.grid(), &[0.0]).unwrap();
    let model = QuadraticControl { a: 0.2, b: 0.3, k: 0.5 };
    let setting = Setting { model: &model, eta: &eta, driver: &drv, cond: &cond, opts };
    let star_xi = TerminalControl::from_fn(2_000, 1, |p, o| o[0] = drv.terminal(p)[0].sin());
    let xi = TerminalControl::from_fn(2_000, 1, |p, o| o[0] = 2.0 * drv.terminal(p)[0].cos());
    let star = setting.solve(&star_xi).unwrap();
    let lin = Linearization::new(&model, &star).unwrap();
    let v = solve_variational(&xi, &star_xi, &lin, &drv, &cond, &opts).unwrap();
    let gaps: Vec<_> = RHOS.iter().map(|&rho| variational_gap(&setting, rho, &xi, &star_xi, &star, &v).unwrap()).collect();
    let monotone =
        gaps.windows(2).all(|w| w[1].state_gap < w[0].state_gap && w[1].diffusion_gap < w[0].diffusion_gap);
    let state: Vec<String> = gaps.iter().map(|g| format!("{:.1e}", g.state_gap)).collect();
    outcome(
        floor_ok && monotone,
        format!(
            "LQ rho * gap at most {lq_worst:.1e}, nonlinear state gaps [{}] decreasing: {monotone}",
            state.join(", ")
        ),
    )
}

// Criterion 6: the penalty functional at a certified feasible optimum.
fn penalty() -> Outcome {
    let run = lq_run();
    let r = &run.result;
    let (_, cond) = sample(1.0, 0.1, 100, 10_000, 2024);
    let setting = Setting { model: &run.model, eta: &run.eta, driver: &run.drv, cond: &cond, opts: BsdeOptions::default() };
    let epsilon = 0.05;
    let params = PenaltyParams { epsilon, xi_star: r.xi_star.clone(), target: vec![1.0] };
    let f = PenaltyFunctional::new(&setting, &params).unwrap();
    let at_star = f.eval(&r.xi_star).unwrap().value;
    // sqrt(eps^2 + gap^2) - eps <= gap, and the gap is the feasibility tolerance.
    let tol = r.constraint_gap + BsdeOptions::default().tol;
    let at_star_ok = (at_star - epsilon).abs() <= tol;
    let mut rng = ChaCha8Rng::seed_from_u64(57);
    let mut smallest = f64::INFINITY;
    for _ in 0..100 {
        let (c0, c1, c2) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
        let probe = TerminalControl::from_fn(run.drv.n_paths(), 1, |p, o| {
            let w = run.drv.terminal(p)[0];
            o[0] = r.xi_star.at(p)[0] + c0 + c1 * w + c2 * w * w
        });
        smallest = smallest.min(f.eval(&probe).unwrap().value);
    }
    outcome(
        at_star_ok && smallest > 0.0,
        format!("F(xi*) - eps = {:.1e} within {tol:.1e}, smallest F on 100 probes {smallest:.2e}", at_star - epsilon),
    )
}

// Criterion 7: complementarity against the per-path quadratic-program oracle.
fn complementarity() -> Outcome {
    let params = lq_params();
    let (drv, cond) = sample(1.0, 0.1, 100, 10_000, 2025);
    let model = LqModel::new(params).unwrap();
    let eta = InitialSegment::constant(drv.grid(), &[1.0]).unwrap();
    let set = ConvexSet::lower_bound(1.0).unwrap();
    let r = solve_problem_b(&model, &set, &eta, &drv, &cond, &SolverOptions::default()).unwrap();
    // Minimizing E xi^2 / 2 subject to E[Gamma xi] = 1 and xi >= 1 gives
    // xi = max(1, nu Gamma) with nu fixed by the constraint.
    let gamma = lq_gamma(&params, &drv);
    let mean_x0 = |nu: f64| gamma.iter().map(|g| g * (nu * g).max(1.0)).sum::<f64>() / gamma.len() as f64;
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_x0(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    let mp = mp_residual(&r.xi_star, &r.adjoint, &model, &set, 20, 7).unwrap();
    let np = drv.n_paths();
    let agree = (0..np).filter(|&p| mp.boundary_mask[p] == (nu * gamma[p] <= 1.0)).count() as f64 / np as f64;
    let clamped = mp.boundary_count() as f64 / np as f64;
    let se = mp.std_error;
    let one_sided = mp.boundary_violation.is_some_and(|v| v >= -3.0 * se);
    let pass = agree >= 0.99 && mp.interior_violation <= 3.0 * se && one_sided && clamped > 0.05 && clamped < 0.95;
    outcome(
        pass,
        format!(
            "clamped {:.1}%, agreement {:.2}%, free |g| {:.1e} and clamped min {:.1e} vs 3 SE {:.1e}",
            100.0 * clamped,
            100.0 * agree,
            mp.interior_violation,
            mp.boundary_violation.unwrap_or(f64::NAN),
            3.0 * se
        ),
    )
}

fn replay_rms<M: CoefficientSet + ?Sized>(model: &M, eta: &InitialSegment, drv: &BrownianDriver, r: &SolveResult) -> f64 {
    let u = recover_control(&r.state, model).unwrap();
    let x = solve_sdde(model, eta, &u, drv).unwrap();
    let end = drv.grid().steps() as isize;
    let np = drv.n_paths() as f64;
    (x.column_slice(end).iter().zip(r.xi_star.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / np).sqrt()
}

// Criterion 8: recovered controls reproduce xi* through the forward solver.
fn round_trip() -> Outcome {
    let run = lq_run();
    let tol = |r: &SolveResult| BsdeOptions::default().tol + r.state.consistency_defect;
    let lq = replay_rms(&run.model, &run.eta, &run.drv, &run.result);
    let lq_tol = tol(&run.result);

    let (drv, cond) = sample(1.0, 0.1, 20, 1_000, 17);
    let set = ConvexSet::boxed(vec![0.5], vec![2.0]).unwrap();
    let model = RamseyModel::new(RamseyParams {
        k_prod: 0.5,
        labor: 1.0,
        sigma0: 0.1,
        sigma1: 1.0,
        r: 0.05,
        gamma: 0.5,
        admissible: set.clone(),
        utility_cap: DEFAULT_UTILITY_CAP,
    })
    .unwrap();
    let eta = InitialSegment::constant(drv.grid(), &[1.0]).unwrap();
    let opts = SolverOptions { max_inner: 30, grad_tol: 1e-5, ..SolverOptions::default() };
    let r = solve_problem_b(&model, &set, &eta, &drv, &cond, &opts).unwrap();
    let ramsey = replay_rms(&model, &eta, &drv, &r);
    let ramsey_tol = tol(&r);
    outcome(
        lq <= 10.0 * lq_tol && ramsey <= 10.0 * ramsey_tol,
        format!("LQ rms {lq:.2e} vs 10 x {lq_tol:.2e}, Ramsey rms {ramsey:.2e} vs 10 x {ramsey_tol:.2e}"),
    )
}

fn shrunk(name: &str) -> toml::Table {
    let mut t: toml::Table = toml::from_str(&fs::read_to_string(configs().join(name)).unwrap()).unwrap();
    let (steps, paths) = if name == "convergence-sweep.toml" { (8, 200) } else { (20, 400) };
    t["grid"].as_table_mut().unwrap().insert("steps".into(), toml::Value::Integer(steps));
    t["monte_carlo"].as_table_mut().unwrap().insert("paths".into(), toml::Value::Integer(paths));
    t
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv") || p.file_name().is_some_and(|n| n == "report.txt"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

// Criterion 9: manifest reruns are byte-identical across thread counts.
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut names: Vec<String> = fs::read_dir(configs())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".toml"))
        .collect();
    names.sort();
    let mut failures = Vec::new();
    let mut compared = 0;
    for name in &names {
        let dir = tmp.path().join(name.trim_end_matches(".toml"));
        fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("config.toml");
        fs::write(&cfg, toml::to_string(&shrunk(name)).unwrap()).unwrap();
        let first = Command::new(bin()).arg("run").arg(&cfg).args(["--threads", "1", "--out"]).arg(dir.join("a")).output().unwrap();
        let second = Command::new(bin())
            .arg("run")
            .arg(dir.join("a/manifest.toml"))
            .args(["--threads", "4", "--out"])
            .arg(dir.join("b"))
            .output()
            .unwrap();
        if first.status.code() != Some(0) || second.status.code() != Some(0) {
            failures.push(format!("{name} exited {:?}/{:?}", first.status.code(), second.status.code()));
            continue;
        }
        let (a, b) = (artifacts(&dir.join("a")), artifacts(&dir.join("b")));
        if a.is_empty() || a != b {
            failures.push(format!("{name} differs"));
        }
        compared += a.len();
        if name == "lq-demo.toml" && report_value(&dir.join("a"), "oracle_pass").is_none() {
            failures.push("lq-demo report incomplete".into());
        }
    }
    let detail = if failures.is_empty() {
        format!("{} experiments, {compared} files identical at 1 and 4 threads", names.len())
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "duality identity", duality),
        (2, "closed-form LQ optimum", lq_optimum),
        (3, "delayed BSDE", delayed_bsde),
        (4, "anticipated SDE", anticipated),
        (5, "variational equation", variational),
        (6, "penalty functional", penalty),
        (7, "complementarity", complementarity),
        (8, "control round trip", round_trip),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        let start = Instant::now();
        let o = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !o.pass {
            failed += 1;
        }
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {n} {name}: {} ({}; {secs:.0} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
