use delaymp::linearize::{ConstantPartials, Linearization};
use delaymp::models::{LqModel, LqParams};
use delaymp::{
    solve_variational, variational_gap, BrownianDriver, BsdeOptions, CoefficientSet, Conditioner, InitialSegment,
    Partials, PenaltyFunctional, PenaltyParams, RegressionBasis, Setting, TerminalControl, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(t: f64, delay: f64, n: usize, paths: usize, seed: u64) -> (BrownianDriver, Conditioner) {
    let g = TimeGrid::new(t, delay, n).unwrap();
    let drv = BrownianDriver::sample(g, paths, 1, seed).unwrap();
    let cond = Conditioner::brownian(&drv, RegressionBasis::default()).unwrap();
    (drv, cond)
}

/// `dX = -(a X + b X(t - delay) + k u^2) dt + u dW`, so the backward
/// generator is `a x + b x_d + k q^2`. Partials come from central differences.
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

fn constant_partials(drv: &BrownianDriver, f_x: f64, f_xd: f64, f_q: f64) -> ConstantPartials {
    let mut p = Partials::zeros(1, 1);
    p.f_x[0] = f_x;
    p.f_xd[0] = f_xd;
    p.f_q[0] = f_q;
    ConstantPartials::new(*drv.grid(), drv.n_paths(), p)
}

#[test]
fn zero_variation_is_zero() {
    let (drv, cond) = setup(1.0, 0.25, 20, 500, 51);
    let xi = TerminalControl::from_fn(500, 1, |p, o| o[0] = drv.terminal(p)[0]);
    let frozen = constant_partials(&drv, 0.3, 0.2, -0.5);
    let v = solve_variational(&xi, &xi, &frozen, &drv, &cond, &BsdeOptions::default()).unwrap();
    assert!(v.x_hat().as_slice().iter().all(|x| x.abs() <= 1e-10));
    assert!(v.q_hat().as_slice().iter().all(|x| x.abs() <= 1e-10));
}

// With every frozen coefficient zero, X^ is the conditional expectation of
// the constant c, and q^ is the regression estimate of c E[dW | F_t] / dt,
// which is sample noise of order c sqrt(k / (n dt)) for k basis functions.
#[test]
fn constant_variation_is_a_martingale() {
    let (drv, cond) = setup(1.0, 0.25, 20, 4_000, 52);
    let xi = TerminalControl::from_fn(4_000, 1, |p, o| o[0] = 1.0 + drv.terminal(p)[0]);
    let shifted = TerminalControl::from_fn(4_000, 1, |p, o| o[0] = xi.at(p)[0] - 0.4);
    let frozen = constant_partials(&drv, 0.0, 0.0, 0.0);
    let v = solve_variational(&xi, &shifted, &frozen, &drv, &cond, &BsdeOptions::default()).unwrap();
    for k in 0..=20 {
        assert!(v.x_hat().column_slice(k).iter().all(|x| (x - 0.4).abs() <= 1e-10), "index {k}");
    }
    let band = 0.4 * (6.0 / (4_000.0 * drv.grid().dt())).sqrt();
    for k in 0..20 {
        let rms = (v.q_hat().column_slice(k).iter().map(|q| q * q).sum::<f64>() / 4_000.0).sqrt();
        assert!(rms <= 3.0 * band, "step {k}: rms q^ {rms}, band {band}");
    }
}

#[test]
fn frozen_growth_rate() {
    let (drv, cond) = setup(1.0, 0.1, 100, 10_000, 53);
    let xi = TerminalControl::constant(10_000, &[1.0]);
    let star = TerminalControl::constant(10_000, &[0.0]);
    let frozen = constant_partials(&drv, 0.4, 0.0, 0.0);
    let v = solve_variational(&xi, &star, &frozen, &drv, &cond, &BsdeOptions::default()).unwrap();
    let x0 = v.x_hat().mean_at(0)[0];
    assert!((x0 - 0.4f64.exp()).abs() <= 5e-3, "X^(0) = {x0}");
}

#[test]
fn linear_model_difference_quotients_are_exact() {
    let model = LqModel::new(LqParams::new([0.1, 0.3, 0.2], [0.3, 0.2, 1.0])).unwrap();
    let (drv, cond) = setup(1.0, 0.25, 40, 2_000, 54);
    let eta = InitialSegment::constant(drv.grid(), &[1.0]).unwrap();
    let opts = BsdeOptions::default();
    let setting = Setting { model: &model, eta: &eta, driver: &drv, cond: &cond, opts };
    let star_xi = TerminalControl::from_fn(2_000, 1, |p, o| o[0] = (0.2 * drv.terminal(p)[0]).exp());
    let xi = TerminalControl::from_fn(2_000, 1, |p, o| o[0] = drv.terminal(p)[0].abs());
    let star = setting.solve(&star_xi).unwrap();
    let lin = Linearization::new(&model, &star).unwrap();
    let v = solve_variational(&xi, &star_xi, &lin, &drv, &cond, &opts).unwrap();
    for rho in [1.0, 0.5, 0.3, 0.1, 0.03] {
        let gap = variational_gap(&setting, rho, &xi, &star_xi, &star, &v).unwrap();
        // Each solve is accurate to the Picard tolerance, so the quotient is
        // accurate to about 2 tol / rho.
        let floor = 10.0 * opts.tol / rho;
        assert!(gap.state_gap.sqrt() <= floor, "rho {rho}: {gap:?}");
        assert!(gap.diffusion_gap.sqrt() <= floor, "rho {rho}: {gap:?}");
    }
    let same = variational_gap(&setting, 0.3, &star_xi, &star_xi, &star, &solve_variational(&star_xi, &star_xi, &lin, &drv, &cond, &opts).unwrap())
        .unwrap();
    assert_eq!((same.state_gap, same.diffusion_gap), (0.0, 0.0));
}

#[test]
fn quadratic_generator_gaps_shrink_with_rho() {
    let model = QuadraticControl { a: 0.2, b: 0.3, k: 0.5 };
    let (drv, cond) = setup(1.0, 0.25, 40, 2_000, 55);
    let eta = InitialSegment::constant(drv.grid(), &[0.0]).unwrap();
    let opts = BsdeOptions::default();
    let setting = Setting { model: &model, eta: &eta, driver: &drv, cond: &cond, opts };
    // Bounded terminal values: the q^2 generator explodes for terminal values
    // with Gaussian tails as heavy as W_T^2 / 2.
    let star_xi = TerminalControl::from_fn(2_000, 1, |p, o| o[0] = drv.terminal(p)[0].sin());
    let xi = TerminalControl::from_fn(2_000, 1, |p, o| o[0] = 2.0 * drv.terminal(p)[0].cos());
    let star = setting.solve(&star_xi).unwrap();
    let lin = Linearization::new(&model, &star).unwrap();
    let v = solve_variational(&xi, &star_xi, &lin, &drv, &cond, &opts).unwrap();
    let gaps: Vec<_> =
        [1.0, 0.3, 0.1, 0.03].iter().map(|&rho| variational_gap(&setting, rho, &xi, &star_xi, &star, &v).unwrap()).collect();
    for w in gaps.windows(2) {
        assert!(w[1].state_gap < w[0].state_gap, "{gaps:?}");
        assert!(w[1].diffusion_gap < w[0].diffusion_gap, "{gaps:?}");
    }
    assert!(gaps[0].diffusion_gap > 1e-4, "the quadratic term must be visible at rho = 1: {gaps:?}");
}

#[test]
fn penalty_collapses_to_epsilon_at_a_feasible_reference() {
    let model = LqModel::new(LqParams::new([0.1, 0.3, 0.2], [0.3, 0.2, 1.0])).unwrap();
    let (drv, cond) = setup(1.0, 0.25, 20, 1_000, 56);
    let eta = InitialSegment::constant(drv.grid(), &[1.0]).unwrap();
    let setting = Setting { model: &model, eta: &eta, driver: &drv, cond: &cond, opts: BsdeOptions::default() };
    let xi = TerminalControl::from_fn(1_000, 1, |p, o| o[0] = 1.0 + 0.3 * drv.terminal(p)[0]);
    let a = setting.solve(&xi).unwrap().initial_mean();
    let params = PenaltyParams { epsilon: 0.05, xi_star: xi.clone(), target: a };
    let f = PenaltyFunctional::new(&setting, &params).unwrap();
    let r = f.eval(&xi).unwrap();
    assert_eq!(r.cost_difference, 0.0);
    assert_eq!(r.initial_gap, 0.0);
    assert_eq!(r.value, 0.05);

    let mut rng = ChaCha8Rng::seed_from_u64(57);
    let mut lipschitz: f64 = 0.0;
    for _ in 0..20 {
        let (c0, c1) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let probe = TerminalControl::from_fn(1_000, 1, |p, o| o[0] = c0 + c1 * drv.terminal(p)[0]);
        let v = f.eval(&probe).unwrap();
        assert!(v.value > 0.0);
        // Continuity: a small RMS perturbation moves F by a bounded multiple.
        let h = 1e-3;
        let moved = TerminalControl::from_fn(1_000, 1, |p, o| o[0] = probe.at(p)[0] + h * drv.terminal(p)[0].cos());
        let dist = probe.mean_square_distance(&moved).sqrt();
        lipschitz = lipschitz.max((f.eval(&moved).unwrap().value - v.value).abs() / dist);
    }
    assert!(lipschitz.is_finite() && lipschitz < 10.0, "estimated Lipschitz constant {lipschitz}");
}
