//! Monte Carlo toolkit for stochastic delayed control systems with terminal
//! state constraints.
//!
//! The forward controlled equation is rewritten as a time-delayed backward
//! equation in which the terminal state plays the role of the control. The
//! crate simulates both forms, solves the anticipated adjoint equation,
//! optimizes the terminal control under a convex constraint and an initial
//! state condition, and checks the resulting first-order conditions.

pub mod anticipated;
pub mod brownian;
pub mod bsde;
pub mod constraint;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod grid;
pub mod linearize;
pub mod model;
pub mod models;
pub mod optimize;
pub mod regression;
pub mod sdde;
pub mod variational;
pub mod verify;

pub use anticipated::{contraction_diagnostic, solve_anticipated_sde, AdjointSolution, AnticipatedDynamics, AnticipatedOptions};
pub use brownian::BrownianDriver;
pub use bsde::{bsde_stability_gap, solve_delayed_bsde, BsdeOptions, BsdeSolution, Generator, Node, TerminalControl};
pub use constraint::ConvexSet;
pub use ensemble::PathEnsemble;
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use model::{CoefficientSet, Partials};
pub use optimize::{recover_control, solve_problem_b, HistoryRow, Optimizer, SolveResult, SolverOptions};
pub use regression::{regress_conditional, Conditioner, FeatureSpec, RegressionBasis};
pub use sdde::{lipschitz_probe, solve_sdde, InitialSegment};
pub use variational::{penalty_value, solve_variational, variational_gap, PenaltyFunctional, PenaltyParams, Setting, VariationalSolution};
pub use verify::{duality_report, mp_residual, normalize_multipliers, variational_inequality, DualityReport, MpResidualReport, SampleValue};
