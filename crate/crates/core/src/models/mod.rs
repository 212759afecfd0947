//! Ready-made scalar models: a delayed linear-quadratic problem and a
//! production-consumption problem.

pub mod lq;
pub mod ramsey;

pub use lq::{lq_closed_form_oracle, lq_gamma, LqBar, LqModel, LqParams};
pub use ramsey::{RamseyModel, RamseyParams, DEFAULT_UTILITY_CAP};
