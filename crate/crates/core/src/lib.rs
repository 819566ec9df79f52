//! Single customer value (SCV) modelling for subscription businesses.
//!
//! A customer is acquired, passes through a discounted trial period and then
//! pays a fixed net amount per period until they churn. The conditional churn
//! probability (hazard) decays exponentially from an initial rate towards a
//! natural rate. This crate evaluates the expected value of such a customer:
//!
//! * [`model`]: hazards, path probabilities and the closed-form SCV for the
//!   constant-churn and exponential-decay models, plus the mean time to churn.
//! * [`series`]: brute-force summation of the path series, used as the oracle
//!   for the closed forms.
//! * [`validator`]: grid sweeps measuring how far the product approximation
//!   behind the exponential closed form deviates from the exact series.
//! * [`sensitivity`]: analytic partial derivatives of the closed form, their
//!   finite-difference counterparts and the bucket-shift what-if workflow.
//! * [`calibration`]: cohort retention tables to hazard series to fitted
//!   churn parameters.
//! * [`wire`]: the JSON documents shared by the command line and HTTP service.

pub mod calibration;
pub mod error;
pub mod model;
pub mod params;
pub mod sensitivity;
pub mod series;
pub mod validator;
pub mod wire;

pub use error::{Error, Result};
pub use model::{ModelKind, ScvBreakdown};
pub use params::{Channel, ChurnParams, CostParams};
pub use series::{ProbabilityModel, TruncationPolicy};
