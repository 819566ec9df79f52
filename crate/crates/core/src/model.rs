//! Hazards, path probabilities and closed-form SCV.

use crate::error::{Error, Result};
use crate::params::{ChurnParams, CostParams};

/// Which evaluation route produced an [`ScvBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    ConstantClosed,
    ExponentialClosed,
    ExactSeries,
    ApproxSeries,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::ExponentialClosed,
        ModelKind::ConstantClosed,
        ModelKind::ExactSeries,
        ModelKind::ApproxSeries,
    ];

    /// Name used on the command line and in JSON.
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ConstantClosed => "const-closed",
            ModelKind::ExponentialClosed => "exp-closed",
            ModelKind::ExactSeries => "exact-series",
            ModelKind::ApproxSeries => "approx-series",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::validation(
                    "model",
                    format!("unknown model {s:?}; expected exp-closed, const-closed, exact-series or approx-series"),
                )
            })
    }
}

/// SCV split into the part every path realises and the churn-weighted
/// recurring revenue.
#[derive(Debug, Clone, PartialEq)]
pub struct ScvBreakdown {
    pub scv: f64,
    pub acquisition_term: f64,
    pub retention_term: f64,
    /// Expected number of periods (trial included) before exit.
    pub tau_mean: f64,
    /// Probability mass accounted for by the exit paths. 1 for the exact
    /// model; below 1 for the product approximation.
    pub normalization: f64,
    pub model_kind: ModelKind,
    /// Number of summed periods, for the series routes.
    pub horizon: Option<usize>,
}

impl ScvBreakdown {
    pub(crate) fn new(
        model_kind: ModelKind,
        acquisition_term: f64,
        retention_term: f64,
        tau_mean: f64,
        normalization: f64,
        horizon: Option<usize>,
    ) -> Self {
        ScvBreakdown {
            scv: acquisition_term + retention_term,
            acquisition_term,
            retention_term,
            tau_mean,
            normalization,
            model_kind,
            horizon,
        }
    }
}

/// Conditional churn probability (hazard) at period `t`:
/// `cr_nat + (cr_init - cr_nat) * exp(-k t)`.
///
/// Paths start at `t = 1`; `t = 0` returns `cr_init` and is only meaningful
/// for plotting.
pub fn conditional_churn(params: &ChurnParams, t: usize) -> f64 {
    params.alpha() + params.beta() * (-params.k() * t as f64).exp()
}

/// Unconditional probability of churning exactly at period `t >= 1` under
/// the exact product-form model:
/// `gamma * prod_{i=1}^{t-1} (1 - p(i)) * p(t)`.
pub fn churn_prob_exact(params: &ChurnParams, t: usize) -> f64 {
    debug_assert!(t >= 1);
    let survival: f64 = (1..t).map(|i| 1.0 - conditional_churn(params, i)).product();
    params.gamma() * survival * conditional_churn(params, t)
}

/// Unconditional churn probability at period `t >= 1` with every survival
/// factor replaced by `1 - cr_init`:
/// `gamma * (1 - alpha - beta)^(t-1) * p(t)`.
pub fn churn_prob_approx(params: &ChurnParams, t: usize) -> f64 {
    debug_assert!(t >= 1);
    let q = 1.0 - params.cr_init();
    let survival: f64 = (1..t).map(|_| q).product();
    params.gamma() * survival * conditional_churn(params, t)
}

/// `sum_t t * P(t) / gamma` for the approximate model:
/// `cr_nat / cr_init^2 + (cr_init - cr_nat) e^{-k} / (1 - e^{-k} + cr_init e^{-k})^2`.
pub(crate) fn weighted_lifetime_bracket(params: &ChurnParams) -> Result<f64> {
    let c = params.cr_init();
    if c == 0.0 {
        return Err(Error::Singular);
    }
    let e = (-params.k()).exp();
    let d = 1.0 - e + c * e;
    Ok(params.cr_nat() / (c * c) + params.beta() * e / (d * d))
}

/// Total exit probability `p_trial + sum_t P(t)` of the approximate model,
/// summed in closed form.
pub fn approx_total_mass(params: &ChurnParams) -> f64 {
    let (a, c, g) = (params.alpha(), params.cr_init(), params.gamma());
    let e = (-params.k()).exp();
    params.p_trial_churn() + g * a / c + g * params.beta() * e / (1.0 - (1.0 - c) * e)
}

/// Closed-form SCV under a constant post-trial hazard `p_churn`:
/// `CAC_mean + CC + r_pt (1 - p_trial) / p_churn`.
pub fn scv_constant_closed(
    p_trial_churn: f64,
    p_churn: f64,
    costs: &CostParams,
) -> Result<ScvBreakdown> {
    if p_churn == 0.0 {
        return Err(Error::Divergent);
    }
    let params = ChurnParams::constant(p_churn, p_trial_churn)?;
    let gamma = params.gamma();
    Ok(ScvBreakdown::new(
        ModelKind::ConstantClosed,
        costs.acquisition_value(),
        costs.r_pt() * gamma / p_churn,
        1.0 + gamma / p_churn,
        1.0,
        None,
    ))
}

/// Closed-form SCV of the exponential-decay model under the product
/// approximation. This is the exact sum of the approximate series.
pub fn scv_exponential_closed(params: &ChurnParams, costs: &CostParams) -> Result<ScvBreakdown> {
    let bracket = weighted_lifetime_bracket(params)?;
    let gamma = params.gamma();
    Ok(ScvBreakdown::new(
        ModelKind::ExponentialClosed,
        costs.acquisition_value(),
        gamma * costs.r_pt() * bracket,
        1.0 + gamma * bracket,
        approx_total_mass(params),
        None,
    ))
}

/// Mean number of periods before exit, trial included:
/// `1 + gamma * (cr_nat / cr_init^2 + (cr_init - cr_nat) e^{-k} / (1 - e^{-k} + cr_init e^{-k})^2)`.
pub fn mean_time_to_churn(params: &ChurnParams) -> Result<f64> {
    Ok(1.0 + params.gamma() * weighted_lifetime_bracket(params)?)
}
