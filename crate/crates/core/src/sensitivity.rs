//! Local sensitivity of the exponential closed-form SCV.
//!
//! The closed form depends on seven quantities: `CAC_mean`, `CC`, the trial
//! churn, `r_pt`, `cr_nat`, `cr_init` and `k`. Their partials are available
//! analytically; [`numeric_gradient`] checks them by central differences.
//! [`feature_shift_delta`] turns a change in mean time to churn (as caused
//! by moving customers between buckets of an external factor) into a change
//! in SCV.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{mean_time_to_churn, scv_exponential_closed, weighted_lifetime_bracket, ScvBreakdown};
use crate::params::{ChurnParams, CostParams};

/// Label attached to every report so consumers know which partials they see.
pub const ANALYTIC_LABEL: &str = "analytic (closed-form partials)";

pub const DEFAULT_STEP: f64 = 1e-6;

/// Below this magnitude an analytic partial is compared in absolute terms.
const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    CacMean,
    Cc,
    /// Trial churn probability; its partial is the negative of the
    /// gamma-direction partial.
    PTrialChurn,
    RPt,
    CrNat,
    CrInit,
    K,
}

impl Param {
    pub const ALL: [Param; 7] = [
        Param::CacMean,
        Param::Cc,
        Param::PTrialChurn,
        Param::RPt,
        Param::CrNat,
        Param::CrInit,
        Param::K,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::CacMean => "cac_mean",
            Param::Cc => "cc",
            Param::PTrialChurn => "p_trial_churn",
            Param::RPt => "r_pt",
            Param::CrNat => "cr_nat",
            Param::CrInit => "cr_init",
            Param::K => "k",
        }
    }

    pub fn from_name(name: &str) -> Option<Param> {
        Param::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Partial {
    pub param: Param,
    pub analytic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric: Option<f64>,
    /// Relative error of `numeric` against `analytic`, or the absolute error
    /// when `|analytic| < 1e-6`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub label: &'static str,
    pub partials: Vec<Partial>,
}

impl SensitivityReport {
    pub fn get(&self, param: Param) -> &Partial {
        self.partials
            .iter()
            .find(|p| p.param == param)
            .expect("report holds every parameter")
    }

    pub fn analytic(&self, param: Param) -> f64 {
        self.get(param).analytic
    }

    /// Largest numeric-vs-analytic error in the report, if verified.
    pub fn max_error(&self) -> Option<f64> {
        self.partials
            .iter()
            .filter_map(|p| p.rel_error)
            .reduce(f64::max)
    }

    /// Partials ordered by decreasing magnitude (tornado order).
    pub fn ranked(&self) -> Vec<Partial> {
        let mut out = self.partials.clone();
        out.sort_by(|a, b| b.analytic.abs().total_cmp(&a.analytic.abs()));
        out
    }
}

/// `dSCV/dcr_init` alone; the what-if workflow evaluates it repeatedly.
pub fn partial_cr_init(params: &ChurnParams, costs: &CostParams) -> Result<f64> {
    let c = params.cr_init();
    if c == 0.0 {
        return Err(Error::Singular);
    }
    let a = params.cr_nat();
    let e = (-params.k()).exp();
    let d = 1.0 - e + c * e;
    let scale = params.gamma() * costs.r_pt();
    Ok(scale * (-2.0 * a / (c * c * c) + (e * (1.0 - e) + (2.0 * a - c) * e * e) / (d * d * d)))
}

pub fn analytic_gradient(params: &ChurnParams, costs: &CostParams) -> Result<SensitivityReport> {
    let bracket = weighted_lifetime_bracket(params)?;
    let (c, gamma, r) = (params.cr_init(), params.gamma(), costs.r_pt());
    let e = (-params.k()).exp();
    let d = 1.0 - e + c * e;
    let scale = gamma * r;

    let value = |param| match param {
        Param::CacMean | Param::Cc => Ok(1.0),
        Param::PTrialChurn => Ok(-r * bracket),
        Param::RPt => Ok(gamma * bracket),
        Param::CrNat => Ok(scale / (c * c) - scale * e / (d * d)),
        Param::CrInit => partial_cr_init(params, costs),
        Param::K => Ok(-scale * params.beta() * e * (1.0 + (1.0 - c) * e) / (d * d * d)),
    };
    let partials = Param::ALL
        .into_iter()
        .map(|param| {
            Ok(Partial {
                param,
                analytic: value(param)?,
                numeric: None,
                rel_error: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SensitivityReport {
        label: ANALYTIC_LABEL,
        partials,
    })
}

/// The seven closed-form inputs as a flat point.
#[derive(Debug, Clone, Copy)]
struct Point {
    cac_mean: f64,
    cc: f64,
    p_trial_churn: f64,
    r_pt: f64,
    cr_nat: f64,
    cr_init: f64,
    k: f64,
}

impl Point {
    fn get(&self, param: Param) -> f64 {
        match param {
            Param::CacMean => self.cac_mean,
            Param::Cc => self.cc,
            Param::PTrialChurn => self.p_trial_churn,
            Param::RPt => self.r_pt,
            Param::CrNat => self.cr_nat,
            Param::CrInit => self.cr_init,
            Param::K => self.k,
        }
    }

    fn with(mut self, param: Param, x: f64) -> Self {
        match param {
            Param::CacMean => self.cac_mean = x,
            Param::Cc => self.cc = x,
            Param::PTrialChurn => self.p_trial_churn = x,
            Param::RPt => self.r_pt = x,
            Param::CrNat => self.cr_nat = x,
            Param::CrInit => self.cr_init = x,
            Param::K => self.k = x,
        }
        self
    }

    fn scv(&self) -> Result<ScvBreakdown> {
        let churn = ChurnParams::new(self.cr_init, self.cr_nat, self.k, self.p_trial_churn)?;
        let costs = CostParams::single(self.cac_mean, self.cc, self.r_pt)?;
        scv_exponential_closed(&churn, &costs)
    }

    /// Whether `[x - h, x + h]` stays inside the parameter's domain.
    fn admits(&self, param: Param, h: f64) -> bool {
        let x = self.get(param);
        match param {
            Param::CacMean | Param::Cc | Param::RPt => true,
            Param::PTrialChurn => x - h >= 0.0 && x + h <= 1.0,
            Param::CrNat => x - h > 0.0 && x + h <= self.cr_init,
            Param::CrInit => x - h >= self.cr_nat && x + h < 1.0,
            Param::K => x - h > 0.0,
        }
    }
}

/// Central differences of [`scv_exponential_closed`] in each parameter, with
/// step `step * max(|x|, 1)` rounded to a power of two. The acquisition and
/// retention terms are differenced separately. The returned report carries
/// both the analytic and numeric values.
pub fn numeric_gradient(
    params: &ChurnParams,
    costs: &CostParams,
    step: f64,
) -> Result<SensitivityReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::validation("step", "must be a positive number"));
    }
    let point = Point {
        cac_mean: costs.cac_mean(),
        cc: costs.cc(),
        p_trial_churn: params.p_trial_churn(),
        r_pt: costs.r_pt(),
        cr_nat: params.cr_nat(),
        cr_init: params.cr_init(),
        k: params.k(),
    };
    let mut report = analytic_gradient(params, costs)?;
    for partial in &mut report.partials {
        let param = partial.param;
        let x = point.get(param);
        let h = (step * x.abs().max(1.0)).log2().round().exp2();
        if !point.admits(param, h) {
            return Err(Error::BoundaryProximity { param: param.name() });
        }
        let (up, down) = (x + h, x - h);
        let (hi, lo) = (point.with(param, up).scv()?, point.with(param, down).scv()?);
        let numeric = ((hi.acquisition_term - lo.acquisition_term) + (hi.retention_term - lo.retention_term))
            / (up - down);
        let err = (numeric - partial.analytic).abs();
        partial.numeric = Some(numeric);
        partial.rel_error = Some(if partial.analytic.abs() < RELATIVE_FLOOR {
            err
        } else {
            err / partial.analytic.abs()
        });
    }
    Ok(report)
}

/// Chain rule `dSCV/dF = sum_i dSCV/dx_i * dx_i/dF`. The jacobian must name
/// every parameter (zeros allowed).
pub fn feature_sensitivity(report: &SensitivityReport, jacobian: &BTreeMap<Param, f64>) -> Result<f64> {
    let mut total = 0.0;
    for partial in &report.partials {
        let d = *jacobian
            .get(&partial.param)
            .ok_or(Error::MissingJacobianEntry(partial.param.name()))?;
        if !d.is_finite() {
            return Err(Error::validation(
                format!("jacobian.{}", partial.param.name()),
                "must be finite",
            ));
        }
        total += partial.analytic * d;
    }
    Ok(total)
}

/// Mean time to churn as a function of `cr_init` alone, valid on the closed
/// interval `[cr_nat, 1]`.
fn tau_at(params: &ChurnParams, cr_init: f64) -> f64 {
    let e = (-params.k()).exp();
    let d = 1.0 - e + cr_init * e;
    let bracket = params.cr_nat() / (cr_init * cr_init) + (cr_init - params.cr_nat()) * e / (d * d);
    1.0 + params.gamma() * bracket
}

/// Interior samples checked for monotonicity before bisecting.
const MONOTONE_SAMPLES: usize = 16;

/// Finds `cr_init` in `(cr_nat, 1)` with `mean_time_to_churn = tau_target`,
/// holding `cr_nat`, `k` and the trial churn fixed.
///
/// The mean time to churn is decreasing in `cr_init` over most of the
/// parameter space but not all of it: its slope at `cr_init = 1` is
/// `gamma (e - 2 (1 - cr_nat) e^2 - 2 cr_nat)` with `e = exp(-k)`, which some
/// `k` makes positive whenever `cr_nat (1 - cr_nat) < 1/16`, i.e.
/// `cr_nat < 0.067`. The bracket endpoints and 16 interior
/// points are checked first and a non-monotone profile is reported as
/// [`Error::Ambiguous`].
pub fn invert_cr_init_from_tau(tau_target: f64, params: &ChurnParams) -> Result<f64> {
    if !tau_target.is_finite() {
        return Err(Error::validation("tau", "must be finite"));
    }
    let (lo, hi) = (params.cr_nat(), 1.0);
    let samples: Vec<f64> = (0..=MONOTONE_SAMPLES + 1)
        .map(|i| tau_at(params, lo + (hi - lo) * i as f64 / (MONOTONE_SAMPLES + 1) as f64))
        .collect();
    if params.gamma() > 0.0 && samples.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Ambiguous { lo, hi });
    }
    let (tau_lo, tau_hi) = (samples[0], samples[samples.len() - 1]);
    if !(tau_target > tau_hi && tau_target < tau_lo) {
        return Err(Error::NoSolution {
            target: tau_target,
            lo: tau_hi,
            hi: tau_lo,
        });
    }

    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if tau_at(params, mid) > tau_target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// A move of customers between buckets of an external factor, expressed by
/// the mean time to churn before and after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorShift {
    pub tau_from: f64,
    pub tau_to: f64,
    pub share_delta: f64,
}

impl FactorShift {
    pub fn new(tau_from: f64, tau_to: f64, share_delta: f64) -> Result<Self> {
        if !(tau_from >= 1.0 && tau_from.is_finite()) {
            return Err(Error::validation("tau_from", "must be >= 1"));
        }
        if !(tau_to >= 1.0 && tau_to.is_finite()) {
            return Err(Error::validation("tau_to", "must be >= 1"));
        }
        if !(share_delta > 0.0 && share_delta <= 1.0) {
            return Err(Error::validation("share_delta", "must lie in (0, 1]"));
        }
        Ok(FactorShift {
            tau_from,
            tau_to,
            share_delta,
        })
    }
}

pub const LINEAR_CAVEAT: &str =
    "linear extrapolation from the mean of the two endpoint derivatives; non-linear effects are not captured";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub cr_init_from: f64,
    pub cr_init_to: f64,
    pub partial_from: f64,
    pub partial_to: f64,
    pub mean_partial: f64,
    pub delta_cr_init: f64,
    pub share_delta: f64,
    pub delta_scv: f64,
    pub note: &'static str,
}

/// `delta SCV = mean(dSCV/dcr_init at both ends) * (cr_to - cr_from) * share`.
pub fn shift_between_cr_init(
    params: &ChurnParams,
    costs: &CostParams,
    cr_init_from: f64,
    cr_init_to: f64,
    share_delta: f64,
) -> Result<ShiftReport> {
    let partial_from = partial_cr_init(&params.with_cr_init(cr_init_from)?, costs)?;
    let partial_to = partial_cr_init(&params.with_cr_init(cr_init_to)?, costs)?;
    let mean_partial = 0.5 * (partial_from + partial_to);
    let delta_cr_init = cr_init_to - cr_init_from;
    Ok(ShiftReport {
        cr_init_from,
        cr_init_to,
        partial_from,
        partial_to,
        mean_partial,
        delta_cr_init,
        share_delta,
        delta_scv: mean_partial * delta_cr_init * share_delta,
        note: LINEAR_CAVEAT,
    })
}

/// Maps both mean times to churn back to `cr_init` and applies
/// [`shift_between_cr_init`].
pub fn feature_shift_delta(
    params: &ChurnParams,
    costs: &CostParams,
    shift: &FactorShift,
) -> Result<ShiftReport> {
    let from = invert_cr_init_from_tau(shift.tau_from, params)?;
    let to = if shift.tau_to == shift.tau_from {
        from
    } else {
        invert_cr_init_from_tau(shift.tau_to, params)?
    };
    shift_between_cr_init(params, costs, from, to, shift.share_delta)
}

/// Mean time to churn at the given `cr_init`, other parameters held.
pub fn tau_for_cr_init(params: &ChurnParams, cr_init: f64) -> Result<f64> {
    mean_time_to_churn(&params.with_cr_init(cr_init)?)
}
