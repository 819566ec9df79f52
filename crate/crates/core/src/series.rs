//! Direct summation of the exit-path series.
//!
//! These routines walk the periods one by one and serve as the reference
//! for the closed forms.

use crate::error::{Error, Result};
use crate::model::{conditional_churn, ModelKind, ScvBreakdown};
use crate::params::{ChurnParams, CostParams};

/// Which path probabilities to sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbabilityModel {
    /// Survival is the running product of `1 - p(i)`.
    Exact,
    /// Survival is `(1 - cr_init)^(t-1)`.
    Approx,
}

/// When to stop summing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationPolicy {
    /// Stop at the smallest `T` with `(1 - cr_nat)^T (T + 1 / cr_nat) < tail_bound`,
    /// failing if that needs more than `cap` periods. For both models this
    /// bounds the mass and the period-weighted mass `sum t P(t)` beyond `T`,
    /// relative to `gamma`.
    Adaptive { tail_bound: f64, cap: usize },
    /// Sum exactly this many periods.
    Fixed(usize),
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy::Adaptive {
            tail_bound: 1e-12,
            cap: 1_000_000,
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Iterator over `(t, P(t))` for `t = 1, 2, ...`.
#[derive(Debug, Clone)]
pub struct ExitProbabilities {
    params: ChurnParams,
    model: ProbabilityModel,
    t: usize,
    /// Probability of reaching period `t` (past the trial and `t - 1` paid periods).
    reach: f64,
}

impl ExitProbabilities {
    pub fn new(params: &ChurnParams, model: ProbabilityModel) -> Self {
        ExitProbabilities {
            params: *params,
            model,
            t: 0,
            reach: params.gamma(),
        }
    }
}

impl Iterator for ExitProbabilities {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<(usize, f64)> {
        self.t += 1;
        let hazard = conditional_churn(&self.params, self.t);
        let p = self.reach * hazard;
        self.reach *= match self.model {
            ProbabilityModel::Exact => 1.0 - hazard,
            ProbabilityModel::Approx => 1.0 - self.params.cr_init(),
        };
        Some((self.t, p))
    }
}

/// Moments of a truncated exit series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesMoments {
    /// `sum P(t)` over the summed periods (trial excluded).
    pub mass: f64,
    /// `sum t P(t)`.
    pub weighted: f64,
    pub horizon: usize,
}

pub fn series_moments(
    params: &ChurnParams,
    model: ProbabilityModel,
    truncation: TruncationPolicy,
) -> Result<SeriesMoments> {
    let mut mass = CompensatedSum::default();
    let mut weighted = CompensatedSum::default();
    let mut probs = ExitProbabilities::new(params, model);
    let mut horizon = 0;

    match truncation {
        TruncationPolicy::Fixed(n) => {
            for (t, p) in probs.by_ref().take(n) {
                mass.add(p);
                weighted.add(t as f64 * p);
            }
            horizon = n;
        }
        TruncationPolicy::Adaptive { tail_bound, cap } => {
            let decay = 1.0 - params.cr_nat();
            let mean_tail = 1.0 / params.cr_nat();
            let mut reach = if params.gamma() > 0.0 { 1.0 } else { 0.0 };
            let mut bound = reach * mean_tail;
            while bound >= tail_bound {
                if horizon == cap {
                    return Err(Error::NonConvergence {
                        horizon: cap,
                        tail_bound: bound,
                    });
                }
                let (t, p) = probs.next().expect("exit series is unbounded");
                mass.add(p);
                weighted.add(t as f64 * p);
                horizon = t;
                reach *= decay;
                bound = reach * (t as f64 + mean_tail);
            }
        }
    }

    Ok(SeriesMoments {
        mass: mass.value(),
        weighted: weighted.value(),
        horizon,
    })
}

/// SCV by direct summation:
/// `p_trial (CAC_mean + CC) + sum_t P(t) (CAC_mean + CC + t r_pt)`.
///
/// The acquisition term is `(CAC_mean + CC)` times the accounted mass, so
/// for the approximate model it falls short of `CAC_mean + CC` by the
/// normalization deficit.
pub fn scv_series(
    params: &ChurnParams,
    costs: &CostParams,
    model: ProbabilityModel,
    truncation: TruncationPolicy,
) -> Result<ScvBreakdown> {
    let m = series_moments(params, model, truncation)?;
    let p_trial = params.p_trial_churn();
    let normalization = p_trial + m.mass;
    let kind = match model {
        ProbabilityModel::Exact => ModelKind::ExactSeries,
        ProbabilityModel::Approx => ModelKind::ApproxSeries,
    };
    Ok(ScvBreakdown::new(
        kind,
        costs.acquisition_value() * normalization,
        costs.r_pt() * m.weighted,
        p_trial + m.weighted + m.mass,
        normalization,
        Some(m.horizon),
    ))
}

/// `1 - (p_trial + sum_t P(t))`: zero for the exact model up to truncation,
/// a positive constant for the approximate model when `cr_init > cr_nat`.
pub fn normalization_deficit(
    params: &ChurnParams,
    model: ProbabilityModel,
    truncation: TruncationPolicy,
) -> Result<f64> {
    let m = series_moments(params, model, truncation)?;
    Ok(1.0 - (params.p_trial_churn() + m.mass))
}
