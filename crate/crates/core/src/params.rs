//! Model inputs: the churn curve and the cost/revenue structure.

use crate::error::{Error, Result};

/// Tolerance on the sum of acquisition channel shares.
pub const SHARE_SUM_TOLERANCE: f64 = 1e-9;

/// Parameters of the exponentially decaying hazard
/// `p(t) = cr_nat + (cr_init - cr_nat) * exp(-k t)` plus the trial churn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChurnParams {
    cr_init: f64,
    cr_nat: f64,
    k: f64,
    p_trial_churn: f64,
}

impl ChurnParams {
    /// Validates `0 < cr_nat <= cr_init < 1`, `k > 0` and
    /// `0 <= p_trial_churn <= 1`.
    pub fn new(cr_init: f64, cr_nat: f64, k: f64, p_trial_churn: f64) -> Result<Self> {
        check_finite("churn.cr_init", cr_init)?;
        check_finite("churn.cr_nat", cr_nat)?;
        check_finite("churn.k", k)?;
        check_finite("churn.p_trial_churn", p_trial_churn)?;
        if !(cr_nat > 0.0) {
            return Err(Error::validation("churn.cr_nat", "must be > 0"));
        }
        if cr_nat > cr_init {
            return Err(Error::validation("churn.cr_nat", "must not exceed cr_init"));
        }
        if !(cr_init < 1.0) {
            return Err(Error::validation("churn.cr_init", "must be < 1"));
        }
        if !(k > 0.0) {
            return Err(Error::validation("churn.k", "must be > 0"));
        }
        check_probability("churn.p_trial_churn", p_trial_churn)?;
        Ok(ChurnParams {
            cr_init,
            cr_nat,
            k,
            p_trial_churn,
        })
    }

    /// Constant hazard `p_churn` after the trial (`beta = 0`). Unlike
    /// [`ChurnParams::new`] this admits `p_churn = 1`, i.e. every customer
    /// leaves after the first paid period.
    pub fn constant(p_churn: f64, p_trial_churn: f64) -> Result<Self> {
        check_finite("churn.cr_nat", p_churn)?;
        check_finite("churn.p_trial_churn", p_trial_churn)?;
        if !(p_churn > 0.0 && p_churn <= 1.0) {
            return Err(Error::validation("churn.cr_nat", "constant churn must lie in (0, 1]"));
        }
        check_probability("churn.p_trial_churn", p_trial_churn)?;
        Ok(ChurnParams {
            cr_init: p_churn,
            cr_nat: p_churn,
            k: 1.0,
            p_trial_churn,
        })
    }

    pub fn cr_init(&self) -> f64 {
        self.cr_init
    }

    pub fn cr_nat(&self) -> f64 {
        self.cr_nat
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn p_trial_churn(&self) -> f64 {
        self.p_trial_churn
    }

    /// Asymptotic hazard.
    pub fn alpha(&self) -> f64 {
        self.cr_nat
    }

    /// Excess of the initial hazard over the asymptote.
    pub fn beta(&self) -> f64 {
        self.cr_init - self.cr_nat
    }

    /// Probability of surviving the trial.
    pub fn gamma(&self) -> f64 {
        1.0 - self.p_trial_churn
    }

    pub fn with_cr_init(&self, cr_init: f64) -> Result<Self> {
        Self::new(cr_init, self.cr_nat, self.k, self.p_trial_churn)
    }

    pub fn with_cr_nat(&self, cr_nat: f64) -> Result<Self> {
        Self::new(self.cr_init, cr_nat, self.k, self.p_trial_churn)
    }

    pub fn with_k(&self, k: f64) -> Result<Self> {
        Self::new(self.cr_init, self.cr_nat, k, self.p_trial_churn)
    }

    pub fn with_p_trial_churn(&self, p_trial_churn: f64) -> Result<Self> {
        Self::new(self.cr_init, self.cr_nat, self.k, p_trial_churn)
    }

    /// Whether the parameters sit inside the region where the product
    /// approximation is recommended: alpha, gamma and k in (0.001, 1) and
    /// beta in (0.001, 1 - alpha). Outside it the model still evaluates.
    pub fn in_recommended_region(&self) -> bool {
        let open = |x: f64, lo: f64, hi: f64| x > lo && x < hi;
        let (a, b) = (self.alpha(), self.beta());
        open(a, 0.001, 1.0)
            && open(b, 0.001, 1.0 - a)
            && open(self.gamma(), 0.001, 1.0)
            && open(self.k, 0.001, 1.0)
    }
}

/// One acquisition channel: its share of acquisitions and its (signed) cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub share: f64,
    pub cac: f64,
}

/// Acquisition channel mix, trial cost and net recurring revenue.
///
/// Costs are signed contributions to SCV: a channel that costs $35 per
/// customer carries `cac = -35`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    channels: Vec<Channel>,
    cc: f64,
    r_pt: f64,
}

impl CostParams {
    pub fn new(channels: Vec<Channel>, cc: f64, r_pt: f64) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::validation("costs.channels", "at least one channel is required"));
        }
        for (i, ch) in channels.iter().enumerate() {
            check_finite(&format!("costs.channels[{i}].cac"), ch.cac)?;
            check_probability(&format!("costs.channels[{i}].share"), ch.share)?;
        }
        let total: f64 = channels.iter().map(|c| c.share).sum();
        if (total - 1.0).abs() > SHARE_SUM_TOLERANCE {
            return Err(Error::validation(
                "costs.channels",
                format!("channel shares sum to {total}, expected 1"),
            ));
        }
        check_finite("costs.cc", cc)?;
        check_finite("costs.r_pt", r_pt)?;
        Ok(CostParams { channels, cc, r_pt })
    }

    /// A single channel carrying the whole acquisition cost.
    pub fn single(cac: f64, cc: f64, r_pt: f64) -> Result<Self> {
        Self::new(vec![Channel { share: 1.0, cac }], cc, r_pt)
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn cc(&self) -> f64 {
        self.cc
    }

    pub fn r_pt(&self) -> f64 {
        self.r_pt
    }

    /// Share-weighted mean acquisition cost.
    pub fn cac_mean(&self) -> f64 {
        self.channels.iter().map(|c| c.share * c.cac).sum()
    }

    /// Value realised by every path regardless of when it exits:
    /// `CAC_mean + CC`.
    pub fn acquisition_value(&self) -> f64 {
        self.cac_mean() + self.cc
    }
}

/// Free-function form of [`CostParams::cac_mean`].
pub fn cac_mean(costs: &CostParams) -> f64 {
    costs.cac_mean()
}

fn check_finite(field: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(field, "must be a finite number"))
    }
}

fn check_probability(field: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::validation(field, "must lie in [0, 1]"))
    }
}
