//! Fitting churn parameters to cohort retention data.
//!
//! A cohort is tracked by the fraction of its customers still active at each
//! period: period 0 is acquisition (always 1), period 1 is after the trial.
//! The drop from period 0 to 1 is the trial churn; later drops give the
//! hazard `p(t) = (A_t - A_{t+1}) / A_t` for `t >= 1`, which is fitted to
//! `cr_nat + (cr_init - cr_nat) exp(-k t)` by separable least squares.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::conditional_churn;
use crate::params::ChurnParams;

const FRACTION_SLACK: f64 = 1e-12;

/// One line of the cohort CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub cohort_id: String,
    pub period: u32,
    pub active_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub id: String,
    /// Number of customers acquired, when known. Used as a pooling weight.
    pub size: Option<f64>,
    /// Active fraction indexed by period, starting at period 0.
    pub active: Vec<f64>,
}

impl Cohort {
    fn weight(&self) -> f64 {
        self.size.unwrap_or(1.0)
    }
}

/// Validated cohort retention table.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortTable {
    cohorts: Vec<Cohort>,
}

impl CohortTable {
    pub fn from_rows(rows: Vec<CohortRow>) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut grouped: BTreeMap<String, Vec<CohortRow>> = BTreeMap::new();
        for row in rows {
            if !grouped.contains_key(&row.cohort_id) {
                order.push(row.cohort_id.clone());
            }
            grouped.entry(row.cohort_id.clone()).or_default().push(row);
        }
        if order.is_empty() {
            return Err(Error::validation("cohorts", "no rows"));
        }

        let mut cohorts = Vec::with_capacity(order.len());
        for id in order {
            let mut rows = grouped.remove(&id).unwrap_or_default();
            rows.sort_by_key(|r| r.period);
            let field = format!("cohorts[{id}]");
            let size = rows[0].cohort_size;
            if rows.iter().any(|r| r.cohort_size != size) {
                return Err(Error::validation(field, "cohort_size differs between rows"));
            }
            if let Some(s) = size {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::validation(field, "cohort_size must be positive"));
                }
            }
            let mut active = Vec::with_capacity(rows.len());
            for (expected, row) in rows.iter().enumerate() {
                if row.period as usize != expected {
                    return Err(Error::validation(
                        field,
                        format!("periods must run 0, 1, 2, ... without gaps or repeats (found {} at position {expected})", row.period),
                    ));
                }
                let a = row.active_fraction;
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::validation(field, format!("active_fraction {a} outside [0, 1]")));
                }
                if let Some(&prev) = active.last() {
                    if a > prev + FRACTION_SLACK {
                        return Err(Error::validation(
                            field,
                            format!("active_fraction increases at period {}", row.period),
                        ));
                    }
                }
                active.push(a);
            }
            if (active[0] - 1.0).abs() > FRACTION_SLACK {
                return Err(Error::validation(field, "period 0 must have active_fraction 1"));
            }
            cohorts.push(Cohort { id, size, active });
        }
        Ok(CohortTable { cohorts })
    }

    /// Reads `cohort_id,period,active_fraction[,cohort_size]`.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let ok = matches!(
            header.iter().map(String::as_str).collect::<Vec<_>>().as_slice(),
            ["cohort_id", "period", "active_fraction"]
                | ["cohort_id", "period", "active_fraction", "cohort_size"]
        );
        if !ok {
            return Err(Error::Parse(format!(
                "expected header cohort_id,period,active_fraction[,cohort_size], got {}",
                header.join(",")
            )));
        }
        let rows = reader
            .deserialize()
            .map(|r| r.map_err(Error::from))
            .collect::<Result<Vec<CohortRow>>>()?;
        Self::from_rows(rows)
    }

    pub fn to_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let with_size = self.cohorts.iter().any(|c| c.size.is_some());
        if with_size {
            writer.write_record(["cohort_id", "period", "active_fraction", "cohort_size"])?;
        } else {
            writer.write_record(["cohort_id", "period", "active_fraction"])?;
        }
        for c in &self.cohorts {
            for (period, a) in c.active.iter().enumerate() {
                let mut rec = vec![c.id.clone(), period.to_string(), a.to_string()];
                if with_size {
                    rec.push(c.size.map(|s| s.to_string()).unwrap_or_default());
                }
                writer.write_record(&rec)?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    pub fn single(id: impl Into<String>, active: Vec<f64>) -> Result<Self> {
        let id = id.into();
        let rows = active
            .into_iter()
            .enumerate()
            .map(|(period, active_fraction)| CohortRow {
                cohort_id: id.clone(),
                period: period as u32,
                active_fraction,
                cohort_size: None,
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn cohorts(&self) -> &[Cohort] {
        &self.cohorts
    }
}

/// Pooled trial churn `1 - A_1`, weighted by cohort size when given. Cohorts
/// not yet observed at period 1 are skipped.
pub fn estimate_trial_churn(table: &CohortTable) -> Result<f64> {
    let (mut lost, mut total) = (0.0, 0.0);
    for c in table.cohorts() {
        if let Some(&a1) = c.active.get(1) {
            lost += c.weight() * (1.0 - a1);
            total += c.weight();
        }
    }
    if total == 0.0 {
        return Err(Error::validation("cohorts", "no cohort has a period 1 observation"));
    }
    Ok(lost / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HazardPoint {
    pub t: usize,
    pub hazard: f64,
    /// Surviving mass the hazard was estimated from.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HazardSeries {
    pub trial_churn: f64,
    pub points: Vec<HazardPoint>,
    pub diagnostics: Vec<String>,
}

/// Empirical hazards pooled across cohorts:
/// `p(t) = sum_c n_c (A_c,t - A_c,t+1) / sum_c n_c A_c,t` over the cohorts
/// observed at `t + 1`, i.e. each cohort's hazard weighted by its surviving
/// mass. The series ends at the last observed period, or earlier if nobody
/// is left.
pub fn hazard_rates(table: &CohortTable) -> Result<HazardSeries> {
    let trial_churn = estimate_trial_churn(table)?;
    let mut points = Vec::new();
    let mut diagnostics = Vec::new();
    let longest = table.cohorts().iter().map(|c| c.active.len()).max().unwrap_or(0);

    for t in 1..longest.saturating_sub(1) {
        let (mut lost, mut at_risk) = (0.0, 0.0);
        for c in table.cohorts() {
            if let (Some(&now), Some(&next)) = (c.active.get(t), c.active.get(t + 1)) {
                lost += c.weight() * (now - next);
                at_risk += c.weight() * now;
            }
        }
        if at_risk <= 0.0 {
            diagnostics.push(format!("no active customers at period {t}; hazard series truncated"));
            break;
        }
        points.push(HazardPoint {
            t,
            hazard: (lost / at_risk).clamp(0.0, 1.0),
            weight: at_risk,
        });
    }
    Ok(HazardSeries {
        trial_churn,
        points,
        diagnostics,
    })
}

/// Multiplicative noise applied to synthesized hazards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    /// Standard deviation of the relative perturbation.
    pub sigma: f64,
    pub seed: u64,
}

/// Active fractions `A_0..=A_periods` of a cohort following `params`:
/// `A_0 = 1`, `A_1 = gamma`, `A_{t+1} = A_t (1 - p(t))`. With `noise`, each
/// hazard is multiplied by `1 + sigma * z` with `z` standard normal.
pub fn synthesize_cohort(params: &ChurnParams, periods: usize, noise: Option<Noise>) -> Vec<f64> {
    let mut rng = noise.map(|n| (n.sigma, ChaCha8Rng::seed_from_u64(n.seed)));
    let mut active = Vec::with_capacity(periods + 1);
    active.push(1.0);
    if periods == 0 {
        return active;
    }
    active.push(params.gamma());
    for t in 1..periods {
        let mut hazard = conditional_churn(params, t);
        if let Some((sigma, rng)) = rng.as_mut() {
            let z: f64 = StandardNormal.sample(rng);
            hazard = (hazard * (1.0 + *sigma * z)).clamp(0.0, 1.0);
        }
        let prev = active[t];
        active.push(prev * (1.0 - hazard));
    }
    active
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FittedPoint {
    pub t: usize,
    pub observed: f64,
    pub fitted: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    /// Golden-section iterations after the coarse scan.
    pub iterations: usize,
    /// Best residual after each golden-section iteration.
    pub rss_history: Vec<f64>,
    pub k_bracket: [f64; 2],
    /// All hazards equal: a constant model (`cr_init = cr_nat`) was returned
    /// and `k` carries no information.
    pub constant_hazard: bool,
    /// The unconstrained linear solution at the final `k` violated the
    /// parameter invariants and was replaced by the best boundary solution.
    pub clamped: bool,
    pub k_at_search_bound: bool,
    pub in_recommended_region: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ChurnParams,
    pub rss: f64,
    pub points: Vec<FittedPoint>,
    pub diagnostics: FitDiagnostics,
}

pub const K_MIN: f64 = 0.001;
pub const K_MAX: f64 = 2.0;
const K_SCAN_POINTS: usize = 200;
const K_REL_TOL: f64 = 1e-8;
/// Smallest admissible asymptotic hazard.
const ALPHA_FLOOR: f64 = 1e-12;
/// Largest admissible initial hazard.
const CR_INIT_CEIL: f64 = 1.0 - 1e-12;
/// `k` placeholder for constant-hazard fits.
const CONSTANT_MODEL_K: f64 = 1.0;

#[derive(Debug, Clone, Copy)]
struct LinearFit {
    alpha: f64,
    beta: f64,
    rss: f64,
    clamped: bool,
}

struct Design<'a> {
    points: &'a [HazardPoint],
}

impl Design<'_> {
    fn rss(&self, k: f64, alpha: f64, beta: f64) -> f64 {
        self.points
            .iter()
            .map(|p| {
                let r = p.hazard - alpha - beta * (-k * p.t as f64).exp();
                p.weight * r * r
            })
            .sum()
    }

    /// Weighted least squares in `(alpha, beta)` for fixed `k`, restricted to
    /// `alpha > 0`, `beta >= 0`, `alpha + beta < 1`.
    fn solve(&self, k: f64) -> LinearFit {
        let xs: Vec<f64> = self.points.iter().map(|p| (-k * p.t as f64).exp()).collect();
        let ws = self.points.iter().map(|p| p.weight);
        let hs = self.points.iter().map(|p| p.hazard);
        let w_sum: f64 = ws.clone().sum();
        let x_bar = ws.clone().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / w_sum;
        let h_bar = ws.clone().zip(hs.clone()).map(|(w, h)| w * h).sum::<f64>() / w_sum;
        let (mut sxx, mut sxh) = (0.0, 0.0);
        for ((w, h), x) in ws.clone().zip(hs.clone()).zip(&xs) {
            sxx += w * (x - x_bar) * (x - x_bar);
            sxh += w * (x - x_bar) * (h - h_bar);
        }
        let beta = sxh / sxx;
        let alpha = h_bar - beta * x_bar;
        if alpha >= ALPHA_FLOOR && beta >= 0.0 && alpha + beta <= CR_INIT_CEIL {
            return LinearFit {
                alpha,
                beta,
                rss: self.rss(k, alpha, beta),
                clamped: false,
            };
        }

        let fit = |alpha: f64, beta: f64| LinearFit {
            alpha,
            beta,
            rss: self.rss(k, alpha, beta),
            clamped: true,
        };
        let mut candidates = Vec::with_capacity(3);
        // beta = 0
        candidates.push(fit(h_bar.clamp(ALPHA_FLOOR, CR_INIT_CEIL), 0.0));
        // alpha at its floor
        let (num, den) = ws.clone().zip(hs.clone()).zip(&xs).fold((0.0, 0.0), |(n, d), ((w, h), x)| {
            (n + w * x * (h - ALPHA_FLOOR), d + w * x * x)
        });
        candidates.push(fit(ALPHA_FLOOR, (num / den).clamp(0.0, CR_INIT_CEIL - ALPHA_FLOOR)));
        // cr_init at its ceiling
        let (num, den) = ws.zip(hs).zip(&xs).fold((0.0, 0.0), |(n, d), ((w, h), x)| {
            (n + w * (1.0 - x) * (h - CR_INIT_CEIL * x), d + w * (1.0 - x) * (1.0 - x))
        });
        let a = (num / den).clamp(ALPHA_FLOOR, CR_INIT_CEIL);
        candidates.push(fit(a, CR_INIT_CEIL - a));

        candidates
            .into_iter()
            .min_by(|a, b| a.rss.total_cmp(&b.rss))
            .expect("three candidates")
    }
}

/// Fits `cr_nat + (cr_init - cr_nat) exp(-k t)` to the hazard series.
///
/// For each `k` the model is linear in `(cr_nat, cr_init - cr_nat)` and is
/// solved in closed form, so only `k` is searched: a log-spaced scan over
/// `[0.001, 2]` followed by golden-section refinement to a relative width of
/// `1e-8`.
pub fn fit_churn_curve(series: &HazardSeries) -> Result<FitResult> {
    let pts = &series.points;
    if pts.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: pts.len(),
        });
    }
    let w_sum: f64 = pts.iter().map(|p| p.weight).sum();
    if !(w_sum > 0.0) {
        return Err(Error::validation("hazards", "all weights are zero"));
    }
    let h_bar = pts.iter().map(|p| p.weight * p.hazard).sum::<f64>() / w_sum;
    if !(h_bar > 0.0) {
        return Err(Error::validation("hazards", "all hazards are zero"));
    }
    let trial = series.trial_churn;

    if pts.iter().all(|p| (p.hazard - h_bar).abs() <= 1e-12) {
        let params = ChurnParams::new(h_bar, h_bar, CONSTANT_MODEL_K, trial)?;
        return Ok(finish(
            pts,
            params,
            FitDiagnostics {
                iterations: 0,
                rss_history: Vec::new(),
                k_bracket: [K_MIN, K_MAX],
                constant_hazard: true,
                clamped: false,
                k_at_search_bound: false,
                in_recommended_region: params.in_recommended_region(),
            },
        ));
    }

    let design = Design { points: pts };
    let ratio = (K_MAX / K_MIN).ln() / (K_SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..K_SCAN_POINTS).map(|i| K_MIN * (ratio * i as f64).exp()).collect();
    let best = grid
        .iter()
        .map(|&k| design.solve(k).rss)
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .expect("non-empty scan");
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(K_SCAN_POINTS - 1)]);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (design.solve(c).rss, design.solve(d).rss);
    let mut rss_history = Vec::new();
    let mut iterations = 0;
    while hi - lo > K_REL_TOL * 0.5 * (lo + hi) && iterations < 200 {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = design.solve(c).rss;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = design.solve(d).rss;
        }
        iterations += 1;
        rss_history.push(fc.min(fd));
    }
    let k = if fc <= fd { c } else { d };
    let fit = design.solve(k);
    let params = ChurnParams::new(fit.alpha + fit.beta, fit.alpha, k, trial)?;
    let k_at_search_bound = (k - K_MIN).abs() <= 1e-6 * K_MIN || (K_MAX - k).abs() <= 1e-6 * K_MAX;
    Ok(finish(
        pts,
        params,
        FitDiagnostics {
            iterations,
            rss_history,
            k_bracket: [lo, hi],
            constant_hazard: false,
            clamped: fit.clamped,
            k_at_search_bound,
            in_recommended_region: params.in_recommended_region(),
        },
    ))
}

fn finish(pts: &[HazardPoint], params: ChurnParams, diagnostics: FitDiagnostics) -> FitResult {
    let points: Vec<FittedPoint> = pts
        .iter()
        .map(|p| FittedPoint {
            t: p.t,
            observed: p.hazard,
            fitted: conditional_churn(&params, p.t),
            weight: p.weight,
        })
        .collect();
    let rss = points
        .iter()
        .map(|p| p.weight * (p.observed - p.fitted) * (p.observed - p.fitted))
        .sum();
    FitResult {
        params,
        rss,
        points,
        diagnostics,
    }
}

/// Cohort table to fitted parameters in one step.
pub fn calibrate(table: &CohortTable) -> Result<FitResult> {
    fit_churn_curve(&hazard_rates(table)?)
}
