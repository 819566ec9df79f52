//! Deviation of the product approximation from the exact exit series.
//!
//! For each parameter point the total absolute deviation
//! `sum_{t=1}^{H} |P_approx(t) - P_exact(t)|` is measured (`H = 1000` by
//! default). A [`SweepGrid`] spans alpha, beta, gamma and k; beta is sampled
//! as a fraction of its pointwise upper bound `1 - alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ChurnParams;
use crate::series::{CompensatedSum, ExitProbabilities, ProbabilityModel};

pub const DEFAULT_HORIZON: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AxisScale {
    #[default]
    Linear,
    Log,
}

/// `count` points from `lo` to `hi` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    #[serde(default)]
    pub scale: AxisScale,
}

impl Axis {
    pub fn linear(lo: f64, hi: f64, count: usize) -> Self {
        Axis {
            lo,
            hi,
            count,
            scale: AxisScale::Linear,
        }
    }

    /// Single-point axis.
    pub fn fixed(value: f64) -> Self {
        Axis::linear(value, value, 1)
    }

    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                let f = i as f64 / last;
                match self.scale {
                    AxisScale::Linear => self.lo + (self.hi - self.lo) * f,
                    AxisScale::Log => (self.lo.ln() + (self.hi.ln() - self.lo.ln()) * f).exp(),
                }
            })
            .collect()
    }

    fn validate(&self, name: &str, domain: &str, contains: fn(f64) -> bool) -> Result<()> {
        let field = format!("grid.{name}");
        if self.count == 0 {
            return Err(Error::EmptyGrid);
        }
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::validation(field, "need finite lo <= hi"));
        }
        if !(contains(self.lo) && contains(self.hi)) {
            return Err(Error::validation(field, format!("range must lie within {domain}")));
        }
        if self.scale == AxisScale::Log && self.lo <= 0.0 {
            return Err(Error::validation(field, "log axis needs lo > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: Axis,
    /// beta = fraction * (1 - alpha)
    pub beta_fraction: Axis,
    pub gamma: Axis,
    pub k: Axis,
}

impl Default for SweepGrid {
    /// Ten evenly spaced points per axis over [0.001, 0.999].
    fn default() -> Self {
        let axis = Axis::linear(0.001, 0.999, 10);
        SweepGrid {
            alpha: axis,
            beta_fraction: axis,
            gamma: axis,
            k: axis,
        }
    }
}

impl SweepGrid {
    /// Grid with one point at the given parameters.
    pub fn single(params: &ChurnParams) -> Self {
        SweepGrid {
            alpha: Axis::fixed(params.alpha()),
            beta_fraction: Axis::fixed(params.beta() / (1.0 - params.alpha())),
            gamma: Axis::fixed(params.gamma()),
            k: Axis::fixed(params.k()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.alpha.validate("alpha", "(0, 1)", |x| x > 0.0 && x < 1.0)?;
        self.beta_fraction.validate("beta_fraction", "[0, 1)", |x| (0.0..1.0).contains(&x))?;
        self.gamma.validate("gamma", "(0, 1]", |x| x > 0.0 && x <= 1.0)?;
        self.k.validate("k", "(0, inf)", |x| x > 0.0)
    }

    pub fn len(&self) -> usize {
        self.alpha.count * self.beta_fraction.count * self.gamma.count * self.k.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Deviation at one grid point. Field order matches the CSV header
/// `alpha,beta,gamma,k,total_abs_deviation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationRecord {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: f64,
    pub total_abs_deviation: f64,
}

impl DeviationRecord {
    pub fn params(&self) -> Result<ChurnParams> {
        ChurnParams::new(self.alpha + self.beta, self.alpha, self.k, 1.0 - self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub average: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub stdev: f64,
    pub grid_points: usize,
}

impl DeviationStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let n = values.len() as f64;
        let mean = values.iter().copied().collect::<CompensatedSum>().value() / n;
        let var = values
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .collect::<CompensatedSum>()
            .value()
            / n;
        Ok(DeviationStats {
            average: mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            stdev: var.sqrt(),
            grid_points: values.len(),
        })
    }

    pub fn from_records(records: &[DeviationRecord]) -> Result<Self> {
        let values: Vec<f64> = records.iter().map(|r| r.total_abs_deviation).collect();
        Self::from_values(&values)
    }
}

/// Per-period view of the deviation at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationProfile {
    pub total: f64,
    /// Largest single-period `|P_approx(t) - P_exact(t)|`.
    pub max_single_period: f64,
    pub worst_period: usize,
}

pub fn deviation_profile(params: &ChurnParams, horizon: usize) -> DeviationProfile {
    let exact = ExitProbabilities::new(params, ProbabilityModel::Exact);
    let approx = ExitProbabilities::new(params, ProbabilityModel::Approx);
    let mut total = CompensatedSum::default();
    let mut max_single_period = 0.0;
    let mut worst_period = 0;
    for ((t, e), (_, a)) in exact.zip(approx).take(horizon) {
        let d = (a - e).abs();
        total.add(d);
        if d > max_single_period {
            max_single_period = d;
            worst_period = t;
        }
    }
    DeviationProfile {
        total: total.value(),
        max_single_period,
        worst_period,
    }
}

/// `sum_{t=1}^{horizon} |P_approx(t) - P_exact(t)|`.
pub fn total_abs_deviation(params: &ChurnParams, horizon: usize) -> f64 {
    deviation_profile(params, horizon).total
}

/// Evaluates every grid point in grid order (alpha outermost, k innermost),
/// handing each record to `sink` as it is produced.
pub fn sweep_with<F>(grid: &SweepGrid, horizon: usize, mut sink: F) -> Result<DeviationStats>
where
    F: FnMut(&DeviationRecord) -> Result<()>,
{
    grid.validate()?;
    let (alphas, fractions, gammas, ks) = (
        grid.alpha.points(),
        grid.beta_fraction.points(),
        grid.gamma.points(),
        grid.k.points(),
    );
    let mut totals = Vec::with_capacity(grid.len());
    for &alpha in &alphas {
        for &fraction in &fractions {
            let beta = fraction * (1.0 - alpha);
            for &gamma in &gammas {
                for &k in &ks {
                    let params = ChurnParams::new(alpha + beta, alpha, k, 1.0 - gamma)?;
                    let record = DeviationRecord {
                        alpha,
                        beta,
                        gamma,
                        k,
                        total_abs_deviation: total_abs_deviation(&params, horizon),
                    };
                    sink(&record)?;
                    totals.push(record.total_abs_deviation);
                }
            }
        }
    }
    DeviationStats::from_values(&totals)
}

/// [`sweep_with`] collecting all records in memory.
pub fn sweep(grid: &SweepGrid, horizon: usize) -> Result<(DeviationStats, Vec<DeviationRecord>)> {
    let mut records = Vec::with_capacity(grid.len());
    let stats = sweep_with(grid, horizon, |r| {
        records.push(*r);
        Ok(())
    })?;
    Ok((stats, records))
}

/// CSV sink for deviation records.
pub struct RecordWriter<W: std::io::Write> {
    inner: csv::Writer<W>,
}

impl<W: std::io::Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        RecordWriter {
            inner: csv::Writer::from_writer(out),
        }
    }

    pub fn write(&mut self, record: &DeviationRecord) -> Result<()> {
        Ok(self.inner.serialize(record)?)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// [`sweep_with`] streaming records to CSV.
pub fn sweep_to_csv<W: std::io::Write>(
    grid: &SweepGrid,
    horizon: usize,
    out: W,
) -> Result<DeviationStats> {
    let mut writer = RecordWriter::new(out);
    let stats = sweep_with(grid, horizon, |r| writer.write(r))?;
    writer.finish()?;
    Ok(stats)
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<DeviationRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["alpha", "beta", "gamma", "k", "total_abs_deviation"] {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tendency {
    Small,
    Neutral,
    Large,
}

/// Where a subset of records sits along one parameter, as mean position in
/// `[0, 1]` relative to the parameter's range over the whole population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisTendency {
    pub subset_mean: f64,
    pub population_mean: f64,
    pub tendency: Tendency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffenderPattern {
    pub alpha: AxisTendency,
    pub beta: AxisTendency,
    pub gamma: AxisTendency,
    pub k: AxisTendency,
}

/// Mean positions closer than this to the population mean are neutral.
const TENDENCY_BAND: f64 = 0.05;

pub fn offender_pattern(population: &[DeviationRecord], subset: &[DeviationRecord]) -> OffenderPattern {
    let axis = |get: fn(&DeviationRecord) -> f64| {
        let lo = population.iter().map(get).fold(f64::INFINITY, f64::min);
        let hi = population.iter().map(get).fold(f64::NEG_INFINITY, f64::max);
        let pos = |r: &DeviationRecord| if hi > lo { (get(r) - lo) / (hi - lo) } else { 0.5 };
        let mean = |rs: &[DeviationRecord]| rs.iter().map(pos).sum::<f64>() / rs.len() as f64;
        let (subset_mean, population_mean) = (mean(subset), mean(population));
        let tendency = if subset_mean < population_mean - TENDENCY_BAND {
            Tendency::Small
        } else if subset_mean > population_mean + TENDENCY_BAND {
            Tendency::Large
        } else {
            Tendency::Neutral
        };
        AxisTendency {
            subset_mean,
            population_mean,
            tendency,
        }
    };
    OffenderPattern {
        alpha: axis(|r| r.alpha),
        beta: axis(|r| r.beta),
        gamma: axis(|r| r.gamma),
        k: axis(|r| r.k),
    }
}

/// Records sorted by decreasing deviation, ties broken by grid order.
pub fn ranked(records: &[DeviationRecord]) -> Vec<DeviationRecord> {
    let mut out = records.to_vec();
    out.sort_by(|a, b| b.total_abs_deviation.total_cmp(&a.total_abs_deviation));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub threshold: f64,
    pub total_points: usize,
    pub valid_points: usize,
    pub fraction_valid: f64,
    /// Points with k < 1, and the fraction of those below the threshold.
    pub k_below_one_points: usize,
    pub k_below_one_fraction_valid: f64,
    pub summary: String,
    /// Records at or above the threshold, worst first.
    pub offenders: Vec<DeviationRecord>,
    pub offender_pattern: Option<OffenderPattern>,
    /// Per-period breakdown at the worst offender.
    pub worst_offender_profile: Option<DeviationProfile>,
}

pub fn classify_validity(
    records: &[DeviationRecord],
    threshold: f64,
    horizon: usize,
) -> Result<ValidityReport> {
    if records.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let offenders: Vec<DeviationRecord> = ranked(records)
        .into_iter()
        .filter(|r| r.total_abs_deviation >= threshold)
        .collect();
    let valid_points = records.len() - offenders.len();
    let fraction_valid = valid_points as f64 / records.len() as f64;

    let k_below: Vec<&DeviationRecord> = records.iter().filter(|r| r.k < 1.0).collect();
    let k_below_valid = k_below.iter().filter(|r| r.total_abs_deviation < threshold).count();
    let k_below_one_fraction_valid = if k_below.is_empty() {
        1.0
    } else {
        k_below_valid as f64 / k_below.len() as f64
    };

    let summary = if offenders.is_empty() {
        "100% valid".to_string()
    } else {
        format!("{:.2}% valid", 100.0 * fraction_valid)
    };
    let offender_pattern = (!offenders.is_empty()).then(|| offender_pattern(records, &offenders));
    let worst_offender_profile = match offenders.first() {
        Some(r) => Some(deviation_profile(&r.params()?, horizon)),
        None => None,
    };

    Ok(ValidityReport {
        threshold,
        total_points: records.len(),
        valid_points,
        fraction_valid,
        k_below_one_points: k_below.len(),
        k_below_one_fraction_valid,
        summary,
        offenders,
        offender_pattern,
        worst_offender_profile,
    })
}
