//! JSON documents exchanged by the command line tool and the HTTP service.
//!
//! Both front ends build their responses with the functions here and render
//! them with [`to_json`], so identical inputs give byte-identical output.
//! Money amounts travel as decimal strings (`"-35"`, `"-31.48..."`); on input
//! a plain JSON number is accepted as well. Strings are parsed to `f64`, so
//! amounts carry about 1e-15 relative precision internally.

use serde::de::DeserializeOwned;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::calibration::{FitDiagnostics, FitResult, FittedPoint, HazardSeries};
use crate::error::{Error, Result};
use crate::model::{mean_time_to_churn, scv_constant_closed, scv_exponential_closed, ModelKind, ScvBreakdown};
use crate::params::{Channel, ChurnParams, CostParams};
use crate::sensitivity::{analytic_gradient, feature_shift_delta, numeric_gradient, FactorShift, Param, Partial, SensitivityReport};
use crate::series::{scv_series, ProbabilityModel, TruncationPolicy};

/// Serde adapter for money amounts.
pub mod money {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(value)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        let v = match Raw::deserialize(d)? {
            Raw::Number(x) => x,
            Raw::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("invalid decimal amount {s:?}")))?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(serde::de::Error::custom("amount must be finite"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnDoc {
    pub cr_init: f64,
    pub cr_nat: f64,
    pub k: f64,
    pub p_trial_churn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDoc {
    pub share: f64,
    #[serde(with = "money")]
    pub cac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostsDoc {
    pub channels: Vec<ChannelDoc>,
    #[serde(with = "money")]
    pub cc: f64,
    #[serde(with = "money")]
    pub r_pt: f64,
}

/// The params file: `{"churn": {...}, "costs": {...}}`. `costs` may be
/// absent in files written by calibration, which only determines the churn
/// curve; evaluating such a file fails with a `costs` validation error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    pub churn: ChurnDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostsDoc>,
}

impl ParamsDoc {
    pub fn from_model(churn: &ChurnParams, costs: Option<&CostParams>) -> Self {
        ParamsDoc {
            churn: ChurnDoc {
                cr_init: churn.cr_init(),
                cr_nat: churn.cr_nat(),
                k: churn.k(),
                p_trial_churn: churn.p_trial_churn(),
            },
            costs: costs.map(|c| CostsDoc {
                channels: c
                    .channels()
                    .iter()
                    .map(|ch| ChannelDoc {
                        share: ch.share,
                        cac: ch.cac,
                    })
                    .collect(),
                cc: c.cc(),
                r_pt: c.r_pt(),
            }),
        }
    }

    pub fn churn(&self) -> Result<ChurnParams> {
        let c = &self.churn;
        ChurnParams::new(c.cr_init, c.cr_nat, c.k, c.p_trial_churn)
    }

    pub fn resolve(&self) -> Result<(ChurnParams, CostParams)> {
        let churn = self.churn()?;
        let costs = self
            .costs
            .as_ref()
            .ok_or_else(|| Error::validation("costs", "missing"))?;
        Ok((churn, costs.resolve()?))
    }
}

impl CostsDoc {
    pub fn resolve(&self) -> Result<CostParams> {
        let channels = self
            .channels
            .iter()
            .map(|ch| Channel {
                share: ch.share,
                cac: ch.cac,
            })
            .collect();
        CostParams::new(channels, self.cc, self.r_pt)
    }
}

/// Deserializes a JSON document, reporting the path of the offending field
/// as a validation error where one is known.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if !inner.is_data() || path.is_empty() || path == "." || path == "?" {
            Error::Parse(inner.to_string())
        } else {
            Error::validation(path, inner.to_string())
        }
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("response types serialize");
    s.push('\n');
    s
}

/// How many periods a series route sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Horizon {
    #[default]
    Auto,
    Fixed(usize),
}

impl Horizon {
    pub fn truncation(self) -> TruncationPolicy {
        match self {
            Horizon::Auto => TruncationPolicy::default(),
            Horizon::Fixed(n) => TruncationPolicy::Fixed(n),
        }
    }
}

impl std::str::FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Horizon::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Horizon::Fixed(n)),
            _ => Err(Error::validation("horizon", format!("expected a positive integer or \"auto\", got {s:?}"))),
        }
    }
}

impl Serialize for Horizon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Horizon::Auto => s.serialize_str("auto"),
            Horizon::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(u64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Number(0) => Err(serde::de::Error::custom("horizon must be positive")),
            Raw::Number(n) => Ok(Horizon::Fixed(n as usize)),
        }
    }
}

impl Serialize for ModelKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownDoc {
    #[serde(with = "money")]
    pub scv: f64,
    #[serde(with = "money")]
    pub acquisition_term: f64,
    #[serde(with = "money")]
    pub retention_term: f64,
    pub tau_mean: f64,
    pub normalization: f64,
    pub model_kind: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

impl From<&ScvBreakdown> for BreakdownDoc {
    fn from(b: &ScvBreakdown) -> Self {
        BreakdownDoc {
            scv: b.scv,
            acquisition_term: b.acquisition_term,
            retention_term: b.retention_term,
            tau_mean: b.tau_mean,
            normalization: b.normalization,
            model_kind: b.model_kind,
            horizon: b.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScvResponse {
    pub params: ParamsDoc,
    pub result: BreakdownDoc,
    pub in_recommended_region: bool,
}

/// Evaluates SCV with the requested route. `const-closed` uses `cr_init` as
/// the constant churn rate; `horizon` only affects the series routes.
pub fn compute_scv(doc: &ParamsDoc, model: ModelKind, horizon: Horizon) -> Result<ScvResponse> {
    let (churn, costs) = doc.resolve()?;
    let breakdown = evaluate(&churn, &costs, model, horizon)?;
    Ok(ScvResponse {
        params: ParamsDoc::from_model(&churn, Some(&costs)),
        result: BreakdownDoc::from(&breakdown),
        in_recommended_region: churn.in_recommended_region(),
    })
}

pub fn evaluate(churn: &ChurnParams, costs: &CostParams, model: ModelKind, horizon: Horizon) -> Result<ScvBreakdown> {
    match model {
        ModelKind::ExponentialClosed => scv_exponential_closed(churn, costs),
        ModelKind::ConstantClosed => scv_constant_closed(churn.p_trial_churn(), churn.cr_init(), costs),
        ModelKind::ExactSeries => scv_series(churn, costs, ProbabilityModel::Exact, horizon.truncation()),
        ModelKind::ApproxSeries => scv_series(churn, costs, ProbabilityModel::Approx, horizon.truncation()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartialDoc {
    pub analytic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_error: Option<f64>,
}

/// Partials keyed by parameter name, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialsDoc(pub Vec<Partial>);

impl Serialize for PartialsDoc {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for p in &self.0 {
            map.serialize_entry(
                p.param.name(),
                &PartialDoc {
                    analytic: p.analytic,
                    numeric: p.numeric,
                    rel_error: p.rel_error,
                },
            )?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityResponse {
    pub params: ParamsDoc,
    pub label: &'static str,
    pub partials: PartialsDoc,
    /// Parameter names by decreasing absolute analytic partial.
    pub ranked: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_error: Option<f64>,
}

/// Analytic partials, with finite differences alongside when `verify_step`
/// is given.
pub fn compute_sensitivity(doc: &ParamsDoc, verify_step: Option<f64>) -> Result<SensitivityResponse> {
    let (churn, costs) = doc.resolve()?;
    let report: SensitivityReport = match verify_step {
        Some(step) => {
            if !(step > 0.0 && step < 1.0) {
                return Err(Error::validation("step", "must lie in (0, 1)"));
            }
            numeric_gradient(&churn, &costs, step)?
        }
        None => analytic_gradient(&churn, &costs)?,
    };
    Ok(SensitivityResponse {
        params: ParamsDoc::from_model(&churn, Some(&costs)),
        label: report.label,
        ranked: report.ranked().iter().map(|p| p.param.name()).collect(),
        max_error: report.max_error(),
        partials: PartialsDoc(report.partials),
        step: verify_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Endpoint {
    pub tau: f64,
    pub cr_init: f64,
    /// `dSCV/dcr_init` at this endpoint.
    pub partial: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Endpoints {
    pub from: Endpoint,
    pub to: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhatIfResponse {
    pub params: ParamsDoc,
    pub tau_from: f64,
    pub tau_to: f64,
    pub share_delta: f64,
    pub endpoints: Endpoints,
    pub mean_partial: f64,
    pub delta_cr_init: f64,
    #[serde(with = "money")]
    pub delta_scv: f64,
    pub note: &'static str,
}

pub fn compute_whatif(doc: &ParamsDoc, tau_from: f64, tau_to: f64, share_delta: f64) -> Result<WhatIfResponse> {
    let (churn, costs) = doc.resolve()?;
    let shift = FactorShift::new(tau_from, tau_to, share_delta)?;
    let r = feature_shift_delta(&churn, &costs, &shift)?;
    Ok(WhatIfResponse {
        params: ParamsDoc::from_model(&churn, Some(&costs)),
        tau_from,
        tau_to,
        share_delta,
        endpoints: Endpoints {
            from: Endpoint {
                tau: tau_from,
                cr_init: r.cr_init_from,
                partial: r.partial_from,
            },
            to: Endpoint {
                tau: tau_to,
                cr_init: r.cr_init_to,
                partial: r.partial_to,
            },
        },
        mean_partial: r.mean_partial,
        delta_cr_init: r.delta_cr_init,
        delta_scv: r.delta_scv,
        note: r.note,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrateResponse {
    pub params: ParamsDoc,
    pub rss: f64,
    pub trial_churn: f64,
    pub hazards: Vec<FittedPoint>,
    pub diagnostics: FitDiagnostics,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Mean time to churn of the fitted curve.
    pub tau_mean: f64,
}

/// Fitted churn curve. With `costs` the echoed params are complete and can
/// be fed straight back to `compute`.
pub fn calibrate_response(
    series: &HazardSeries,
    fit: &FitResult,
    costs: Option<&CostParams>,
) -> Result<CalibrateResponse> {
    Ok(CalibrateResponse {
        params: ParamsDoc::from_model(&fit.params, costs),
        rss: fit.rss,
        trial_churn: series.trial_churn,
        hazards: fit.points.clone(),
        diagnostics: fit.diagnostics.clone(),
        warnings: series.diagnostics.clone(),
        tau_mean: mean_time_to_churn(&fit.params)?,
    })
}

/// Parses cohort CSV text and fits it.
pub fn compute_calibration(csv_text: &str, costs: Option<&CostParams>) -> Result<CalibrateResponse> {
    let table = crate::calibration::CohortTable::from_csv(csv_text.as_bytes())?;
    let series = crate::calibration::hazard_rates(&table)?;
    let fit = crate::calibration::fit_churn_curve(&series)?;
    calibrate_response(&series, &fit, costs)
}

/// Body of every error response and of CLI diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorDoc {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl From<&Error> for ErrorDoc {
    fn from(e: &Error) -> Self {
        ErrorDoc {
            error: e.to_string(),
            field: e.field().map(str::to_owned),
        }
    }
}

/// Parameters named in sensitivity output, in output order.
pub fn param_names() -> Vec<&'static str> {
    Param::ALL.iter().map(|p| p.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE_STUDY: &str = r#"{
        "churn": {"cr_init": 0.30, "cr_nat": 0.05, "k": 0.6, "p_trial_churn": 0.36},
        "costs": {"channels": [{"share": 1, "cac": "-35"}], "cc": "0", "r_pt": "6"}
    }"#;

    #[test]
    fn case_study_round_trip() {
        let doc: ParamsDoc = from_json(CASE_STUDY).unwrap();
        let r = compute_scv(&doc, ModelKind::ExponentialClosed, Horizon::Auto).unwrap();
        assert!((r.result.scv + 31.48).abs() < 0.01);
        let text = to_json(&r);
        assert!(text.contains("\"cac\": \"-35\""), "{text}");
        assert!(text.contains("\"model_kind\": \"exp-closed\""));
        assert!(!text.contains("horizon"));
        let echoed: serde_json::Value = serde_json::from_str(&text).unwrap();
        let again: ParamsDoc = from_json(&echoed["params"].to_string()).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn money_accepts_numbers_and_strings() {
        let a: ChannelDoc = from_json(r#"{"share": 1, "cac": -35.5}"#).unwrap();
        let b: ChannelDoc = from_json(r#"{"share": 1, "cac": "-35.5"}"#).unwrap();
        assert_eq!(a, b);
        let e = from_json::<ChannelDoc>(r#"{"share": 1, "cac": "abc"}"#).unwrap_err();
        assert_eq!(e.field(), Some("cac"));
    }

    #[test]
    fn money_strings_round_trip_exactly() {
        for x in [-31.484_263_118_204_7, 0.1 + 0.2, 1e-300, -0.0] {
            let s = to_json(&BreakdownDoc {
                scv: x,
                acquisition_term: 0.0,
                retention_term: 0.0,
                tau_mean: 1.0,
                normalization: 1.0,
                model_kind: ModelKind::ExactSeries,
                horizon: None,
            });
            let v: serde_json::Value = serde_json::from_str(&s).unwrap();
            let back: f64 = v["scv"].as_str().unwrap().parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_have_paths() {
        let e = from_json::<ParamsDoc>(&CASE_STUDY.replace("\"k\"", "\"kk\"")).unwrap_err();
        assert!(e.field().unwrap().starts_with("churn"), "{e:?}");
        let doc: ParamsDoc = from_json(&CASE_STUDY.replace("\"share\": 1", "\"share\": 0.9")).unwrap();
        let e = compute_scv(&doc, ModelKind::ExponentialClosed, Horizon::Auto).unwrap_err();
        assert_eq!(e.field(), Some("costs.channels"));
        let e = from_json::<ParamsDoc>("{");
        assert!(matches!(e, Err(Error::Parse(_))), "{e:?}");
    }

    #[test]
    fn churn_only_document() {
        let doc: ParamsDoc =
            from_json(r#"{"churn": {"cr_init": 0.3, "cr_nat": 0.05, "k": 0.6, "p_trial_churn": 0.36}}"#).unwrap();
        assert!(doc.churn().is_ok());
        assert_eq!(doc.resolve().unwrap_err().field(), Some("costs"));
        assert!(!to_json(&doc).contains("costs"));
    }

    #[test]
    fn horizon_parsing() {
        assert_eq!("auto".parse::<Horizon>().unwrap(), Horizon::Auto);
        assert_eq!("1000".parse::<Horizon>().unwrap(), Horizon::Fixed(1000));
        assert!("0".parse::<Horizon>().is_err());
        assert!("x".parse::<Horizon>().is_err());
        assert_eq!(from_json::<Horizon>("1000").unwrap(), Horizon::Fixed(1000));
        assert_eq!(from_json::<Horizon>("\"auto\"").unwrap(), Horizon::Auto);
    }

    #[test]
    fn constant_model_uses_cr_init() {
        let doc: ParamsDoc = from_json(CASE_STUDY).unwrap();
        let r = compute_scv(&doc, ModelKind::ConstantClosed, Horizon::Auto).unwrap();
        assert!((r.result.scv + 22.2).abs() < 1e-9);
    }

    #[test]
    fn sensitivity_keys_in_order() {
        let doc: ParamsDoc = from_json(CASE_STUDY).unwrap();
        let r = compute_sensitivity(&doc, None).unwrap();
        let v: serde_json::Value = serde_json::from_str(&to_json(&r)).unwrap();
        assert_eq!(v["partials"]["cac_mean"]["analytic"], 1.0);
        assert!(v["partials"]["cr_init"].get("numeric").is_none());
        let text = to_json(&r.partials);
        let positions: Vec<usize> = param_names().iter().map(|n| text.find(&format!("\"{n}\"")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(compute_sensitivity(&doc, Some(0.0)).is_err());
    }

    #[test]
    fn whatif_equal_taus() {
        let doc: ParamsDoc = from_json(CASE_STUDY).unwrap();
        let r = compute_whatif(&doc, 2.0, 2.0, 1.0).unwrap();
        assert_eq!(r.delta_scv, 0.0);
        assert_eq!(compute_whatif(&doc, 2.0, 2.0, 0.0).unwrap_err().field(), Some("share_delta"));
    }
}
