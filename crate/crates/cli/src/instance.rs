//! Instance files: one JSON document describing a known-odds queue, an
//! adaptive queue, or an arrival stream.
//!
//! ```json
//! {"schema": 1, "kind": "known", "probs": [0.35, 0.1, 0.05]}
//! {"schema": 1, "kind": "adaptive", "h": 0.9, "n": 50, "alpha": 0.05, "outcomes": "--+", "true_p": 0.1}
//! {"schema": 1, "kind": "horizon", "horizon": 10, "expected_requests": 30, "true_p": 0.2}
//! ```

use std::path::Path;

use anyhow::{bail, Context};
use oddstop_core::adaptive::{AdaptiveState, HealthScores, SequencePolicy};
use oddstop_core::horizon::{Arrival, ArrivalModel, Intensity, DEFAULT_PRIOR_MEAN_HEALTH};
use oddstop_core::odds::OddsProfile;
use oddstop_core::simulator::HealthRange;
use oddstop_core::Outcome;
use oddstop_service::config::{field_error, Elicitation};
use oddstop_service::ValidationError;
use serde::Deserialize;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawInstance {
    Known {
        probs: Vec<f64>,
    },
    Adaptive {
        #[serde(default)]
        h: Option<Scores>,
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        elicit: Option<Elicitation>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        max_initial_failures: Option<usize>,
        #[serde(default)]
        outcomes: Option<String>,
        #[serde(default)]
        true_p: Option<f64>,
    },
    Horizon {
        horizon: f64,
        #[serde(default)]
        intensity: Option<Intensity>,
        #[serde(default)]
        expected_requests: Option<f64>,
        #[serde(default)]
        prior_mean_health: Option<f64>,
        #[serde(default)]
        arrivals: Vec<Arrival>,
        #[serde(default)]
        true_p: Option<f64>,
        #[serde(default)]
        health: Option<HealthRange>,
    },
}

/// A single common score, or one per patient.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Scores {
    Equal(f64),
    Each(Vec<f64>),
}

#[derive(Debug, Clone)]
pub enum Instance {
    Known(OddsProfile),
    Adaptive(AdaptiveInstance),
    Horizon(HorizonInstance),
}

#[derive(Debug, Clone)]
pub struct AdaptiveInstance {
    pub state: AdaptiveState,
    pub policy: SequencePolicy,
    /// `h` when every patient shares one score.
    pub equal_h: Option<f64>,
    pub true_p: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct HorizonInstance {
    pub model: ArrivalModel,
    pub true_p: Option<f64>,
    pub health: Option<HealthRange>,
}

impl Instance {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid instance {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        let object = value
            .as_object_mut()
            .context("instance must be a JSON object")?;
        match object.remove("schema").map(|v| v.as_u64()) {
            Some(Some(SCHEMA_VERSION)) => {}
            Some(_) => bail!("schema: unsupported version (expected {SCHEMA_VERSION})"),
            None => bail!("schema: required"),
        }
        let raw: RawInstance = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("{path}: {}", e.into_inner())
        })?;
        Ok(raw.validate()?)
    }

    pub fn from_probs(probs: Vec<f64>) -> anyhow::Result<Self> {
        Ok(RawInstance::Known { probs }.validate()?)
    }
}

impl RawInstance {
    fn validate(self) -> Result<Instance, ValidationError> {
        match self {
            RawInstance::Known { probs } => OddsProfile::new(probs)
                .map(Instance::Known)
                .map_err(|e| field_error("probs", e)),
            RawInstance::Adaptive {
                h,
                n,
                elicit,
                alpha,
                max_initial_failures,
                outcomes,
                true_p,
            } => {
                let (scores, equal_h) = match (h, elicit) {
                    (Some(Scores::Equal(h)), None) => {
                        let n =
                            n.ok_or_else(|| ValidationError::new("n", "required with a single h"))?;
                        if n == 0 {
                            return Err(ValidationError::new("n", "must be at least 1"));
                        }
                        (
                            HealthScores::new(vec![h; n]).map_err(|e| field_error("h", e))?,
                            Some(h),
                        )
                    }
                    (Some(Scores::Each(h)), None) => {
                        if n.is_some_and(|n| n != h.len()) {
                            return Err(ValidationError::new(
                                "n",
                                format!("disagrees with {} scores", h.len()),
                            ));
                        }
                        (HealthScores::new(h).map_err(|e| field_error("h", e))?, None)
                    }
                    (None, Some(e)) => (
                        HealthScores::from_ranks(e.h_min, e.h_max, &e.ranks)
                            .map_err(|err| field_error("elicit", err))?,
                        None,
                    ),
                    (Some(_), Some(_)) => {
                        return Err(ValidationError::new(
                            "h",
                            "give either h or elicit, not both",
                        ))
                    }
                    (None, None) => return Err(ValidationError::new("h", "required (or elicit)")),
                };
                let policy = SequencePolicy::new(alpha.unwrap_or(0.0), max_initial_failures)
                    .map_err(|e| field_error("", e))?;
                let word = outcomes.unwrap_or_default();
                let observed = Outcome::parse_word(&word)
                    .ok_or_else(|| ValidationError::new("outcomes", "use only '+' and '-'"))?;
                let state = AdaptiveState::with_outcomes(scores, &observed)
                    .map_err(|e| field_error("outcomes", e))?;
                check_probability("true_p", true_p)?;
                Ok(Instance::Adaptive(AdaptiveInstance {
                    state,
                    policy,
                    equal_h,
                    true_p,
                }))
            }
            RawInstance::Horizon {
                horizon,
                intensity,
                expected_requests,
                prior_mean_health,
                arrivals,
                true_p,
                health,
            } => {
                let intensity = match (intensity, expected_requests) {
                    (Some(i), None) => i,
                    (None, Some(r)) if r >= 0.0 && r.is_finite() => {
                        Intensity::from_expected_count(r, horizon)
                    }
                    (None, Some(_)) => {
                        return Err(ValidationError::new(
                            "expected_requests",
                            "must be finite and >= 0",
                        ))
                    }
                    (Some(_), Some(_)) => {
                        return Err(ValidationError::new(
                            "intensity",
                            "give either intensity or expected_requests",
                        ))
                    }
                    (None, None) => {
                        return Err(ValidationError::new(
                            "intensity",
                            "required (or expected_requests)",
                        ))
                    }
                };
                let prior = prior_mean_health.unwrap_or(DEFAULT_PRIOR_MEAN_HEALTH);
                let mut model =
                    ArrivalModel::new(horizon, intensity, prior).map_err(|e| field_error("", e))?;
                for (i, a) in arrivals.iter().enumerate() {
                    model.record_arrival(a.time, a.h, a.outcome).map_err(|e| {
                        ValidationError::new(format!("arrivals[{i}]"), e.to_string())
                    })?;
                }
                check_probability("true_p", true_p)?;
                if let Some(range) = health {
                    if !(range.low > 0.0 && range.high < 1.0 && range.low <= range.high) {
                        return Err(ValidationError::new(
                            "health",
                            "must satisfy 0 < low <= high < 1",
                        ));
                    }
                }
                Ok(Instance::Horizon(HorizonInstance {
                    model,
                    true_p,
                    health,
                }))
            }
        }
    }
}

fn check_probability(field: &str, value: Option<f64>) -> Result<(), ValidationError> {
    match value {
        Some(p) if !(p > 0.0 && p < 1.0) => Err(ValidationError::new(
            field,
            format!("{p} must lie in (0, 1)"),
        )),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> String {
        format!("{:#}", Instance::parse(text).unwrap_err())
    }

    #[test]
    fn known() {
        let i = Instance::parse(r#"{"schema":1,"kind":"known","probs":[0.5,0.25]}"#).unwrap();
        assert!(matches!(i, Instance::Known(p) if p.len() == 2));
        assert!(err(r#"{"schema":1,"kind":"known","probs":[0.5,0]}"#).starts_with("probs[1]"));
        assert!(err(r#"{"schema":1,"kind":"known","probs":[]}"#).starts_with("probs"));
        assert!(err(r#"{"kind":"known","probs":[0.5]}"#).starts_with("schema"));
        assert!(err(r#"{"schema":2,"kind":"known","probs":[0.5]}"#).starts_with("schema"));
        assert!(err(r#"{"schema":1,"kind":"known","probs":[0.5],"extra":1}"#).contains("extra"));
    }

    #[test]
    fn adaptive_equal_scores() {
        let i = Instance::parse(
            r#"{"schema":1,"kind":"adaptive","h":0.9,"n":5,"outcomes":"-+","alpha":0.1}"#,
        )
        .unwrap();
        let Instance::Adaptive(a) = i else { panic!() };
        assert_eq!(a.state.scheduled(), 5);
        assert_eq!(a.state.completed(), 2);
        assert_eq!(a.equal_h, Some(0.9));
        assert_eq!(a.policy.alpha, 0.1);
        assert!(err(r#"{"schema":1,"kind":"adaptive","h":0.9}"#).starts_with("n"));
        assert!(err(r#"{"schema":1,"kind":"adaptive","h":[0.9,0.8],"n":3}"#).starts_with("n"));
        assert!(
            err(r#"{"schema":1,"kind":"adaptive","h":[0.9],"outcomes":"++"}"#)
                .starts_with("outcomes")
        );
        assert!(err(r#"{"schema":1,"kind":"adaptive","h":[0.9],"alpha":1}"#).starts_with("alpha"));
        assert!(
            err(r#"{"schema":1,"kind":"adaptive","h":[0.9],"true_p":1.2}"#).starts_with("true_p")
        );
    }

    #[test]
    fn horizon() {
        let i = Instance::parse(
            r#"{"schema":1,"kind":"horizon","horizon":10,"expected_requests":30,
                "arrivals":[{"time":1,"h":0.8,"outcome":"+"}],"true_p":0.2}"#,
        )
        .unwrap();
        let Instance::Horizon(h) = i else { panic!() };
        assert_eq!(h.model.arrivals().len(), 1);
        assert!(err(r#"{"schema":1,"kind":"horizon","horizon":10,"expected_requests":3,"arrivals":[{"time":11,"h":0.5,"outcome":"-"}]}"#)
            .starts_with("arrivals[0]"));
    }
}
