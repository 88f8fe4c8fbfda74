//! Session configuration as submitted by clients, and its validation into
//! the engine each protocol runs.

use oddstop_core::adaptive::{HealthScores, SequencePolicy};
use oddstop_core::horizon::{ArrivalModel, Intensity, DEFAULT_PRIOR_MEAN_HEALTH};
use oddstop_core::odds::OddsProfile;
use oddstop_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// Known success probabilities.
    P1,
    /// Estimated odds from health-weighted outcomes.
    P2,
    /// P2 plus a lower threshold on the chance of a further success.
    P3,
    /// Poisson stream of requests over a fixed horizon.
    P4,
}

/// Scores given either directly or through rank elicitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elicitation {
    pub h_min: f64,
    pub h_max: f64,
    /// Perceived health rank per patient, larger is healthier.
    pub ranks: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub protocol: Protocol,
    /// P1: success probability per patient, in treatment order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    /// P2/P3: health scores per patient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    /// P2/P3: alternative to `h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elicit: Option<Elicitation>,
    /// P2/P3. `alpha` must be 0 under P2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<SequencePolicy>,
    /// P4: horizon end `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// P4: arrival intensity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<Intensity>,
    /// P4: alternative to `intensity`, giving `λ = r / t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_requests: Option<f64>,
    /// P4: mean health used before the first arrival.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_mean_health: Option<f64>,
}

/// Validated per-protocol parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Validated {
    Known(OddsProfile),
    Adaptive {
        scores: HealthScores,
        policy: SequencePolicy,
        threshold: bool,
    },
    Horizon(ArrivalModel),
}

impl SessionConfig {
    pub fn validate(&self) -> Result<Validated, ValidationError> {
        let only = |allowed: &[&str]| -> Result<(), ValidationError> {
            let present = [
                ("probs", self.probs.is_some()),
                ("h", self.h.is_some()),
                ("elicit", self.elicit.is_some()),
                ("policy", self.policy.is_some()),
                ("horizon", self.horizon.is_some()),
                ("intensity", self.intensity.is_some()),
                ("expected_requests", self.expected_requests.is_some()),
                ("prior_mean_health", self.prior_mean_health.is_some()),
            ];
            match present
                .iter()
                .find(|(name, set)| *set && !allowed.contains(name))
            {
                Some((name, _)) => Err(ValidationError::new(
                    *name,
                    format!("not applicable to protocol {:?}", self.protocol),
                )),
                None => Ok(()),
            }
        };
        match self.protocol {
            Protocol::P1 => {
                only(&["probs"])?;
                let probs = self
                    .probs
                    .clone()
                    .ok_or_else(|| ValidationError::new("probs", "required"))?;
                OddsProfile::new(probs)
                    .map(Validated::Known)
                    .map_err(|e| field_error("probs", e))
            }
            Protocol::P2 | Protocol::P3 => {
                only(&["h", "elicit", "policy"])?;
                let scores = match (&self.h, &self.elicit) {
                    (Some(h), None) => {
                        HealthScores::new(h.clone()).map_err(|e| field_error("h", e))?
                    }
                    (None, Some(e)) => HealthScores::from_ranks(e.h_min, e.h_max, &e.ranks)
                        .map_err(|err| field_error("elicit", err))?,
                    (Some(_), Some(_)) => {
                        return Err(ValidationError::new(
                            "h",
                            "give either h or elicit, not both",
                        ))
                    }
                    (None, None) => return Err(ValidationError::new("h", "required (or elicit)")),
                };
                let policy = self.policy.unwrap_or_default();
                policy.validate().map_err(|e| field_error("policy", e))?;
                let threshold = self.protocol == Protocol::P3;
                if !threshold && policy.alpha != 0.0 {
                    return Err(ValidationError::new(
                        "policy.alpha",
                        "a threshold requires protocol P3",
                    ));
                }
                Ok(Validated::Adaptive {
                    scores,
                    policy,
                    threshold,
                })
            }
            Protocol::P4 => {
                only(&[
                    "horizon",
                    "intensity",
                    "expected_requests",
                    "prior_mean_health",
                ])?;
                let horizon = self
                    .horizon
                    .ok_or_else(|| ValidationError::new("horizon", "required"))?;
                let intensity = match (&self.intensity, self.expected_requests) {
                    (Some(i), None) => i.clone(),
                    (None, Some(r)) => {
                        if !(r >= 0.0 && r.is_finite()) {
                            return Err(ValidationError::new(
                                "expected_requests",
                                "must be finite and >= 0",
                            ));
                        }
                        Intensity::from_expected_count(r, horizon)
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
                let prior = self.prior_mean_health.unwrap_or(DEFAULT_PRIOR_MEAN_HEALTH);
                ArrivalModel::new(horizon, intensity, prior)
                    .map(Validated::Horizon)
                    .map_err(|e| field_error("", e))
            }
        }
    }
}

/// Maps a core error onto a field path below `prefix`.
pub fn field_error(prefix: &str, err: CoreError) -> ValidationError {
    let join = |leaf: &str| match (prefix.is_empty(), leaf.is_empty()) {
        (true, _) => leaf.to_string(),
        (false, true) => prefix.to_string(),
        (false, false) => format!("{prefix}.{leaf}"),
    };
    let field = match &err {
        CoreError::ProbabilityOutOfRange { index, .. }
        | CoreError::ScoreOutOfRange { index, .. } => {
            format!("{prefix}[{index}]")
        }
        CoreError::Invalid { field, .. } => join(field),
        _ => prefix.to_string(),
    };
    ValidationError::new(field, err.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> SessionConfig {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn known_profile() {
        let c = parse(r#"{"protocol":"P1","probs":[0.35,0.1,0.05,0.3,0.1,0.15,0.25]}"#);
        assert!(matches!(c.validate(), Ok(Validated::Known(_))));
        let c = parse(r#"{"protocol":"P1","probs":[0.3,1.0]}"#);
        assert_eq!(c.validate().unwrap_err().field, "probs[1]");
        let c = parse(r#"{"protocol":"P1"}"#);
        assert_eq!(c.validate().unwrap_err().field, "probs");
        let c = parse(r#"{"protocol":"P1","probs":[0.3],"h":[0.5]}"#);
        assert_eq!(c.validate().unwrap_err().field, "h");
    }

    #[test]
    fn adaptive_requires_patients() {
        let c = parse(r#"{"protocol":"P2","h":[]}"#);
        assert_eq!(c.validate().unwrap_err().field, "h");
        let c = parse(r#"{"protocol":"P2","h":[0.5,0.5],"policy":{"alpha":0.1}}"#);
        assert_eq!(c.validate().unwrap_err().field, "policy.alpha");
        let c = parse(r#"{"protocol":"P3","h":[0.5],"policy":{"alpha":1.5}}"#);
        assert_eq!(c.validate().unwrap_err().field, "policy.alpha");
    }

    #[test]
    fn elicited_threshold_session() {
        let c = parse(
            r#"{"protocol":"P3","elicit":{"h_min":0.4,"h_max":0.9,"ranks":[1,2,3,4,5]},"policy":{"alpha":0.05}}"#,
        );
        match c.validate().unwrap() {
            Validated::Adaptive {
                scores,
                policy,
                threshold,
            } => {
                assert!(threshold);
                assert_eq!(policy.alpha, 0.05);
                assert_eq!(scores.len(), 5);
                assert!((scores.scores()[2] - 0.65).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn horizon_config() {
        let c = parse(r#"{"protocol":"P4","horizon":10,"expected_requests":30}"#);
        assert!(matches!(c.validate(), Ok(Validated::Horizon(_))));
        let c = parse(r#"{"protocol":"P4","horizon":10}"#);
        assert_eq!(c.validate().unwrap_err().field, "intensity");
        let c = parse(
            r#"{"protocol":"P4","horizon":10,"intensity":{"kind":"piecewise","pieces":[{"until":5,"rate":-1}]}}"#,
        );
        assert_eq!(c.validate().unwrap_err().field, "intensity.pieces[0].rate");
        let c = parse(r#"{"protocol":"P4","horizon":-1,"expected_requests":3}"#);
        assert_eq!(c.validate().unwrap_err().field, "horizon");
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(
            serde_json::from_str::<SessionConfig>(r#"{"protocol":"P1","probz":[0.1]}"#).is_err()
        );
    }
}
