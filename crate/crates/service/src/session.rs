//! A session is a pure fold over its event log.
//!
//! Every mutation is first expressed as an [`Event`], then applied with
//! [`Session::apply`]. Live sessions and replayed logs go through the same
//! code path, so their JSON projections agree byte for byte.

use std::collections::HashMap;

use oddstop_core::adaptive::{
    inference_report, recommend, AdaptiveState, InferenceReport, SequencePolicy,
};
use oddstop_core::horizon::{
    assess, first_refusal_time, refusal_integral, ArrivalModel, RefusalDecision,
};
use oddstop_core::odds::{stop_index, value_curve, OddsProfile, StopPlan, ValueCurve};
use oddstop_core::{Action, Outcome, Source};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{field_error, Protocol, SessionConfig, Validated};
use crate::error::{Result, ServiceError, ValidationError};

/// One line of a session's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    /// 1-based, contiguous within a session.
    pub seq: u64,
    /// RFC 3339, UTC, millisecond precision.
    pub ts: String,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Created,
    Outcome,
    Consent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreatedPayload {
    pub id: String,
    pub config: SessionConfig,
}

/// Body of `POST /v1/sessions/{id}/outcomes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRequest {
    pub outcome: Outcome,
    /// Observed health score; P4 only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Arrival time within the horizon; P4 only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomePayload {
    #[serde(flatten)]
    pub request: OutcomeRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

/// Body of `POST /v1/sessions/{id}/consent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsentRequest {
    #[serde(default = "granted_by_default")]
    pub granted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn granted_by_default() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Armed,
    Stopped,
    ConsentRequired,
}

impl From<Action> for Status {
    fn from(action: Action) -> Self {
        match action {
            Action::Continue => Status::Active,
            Action::Armed => Status::Armed,
            Action::Stop => Status::Stopped,
            Action::ConsentRequired => Status::ConsentRequired,
        }
    }
}

/// Risk figures shown to the patient before the next treatment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Risk {
    pub expected_further: f64,
    pub prob_no_further: f64,
    pub further_success_prob: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Risk {
    fn new(expected_further: f64, prob_no_further: f64, alpha: Option<f64>) -> Self {
        Self {
            expected_further,
            prob_no_further,
            further_success_prob: 1.0 - prob_no_further,
            alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Refusal {
    #[serde(flatten)]
    pub decision: RefusalDecision,
    pub first_refusal_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Figures {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<StopPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_curve: Option<ValueCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inference: Option<InferenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refusal: Option<Refusal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk: Option<Risk>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub action: Action,
    pub source: Source,
    pub figures: Figures,
}

#[derive(Debug, Clone, PartialEq)]
enum Engine {
    Known {
        profile: OddsProfile,
        plan: StopPlan,
        curve: ValueCurve,
        outcomes: Vec<Outcome>,
    },
    Adaptive {
        state: AdaptiveState,
        policy: SequencePolicy,
        threshold: bool,
    },
    Horizon {
        model: ArrivalModel,
    },
}

impl Engine {
    fn completed(&self) -> usize {
        match self {
            Engine::Known { outcomes, .. } => outcomes.len(),
            Engine::Adaptive { state, .. } => state.completed(),
            Engine::Horizon { model } => model.arrivals().len(),
        }
    }

    fn successes(&self) -> usize {
        match self {
            Engine::Known { outcomes, .. } => outcomes.iter().filter(|o| o.is_success()).count(),
            Engine::Adaptive { state, .. } => state.successes(),
            Engine::Horizon { model } => model.successes(),
        }
    }

    fn scheduled(&self) -> Option<usize> {
        match self {
            Engine::Known { profile, .. } => Some(profile.len()),
            Engine::Adaptive { state, .. } => Some(state.scheduled()),
            Engine::Horizon { .. } => None,
        }
    }
}

/// One applied event, as shown in the session history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub seq: u64,
    pub ts: String,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arrival_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub granted: Option<bool>,
    pub action: Action,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
struct Receipt {
    seq: u64,
    request: OutcomeRequest,
    recommendation: Recommendation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    id: String,
    config: SessionConfig,
    engine: Engine,
    created_at: String,
    updated_at: String,
    last_seq: u64,
    /// Completed count at the latest granted consent.
    consented_at: Option<usize>,
    refused: bool,
    history: Vec<Step>,
    recommendation: Recommendation,
    receipts: HashMap<String, Receipt>,
}

/// Result of submitting an outcome.
#[derive(Debug, Clone, PartialEq)]
pub enum Recorded {
    /// A new event to persist, and the state after it.
    Fresh { event: Event, next: Box<Session> },
    /// The idempotency key was already used for this request.
    Replayed {
        seq: u64,
        recommendation: Recommendation,
    },
}

/// JSON projection served by `GET /v1/sessions/{id}`.
#[derive(Debug, Serialize)]
pub struct SessionView<'a> {
    pub id: &'a str,
    pub protocol: Protocol,
    pub status: Status,
    pub created_at: &'a str,
    pub updated_at: &'a str,
    pub seq: u64,
    pub config: &'a SessionConfig,
    pub completed: usize,
    pub successes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheduled: Option<usize>,
    pub recommendation: &'a Recommendation,
    pub history: &'a [Step],
}

/// Entry of `GET /v1/sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub protocol: Protocol,
    pub status: Status,
    pub created_at: String,
    pub updated_at: String,
    pub completed: usize,
}

/// Current time in the event-log format.
pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Session {
    /// Validates `config` and returns the session with its creation event.
    pub fn start(id: String, config: SessionConfig, ts: String) -> Result<(Session, Event)> {
        let payload = CreatedPayload { id, config };
        let event = Event {
            seq: 1,
            ts,
            kind: EventKind::Created,
            payload: to_value(&payload),
        };
        let session = Session::from_created(&event)?;
        Ok((session, event))
    }

    /// Folds a complete event log.
    pub fn replay(events: &[Event]) -> Result<Session> {
        let (first, rest) = events
            .split_first()
            .ok_or_else(|| ServiceError::BadRequest("empty event log".into()))?;
        let mut session = Session::from_created(first)?;
        for event in rest {
            session = session.apply(event)?;
        }
        Ok(session)
    }

    fn from_created(event: &Event) -> Result<Session> {
        if event.kind != EventKind::Created || event.seq != 1 {
            return Err(ServiceError::BadRequest(
                "log must open with a created event at seq 1".into(),
            ));
        }
        let payload: CreatedPayload = from_value(&event.payload)?;
        let engine = match payload.config.validate()? {
            Validated::Known(profile) => {
                let plan = stop_index(&profile);
                let curve = value_curve(&profile);
                Engine::Known {
                    profile,
                    plan,
                    curve,
                    outcomes: Vec::new(),
                }
            }
            Validated::Adaptive {
                scores,
                policy,
                threshold,
            } => Engine::Adaptive {
                state: AdaptiveState::new(scores),
                policy,
                threshold,
            },
            Validated::Horizon(model) => Engine::Horizon { model },
        };
        let mut session = Session {
            id: payload.id,
            config: payload.config,
            engine,
            created_at: event.ts.clone(),
            updated_at: event.ts.clone(),
            last_seq: 1,
            consented_at: None,
            refused: false,
            history: Vec::new(),
            recommendation: Recommendation {
                action: Action::Continue,
                source: Source::OddsRule,
                figures: Figures::default(),
            },
            receipts: HashMap::new(),
        };
        session.recommendation = session.recommend();
        Ok(session)
    }

    /// The state after `event`. `self` is unchanged.
    pub fn apply(&self, event: &Event) -> Result<Session> {
        if event.seq != self.last_seq + 1 {
            return Err(ServiceError::conflict(format!(
                "expected seq {}, got {}",
                self.last_seq + 1,
                event.seq
            )));
        }
        let mut next = self.clone();
        let mut step = Step {
            seq: event.seq,
            ts: event.ts.clone(),
            kind: event.kind,
            outcome: None,
            h: None,
            arrival_time: None,
            granted: None,
            action: Action::Continue,
            source: Source::OddsRule,
        };
        match event.kind {
            EventKind::Created => return Err(ServiceError::conflict("session already created")),
            EventKind::Outcome => {
                let payload: OutcomePayload = from_value(&event.payload)?;
                self.check_accepts_outcome()?;
                let request = &payload.request;
                next.record(request)?;
                step.outcome = Some(request.outcome);
                step.h = request.h;
                step.arrival_time = request.arrival_time;
                if let Some(key) = payload.idempotency_key {
                    if self.receipts.contains_key(&key) {
                        return Err(ServiceError::conflict(format!(
                            "idempotency key {key} already used"
                        )));
                    }
                    next.receipts.insert(
                        key,
                        Receipt {
                            seq: event.seq,
                            request: payload.request.clone(),
                            recommendation: next.recommend(),
                        },
                    );
                }
            }
            EventKind::Consent => {
                let payload: ConsentRequest = from_value(&event.payload)?;
                if self.status() != Status::ConsentRequired {
                    return Err(ServiceError::conflict(format!(
                        "consent applies only to a session awaiting it; status is {:?}",
                        self.status()
                    )));
                }
                if payload.granted {
                    next.consented_at = Some(self.engine.completed());
                } else {
                    next.refused = true;
                }
                step.granted = Some(payload.granted);
            }
        }
        next.last_seq = event.seq;
        next.updated_at = event.ts.clone();
        next.recommendation = next.recommend();
        step.action = next.recommendation.action;
        step.source = next.recommendation.source;
        next.history.push(step);
        Ok(next)
    }

    /// Builds the event for an outcome submission, honouring idempotency
    /// keys: a repeated key with the same body returns the original answer.
    pub fn submit_outcome(
        &self,
        request: OutcomeRequest,
        key: Option<String>,
        ts: String,
    ) -> Result<Recorded> {
        if let Some(receipt) = key.as_ref().and_then(|k| self.receipts.get(k)) {
            if receipt.request != request {
                return Err(ServiceError::conflict(
                    "idempotency key reused with a different body",
                ));
            }
            return Ok(Recorded::Replayed {
                seq: receipt.seq,
                recommendation: receipt.recommendation.clone(),
            });
        }
        let payload = OutcomePayload {
            request,
            idempotency_key: key,
        };
        let event = Event {
            seq: self.last_seq + 1,
            ts,
            kind: EventKind::Outcome,
            payload: to_value(&payload),
        };
        let next = self.apply(&event)?;
        Ok(Recorded::Fresh {
            event,
            next: Box::new(next),
        })
    }

    pub fn submit_consent(&self, request: ConsentRequest, ts: String) -> Result<(Event, Session)> {
        let event = Event {
            seq: self.last_seq + 1,
            ts,
            kind: EventKind::Consent,
            payload: to_value(&request),
        };
        let next = self.apply(&event)?;
        Ok((event, next))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn protocol(&self) -> Protocol {
        self.config.protocol
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn status(&self) -> Status {
        self.recommendation.action.into()
    }

    pub fn recommendation(&self) -> &Recommendation {
        &self.recommendation
    }

    pub fn view(&self) -> SessionView<'_> {
        SessionView {
            id: &self.id,
            protocol: self.config.protocol,
            status: self.status(),
            created_at: &self.created_at,
            updated_at: &self.updated_at,
            seq: self.last_seq,
            config: &self.config,
            completed: self.engine.completed(),
            successes: self.engine.successes(),
            scheduled: self.engine.scheduled(),
            recommendation: &self.recommendation,
            history: &self.history,
        }
    }

    /// The canonical JSON projection.
    pub fn view_json(&self) -> String {
        serde_json::to_string(&self.view()).expect("session view serializes")
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            protocol: self.config.protocol,
            status: self.status(),
            created_at: self.created_at.clone(),
            updated_at: self.updated_at.clone(),
            completed: self.engine.completed(),
        }
    }

    fn check_accepts_outcome(&self) -> Result<()> {
        match self.status() {
            Status::Stopped => Err(ServiceError::conflict("session is stopped")),
            Status::ConsentRequired => Err(ServiceError::conflict(
                "consent required before the next treatment",
            )),
            Status::Active | Status::Armed => Ok(()),
        }
    }

    fn record(&mut self, request: &OutcomeRequest) -> Result<()> {
        let not_here = |field: &str| {
            ValidationError::new(
                field,
                format!("not accepted under {:?}", self.config.protocol),
            )
        };
        match &mut self.engine {
            Engine::Known { outcomes, .. } => {
                if request.h.is_some() {
                    return Err(not_here("h").into());
                }
                if request.arrival_time.is_some() {
                    return Err(not_here("arrival_time").into());
                }
                outcomes.push(request.outcome);
            }
            Engine::Adaptive { state, .. } => {
                if request.h.is_some() {
                    return Err(not_here("h").into());
                }
                if request.arrival_time.is_some() {
                    return Err(not_here("arrival_time").into());
                }
                state
                    .record(request.outcome)
                    .map_err(|e| field_error("outcome", e))?;
            }
            Engine::Horizon { model } => {
                let h = request
                    .h
                    .ok_or_else(|| ValidationError::new("h", "required under P4"))?;
                let time = request
                    .arrival_time
                    .ok_or_else(|| ValidationError::new("arrival_time", "required under P4"))?;
                model
                    .record_arrival(time, h, request.outcome)
                    .map_err(|e| {
                        let field = match e {
                            oddstop_core::Error::ScoreOutOfRange { .. } => "h",
                            _ => "arrival_time",
                        };
                        ValidationError::new(field, e.to_string())
                    })?;
            }
        }
        Ok(())
    }

    /// Decision for the current state. Consent and refusal take precedence
    /// over the statistical rules only while no success has been seen.
    fn recommend(&self) -> Recommendation {
        let k = self.engine.completed();
        let successes = self.engine.successes();
        let consent = |figures: Figures| {
            let action = if self.consented_at == Some(k) {
                Action::Continue
            } else {
                Action::ConsentRequired
            };
            Recommendation {
                action,
                source: Source::ConsentPolicy,
                figures,
            }
        };
        if self.refused {
            let figures = self.recommendation.figures.clone();
            return Recommendation {
                action: Action::Stop,
                source: Source::ConsentPolicy,
                figures,
            };
        }
        match &self.engine {
            Engine::Known {
                profile,
                plan,
                curve,
                outcomes,
            } => {
                let no_further = profile.no_further_success();
                let figures = Figures {
                    plan: Some(*plan),
                    value_curve: Some(curve.clone()),
                    risk: Some(Risk::new(profile.expected_further(k), no_further[k], None)),
                    ..Figures::default()
                };
                let last_success = outcomes.last().is_some_and(|o| o.is_success());
                let (action, source) = if k > 0 && plan.stops_at(k, last_success) {
                    (Action::Stop, Source::OddsRule)
                } else if k == profile.len() {
                    (Action::Stop, Source::Exhausted)
                } else if k + 1 >= plan.index {
                    (Action::Armed, Source::OddsRule)
                } else {
                    (Action::Continue, Source::OddsRule)
                };
                Recommendation {
                    action,
                    source,
                    figures,
                }
            }
            Engine::Adaptive {
                state,
                policy,
                threshold,
            } => {
                let (action, source) = recommend(state, policy);
                let figures = match inference_report(state) {
                    Ok(report) => Figures {
                        risk: Some(Risk::new(
                            report.expected_further,
                            report.prob_no_further,
                            threshold.then_some(policy.alpha),
                        )),
                        inference: Some(report),
                        ..Figures::default()
                    },
                    Err(_) => Figures::default(),
                };
                if action == Action::ConsentRequired {
                    return consent(figures);
                }
                Recommendation {
                    action,
                    source,
                    figures,
                }
            }
            Engine::Horizon { model } => {
                let decision =
                    refusal_integral(model, model.now()).expect("now lies within the horizon");
                let figures = Figures {
                    refusal: Some(Refusal {
                        decision,
                        first_refusal_time: first_refusal_time(model),
                    }),
                    risk: Some(Risk::new(
                        decision.integral_value,
                        (-decision.integral_value).exp(),
                        None,
                    )),
                    ..Figures::default()
                };
                if k == 0 {
                    return Recommendation {
                        action: Action::Continue,
                        source: Source::RefusalRule,
                        figures,
                    };
                }
                if successes == 0 {
                    return consent(figures);
                }
                Recommendation {
                    action: assess(model),
                    source: Source::RefusalRule,
                    figures,
                }
            }
        }
    }
}

fn to_value<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("payload serializes")
}

fn from_value<T: for<'de> Deserialize<'de>>(value: &Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ServiceError::Validation(ValidationError::new(
            if path == "." { String::new() } else { path },
            e.into_inner().to_string(),
        ))
    })
}
