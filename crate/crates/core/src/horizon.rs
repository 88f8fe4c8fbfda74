//! Treatment requests arriving as an inhomogeneous Poisson stream over a
//! fixed horizon `[0, t]`.
//!
//! At time `s` the rule refuses new requests once
//!
//! ```text
//! ∫_s^t λ(u) · P_s · m_h(s) du ≤ 1
//! ```
//!
//! where `P_s = S / H` is the current estimate of the internal success
//! probability and `m_h(s)` the mean health score seen so far. Both are
//! frozen at their time-`s` values and the rule is re-evaluated after
//! every arrival.

use serde::{Deserialize, Serialize};

use crate::decision::{Action, Outcome};
use crate::error::{Error, Result};

pub const DEFAULT_PRIOR_MEAN_HEALTH: f64 = 0.5;

/// One constant-rate stretch of a piecewise intensity, ending at `until`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub until: f64,
    pub rate: f64,
}

/// Arrival intensity `λ(u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intensity {
    Constant {
        rate: f64,
    },
    /// Pieces start at 0 and are contiguous; the last one ends at `t`.
    Piecewise {
        pieces: Vec<Piece>,
    },
}

impl Intensity {
    /// `λ = r / t` for `r` expected requests over the horizon.
    pub fn from_expected_count(expected: f64, horizon: f64) -> Self {
        Intensity::Constant {
            rate: expected / horizon,
        }
    }

    fn validate(&self, horizon: f64) -> Result<()> {
        match self {
            Intensity::Constant { rate } => {
                if !(*rate >= 0.0 && rate.is_finite()) {
                    return Err(Error::invalid(
                        "intensity.rate",
                        format!("{rate} must be finite and >= 0"),
                    ));
                }
            }
            Intensity::Piecewise { pieces } => {
                if pieces.is_empty() {
                    return Err(Error::invalid(
                        "intensity.pieces",
                        "at least one piece is required",
                    ));
                }
                let mut start = 0.0;
                for (i, piece) in pieces.iter().enumerate() {
                    if !(piece.rate >= 0.0 && piece.rate.is_finite()) {
                        return Err(Error::invalid(
                            format!("intensity.pieces[{i}].rate"),
                            format!("{} must be finite and >= 0", piece.rate),
                        ));
                    }
                    if piece.until.is_nan() || piece.until <= start {
                        return Err(Error::invalid(
                            format!("intensity.pieces[{i}].until"),
                            format!("{} must exceed the previous end {start}", piece.until),
                        ));
                    }
                    start = piece.until;
                }
                if start != horizon {
                    return Err(Error::invalid(
                        "intensity.pieces",
                        format!("last piece ends at {start}, horizon is {horizon}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn rate_at(&self, u: f64) -> f64 {
        match self {
            Intensity::Constant { rate } => *rate,
            Intensity::Piecewise { pieces } => pieces
                .iter()
                .find(|p| u < p.until)
                .or(pieces.last())
                .map_or(0.0, |p| p.rate),
        }
    }

    pub fn max_rate(&self) -> f64 {
        match self {
            Intensity::Constant { rate } => *rate,
            Intensity::Piecewise { pieces } => pieces.iter().map(|p| p.rate).fold(0.0, f64::max),
        }
    }

    /// `∫_a^b λ(u) du`, exact.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match self {
            Intensity::Constant { rate } => rate * (b - a),
            Intensity::Piecewise { pieces } => {
                let mut start = 0.0;
                let mut total = 0.0;
                for p in pieces {
                    let lo = a.max(start);
                    let hi = b.min(p.until);
                    if hi > lo {
                        total += p.rate * (hi - lo);
                    }
                    start = p.until;
                }
                total
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub time: f64,
    pub h: f64,
    pub outcome: Outcome,
}

/// Horizon, intensity and the arrivals observed so far.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrivalModel {
    horizon: f64,
    intensity: Intensity,
    prior_mean_health: f64,
    arrivals: Vec<Arrival>,
    successes: usize,
    health_sum: f64,
}

impl ArrivalModel {
    pub fn new(horizon: f64, intensity: Intensity, prior_mean_health: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(
                "horizon",
                format!("{horizon} must be finite and > 0"),
            ));
        }
        if !(prior_mean_health > 0.0 && prior_mean_health < 1.0) {
            return Err(Error::invalid(
                "prior_mean_health",
                format!("{prior_mean_health} must lie in (0, 1)"),
            ));
        }
        intensity.validate(horizon)?;
        Ok(Self {
            horizon,
            intensity,
            prior_mean_health,
            arrivals: Vec::new(),
            successes: 0,
            health_sum: 0.0,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn intensity(&self) -> &Intensity {
        &self.intensity
    }

    pub fn arrivals(&self) -> &[Arrival] {
        &self.arrivals
    }

    pub fn successes(&self) -> usize {
        self.successes
    }

    /// Time of the latest arrival, or 0.
    pub fn now(&self) -> f64 {
        self.arrivals.last().map_or(0.0, |a| a.time)
    }

    /// `P = S / H` over the arrivals so far; 0 before any arrival.
    pub fn predictor(&self) -> f64 {
        if self.arrivals.is_empty() {
            0.0
        } else {
            self.successes as f64 / self.health_sum
        }
    }

    /// Running mean of observed scores, and whether it is still the prior.
    pub fn mean_health(&self) -> (f64, bool) {
        if self.arrivals.is_empty() {
            (self.prior_mean_health, true)
        } else {
            (self.health_sum / self.arrivals.len() as f64, false)
        }
    }

    /// Appends an arrival in place. Arrivals must be time-ordered.
    pub fn record_arrival(&mut self, time: f64, h: f64, outcome: Outcome) -> Result<()> {
        if !(time >= 0.0 && time <= self.horizon) {
            return Err(Error::OutOfHorizon {
                time,
                horizon: self.horizon,
            });
        }
        if time < self.now() {
            return Err(Error::OutOfOrder {
                time,
                previous: self.now(),
            });
        }
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::ScoreOutOfRange {
                index: self.arrivals.len(),
                value: h,
            });
        }
        self.arrivals.push(Arrival { time, h, outcome });
        self.successes += outcome.is_success() as usize;
        self.health_sum += h;
        Ok(())
    }
}

/// Updated copy of `model` after one more arrival.
pub fn update_on_arrival(
    model: &ArrivalModel,
    time: f64,
    h: f64,
    outcome: Outcome,
) -> Result<ArrivalModel> {
    let mut next = model.clone();
    next.record_arrival(time, h, outcome)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefusalDecision {
    pub at: f64,
    pub integral_value: f64,
    pub refuse_from_now: bool,
    pub predictor: f64,
    pub mean_health: f64,
    pub mean_health_is_prior: bool,
}

/// Evaluates the refusal integral at time `s` with the current estimates.
pub fn refusal_integral(model: &ArrivalModel, s: f64) -> Result<RefusalDecision> {
    if !(s >= 0.0 && s <= model.horizon) {
        return Err(Error::OutOfHorizon {
            time: s,
            horizon: model.horizon,
        });
    }
    let predictor = model.predictor();
    let (mean_health, prior) = model.mean_health();
    let integral_value = model.intensity.integral(s, model.horizon) * predictor * mean_health;
    Ok(RefusalDecision {
        at: s,
        integral_value,
        refuse_from_now: integral_value <= 1.0,
        predictor,
        mean_health,
        mean_health_is_prior: prior,
    })
}

/// Smallest `s ∈ [now, t]` at which the refusal inequality holds, by
/// bisection on the non-increasing integral, to within `1e-9 · t`.
pub fn first_refusal_time(model: &ArrivalModel) -> f64 {
    let weight = model.predictor() * model.mean_health().0;
    let tail = |s: f64| model.intensity.integral(s, model.horizon) * weight;
    let mut lo = model.now();
    if tail(lo) <= 1.0 {
        return lo;
    }
    let mut hi = model.horizon;
    let tol = 1e-9 * model.horizon;
    // Invariant: tail(lo) > 1 >= tail(hi).
    while hi - lo > tol {
        let mid = lo + (hi - lo) / 2.0;
        if tail(mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Recommendation after the latest arrival.
///
/// No success yet gives [`Action::ConsentRequired`]; a success once the
/// integral is at most 1 gives [`Action::Stop`]; a failure in that region
/// gives [`Action::Armed`].
pub fn assess(model: &ArrivalModel) -> Action {
    if model.successes() == 0 {
        return Action::ConsentRequired;
    }
    let decision = refusal_integral(model, model.now()).expect("now lies within the horizon");
    if !decision.refuse_from_now {
        Action::Continue
    } else if model
        .arrivals()
        .last()
        .is_some_and(|a| a.outcome.is_success())
    {
        Action::Stop
    } else {
        Action::Armed
    }
}
