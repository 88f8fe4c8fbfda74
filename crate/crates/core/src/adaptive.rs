//! Unknown internal success probability `p`, scaled per patient by a health
//! score: patient `k` succeeds with probability `h_k · p`.
//!
//! After `k` treatments with `S_k` successes the estimate is
//! `p̂ = S_k / H_k` with `H_k = h_1 + … + h_k`, and the future odds are
//! estimated term by term as
//!
//! ```text
//! r̂_j = h_j S_k / [H_k - h_j S_k]^+        (j = k+1..n)
//! ```
//!
//! A non-positive bracket makes the term `+∞`.

use serde::{Deserialize, Serialize};

use crate::decision::{Action, Outcome, Source};
use crate::error::{Error, Result};

/// Physician-assigned health scores `h_k ∈ (0, 1)` with prefix sums.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthScores {
    h: Vec<f64>,
    #[serde(rename = "H")]
    prefix: Vec<f64>,
}

impl HealthScores {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::Empty {
                what: "health score list",
            });
        }
        if let Some((index, &value)) = h
            .iter()
            .enumerate()
            .find(|(_, h)| !(**h > 0.0 && **h < 1.0))
        {
            return Err(Error::ScoreOutOfRange { index, value });
        }
        let prefix = h
            .iter()
            .scan(0.0, |acc, x| {
                *acc += x;
                Some(*acc)
            })
            .collect();
        Ok(Self { h, prefix })
    }

    /// Spreads scores evenly over `[h_min, h_max]` by perceived health
    /// rank (larger rank = healthier). Patients sharing a rank share the
    /// midpoint of the positions they jointly occupy.
    pub fn from_ranks(h_min: f64, h_max: f64, ranks: &[i64]) -> Result<Self> {
        if !(h_min > 0.0 && h_min < 1.0) {
            return Err(Error::invalid(
                "h_min",
                format!("{h_min} must lie in (0, 1)"),
            ));
        }
        if !(h_max > 0.0 && h_max < 1.0) {
            return Err(Error::invalid(
                "h_max",
                format!("{h_max} must lie in (0, 1)"),
            ));
        }
        if h_min > h_max {
            return Err(Error::invalid(
                "h_min",
                format!("{h_min} exceeds h_max = {h_max}"),
            ));
        }
        let n = ranks.len();
        if n == 0 {
            return Err(Error::Empty { what: "rank list" });
        }
        let mut by_rank: Vec<usize> = (0..n).collect();
        by_rank.sort_by_key(|&i| ranks[i]);
        let step = if n > 1 {
            (h_max - h_min) / (n - 1) as f64
        } else {
            0.0
        };
        let mut h = vec![0.0; n];
        let mut start = 0;
        while start < n {
            let mut end = start;
            while end + 1 < n && ranks[by_rank[end + 1]] == ranks[by_rank[start]] {
                end += 1;
            }
            let position = if n > 1 {
                (start + end) as f64 / 2.0
            } else {
                0.0
            };
            let value = if n > 1 {
                h_min + step * position
            } else {
                (h_min + h_max) / 2.0
            };
            for &i in &by_rank[start..=end] {
                h[i] = value;
            }
            start = end + 1;
        }
        Self::new(h)
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.h
    }

    /// `H_k` for `k = 0..=n`, with `H_0 = 0`.
    pub fn prefix_sum(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.prefix[k - 1]
        }
    }
}

/// Online state: the scores plus the outcomes observed so far.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveState {
    scores: HealthScores,
    outcomes: Vec<Outcome>,
    successes: usize,
}

impl AdaptiveState {
    pub fn new(scores: HealthScores) -> Self {
        Self {
            scores,
            outcomes: Vec::new(),
            successes: 0,
        }
    }

    pub fn with_outcomes(scores: HealthScores, outcomes: &[Outcome]) -> Result<Self> {
        let mut state = Self::new(scores);
        for &o in outcomes {
            state.record(o)?;
        }
        Ok(state)
    }

    pub fn record(&mut self, outcome: Outcome) -> Result<()> {
        if self.completed() == self.scores.len() {
            return Err(Error::QueueExhausted {
                n: self.scores.len(),
            });
        }
        self.outcomes.push(outcome);
        self.successes += outcome.is_success() as usize;
        Ok(())
    }

    pub fn scores(&self) -> &HealthScores {
        &self.scores
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    /// `k`, the number of completed treatments.
    pub fn completed(&self) -> usize {
        self.outcomes.len()
    }

    /// `S_k`
    pub fn successes(&self) -> usize {
        self.successes
    }

    pub fn scheduled(&self) -> usize {
        self.scores.len()
    }

    pub fn last_outcome(&self) -> Option<Outcome> {
        self.outcomes.last().copied()
    }

    /// Length of the failure run since the start, if no success occurred.
    pub fn initial_failure_run(&self) -> Option<usize> {
        (self.successes == 0).then_some(self.outcomes.len())
    }
}

/// `p̂ = S_k / H_k`. May exceed 1.
pub fn estimate_p(state: &AdaptiveState) -> Result<f64> {
    let k = state.completed();
    if k == 0 {
        return Err(Error::NoData);
    }
    Ok(state.successes() as f64 / state.scores().prefix_sum(k))
}

/// The truncated estimated odds `r̂_j` for `j = k+1..=n`, in index order.
pub fn estimated_future_odds(state: &AdaptiveState) -> Result<Vec<f64>> {
    let k = state.completed();
    if k == 0 {
        return Err(Error::NoData);
    }
    let s = state.successes() as f64;
    let big_h = state.scores().prefix_sum(k);
    Ok(future_terms(&state.scores().scores()[k..], big_h, s).collect())
}

pub(crate) fn future_terms(
    future_h: &[f64],
    big_h: f64,
    successes: f64,
) -> impl Iterator<Item = f64> + '_ {
    future_h.iter().map(move |&h| {
        let denominator = (big_h - h * successes).max(0.0);
        if denominator > 0.0 {
            h * successes / denominator
        } else {
            f64::INFINITY
        }
    })
}

/// Estimated-odds stopping rule, evaluated after the `k`-th treatment.
///
/// - no success yet: [`Action::ConsentRequired`] (the rule is vacuous);
/// - estimated future odds sum `< 1` and the latest outcome a success, or
///   nobody left: [`Action::Stop`];
/// - sum `< 1` after a failure: [`Action::Armed`], i.e. stop on the next
///   success if the rule still holds then;
/// - otherwise [`Action::Continue`].
pub fn should_stop(state: &AdaptiveState) -> Result<Action> {
    let terms = estimated_future_odds(state)?;
    if state.successes() == 0 {
        return Ok(Action::ConsentRequired);
    }
    let sum: f64 = terms.iter().sum();
    if sum >= 1.0 {
        return Ok(Action::Continue);
    }
    let last_success = state.last_outcome().is_some_and(Outcome::is_success);
    if last_success || state.completed() == state.scheduled() {
        Ok(Action::Stop)
    } else {
        Ok(Action::Armed)
    }
}

/// One future patient's row of the inference tableau.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FutureLine {
    /// 1-based patient number.
    pub index: usize,
    pub h: f64,
    /// `r̂_j` as used by the stopping rule (`+∞` when truncated).
    pub odds: f64,
    /// `p̂_j = h_j p̂`, clamped to 1.
    pub p_hat: f64,
    /// `q̂_j = 1 - p̂_j`
    pub q_hat: f64,
}

/// Figures supporting informed consent after `k` treatments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceReport {
    pub completed: usize,
    pub successes: usize,
    pub p_hat: f64,
    /// Left side of the stopping rule; `+∞` (serialized as `null`) when a
    /// denominator was truncated.
    pub future_odds_sum: f64,
    /// `Σ_{j>k} p̂_j`, an estimate of the expected number of further
    /// successes.
    pub expected_further: f64,
    /// `Π_{j>k} q̂_j`, the estimated probability of no further success.
    pub prob_no_further: f64,
    /// `1 - prob_no_further`
    pub further_success_prob: f64,
    /// Some `h_j p̂` exceeded 1 and was clamped.
    pub clamped: bool,
    pub lines: Vec<FutureLine>,
}

pub fn inference_report(state: &AdaptiveState) -> Result<InferenceReport> {
    let p_hat = estimate_p(state)?;
    let terms = estimated_future_odds(state)?;
    let k = state.completed();
    let mut clamped = false;
    let lines: Vec<FutureLine> = state.scores().scores()[k..]
        .iter()
        .zip(&terms)
        .enumerate()
        .map(|(offset, (&h, &odds))| {
            let raw = h * p_hat;
            clamped |= raw > 1.0;
            let p = raw.min(1.0);
            FutureLine {
                index: k + offset + 1,
                h,
                odds,
                p_hat: p,
                q_hat: 1.0 - p,
            }
        })
        .collect();
    let expected_further = lines.iter().map(|l| l.p_hat).sum();
    let prob_no_further = lines.iter().map(|l| l.q_hat).product::<f64>();
    Ok(InferenceReport {
        completed: k,
        successes: state.successes(),
        p_hat,
        future_odds_sum: terms.iter().sum(),
        expected_further,
        prob_no_further,
        further_success_prob: 1.0 - prob_no_further,
        clamped,
        lines,
    })
}

/// Agreed safety policy for a sequence of treatments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequencePolicy {
    /// Stop once the estimated probability of any further success drops
    /// below this. `0` disables the threshold.
    #[serde(default)]
    pub alpha: f64,
    /// Agreed maximal length of a beginning run of failures. While the run
    /// is shorter, continuing needs no further consent; at this length the
    /// sequence stops.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_initial_failures: Option<usize>,
}

impl Default for SequencePolicy {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            max_initial_failures: None,
        }
    }
}

impl SequencePolicy {
    pub fn new(alpha: f64, max_initial_failures: Option<usize>) -> Result<Self> {
        let policy = Self {
            alpha,
            max_initial_failures,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(
                "alpha",
                format!("{} must lie in [0, 1)", self.alpha),
            ));
        }
        if self.max_initial_failures == Some(0) {
            return Err(Error::invalid("max_initial_failures", "must be at least 1"));
        }
        Ok(())
    }
}

/// True when the estimated probability of at least one further success
/// has dropped below `alpha`.
pub fn threshold_stop(report: &InferenceReport, policy: &SequencePolicy) -> bool {
    1.0 - report.prob_no_further < policy.alpha
}

/// Recommendation after the latest outcome under `policy`, before any
/// consent is taken into account.
///
/// Precedence: every patient treated, then the beginning-failure-run
/// policy while `S_k = 0`, then the estimated-odds rule, then the
/// threshold (only when `alpha > 0`).
pub fn recommend(state: &AdaptiveState, policy: &SequencePolicy) -> (Action, Source) {
    let k = state.completed();
    if k == 0 {
        return (Action::Continue, Source::EstimatedOddsRule);
    }
    if k == state.scheduled() {
        return (Action::Stop, Source::Exhausted);
    }
    if state.successes() == 0 {
        let action = match policy.max_initial_failures {
            Some(limit) if k >= limit => Action::Stop,
            Some(_) => Action::Continue,
            None => Action::ConsentRequired,
        };
        return (action, Source::ConsentPolicy);
    }
    let action = should_stop(state).expect("k >= 1");
    if action == Action::Stop {
        return (Action::Stop, Source::EstimatedOddsRule);
    }
    if policy.alpha > 0.0 && threshold_stop(&inference_report(state).expect("k >= 1"), policy) {
        return (Action::Stop, Source::Threshold);
    }
    (action, Source::EstimatedOddsRule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Outcome::{Failure as F, Success as S};

    fn state(h: &[f64], outcomes: &[Outcome]) -> AdaptiveState {
        AdaptiveState::with_outcomes(HealthScores::new(h.to_vec()).unwrap(), outcomes).unwrap()
    }

    #[test]
    fn scores_validation() {
        assert!(matches!(
            HealthScores::new(vec![]),
            Err(Error::Empty { .. })
        ));
        assert_eq!(
            HealthScores::new(vec![0.5, 1.0]),
            Err(Error::ScoreOutOfRange {
                index: 1,
                value: 1.0
            })
        );
        assert!(HealthScores::new(vec![0.0]).is_err());
        let h = HealthScores::new(vec![0.5, 0.25, 0.75]).unwrap();
        assert_eq!(h.prefix_sum(0), 0.0);
        assert_eq!(h.prefix_sum(3), 1.5);
        for k in 1..=3 {
            assert!(h.prefix_sum(k) > h.prefix_sum(k - 1));
            assert!(h.prefix_sum(k) <= k as f64);
        }
    }

    #[test]
    fn ranks_spread_evenly() {
        let h = HealthScores::from_ranks(0.4, 0.9, &[1, 2, 3, 4, 5]).unwrap();
        let expected = [0.4, 0.525, 0.65, 0.775, 0.9];
        for (a, b) in h.scores().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        // Ties share the midpoint of their positions; order follows rank.
        let h = HealthScores::from_ranks(0.2, 0.8, &[3, 1, 3, 2]).unwrap();
        let expected = [0.7, 0.2, 0.7, 0.4];
        for (a, b) in h.scores().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let one = HealthScores::from_ranks(0.4, 0.6, &[1]).unwrap();
        assert!((one.scores()[0] - 0.5).abs() < 1e-12);
        assert!(HealthScores::from_ranks(0.9, 0.4, &[1, 2]).is_err());
        assert!(HealthScores::from_ranks(0.0, 0.4, &[1, 2]).is_err());
    }

    #[test]
    fn estimate_examples() {
        assert!((estimate_p(&state(&[0.5, 0.5], &[S, F])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(estimate_p(&state(&[0.5, 0.3, 0.2], &[F, F])).unwrap(), 0.0);
        let eps = 1e-3;
        let p = estimate_p(&state(&[1.0 - eps; 4], &[S; 4])).unwrap();
        assert!((p - 4.0 / (4.0 * (1.0 - eps))).abs() < 1e-12);
        assert!(p > 1.0);
        assert_eq!(estimate_p(&state(&[0.5], &[])), Err(Error::NoData));
    }

    #[test]
    fn record_past_end_is_rejected() {
        let mut st = state(&[0.5], &[S]);
        assert_eq!(st.record(F), Err(Error::QueueExhausted { n: 1 }));
    }

    #[test]
    fn equal_scores_reduce_to_empirical_odds() {
        let st = state(&[0.7; 6], &[F, F, F, S]);
        let terms = estimated_future_odds(&st).unwrap();
        assert_eq!(terms.len(), 2);
        for t in &terms {
            assert!((t - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(should_stop(&st).unwrap(), Action::Stop);
    }

    #[test]
    fn no_success_means_zero_odds_and_consent() {
        let st = state(&[0.4, 0.6, 0.8], &[F]);
        assert_eq!(estimated_future_odds(&st).unwrap(), vec![0.0, 0.0]);
        assert_eq!(should_stop(&st).unwrap(), Action::ConsentRequired);
        let st = state(&[0.4, 0.6, 0.8], &[F, F, F]);
        assert_eq!(should_stop(&st).unwrap(), Action::ConsentRequired);
    }

    #[test]
    fn truncated_denominator_is_infinite() {
        // H_1 = 0.3, h_2 * S = 0.9 > 0.3
        let st = state(&[0.3, 0.9, 0.2], &[S]);
        let terms = estimated_future_odds(&st).unwrap();
        assert_eq!(terms[0], f64::INFINITY);
        assert!((terms[1] - 0.2 / 0.1).abs() < 1e-12);
        assert_eq!(should_stop(&st).unwrap(), Action::Continue);
        // Exactly zero denominator also truncates.
        let st = state(&[0.5, 0.5], &[S]);
        assert_eq!(estimated_future_odds(&st).unwrap(), vec![f64::INFINITY]);
    }

    #[test]
    fn armed_after_failure_and_stop_when_exhausted() {
        let st = state(&[0.7; 6], &[S, F, F, F]);
        assert_eq!(should_stop(&st).unwrap(), Action::Armed);
        let st = state(&[0.7; 3], &[S, F, F]);
        assert_eq!(should_stop(&st).unwrap(), Action::Stop);
        assert_eq!(should_stop(&state(&[0.7], &[])), Err(Error::NoData));
    }

    #[test]
    fn inference_examples() {
        let r = inference_report(&state(&[0.5; 4], &[S, F])).unwrap();
        assert!((r.p_hat - 1.0).abs() < 1e-15);
        assert_eq!(r.lines.len(), 2);
        assert!(r.lines.iter().all(|l| (l.p_hat - 0.5).abs() < 1e-15));
        assert!((r.expected_further - 1.0).abs() < 1e-15);
        assert!((r.prob_no_further - 0.25).abs() < 1e-15);
        assert!(!r.clamped);

        let r = inference_report(&state(&[0.5; 4], &[F, F])).unwrap();
        assert_eq!(r.expected_further, 0.0);
        assert_eq!(r.prob_no_further, 1.0);
        assert_eq!(r.future_odds_sum, 0.0);

        let r = inference_report(&state(&[0.5; 2], &[S, F])).unwrap();
        assert_eq!(r.expected_further, 0.0);
        assert_eq!(r.prob_no_further, 1.0);
        assert!(r.lines.is_empty());
    }

    #[test]
    fn inference_clamps_large_estimates() {
        let r = inference_report(&state(&[0.3, 0.9, 0.2], &[S])).unwrap();
        assert!(r.clamped);
        assert_eq!(r.lines[0].p_hat, 1.0);
        assert_eq!(r.prob_no_further, 0.0);
        assert_eq!(r.future_odds_sum, f64::INFINITY);
    }

    #[test]
    fn threshold_examples() {
        let mut r = inference_report(&state(&[0.5; 4], &[S, F])).unwrap();
        let policy = |alpha| SequencePolicy::new(alpha, None).unwrap();
        assert!(!threshold_stop(&r, &policy(0.5)));
        r.prob_no_further = 1.0;
        assert!(threshold_stop(&r, &policy(0.01)));
        assert!(!threshold_stop(&r, &policy(0.0)));
    }

    #[test]
    fn policy_validation() {
        assert!(SequencePolicy::new(1.0, None).is_err());
        assert!(SequencePolicy::new(-0.1, None).is_err());
        assert!(SequencePolicy::new(0.1, Some(0)).is_err());
        assert!(SequencePolicy::new(0.1, Some(3)).is_ok());
    }

    #[test]
    fn recommendation_precedence() {
        let none = SequencePolicy::default();
        let st = |o: &[Outcome]| state(&[0.5; 6], o);
        assert_eq!(
            recommend(&st(&[]), &none),
            (Action::Continue, Source::EstimatedOddsRule)
        );
        assert_eq!(
            recommend(&st(&[F]), &none),
            (Action::ConsentRequired, Source::ConsentPolicy)
        );
        let two = SequencePolicy::new(0.0, Some(2)).unwrap();
        assert_eq!(
            recommend(&st(&[F]), &two),
            (Action::Continue, Source::ConsentPolicy)
        );
        assert_eq!(
            recommend(&st(&[F, F]), &two),
            (Action::Stop, Source::ConsentPolicy)
        );
        assert_eq!(
            recommend(&st(&[F, F, F, S]), &none),
            (Action::Stop, Source::EstimatedOddsRule)
        );
        assert_eq!(
            recommend(&st(&[F; 6]), &none),
            (Action::Stop, Source::Exhausted)
        );
        let tight = SequencePolicy::new(0.2, None).unwrap();
        let s = state(&[0.5, 0.5, 0.05, 0.05], &[S, F]);
        assert_eq!(
            recommend(&s, &none),
            (Action::Armed, Source::EstimatedOddsRule)
        );
        assert_eq!(recommend(&s, &tight), (Action::Stop, Source::Threshold));
    }
}
