//! Known success probabilities: the sum-the-odds threshold rule.
//!
//! For `n` independent treatments with success probabilities `p_k`, the
//! strategy "treat `1..s-1` unconditionally, then stop on the first success
//! at index `>= s`" wins (stops on the last success) with probability
//!
//! ```text
//! V(n, s) = (q_s · … · q_n) · (r_s + … + r_n),   q_k = 1 - p_k, r_k = p_k / q_k
//! ```
//!
//! `V` is unimodal in `s` and is maximised at the largest `s` whose tail
//! odds sum reaches 1 (or `s = 1` if the total stays below 1).
//!
//! Indices exposed by this module are 1-based, matching patient numbers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;

/// Largest `n` the enumeration oracle accepts (it visits `2^n` words).
pub const ORACLE_MAX_N: usize = 20;

/// Default guard for [`best_order`]: `10!` evaluations.
pub const DEFAULT_EXHAUSTIVE_LIMIT: usize = 10;

/// Success probabilities with their failure probabilities and odds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OddsProfile {
    probs: Vec<f64>,
    fails: Vec<f64>,
    odds: Vec<f64>,
}

impl OddsProfile {
    /// Validates and derives `q_k` and `r_k`. Rejects anything outside the
    /// open interval `(0, 1)`, including NaN.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty {
                what: "probability list",
            });
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(**p > 0.0 && **p < 1.0))
        {
            return Err(Error::ProbabilityOutOfRange { index, value });
        }
        let fails: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
        let odds = probs.iter().zip(&fails).map(|(p, q)| p / q).collect();
        Ok(Self { probs, fails, odds })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn fails(&self) -> &[f64] {
        &self.fails
    }

    pub fn odds(&self) -> &[f64] {
        &self.odds
    }

    pub fn total_odds(&self) -> f64 {
        self.odds.iter().sum()
    }

    /// Reorders the treatments: position `i` of the result is patient
    /// `order[i]` (0-based) of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        validate_permutation(order, self.len())?;
        Ok(Self {
            probs: order.iter().map(|&i| self.probs[i]).collect(),
            fails: order.iter().map(|&i| self.fails[i]).collect(),
            odds: order.iter().map(|&i| self.odds[i]).collect(),
        })
    }

    /// `out[k] = q_{k+1} · … · q_n` for `k = 0..=n`: the probability of no
    /// success after the first `k` treatments. `out[n] = 1`.
    pub fn no_further_success(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![1.0; n + 1];
        for k in (0..n).rev() {
            out[k] = out[k + 1] * self.fails[k];
        }
        out
    }

    /// Expected number of successes after the first `k` treatments.
    pub fn expected_further(&self, k: usize) -> f64 {
        self.probs.iter().skip(k).sum()
    }
}

/// Builds an [`OddsProfile`] from a slice of probabilities.
pub fn odds_of(probs: &[f64]) -> Result<OddsProfile> {
    OddsProfile::new(probs.to_vec())
}

/// Threshold index together with its value diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopPlan {
    /// 1-based index from which the first success is accepted.
    pub index: usize,
    /// `r_s + … + r_n`
    pub odds_sum: f64,
    /// `q_s · … · q_n`
    pub fail_product: f64,
    /// `fail_product · odds_sum`
    pub win_probability: f64,
}

impl StopPlan {
    /// True when the running odds sum reached 1 before (or at) index 1.
    pub fn threshold_reached(&self) -> bool {
        self.odds_sum >= 1.0
    }

    /// Whether the strategy stops on a success observed at 1-based `k`.
    pub fn stops_at(&self, k: usize, outcome_is_success: bool) -> bool {
        outcome_is_success && k >= self.index
    }
}

/// Sums the odds backwards from the last patient and stops at the first
/// index where the running sum reaches 1. Falls back to `s = 1`.
pub fn stop_index(profile: &OddsProfile) -> StopPlan {
    plan_in_order(profile, |i| i)
}

fn plan_in_order(profile: &OddsProfile, at: impl Fn(usize) -> usize) -> StopPlan {
    let n = profile.len();
    let mut odds_sum = 0.0;
    let mut fail_product = 1.0;
    let mut index = 1;
    for pos in (0..n).rev() {
        let i = at(pos);
        odds_sum += profile.odds[i];
        fail_product *= profile.fails[i];
        if odds_sum >= 1.0 {
            index = pos + 1;
            break;
        }
    }
    StopPlan {
        index,
        odds_sum,
        fail_product,
        win_probability: fail_product * odds_sum,
    }
}

/// Forward form of the threshold: the smallest `k` such that
/// `r_{k+1} + … + r_n < 1`, scanning tail sums from the front. `k = 0` is
/// reported as 1. Independent of [`stop_index`].
pub fn stop_index_dual(profile: &OddsProfile) -> usize {
    let n = profile.len();
    // tails[k] = r_{k+1} + … + r_n, accumulated right to left so that no
    // withdrawal roundoff can move a tail across 1.
    let mut tails = vec![0.0; n + 1];
    for k in (0..n).rev() {
        tails[k] = tails[k + 1] + profile.odds[k];
    }
    let k = tails.iter().position(|&t| t < 1.0).unwrap_or(n);
    k.max(1)
}

/// `V(n, s)` for every `s = 1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValueCurve {
    values: Vec<f64>,
}

impl ValueCurve {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `V(n, s)` for 1-based `s`.
    pub fn at(&self, s: usize) -> f64 {
        self.values[s - 1]
    }

    /// 1-based maximiser; among equal maxima the largest index wins.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v >= self.values[best] {
                best = i;
            }
        }
        best + 1
    }

    pub fn max(&self) -> f64 {
        self.at(self.argmax())
    }

    /// Non-decreasing up to some index, non-increasing after it. Steps
    /// smaller than `tol · max` are treated as flat.
    pub fn is_unimodal(&self, tol: f64) -> bool {
        let eps = tol * self.values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        let mut descending = false;
        for w in self.values.windows(2) {
            let step = w[1] - w[0];
            if step < -eps {
                descending = true;
            } else if step > eps && descending {
                return false;
            }
        }
        true
    }
}

pub fn value_curve(profile: &OddsProfile) -> ValueCurve {
    let n = profile.len();
    let mut values = vec![0.0; n];
    let mut odds_sum = 0.0;
    let mut fail_product = 1.0;
    for i in (0..n).rev() {
        odds_sum += profile.odds[i];
        fail_product *= profile.fails[i];
        values[i] = fail_product * odds_sum;
    }
    ValueCurve { values }
}

/// Probability, by enumeration of all `2^n` outcome words, that the first
/// success at index `>= s` is the last success overall.
pub fn win_probability_oracle(profile: &OddsProfile, s: usize) -> Result<f64> {
    win_probability_oracle_with(profile, s, Execution::default())
}

pub fn win_probability_oracle_with(
    profile: &OddsProfile,
    s: usize,
    exec: Execution,
) -> Result<f64> {
    let n = profile.len();
    if n > ORACLE_MAX_N {
        return Err(Error::CostGuard {
            what: "enumeration oracle",
            n,
            limit: ORACLE_MAX_N,
        });
    }
    if s == 0 || s > n {
        return Err(Error::invalid("s", format!("must lie in 1..={n}, got {s}")));
    }
    let words: u64 = 1 << n;
    let chunk_bits = n.min(10);
    let chunks = 1u64 << chunk_bits;
    let per_chunk = words / chunks;
    let probs = profile.probs();
    let fails = profile.fails();

    // Bit `k` of a word is set when patient `k + 1` succeeds.
    let partial = exec.map_collect(chunks, |c| {
        let mut total = 0.0;
        for word in c * per_chunk..(c + 1) * per_chunk {
            let from_s = word >> (s - 1);
            if from_s == 0 {
                continue;
            }
            let first_from_s = from_s.trailing_zeros() as usize + (s - 1);
            let last = 63 - word.leading_zeros() as usize;
            if first_from_s != last {
                continue;
            }
            let mut prob = 1.0;
            for k in 0..n {
                prob *= if word >> k & 1 == 1 {
                    probs[k]
                } else {
                    fails[k]
                };
            }
            total += prob;
        }
        total
    });
    Ok(partial.iter().sum())
}

/// Treatment order together with the plan it yields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderChoice {
    /// `order[i]` is the 0-based original index of the patient treated at
    /// position `i`.
    pub order: Vec<usize>,
    pub plan: StopPlan,
}

/// Exhaustive search over all treatment orders for the one maximising
/// `V(n, s*)`. Ties go to the lexicographically smallest order.
pub fn best_order(profile: &OddsProfile, max_n_exhaustive: usize) -> Result<OrderChoice> {
    best_order_with(profile, max_n_exhaustive, Execution::default())
}

pub fn best_order_with(
    profile: &OddsProfile,
    max_n_exhaustive: usize,
    exec: Execution,
) -> Result<OrderChoice> {
    let n = profile.len();
    if n > max_n_exhaustive {
        return Err(Error::CostGuard {
            what: "exhaustive order search",
            n,
            limit: max_n_exhaustive,
        });
    }
    // One branch per leading patient, each walking its suffixes in
    // lexicographic order; branches are merged in leading-patient order.
    let branches = exec.map_collect(n as u64, |first| {
        let first = first as usize;
        let mut order: Vec<usize> = std::iter::once(first)
            .chain((0..n).filter(|&i| i != first))
            .collect();
        let mut best = OrderChoice {
            order: order.clone(),
            plan: plan_in_order(profile, |i| order[i]),
        };
        while next_permutation(&mut order[1..]) {
            let plan = plan_in_order(profile, |i| order[i]);
            if plan.win_probability > best.plan.win_probability {
                best = OrderChoice {
                    order: order.clone(),
                    plan,
                };
            }
        }
        best
    });
    Ok(pick_best(branches).expect("n >= 1"))
}

/// Evaluates only the supplied orders. Each must be a permutation of
/// `0..n`.
pub fn best_order_among(profile: &OddsProfile, candidates: &[Vec<usize>]) -> Result<OrderChoice> {
    let mut sorted: Vec<&Vec<usize>> = candidates.iter().collect();
    sorted.sort();
    let mut choices = Vec::with_capacity(sorted.len());
    for order in sorted {
        validate_permutation(order, profile.len())?;
        choices.push(OrderChoice {
            order: order.clone(),
            plan: plan_in_order(profile, |i| order[i]),
        });
    }
    pick_best(choices).ok_or(Error::Empty {
        what: "candidate order list",
    })
}

fn pick_best(choices: Vec<OrderChoice>) -> Option<OrderChoice> {
    choices.into_iter().reduce(|best, c| {
        if c.plan.win_probability > best.plan.win_probability {
            c
        } else {
            best
        }
    })
}

/// When the total odds reach 1, the optimal win probability is at least
/// `1/e`. Vacuously true otherwise.
pub fn lower_bound_check(plan: &StopPlan, profile: &OddsProfile) -> bool {
    profile.total_odds() < 1.0 || plan.win_probability >= (-1.0_f64).exp() - 1e-12
}

fn validate_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::invalid(
            "order",
            format!("expected {n} entries, got {}", order.len()),
        ));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(
                "order",
                format!("not a permutation of 0..{n}"),
            ));
        }
    }
    Ok(())
}

/// Advances to the next lexicographic permutation; false at the last one.
fn next_permutation(xs: &mut [usize]) -> bool {
    if xs.len() < 2 {
        return false;
    }
    let Some(i) = (0..xs.len() - 1).rev().find(|&i| xs[i] < xs[i + 1]) else {
        return false;
    };
    let j = (i + 1..xs.len())
        .rev()
        .find(|&j| xs[j] > xs[i])
        .expect("exists by choice of i");
    xs.swap(i, j);
    xs[i + 1..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: [f64; 7] = [0.35, 0.1, 0.05, 0.3, 0.1, 0.15, 0.25];

    #[test]
    fn half_gives_unit_odds() {
        let p = odds_of(&[0.5]).unwrap();
        assert_eq!(p.odds(), &[1.0]);
        assert_eq!(p.fails(), &[0.5]);
    }

    #[test]
    fn rejects_degenerate_probabilities() {
        assert_eq!(
            odds_of(&[0.0]),
            Err(Error::ProbabilityOutOfRange {
                index: 0,
                value: 0.0
            })
        );
        assert_eq!(
            odds_of(&[0.2, 1.0]),
            Err(Error::ProbabilityOutOfRange {
                index: 1,
                value: 1.0
            })
        );
        assert!(matches!(
            odds_of(&[0.2, f64::NAN]),
            Err(Error::ProbabilityOutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            odds_of(&[-0.1]),
            Err(Error::ProbabilityOutOfRange { index: 0, .. })
        ));
        assert_eq!(
            odds_of(&[]),
            Err(Error::Empty {
                what: "probability list"
            })
        );
    }

    #[test]
    fn reversed_odds_of_worked_example() {
        let p = odds_of(&EXAMPLE).unwrap();
        let reversed: Vec<f64> = p
            .odds()
            .iter()
            .rev()
            .take(4)
            .map(|r| (r * 100.0).round() / 100.0)
            .collect();
        assert_eq!(reversed, vec![0.33, 0.18, 0.11, 0.43]);
        // The printed tableau shows .17 for r_6 = 0.176…; all four printed
        // figures are within one unit in the second decimal.
        let printed = [0.33, 0.17, 0.11, 0.43];
        for (r, shown) in p.odds().iter().rev().zip(printed) {
            assert!((r - shown).abs() < 0.01);
        }
        for k in 0..p.len() {
            assert!((p.odds()[k] * p.fails()[k] - p.probs()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_patient_arms_immediately() {
        let plan = stop_index(&odds_of(&[0.5]).unwrap());
        assert_eq!(plan.index, 1);
        assert_eq!(plan.win_probability, 0.5);
        assert_eq!(stop_index_dual(&odds_of(&[0.5]).unwrap()), 1);
    }

    #[test]
    fn small_total_odds_gives_first_index() {
        let p = odds_of(&[0.1, 0.2, 0.1]).unwrap();
        assert!(p.total_odds() < 1.0);
        let plan = stop_index(&p);
        assert_eq!(plan.index, 1);
        assert!(!plan.threshold_reached());
        assert_eq!(stop_index_dual(&p), 1);
        assert!(lower_bound_check(&plan, &p));
    }

    #[test]
    fn exact_unit_sum_counts_as_reached() {
        // odds 1 at the last index reaches the threshold there.
        let p = odds_of(&[0.3, 0.3, 0.5]).unwrap();
        let plan = stop_index(&p);
        assert_eq!(plan.index, 3);
        assert_eq!(plan.odds_sum, 1.0);
        assert_eq!(stop_index_dual(&p), 3);
        assert_eq!(value_curve(&p).argmax(), 3);
        // Withdrawing from the total would leave 1 ± 1 ulp here.
        let p = odds_of(&[0.003, 0.07, 0.399, 0.455, 0.5]).unwrap();
        assert_eq!(stop_index(&p).index, 5);
        assert_eq!(stop_index_dual(&p), 5);
    }

    #[test]
    fn worked_example_plan() {
        let p = odds_of(&EXAMPLE).unwrap();
        let plan = stop_index(&p);
        assert_eq!(plan.index, 4);
        assert_eq!(stop_index_dual(&p), 4);
        assert!((plan.win_probability - plan.fail_product * plan.odds_sum).abs() < 1e-12);
        let curve = value_curve(&p);
        assert_eq!(curve.argmax(), 4);
        assert_eq!(curve.at(4), plan.win_probability);
        assert!(curve.is_unimodal(1e-12));
        assert!(lower_bound_check(&plan, &p));
    }

    #[test]
    fn uniform_half_curve_against_enumeration() {
        let p = odds_of(&[0.5; 3]).unwrap();
        let curve = value_curve(&p);
        // Frozen from brute force over the eight outcome words:
        // exactly one success among positions s..3.
        let expected = [3.0 / 8.0, 2.0 / 4.0, 1.0 / 2.0];
        for s in 1..=3 {
            assert!((curve.at(s) - expected[s - 1]).abs() < 1e-15);
            assert!((win_probability_oracle(&p, s).unwrap() - expected[s - 1]).abs() < 1e-15);
        }
        assert_eq!(curve.argmax(), 3);
        assert_eq!(stop_index(&p).index, 3);
    }

    #[test]
    fn oracle_single_patient() {
        let p = odds_of(&[0.3]).unwrap();
        assert!((win_probability_oracle(&p, 1).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn oracle_guards() {
        let p = odds_of(&[0.1; 21]).unwrap();
        assert!(matches!(
            win_probability_oracle(&p, 1),
            Err(Error::CostGuard { n: 21, .. })
        ));
        let p = odds_of(&[0.1; 3]).unwrap();
        assert!(win_probability_oracle(&p, 0).is_err());
        assert!(win_probability_oracle(&p, 4).is_err());
    }

    #[test]
    fn unimodality_detects_valleys() {
        let curve = ValueCurve {
            values: vec![0.1, 0.3, 0.2, 0.4],
        };
        assert!(!curve.is_unimodal(0.0));
        let curve = ValueCurve {
            values: vec![0.4, 0.3, 0.2],
        };
        assert!(curve.is_unimodal(0.0));
        assert!(ValueCurve { values: vec![0.5] }.is_unimodal(0.0));
    }

    #[test]
    fn best_order_two_patients() {
        let p = odds_of(&[0.6, 0.2]).unwrap();
        let direct =
            [vec![0, 1], vec![1, 0]].map(|o| stop_index(&p.permuted(&o).unwrap()).win_probability);
        let best = best_order(&p, DEFAULT_EXHAUSTIVE_LIMIT).unwrap();
        let expect = if direct[1] > direct[0] {
            vec![1, 0]
        } else {
            vec![0, 1]
        };
        assert_eq!(best.order, expect);
        assert_eq!(best.plan.win_probability, direct[0].max(direct[1]));
    }

    #[test]
    fn best_order_identical_probs_is_identity() {
        let p = odds_of(&[0.2; 6]).unwrap();
        let best = best_order(&p, DEFAULT_EXHAUSTIVE_LIMIT).unwrap();
        assert_eq!(best.order, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn best_order_guard() {
        let p = odds_of(&[0.2; 11]).unwrap();
        assert!(matches!(
            best_order(&p, DEFAULT_EXHAUSTIVE_LIMIT),
            Err(Error::CostGuard {
                n: 11,
                limit: 10,
                ..
            })
        ));
        let cands = vec![(0..11).collect::<Vec<_>>(), (0..11).rev().collect()];
        assert!(best_order_among(&p, &cands).is_ok());
        assert!(best_order_among(&p, &[vec![0, 0, 1]]).is_err());
        assert!(best_order_among(&p, &[]).is_err());
    }

    #[test]
    fn best_order_serial_matches_parallel() {
        let p = odds_of(&EXAMPLE).unwrap();
        let a = best_order_with(&p, 10, Execution::Serial).unwrap();
        let b = best_order_with(&p, 10, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lexicographic_permutations() {
        let mut xs = vec![0, 1, 2];
        let mut seen = vec![xs.clone()];
        while next_permutation(&mut xs) {
            seen.push(xs.clone());
        }
        assert_eq!(seen.len(), 6);
        assert!(seen.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn no_further_success_is_monotone() {
        let p = odds_of(&EXAMPLE).unwrap();
        let probs = p.no_further_success();
        assert_eq!(probs.len(), 8);
        assert_eq!(probs[7], 1.0);
        assert!(probs.windows(2).all(|w| w[0] <= w[1]));
    }
}
