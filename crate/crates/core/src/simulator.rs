//! Monte Carlo harness for the stopping rules.
//!
//! A replication wins when the strategy stops exactly on the last success
//! of its outcome sequence. A sequence without any success is a loss for
//! the strategy (there is nothing to stop on) and is counted separately.
//!
//! Replications are processed in fixed blocks; each replication draws from
//! its own ChaCha stream `(seed, replication)`, and block results are
//! combined in block order, so serial and parallel runs agree bitwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::{future_terms, HealthScores};
use crate::decision::Outcome;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::horizon::{refusal_integral, ArrivalModel, Intensity};
use crate::odds::{stop_index, OddsProfile, StopPlan};

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_901;

const BLOCK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub replications: u64,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
    /// Keep one [`ReplicationRecord`] per replication in the report.
    #[serde(default)]
    pub keep_replications: bool,
}

impl SimConfig {
    pub fn new(replications: u64, seed: u64) -> Self {
        Self {
            replications,
            seed,
            execution: Execution::default(),
            keep_replications: false,
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn keeping_replications(mut self) -> Self {
        self.keep_replications = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid("replications", "must be at least 1"));
        }
        Ok(())
    }

    fn rng(&self, replication: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication);
        rng
    }
}

/// What happened in a single replication. Indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub replication: u64,
    /// Number of treatments available (realised arrivals for horizons).
    pub scheduled: usize,
    pub treated: usize,
    pub stop_index: Option<usize>,
    pub successes: usize,
    pub last_success: Option<usize>,
    pub win: bool,
}

impl ReplicationRecord {
    fn futile(&self) -> usize {
        self.treated.saturating_sub(self.last_success.unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub scenario: String,
    pub replications: u64,
    pub seed: u64,
    pub wins: u64,
    pub win_rate: f64,
    /// Binomial standard error of `win_rate`.
    pub std_error: f64,
    /// Half-width of the 99% normal-approximation interval.
    pub ci_halfwidth: f64,
    pub no_success_replications: u64,
    pub mean_treated: f64,
    /// Mean number of treatments given after the last success.
    pub mean_futile: f64,
    /// Exact win probability of the reference strategy: `V(n, s*)` for
    /// known odds, the known-`p` odds rule for the adaptive rule, and the
    /// mean per-realisation optimum for arrival streams.
    pub benchmark: Option<f64>,
    /// Knows which patients succeed: treats exactly those.
    pub prophet_rate: f64,
    pub prophet_mean_treated: f64,
    /// Knows only how many succeed: stops on that many-th success.
    pub half_prophet_rate: f64,
    pub half_prophet_mean_treated: f64,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    count: u64,
    wins: u64,
    no_success: u64,
    treated: u64,
    futile: u64,
    successes: u64,
    last_success: u64,
    benchmark_sum: f64,
    records: Vec<ReplicationRecord>,
}

impl Tally {
    fn add(&mut self, rec: ReplicationRecord, benchmark: f64, keep: bool) {
        self.count += 1;
        self.wins += rec.win as u64;
        self.no_success += (rec.successes == 0) as u64;
        self.treated += rec.treated as u64;
        self.futile += rec.futile() as u64;
        self.successes += rec.successes as u64;
        self.last_success += rec.last_success.unwrap_or(0) as u64;
        self.benchmark_sum += benchmark;
        if keep {
            self.records.push(rec);
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.count += other.count;
        self.wins += other.wins;
        self.no_success += other.no_success;
        self.treated += other.treated;
        self.futile += other.futile;
        self.successes += other.successes;
        self.last_success += other.last_success;
        self.benchmark_sum += other.benchmark_sum;
        self.records.extend(other.records);
        self
    }
}

/// Runs `episode` for every replication in blocks and folds the results in
/// replication order.
fn run_blocks<F>(config: &SimConfig, episode: F) -> Tally
where
    F: Fn(u64, &mut ChaCha8Rng) -> (ReplicationRecord, f64) + Sync + Send,
{
    let blocks = config.replications.div_ceil(BLOCK);
    let parts = config.execution.map_collect(blocks, |b| {
        let mut tally = Tally::default();
        let end = ((b + 1) * BLOCK).min(config.replications);
        for rep in b * BLOCK..end {
            let mut rng = config.rng(rep);
            let (rec, bench) = episode(rep, &mut rng);
            tally.add(rec, bench, config.keep_replications);
        }
        tally
    });
    parts.into_iter().fold(Tally::default(), Tally::merge)
}

fn report(scenario: &str, config: &SimConfig, tally: Tally, benchmark: Option<f64>) -> SimReport {
    let n = tally.count as f64;
    let win_rate = tally.wins as f64 / n;
    let std_error = (win_rate * (1.0 - win_rate) / n).sqrt();
    SimReport {
        scenario: scenario.to_string(),
        replications: tally.count,
        seed: config.seed,
        wins: tally.wins,
        win_rate,
        std_error,
        ci_halfwidth: Z_99 * std_error,
        no_success_replications: tally.no_success,
        mean_treated: tally.treated as f64 / n,
        mean_futile: tally.futile as f64 / n,
        benchmark,
        prophet_rate: 1.0,
        prophet_mean_treated: tally.successes as f64 / n,
        half_prophet_rate: 1.0,
        half_prophet_mean_treated: tally.last_success as f64 / n,
        records: tally.records,
    }
}

fn draw_outcomes(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>) -> Vec<bool> {
    probs.map(|p| rng.random::<f64>() < p).collect()
}

fn record(replication: u64, outcomes: &[bool], stop: Option<usize>) -> ReplicationRecord {
    let successes = outcomes.iter().filter(|&&x| x).count();
    let last_success = outcomes.iter().rposition(|&x| x).map(|i| i + 1);
    ReplicationRecord {
        replication,
        scheduled: outcomes.len(),
        treated: stop.unwrap_or(outcomes.len()),
        stop_index: stop,
        successes,
        last_success,
        win: stop.is_some() && stop == last_success,
    }
}

/// Plays the fixed-threshold strategy of `plan` against outcomes drawn
/// from `profile`.
pub fn simulate_known(
    profile: &OddsProfile,
    plan: &StopPlan,
    config: &SimConfig,
) -> Result<SimReport> {
    config.validate()?;
    if plan.index == 0 || plan.index > profile.len() {
        return Err(Error::invalid(
            "plan.index",
            format!("must lie in 1..={}", profile.len()),
        ));
    }
    let tally = run_blocks(config, |rep, rng| {
        let outcomes = draw_outcomes(rng, profile.probs().iter().copied());
        let stop = (plan.index..=outcomes.len()).find(|&k| outcomes[k - 1]);
        (record(rep, &outcomes, stop), 0.0)
    });
    Ok(report(
        "known-odds",
        config,
        tally,
        Some(plan.win_probability),
    ))
}

/// Fraction of replications with at least one success after step `k`, for
/// `k = 0..=n`.
pub fn further_success_frequencies(profile: &OddsProfile, config: &SimConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n = profile.len();
    let blocks = config.replications.div_ceil(BLOCK);
    let parts = config.execution.map_collect(blocks, |b| {
        let mut counts = vec![0u64; n + 1];
        let end = ((b + 1) * BLOCK).min(config.replications);
        for rep in b * BLOCK..end {
            let mut rng = config.rng(rep);
            let outcomes = draw_outcomes(&mut rng, profile.probs().iter().copied());
            if let Some(last) = outcomes.iter().rposition(|&x| x) {
                // A success at 0-based `last` lies after steps 0..=last.
                for c in &mut counts[..=last] {
                    *c += 1;
                }
            }
        }
        counts
    });
    let mut totals = vec![0u64; n + 1];
    for part in parts {
        for (t, c) in totals.iter_mut().zip(part) {
            *t += c;
        }
    }
    Ok(totals
        .into_iter()
        .map(|c| c as f64 / config.replications as f64)
        .collect())
}

/// Plays the estimated-odds rule online against outcomes with success
/// probability `h_k · true_p`. A beginning run of failures is continued
/// (consent is assumed granted).
pub fn simulate_adaptive(
    true_p: f64,
    scores: &HealthScores,
    config: &SimConfig,
) -> Result<SimReport> {
    config.validate()?;
    let truth = true_profile(true_p, scores)?;
    let benchmark = stop_index(&truth).win_probability;
    let h = scores.scores();
    let n = h.len();
    let tally = run_blocks(config, |rep, rng| {
        let outcomes = draw_outcomes(rng, truth.probs().iter().copied());
        let mut successes = 0usize;
        let mut stop = None;
        for k in 1..=n {
            if !outcomes[k - 1] {
                continue;
            }
            successes += 1;
            let sum: f64 = future_terms(&h[k..], scores.prefix_sum(k), successes as f64).sum();
            if sum < 1.0 {
                stop = Some(k);
                break;
            }
        }
        (record(rep, &outcomes, stop), 0.0)
    });
    Ok(report("adaptive", config, tally, Some(benchmark)))
}

fn true_profile(true_p: f64, scores: &HealthScores) -> Result<OddsProfile> {
    if !(true_p > 0.0 && true_p < 1.0) {
        return Err(Error::invalid(
            "true_p",
            format!("{true_p} must lie in (0, 1)"),
        ));
    }
    OddsProfile::new(scores.scores().iter().map(|h| h * true_p).collect())
}

/// One row of [`adaptive_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub win_rate: f64,
    pub std_error: f64,
    pub benchmark: f64,
    /// `benchmark - win_rate`
    pub gap: f64,
}

/// Adaptive-rule win rate against the known-`p` benchmark for several `n`
/// with a common health score `h`.
pub fn adaptive_sweep(
    true_p: f64,
    h: f64,
    ns: &[usize],
    config: &SimConfig,
) -> Result<Vec<SweepRow>> {
    ns.iter()
        .map(|&n| {
            let scores = HealthScores::new(vec![h; n])?;
            let r = simulate_adaptive(true_p, &scores, config)?;
            let benchmark = r.benchmark.expect("adaptive reports carry a benchmark");
            Ok(SweepRow {
                n,
                win_rate: r.win_rate,
                std_error: r.std_error,
                benchmark,
                gap: benchmark - r.win_rate,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub replications: u64,
    pub mean: f64,
    pub std_error: f64,
}

/// Sample mean of `S_k / H_k` with outcomes drawn at `h_j · true_p`.
pub fn estimator_mean(
    true_p: f64,
    scores: &HealthScores,
    k: usize,
    config: &SimConfig,
) -> Result<EstimatorSummary> {
    config.validate()?;
    let truth = true_profile(true_p, scores)?;
    if k == 0 || k > scores.len() {
        return Err(Error::invalid(
            "k",
            format!("must lie in 1..={}", scores.len()),
        ));
    }
    let big_h = scores.prefix_sum(k);
    let blocks = config.replications.div_ceil(BLOCK);
    let parts = config.execution.map_collect(blocks, |b| {
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let end = ((b + 1) * BLOCK).min(config.replications);
        for rep in b * BLOCK..end {
            let mut rng = config.rng(rep);
            let outcomes = draw_outcomes(&mut rng, truth.probs()[..k].iter().copied());
            let x = outcomes.iter().filter(|&&o| o).count() as f64 / big_h;
            sum += x;
            sum_sq += x * x;
        }
        (sum, sum_sq)
    });
    let (sum, sum_sq) = parts
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let n = config.replications as f64;
    let mean = sum / n;
    let variance = ((sum_sq - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
    Ok(EstimatorSummary {
        replications: config.replications,
        mean,
        std_error: (variance / n).sqrt(),
    })
}

/// Health scores of arriving patients, uniform on `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthRange {
    pub low: f64,
    pub high: f64,
}

impl HealthRange {
    pub fn fixed(h: f64) -> Self {
        Self { low: h, high: h }
    }

    fn validate(&self) -> Result<()> {
        if !(self.low > 0.0 && self.high < 1.0 && self.low <= self.high) {
            return Err(Error::invalid(
                "health",
                format!(
                    "[{}, {}] must satisfy 0 < low <= high < 1",
                    self.low, self.high
                ),
            ));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            self.low + (self.high - self.low) * rng.random::<f64>()
        }
    }
}

/// Arrival times on `[0, horizon]` by thinning a homogeneous stream at the
/// maximal rate.
pub fn sample_arrivals<R: Rng>(intensity: &Intensity, horizon: f64, rng: &mut R) -> Vec<f64> {
    let max_rate = intensity.max_rate();
    let mut times = Vec::new();
    if max_rate <= 0.0 {
        return times;
    }
    let mut t = 0.0;
    loop {
        // Exponential gap; 1 - U lies in (0, 1].
        t -= (1.0 - rng.random::<f64>()).ln() / max_rate;
        if t > horizon {
            break;
        }
        if rng.random::<f64>() * max_rate < intensity.rate_at(t) {
            times.push(t);
        }
    }
    times
}

/// Plays the refusal rule online on simulated arrival streams: the engine
/// stops on a success once the refusal integral at that time is at most 1.
/// The benchmark is the mean, over realisations, of the optimal known-odds
/// win probability for the realised patients.
pub fn simulate_horizon(
    model: &ArrivalModel,
    true_p: f64,
    health: HealthRange,
    config: &SimConfig,
) -> Result<SimReport> {
    config.validate()?;
    health.validate()?;
    if !(true_p > 0.0 && true_p < 1.0) {
        return Err(Error::invalid(
            "true_p",
            format!("{true_p} must lie in (0, 1)"),
        ));
    }
    if !model.arrivals().is_empty() {
        return Err(Error::invalid(
            "model",
            "simulation starts from a model without arrivals",
        ));
    }
    let tally = run_blocks(config, |rep, rng| {
        let times = sample_arrivals(model.intensity(), model.horizon(), rng);
        let mut live = model.clone();
        let mut outcomes = Vec::with_capacity(times.len());
        let mut probs = Vec::with_capacity(times.len());
        let mut stop = None;
        for (i, &time) in times.iter().enumerate() {
            let h = health.sample(rng);
            let success = rng.random::<f64>() < h * true_p;
            outcomes.push(success);
            probs.push(h * true_p);
            if stop.is_some() {
                continue;
            }
            live.record_arrival(time, h, Outcome::from_bool(success))
                .expect("sampled arrivals are ordered");
            if success
                && refusal_integral(&live, time)
                    .expect("within horizon")
                    .refuse_from_now
            {
                stop = Some(i + 1);
            }
        }
        let oracle = if probs.is_empty() {
            0.0
        } else {
            stop_index(&OddsProfile::new(probs).expect("h·p lies in (0, 1)")).win_probability
        };
        (record(rep, &outcomes, stop), oracle)
    });
    let benchmark = tally.benchmark_sum / tally.count as f64;
    Ok(report("horizon", config, tally, Some(benchmark)))
}
