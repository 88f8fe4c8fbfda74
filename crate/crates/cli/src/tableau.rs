//! Hand-calculation tableaux: the known-odds lines (i)-(iii) in reversed
//! order, and the adaptive lines (i)-(vi) in treatment order.

use std::fmt::Write;

use oddstop_core::adaptive::{AdaptiveState, InferenceReport};
use oddstop_core::odds::{OddsProfile, StopPlan, ValueCurve};

/// Columns per block before wrapping.
const COLUMNS: usize = 12;

/// Two decimals without trailing zeros or a leading zero: `0.10` is `.1`.
pub fn short(x: f64) -> String {
    if x.is_infinite() {
        return "inf".into();
    }
    let fixed = format!("{x:.2}");
    let trimmed = fixed.trim_end_matches('0').trim_end_matches('.');
    let out = match trimmed.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => trimmed.to_string(),
    };
    if out == "-0" {
        "0".into()
    } else {
        out
    }
}

/// Renders labelled rows as aligned columns, wrapping every [`COLUMNS`].
fn grid(rows: &[(&str, Vec<String>)]) -> String {
    let width = rows
        .iter()
        .flat_map(|(_, cells)| cells.iter().map(String::len))
        .max()
        .unwrap_or(1)
        .max(3);
    let label = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let columns = rows.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    let mut out = String::new();
    for start in (0..columns.max(1)).step_by(COLUMNS) {
        if start > 0 {
            out.push('\n');
        }
        for (name, cells) in rows {
            let mut line = format!("{name:<label$} ");
            for cell in cells.iter().skip(start).take(COLUMNS) {
                let _ = write!(line, " {cell:<width$}");
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
    }
    out
}

/// Lines (i)-(iii) with entries in reversed order. Line (iii) stops at
/// the column where the running odds sum first reaches 1.
pub fn known(profile: &OddsProfile, plan: &StopPlan) -> String {
    let n = profile.len();
    let rev = |v: &[f64]| v.iter().rev().map(|&x| short(x)).collect::<Vec<_>>();
    let mut odds = rev(profile.odds());
    let shown = n - plan.index + 1;
    if shown < n {
        odds.truncate(shown);
        odds.push("...".into());
    }
    grid(&[
        ("(i)", rev(profile.probs())),
        ("(ii)", rev(profile.fails())),
        ("(iii)", odds),
    ])
}

pub fn known_summary(profile: &OddsProfile, plan: &StopPlan) -> String {
    let n = profile.len();
    let s = plan.index;
    let terms: Vec<String> = profile.odds()[s - 1..]
        .iter()
        .rev()
        .map(|&r| short(r))
        .collect();
    let relation = if plan.threshold_reached() {
        ">= 1"
    } else {
        "< 1, never reaches 1"
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "s = {s}    ({} = {} {relation})",
        terms.join(" + "),
        short(plan.odds_sum)
    );
    let _ = writeln!(out, "R({n},{s}) = {:.6}", plan.odds_sum);
    let _ = writeln!(out, "Q({n},{s}) = {:.6}", plan.fail_product);
    let _ = writeln!(out, "V({n},{s}) = Q·R = {:.6}", plan.win_probability);
    if s > 1 {
        let _ = writeln!(
            out,
            "treat patients 1..{} in any case, then stop on the first success from patient {s} on",
            s - 1
        );
    } else {
        let _ = writeln!(out, "stop on the first success");
    }
    out
}

pub fn value_curve(curve: &ValueCurve, best: usize) -> String {
    let n = curve.len();
    let mut out = format!("{:>4}  V({n},s)\n", "s");
    for s in 1..=n {
        let mark = if s == best { "  <- max" } else { "" };
        let _ = writeln!(out, "{s:>4}  {:.6}{mark}", curve.at(s));
    }
    out
}

/// Lines (i) `h_j`, (ii) `H_j`, (iii) `S_j` for completed treatments, and
/// (iv)-(vi) `r̂_j`, `p̂_j`, `q̂_j` for the patients still to be treated.
pub fn adaptive(state: &AdaptiveState, report: Option<&InferenceReport>) -> String {
    let n = state.scheduled();
    let k = state.completed();
    let scores = state.scores();
    let header: Vec<String> = (1..=n).map(|j| j.to_string()).collect();
    let h: Vec<String> = scores.scores().iter().map(|&x| short(x)).collect();
    let big_h: Vec<String> = (1..=n).map(|j| short(scores.prefix_sum(j))).collect();
    let mut running = 0;
    let s: Vec<String> = (0..n)
        .map(|j| match state.outcomes().get(j) {
            Some(o) => {
                running += o.is_success() as usize;
                running.to_string()
            }
            None => String::new(),
        })
        .collect();
    let mut rows = vec![("j", header), ("(i)", h), ("(ii)", big_h), ("(iii)", s)];
    if let Some(report) = report {
        let future = |f: &dyn Fn(usize) -> String| -> Vec<String> {
            (0..n)
                .map(|j| if j < k { String::new() } else { f(j - k) })
                .collect()
        };
        rows.push(("(iv)", future(&|i| short(report.lines[i].odds))));
        rows.push(("(v)", future(&|i| short(report.lines[i].p_hat))));
        rows.push(("(vi)", future(&|i| short(report.lines[i].q_hat))));
    }
    grid(&rows)
}

pub fn adaptive_summary(
    state: &AdaptiveState,
    report: Option<&InferenceReport>,
    alpha: f64,
) -> String {
    let k = state.completed();
    let mut out = String::new();
    let Some(r) = report else {
        let _ = writeln!(out, "k = 0: no outcomes yet");
        return out;
    };
    let _ = writeln!(
        out,
        "k = {k}    S_k = {}    H_k = {:.4}    p̂ = S_k/H_k = {:.6}",
        r.successes,
        state.scores().prefix_sum(k),
        r.p_hat
    );
    let relation = if r.future_odds_sum < 1.0 {
        "< 1"
    } else {
        ">= 1"
    };
    let _ = writeln!(out, "sum of (iv) = {:.6} {relation}", r.future_odds_sum);
    let _ = writeln!(
        out,
        "sum of (v)  = {:.6}    expected further successes",
        r.expected_further
    );
    let _ = writeln!(
        out,
        "prod of (vi) = {:.6}    P(no further success)",
        r.prob_no_further
    );
    let _ = write!(
        out,
        "1 - prod     = {:.6}    P(some further success)",
        r.further_success_prob
    );
    if alpha > 0.0 {
        let _ = write!(out, "    alpha = {alpha}");
    }
    out.push('\n');
    if r.clamped {
        let _ = writeln!(out, "note: some h_j p̂ exceeded 1 and were clamped");
    }
    out
}
