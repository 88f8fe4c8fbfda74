use anyhow::bail;
use oddstop_core::adaptive::{inference_report, recommend, SequencePolicy};
use oddstop_core::horizon::{assess, first_refusal_time, refusal_integral};
use oddstop_core::odds::{best_order, lower_bound_check, stop_index, value_curve};
use oddstop_core::{Action, Source};
use serde_json::json;

use crate::instance::{AdaptiveInstance, HorizonInstance, Instance};
use crate::{tableau, PlanArgs};

pub fn run(args: &PlanArgs) -> anyhow::Result<()> {
    let instance = args.source.load()?;
    if args.alpha.is_some() && !matches!(instance, Instance::Adaptive(_)) {
        bail!("--alpha applies to adaptive instances only");
    }
    if args.best_order && !matches!(instance, Instance::Known(_)) {
        bail!("--best-order applies to known-odds instances only");
    }
    match instance {
        Instance::Known(profile) => known(profile, args),
        Instance::Adaptive(a) => adaptive(a, args),
        Instance::Horizon(h) => horizon(h, args),
    }
}

fn known(given: oddstop_core::odds::OddsProfile, args: &PlanArgs) -> anyhow::Result<()> {
    let (profile, order) = if args.best_order {
        let choice = best_order(&given, args.max_exhaustive)?;
        (given.permuted(&choice.order)?, Some(choice.order))
    } else {
        (given.clone(), None)
    };
    let plan = stop_index(&profile);
    let curve = value_curve(&profile);
    if args.json {
        let original = stop_index(&given);
        let doc = json!({
            "kind": "known",
            "n": profile.len(),
            "probs": profile.probs(),
            "fails": profile.fails(),
            "odds": profile.odds(),
            "plan": plan,
            "value_curve": curve,
            "lower_bound_holds": lower_bound_check(&plan, &profile),
            "order": order.as_ref().map(|o| o.iter().map(|i| i + 1).collect::<Vec<_>>()),
            "given_order_win_probability": order.as_ref().map(|_| original.win_probability),
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
        return Ok(());
    }
    if let Some(order) = &order {
        let labels: Vec<String> = order.iter().map(|i| (i + 1).to_string()).collect();
        println!(
            "best order (original patient numbers): {}",
            labels.join(" ")
        );
        println!(
            "V given order = {:.6}, V best order = {:.6}\n",
            stop_index(&given).win_probability,
            plan.win_probability
        );
    }
    print!("{}", tableau::known(&profile, &plan));
    println!();
    print!("{}", tableau::known_summary(&profile, &plan));
    println!();
    print!("{}", tableau::value_curve(&curve, curve.argmax()));
    Ok(())
}

fn adaptive(mut a: AdaptiveInstance, args: &PlanArgs) -> anyhow::Result<()> {
    if let Some(alpha) = args.alpha {
        a.policy = SequencePolicy::new(alpha, a.policy.max_initial_failures)?;
    }
    let report = inference_report(&a.state).ok();
    let (action, source) = recommend(&a.state, &a.policy);
    if args.json {
        let doc = json!({
            "kind": "adaptive",
            "h": a.state.scores().scores(),
            "H": (1..=a.state.scheduled()).map(|j| a.state.scores().prefix_sum(j)).collect::<Vec<_>>(),
            "outcomes": a.state.outcomes(),
            "completed": a.state.completed(),
            "successes": a.state.successes(),
            "policy": a.policy,
            "inference": report,
            "action": action,
            "source": source,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
        return Ok(());
    }
    print!("{}", tableau::adaptive(&a.state, report.as_ref()));
    println!();
    print!(
        "{}",
        tableau::adaptive_summary(&a.state, report.as_ref(), a.policy.alpha)
    );
    println!("recommendation: {}", describe(action, source));
    Ok(())
}

fn horizon(h: HorizonInstance, args: &PlanArgs) -> anyhow::Result<()> {
    let model = &h.model;
    let decision = refusal_integral(model, model.now())?;
    let refuse_at = first_refusal_time(model);
    let (action, source) = if model.arrivals().is_empty() {
        (Action::Continue, Source::RefusalRule)
    } else if model.successes() == 0 {
        (Action::ConsentRequired, Source::ConsentPolicy)
    } else {
        (assess(model), Source::RefusalRule)
    };
    if args.json {
        let doc = json!({
            "kind": "horizon",
            "horizon": model.horizon(),
            "intensity": model.intensity(),
            "arrivals": model.arrivals(),
            "now": model.now(),
            "refusal": decision,
            "first_refusal_time": refuse_at,
            "action": action,
            "source": source,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
        return Ok(());
    }
    let prior = if decision.mean_health_is_prior {
        " (prior)"
    } else {
        ""
    };
    println!(
        "horizon t = {}    now = {}    arrivals = {}    successes = {}",
        model.horizon(),
        model.now(),
        model.arrivals().len(),
        model.successes()
    );
    println!("predictor P = S/H = {:.6}", decision.predictor);
    println!("mean health m_h = {:.6}{prior}", decision.mean_health);
    let relation = if decision.refuse_from_now {
        "<= 1"
    } else {
        "> 1"
    };
    println!(
        "integral of λ·P·m_h over [now, t] = {:.6} {relation}",
        decision.integral_value
    );
    println!("first refusal time = {refuse_at:.9}");
    println!("recommendation: {}", describe(action, source));
    Ok(())
}

pub fn describe(action: Action, source: Source) -> String {
    let action = serde_json::to_value(action).expect("action serializes");
    let source = serde_json::to_value(source).expect("source serializes");
    format!(
        "{} ({})",
        action.as_str().unwrap_or_default(),
        source.as_str().unwrap_or_default()
    )
}
