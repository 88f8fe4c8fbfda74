use std::io;

use anyhow::{bail, Context};
use oddstop_core::odds::{best_order, stop_index, DEFAULT_EXHAUSTIVE_LIMIT};
use oddstop_core::simulator::{
    adaptive_sweep, simulate_adaptive, simulate_horizon, simulate_known, HealthRange, SimConfig,
    SimReport, SweepRow,
};

use crate::instance::Instance;
use crate::SimulateArgs;

pub fn run(args: &SimulateArgs) -> anyhow::Result<()> {
    let config = SimConfig::new(args.reps, args.seed).with_execution(args.execution.into());
    let instance = args.source.load()?;
    if args.best_order && !matches!(instance, Instance::Known(_)) {
        bail!("--best-order applies to known-odds instances only");
    }
    if let Some(ns) = &args.sweep {
        let Instance::Adaptive(a) = &instance else {
            bail!("--sweep needs an adaptive instance")
        };
        let h = a
            .equal_h
            .context("--sweep needs an instance with a single common h")?;
        let p = args
            .true_p
            .or(a.true_p)
            .context("--sweep needs true_p (instance or --true-p)")?;
        let rows = adaptive_sweep(p, h, ns, &config)?;
        return emit_sweep(&rows, args);
    }
    let report = match instance {
        Instance::Known(given) => {
            let profile = if args.best_order {
                let choice = best_order(&given, DEFAULT_EXHAUSTIVE_LIMIT)?;
                given.permuted(&choice.order)?
            } else {
                given
            };
            simulate_known(&profile, &stop_index(&profile), &config)?
        }
        Instance::Adaptive(a) => {
            let p = args
                .true_p
                .or(a.true_p)
                .context("adaptive simulation needs true_p (instance or --true-p)")?;
            simulate_adaptive(p, a.state.scores(), &config)?
        }
        Instance::Horizon(h) => {
            let p = args
                .true_p
                .or(h.true_p)
                .context("horizon simulation needs true_p (instance or --true-p)")?;
            let health = h
                .health
                .unwrap_or_else(|| HealthRange::fixed(h.model.mean_health().0));
            simulate_horizon(&h.model, p, health, &config)?
        }
    };
    emit_report(&report, args)
}

fn emit_report(r: &SimReport, args: &SimulateArgs) -> anyhow::Result<()> {
    if args.json {
        println!("{}", serde_json::to_string_pretty(r)?);
        return Ok(());
    }
    if args.csv {
        let mut w = csv::Writer::from_writer(io::stdout());
        w.serialize(r)?;
        w.flush()?;
        return Ok(());
    }
    let n = r.replications as f64;
    println!("scenario          {}", r.scenario);
    println!("replications      {}", r.replications);
    println!("seed              {}", r.seed);
    println!(
        "win rate          {:.6} ± {:.6} (99% CI, std error {:.6})",
        r.win_rate, r.ci_halfwidth, r.std_error
    );
    if let Some(b) = r.benchmark {
        let z = if r.std_error > 0.0 {
            (r.win_rate - b) / r.std_error
        } else {
            0.0
        };
        println!(
            "benchmark         {b:.6}    (difference {:+.6}, {z:+.2} std errors)",
            r.win_rate - b
        );
    }
    println!(
        "no-success runs   {} ({:.4}%)",
        r.no_success_replications,
        100.0 * r.no_success_replications as f64 / n
    );
    println!("mean treated      {:.4}", r.mean_treated);
    println!("mean futile       {:.4}", r.mean_futile);
    println!(
        "prophet           rate {:.6}    mean treated {:.4}",
        r.prophet_rate, r.prophet_mean_treated
    );
    println!(
        "half-prophet      rate {:.6}    mean treated {:.4}",
        r.half_prophet_rate, r.half_prophet_mean_treated
    );
    Ok(())
}

fn emit_sweep(rows: &[SweepRow], args: &SimulateArgs) -> anyhow::Result<()> {
    if args.json {
        println!("{}", serde_json::to_string_pretty(rows)?);
        return Ok(());
    }
    if args.csv {
        let mut w = csv::Writer::from_writer(io::stdout());
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        return Ok(());
    }
    println!(
        "{:>6}  {:>10}  {:>10}  {:>10}  {:>10}",
        "n", "win rate", "std err", "benchmark", "gap"
    );
    for row in rows {
        println!(
            "{:>6}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}",
            row.n, row.win_rate, row.std_error, row.benchmark, row.gap
        );
    }
    Ok(())
}
