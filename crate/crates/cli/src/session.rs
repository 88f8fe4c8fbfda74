use std::sync::Arc;

use anyhow::Context;
use oddstop_service::store::read_log;
use oddstop_service::{Session, Store};
use tracing_subscriber::EnvFilter;

use crate::plan::describe;
use crate::{ReplayArgs, ServeArgs};

pub fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let store = Store::open(&args.data_dir)
        .with_context(|| format!("opening {}", args.data_dir.display()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        println!("listening on http://{}", listener.local_addr()?);
        oddstop_service::serve(listener, Arc::new(store), args.token.clone()).await?;
        Ok(())
    })
}

pub fn replay(args: &ReplayArgs) -> anyhow::Result<()> {
    let path = match (&args.log, &args.session, &args.data_dir) {
        (Some(path), _, _) => path.clone(),
        (None, Some(id), Some(dir)) => dir.join(format!("{id}.jsonl")),
        _ => anyhow::bail!("give a log file, or --session with --data-dir"),
    };
    let events = read_log(&path, false).with_context(|| format!("reading {}", path.display()))?;
    let session =
        Session::replay(&events).with_context(|| format!("replaying {}", path.display()))?;
    if args.json {
        println!("{}", session.view_json());
        return Ok(());
    }
    let view = session.view();
    let r = view.recommendation;
    println!("session           {}", view.id);
    println!("protocol          {:?}", view.protocol);
    println!("events            {}", view.seq);
    match view.scheduled {
        Some(n) => println!(
            "treated           {} of {n}    successes {}",
            view.completed, view.successes
        ),
        None => println!(
            "arrivals          {}    successes {}",
            view.completed, view.successes
        ),
    }
    println!("recommendation    {}", describe(r.action, r.source));
    if let Some(plan) = &r.figures.plan {
        println!(
            "threshold index   s = {}    V = {:.6}",
            plan.index, plan.win_probability
        );
    }
    if let Some(risk) = &r.figures.risk {
        println!("expected further  {:.6}", risk.expected_further);
        println!("P(no further)     {:.6}", risk.prob_no_further);
    }
    Ok(())
}
