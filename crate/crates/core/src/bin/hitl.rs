use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hitl_core::config::{CostMode, LlmKind, OracleKind, Overrides, RunConfig};
use hitl_core::events::EventLog;
use hitl_core::harness::{synthetic_task, write_jsonl, AgentState, GenConfig, Policy, Runner};
use hitl_core::kr::{Repository, Status};
use hitl_core::report::Report;
use hitl_core::service::{serve, Service, ServiceOptions};

#[derive(Parser)]
#[command(
    name = "hitl",
    version,
    about = "Run, serve and inspect expert-guided learning runs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Process a stream to the end and print its metrics.
    Run(RunArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Rebuild state from a log and print its metrics.
    Replay {
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Knowledge repository tools.
    Kr {
        #[command(subcommand)]
        cmd: KrCmd,
    },
    /// Generate a synthetic stream and its scripted oracle table.
    GenStream(GenArgs),
    /// Tabulate metrics of one or more logs.
    Report {
        logs: Vec<PathBuf>,
        /// Write `<stem>.txt` and `<stem>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "")]
        title: String,
    },
}

#[derive(Subcommand)]
enum KrCmd {
    /// List items from a run log or a repository snapshot.
    Inspect {
        source: PathBuf,
        #[arg(long)]
        status: Option<String>,
        /// Case-insensitive text filter.
        #[arg(long)]
        q: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    budget: Option<i64>,
    #[arg(long)]
    cost_mode: Option<CostMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Instance stream (line-delimited JSON).
    #[arg(long, alias = "stream")]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_llm)]
    llm: Option<LlmKind>,
    #[arg(long, value_parser = parse_oracle)]
    oracle: Option<OracleKind>,
    #[arg(long)]
    oracle_table: Option<PathBuf>,
    /// Event log to write; `<run-id>.events.jsonl` by default.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    /// reflective, labels-only, static, random:<rate>[:<seed>] or uncertainty:<theta>
    #[arg(long, value_parser = parse_policy)]
    policy: Option<Policy>,
    /// Plain relevance ranking without status or recency.
    #[arg(long)]
    no_temporal: bool,
    /// Keep conflicting items side by side.
    #[arg(long)]
    no_conflict_resolution: bool,
    /// Continue the run recorded in `--log` with its own settings.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, env = "HITL_TOKEN")]
    token: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Ordinal from which the first rule flips its label.
    #[arg(long)]
    drift_at: Option<u64>,
}

fn parse_llm(s: &str) -> Result<LlmKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown llm {s:?}"))
}

fn parse_oracle(s: &str) -> Result<OracleKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown oracle {s:?}"))
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    let mut parts = s.split(':');
    let head = parts.next().unwrap_or_default();
    let num = |p: Option<&str>, what: &str| -> Result<f64, String> {
        p.ok_or_else(|| format!("{head} needs :<{what}>"))?
            .parse::<f64>()
            .map_err(|e| format!("{what}: {e}"))
    };
    let p = match head {
        "reflective" => Policy::default(),
        "labels-only" => Policy::labels_only(),
        "static" => Policy::Static,
        "random" => Policy::Random {
            rate: num(parts.next(), "rate")?,
            seed: parts
                .next()
                .map_or(Ok(7), |v| v.parse().map_err(|e| format!("seed: {e}")))?,
        },
        "uncertainty" => Policy::Uncertainty {
            theta: num(parts.next(), "theta")?,
        },
        _ => return Err(format!("unknown policy {s:?}")),
    };
    p.validate()?;
    Ok(p)
}

fn report_for(name: &str, state: &AgentState) -> Report {
    let mut r = Report::new("");
    r.push(name, state.metrics());
    r
}

fn cmd_run(a: RunArgs) -> Result<(), String> {
    if a.resume {
        let log_path = a.log.ok_or("--resume needs --log")?;
        let records = EventLog::load(&log_path).map_err(|e| e.to_string())?;
        let state = AgentState::replay(&records).map_err(|e| e.to_string())?;
        let started = state.started.ok_or("log has no start record")?;
        let cfg: RunConfig =
            serde_json::from_value(started.config).map_err(|e| format!("logged config: {e}"))?;
        let built = cfg
            .build(&started.run_id, None)
            .map_err(|e| e.to_string())?;
        let log = EventLog::open(&log_path).map_err(|e| e.to_string())?;
        let mut runner = Runner::resume(built.params, built.providers, log, built.stream)
            .map_err(|e| e.to_string())?;
        return finish_run(&mut runner, a.report.as_deref());
    }

    let flags = Overrides {
        budget: a.budget,
        cost_mode: a.cost_mode,
        seed: a.seed,
        stream: a.dataset,
        log: a.log,
        llm: a.llm,
        oracle: a.oracle,
        oracle_table: a.oracle_table,
        run_id: a.run_id,
        policy: a.policy,
    };
    let mut cfg = RunConfig::resolve(a.config.as_deref(), std::env::vars(), &flags)
        .map_err(|e| e.to_string())?;
    if a.no_temporal {
        cfg.scoring.lambda_per_day = 0.0;
        cfg.scoring.w_po = 1.0;
        cfg.temporal_annotations = false;
    }
    if a.no_conflict_resolution {
        if !matches!(cfg.policy, Policy::Reflective { .. }) {
            return Err("--no-conflict-resolution applies to the reflective policy".into());
        }
        cfg.policy = Policy::without_conflict_resolution();
    }
    if cfg.stream.is_none() {
        return Err("no stream: pass --dataset or set `stream` in the config".into());
    }
    if cfg.oracle.kind == OracleKind::Human {
        return Err("the human oracle needs `hitl serve`".into());
    }
    let run_id = cfg.run_id.clone().unwrap_or_else(|| "run".into());
    cfg.run_id = Some(run_id.clone());
    let built = cfg.build(&run_id, None).map_err(|e| e.to_string())?;
    let log_path = cfg
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{run_id}.events.jsonl")));
    let log = EventLog::create(&log_path).map_err(|e| format!("{}: {e}", log_path.display()))?;
    let mut runner = Runner::start(
        &run_id,
        built.params,
        built.providers,
        log,
        built.stream,
        built.seed,
        cfg.snapshot(),
    )
    .map_err(|e| e.to_string())?;
    finish_run(&mut runner, a.report.as_deref())?;
    eprintln!("log written to {}", log_path.display());
    Ok(())
}

fn finish_run(runner: &mut Runner, report: Option<&Path>) -> Result<(), String> {
    runner.run_to_end().map_err(|e| e.to_string())?;
    let r = report_for(runner.run_id(), runner.state());
    print!("{}", r.render_text());
    if let Some(stem) = report {
        r.write(stem).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn load_state(log: &Path) -> Result<AgentState, String> {
    let records = EventLog::load(log).map_err(|e| format!("{}: {e}", log.display()))?;
    AgentState::replay(&records).map_err(|e| format!("{}: {e}", log.display()))
}

fn cmd_replay(log: &Path, json: bool) -> Result<(), String> {
    let st = load_state(log)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&st.metrics()).expect("metrics serialize")
        );
    } else {
        print!("{}", report_for(st.run_id(), &st).render_text());
    }
    Ok(())
}

fn cmd_kr_inspect(
    source: &Path,
    status: Option<&str>,
    q: Option<&str>,
    json: bool,
) -> Result<(), String> {
    let text = std::fs::read_to_string(source).map_err(|e| format!("{}: {e}", source.display()))?;
    // A snapshot is one JSON object; a log has one record per line.
    let repo = match serde_json::from_str::<Repository>(&text) {
        Ok(r) => r,
        Err(_) => load_state(source)?.repo,
    };
    let status = status
        .map(|s| Status::parse(s).ok_or_else(|| format!("unknown status {s:?}")))
        .transpose()?;
    let needle = q.map(str::to_lowercase);
    let items: Vec<_> = repo
        .items()
        .filter(|i| status.is_none_or(|s| i.status == s))
        .filter(|i| {
            needle
                .as_ref()
                .is_none_or(|n| i.content.text.to_lowercase().contains(n))
        })
        .collect();
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&items).expect("items serialize")
        );
        return Ok(());
    }
    let kid_w = items.iter().map(|i| i.kid.len()).max().unwrap_or(3).max(3);
    let st_w = items
        .iter()
        .map(|i| i.status_label().len())
        .max()
        .unwrap_or(6)
        .max(6);
    println!(
        "{:<kid_w$}  {:<st_w$}  {:>10}  {:<11}  text",
        "kid", "status", "validated", "kind"
    );
    for i in items {
        println!(
            "{:<kid_w$}  {:<st_w$}  {:>10}  {:<11}  {}",
            i.kid,
            i.status_label(),
            i.ts_validated,
            i.content.kind.as_str(),
            i.content.text.replace('\n', " ")
        );
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<(), String> {
    let cfg = GenConfig {
        n: a.n,
        seed: a.seed,
        ..GenConfig::default()
    };
    let task = synthetic_task(&cfg, a.drift_at);
    std::fs::create_dir_all(&a.out_dir).map_err(|e| e.to_string())?;
    let stream = a.out_dir.join("stream.jsonl");
    write_jsonl(&stream, &task.stream).map_err(|e| e.to_string())?;
    let oracle = a.out_dir.join("oracle.json");
    std::fs::write(
        &oracle,
        serde_json::to_string_pretty(&task.oracle).expect("table serializes"),
    )
    .map_err(|e| e.to_string())?;
    let rules = a.out_dir.join("rules.json");
    std::fs::write(
        &rules,
        serde_json::to_string_pretty(&task.rules).expect("rules serialize"),
    )
    .map_err(|e| e.to_string())?;
    println!("{} instances -> {}", task.stream.len(), stream.display());
    println!("oracle table -> {}", oracle.display());
    println!("hidden rules -> {}", rules.display());
    Ok(())
}

fn cmd_report(logs: &[PathBuf], out: Option<&Path>, title: String) -> Result<(), String> {
    if logs.is_empty() {
        return Err("give at least one log".into());
    }
    let mut r = Report::new(title);
    for log in logs {
        let st = load_state(log)?;
        let name = if st.run_id().is_empty() {
            log.display().to_string()
        } else {
            st.run_id().to_string()
        };
        r.push(name, st.metrics());
    }
    print!("{}", r.render_text());
    if let Some(stem) = out {
        r.write(stem).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), String> {
    let svc = Service::new(ServiceOptions {
        token: a.token,
        data_dir: a.data_dir.clone(),
    });
    if let Some(dir) = &a.data_dir {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let found = svc.recover().map_err(|e| e.to_string())?;
        if !found.is_empty() {
            eprintln!("recovered runs: {}", found.join(", "));
        }
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(serve(svc, a.addr, |bound| {
        eprintln!("listening on http://{bound}")
    }))
    .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("HITL_LOG_LEVEL")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Replay { log, json } => cmd_replay(&log, json),
        Cmd::Kr {
            cmd:
                KrCmd::Inspect {
                    source,
                    status,
                    q,
                    json,
                },
        } => cmd_kr_inspect(&source, status.as_deref(), q.as_deref(), json),
        Cmd::GenStream(a) => cmd_gen(a),
        Cmd::Report { logs, out, title } => cmd_report(&logs, out.as_deref(), title),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
