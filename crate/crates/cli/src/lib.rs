//! The `cascade-trace` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 trace server unreachable or
//! rejecting requests, 3 unknown CPID, 4 scenario did not finish.

pub mod dot;
mod error;
pub mod flame;
pub mod investigate;
pub mod sweep;

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use cascade_trace::{Cpid, TraceQuery, DEFAULT_MAX_ANCESTORS};
use cascade_trace_server::{BoundServer, HttpSink, HttpTraceClient, ServerConfig, DEFAULT_LISTEN};
use cascade_trace_sim::{run_scenario, Scenario, ScenarioReport, SimConfig};
use clap::{Parser, Subcommand, ValueEnum};

pub use error::CliError;

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:9411";

/// First line `serve` prints on stdout, followed by the base URL.
pub const LISTENING_PREFIX: &str = "listening on ";

#[derive(Debug, Parser)]
#[command(
    name = "cascade-trace",
    version,
    about = "Trace cascading changes in a declarative control plane"
)]
pub struct Cli {
    /// Trace server base URL [default: http://127.0.0.1:9411]
    #[arg(long, global = true, value_name = "URL")]
    pub server: Option<String>,

    /// Ancestor CPIDs kept per object
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_ANCESTORS, value_name = "INT")]
    pub n_ancestors: usize,

    /// Seed for CPIDs and scheduling; required with --deterministic
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,

    /// Single-threaded seeded simulation with a logical clock
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// JSON Lines controller log (written by run, read by investigate)
    #[arg(long, global = true, value_name = "PATH")]
    pub log_file: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
    Folded,
    Dot,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the trace server until interrupted
    Serve {
        #[arg(long, default_value = DEFAULT_LISTEN)]
        listen: SocketAddr,
        /// Periodically prune the merge graph down to this many CPIDs
        #[arg(long)]
        max_graph_nodes: Option<u64>,
        /// Seconds between prune passes
        #[arg(long, default_value_t = 10.0)]
        prune_interval: f64,
    },
    /// Run a scenario against the trace server and report what it produced
    Run {
        /// Built-in scenario name or path to a JSON scenario file
        #[arg(long)]
        scenario: String,
        /// Do not attach root CPIDs to operator actions
        #[arg(long)]
        untraced: bool,
        /// Leave the non-instrumented kubelet out
        #[arg(long)]
        no_kubelet: bool,
    },
    /// Show everything related to a CPID: CPIDs, spans and log records
    Investigate { cpid: String },
    /// Export the spans related to a CPID as a flame graph
    Flame {
        cpid: String,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Export the merge graph
    Graph {
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Count merge mergelogs for a range of ancestor bounds
    Sweep {
        /// Comma-separated N values [default: 0,1,2,3,5,10,15,20,30]
        #[arg(long, value_name = "LIST")]
        n_values: Option<String>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, default_value = "n-sweep-step")]
        scenario: String,
    },
}

/// Parses `args` and runs the command, writing results to `out`. Returns the
/// process exit code.
pub fn main_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("cascade-trace: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let server = cli.server.as_deref().unwrap_or(DEFAULT_SERVER);
    let io = |e: std::io::Error| CliError::Failed(format!("cannot write output: {e}"));
    match &cli.command {
        Command::Serve {
            listen,
            max_graph_nodes,
            prune_interval,
        } => {
            if !(prune_interval.is_finite() && *prune_interval > 0.0) {
                return Err(CliError::Usage("--prune-interval must be positive".into()));
            }
            serve(
                ServerConfig {
                    listen: *listen,
                    max_graph_nodes: *max_graph_nodes,
                    prune_interval: Duration::from_secs_f64(*prune_interval),
                    n_ancestors: cli.n_ancestors,
                },
                out,
            )
        }
        Command::Run {
            scenario,
            untraced,
            no_kubelet,
        } => {
            let format = allowed(cli.format, &[Format::Table, Format::Json])?;
            let scenario = Scenario::resolve(scenario)?;
            let config = SimConfig {
                traced: !untraced,
                kubelet: !no_kubelet,
                log_path: cli.log_file.clone(),
                ..sim_config(cli)?
            };
            let client = connect(server)?;
            let sink = Arc::new(HttpSink::new(server));
            let report = run_scenario(&config, &scenario, sink, &client)?;
            if format != Some(Format::Json) {
                write!(out, "{}", render_report(&report)).map_err(io)?;
            }
            if format != Some(Format::Table) {
                writeln!(
                    out,
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                )
                .map_err(io)?;
            }
            Ok(())
        }
        Command::Investigate { cpid } => {
            let format = allowed(cli.format, &[Format::Table, Format::Json])?;
            let cpid = parse_cpid(cpid)?;
            let client = connect(server)?;
            let result =
                investigate::investigate(&client, cpid, cli.log_file.as_deref()).map_err(|e| {
                    match e {
                        investigate::InvestigateError::Query(q) => q.into(),
                        other => CliError::Usage(other.to_string()),
                    }
                })?;
            match format {
                Some(Format::Json) => writeln!(
                    out,
                    "{}",
                    serde_json::to_string_pretty(&result).expect("serializes")
                ),
                _ => write!(out, "{}", result.render_table()),
            }
            .map_err(io)
        }
        Command::Flame { cpid, output } => {
            let format = allowed(cli.format, &[Format::Folded, Format::Json])?;
            let cpid = parse_cpid(cpid)?;
            let client = connect(server)?;
            let spans = client.spans(Some(&cpid))?;
            let text = match format {
                Some(Format::Json) => {
                    let forest = flame::span_forest(&spans);
                    serde_json::to_string_pretty(&forest).expect("serializes") + "\n"
                }
                _ => flame::folded(&spans),
            };
            emit(&text, output.as_ref(), out)
        }
        Command::Graph { output } => {
            let format = allowed(cli.format, &[Format::Dot, Format::Json])?;
            let client = connect(server)?;
            let snapshot = client.graph()?;
            let text = match format {
                Some(Format::Json) => {
                    let body = cascade_trace_server::wire::GraphBody::from(snapshot);
                    serde_json::to_string_pretty(&body).expect("serializes") + "\n"
                }
                _ => dot::render(&snapshot),
            };
            emit(&text, output.as_ref(), out)
        }
        Command::Sweep {
            n_values,
            repeats,
            scenario,
        } => {
            let format = allowed(cli.format, &[Format::Csv, Format::Table, Format::Json])?;
            let n_values = match n_values {
                Some(s) => sweep::parse_n_values(s)?,
                None => sweep::DEFAULT_N_VALUES.to_vec(),
            };
            if cli.deterministic && cli.seed.is_none() {
                return Err(CliError::Usage("--deterministic needs --seed".into()));
            }
            let source =
                match &cli.server {
                    Some(url) => sweep::ServerSource::Fixed(url.clone()),
                    None => sweep::ServerSource::Spawn(std::env::current_exe().map_err(|e| {
                        CliError::Failed(format!("cannot locate own executable: {e}"))
                    })?),
                };
            let opts = sweep::SweepOptions {
                n_values,
                repeats: *repeats,
                seed: if cli.deterministic { cli.seed } else { None },
                scenario: Scenario::resolve(scenario)?,
                server: source,
            };
            let points = sweep::sweep(&opts)?;
            let rows = sweep::summarize(&points);
            let text = match format {
                Some(Format::Csv) => sweep::render_csv(&points),
                Some(Format::Table) => sweep::render_table(&rows),
                Some(_) => {
                    let body = serde_json::json!({ "runs": points, "summary": rows });
                    serde_json::to_string_pretty(&body).expect("serializes") + "\n"
                }
                None => format!(
                    "{}\n{}",
                    sweep::render_csv(&points),
                    sweep::render_table(&rows)
                ),
            };
            out.write_all(text.as_bytes()).map_err(io)
        }
    }
}

fn allowed(format: Option<Format>, ok: &[Format]) -> Result<Option<Format>, CliError> {
    match format {
        Some(f) if !ok.contains(&f) => {
            let names: Vec<String> = ok
                .iter()
                .map(|f| f.to_possible_value().expect("named").get_name().to_string())
                .collect();
            Err(CliError::Usage(format!(
                "--format {} is not supported here (use {})",
                f.to_possible_value().expect("named").get_name(),
                names.join(" or ")
            )))
        }
        f => Ok(f),
    }
}

fn parse_cpid(s: &str) -> Result<Cpid, CliError> {
    s.parse()
        .map_err(|e| CliError::Usage(format!("invalid CPID {s:?}: {e}")))
}

fn sim_config(cli: &Cli) -> Result<SimConfig, CliError> {
    if cli.deterministic {
        let seed = cli
            .seed
            .ok_or_else(|| CliError::Usage("--deterministic needs --seed".into()))?;
        Ok(SimConfig::deterministic(cli.n_ancestors, seed))
    } else {
        Ok(SimConfig {
            seed: cli.seed,
            ..SimConfig::realistic(cli.n_ancestors)
        })
    }
}

fn connect(url: &str) -> Result<HttpTraceClient, CliError> {
    let client = HttpTraceClient::new(url);
    if client.ping() {
        Ok(client)
    } else {
        Err(CliError::Transport(format!(
            "trace server at {url} is unreachable"
        )))
    }
}

fn emit(text: &str, path: Option<&PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", p.display()))),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Failed(format!("cannot write output: {e}"))),
    }
}

fn serve(config: ServerConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let bound = BoundServer::bind(config)
            .await
            .map_err(|e| CliError::Transport(e.to_string()))?;
        let addr = bound
            .local_addr()
            .map_err(|e| CliError::Failed(e.to_string()))?;
        let _ = writeln!(out, "{LISTENING_PREFIX}http://{addr}");
        let _ = out.flush();
        bound
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Failed(format!("server error: {e}")))
    })?;
    eprintln!("cascade-trace: server stopped");
    Ok(())
}

/// The human half of `run` output.
pub fn render_report(r: &ScenarioReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("scenario".into(), r.scenario.clone()),
        ("mode".into(), format!("{:?}", r.mode).to_lowercase()),
        ("n_ancestors".into(), r.n_ancestors.to_string()),
        ("seed".into(), r.seed.map_or("-".into(), |s| s.to_string())),
        ("traced".into(), r.traced.to_string()),
        ("merge mergelogs".into(), r.mergelog_count.to_string()),
        (
            "root registrations".into(),
            r.registration_count.to_string(),
        ),
        ("spans".into(), r.span_count.to_string()),
        ("wall time".into(), format!("{:.1} ms", r.wall_time_ms)),
        ("audited writes".into(), r.audited_writes.to_string()),
        (
            "audit violations".into(),
            r.audit_violations.len().to_string(),
        ),
        (
            "controller errors".into(),
            r.controller_errors.len().to_string(),
        ),
    ];
    for (c, n) in &r.mergelogs_by_controller {
        rows.push((format!("merges by {c}"), n.to_string()));
    }
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        out.push_str(&format!("{k:<width$}  {v}\n"));
    }
    out.push_str(&format!("root CPIDs ({}):\n", r.root_cpids.len()));
    for c in &r.root_cpids {
        out.push_str(&format!("  {c}\n"));
    }
    out
}
