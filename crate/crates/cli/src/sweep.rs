//! The ancestor-bound sweep: how many merge mergelogs a scenario produces as
//! N varies.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;

use cascade_trace_server::{HttpSink, HttpTraceClient};
use cascade_trace_sim::{run_scenario, Scenario, SimConfig};
use serde::Serialize;

use crate::error::CliError;

/// The N values swept when none are given.
pub const DEFAULT_N_VALUES: [usize; 9] = [0, 1, 2, 3, 5, 10, 15, 20, 30];

/// Where each run's trace server comes from.
#[derive(Debug, Clone)]
pub enum ServerSource {
    /// A fresh `serve` child per run, so runs never share state.
    Spawn(PathBuf),
    /// One long-lived server; runs are told apart by their root CPIDs.
    Fixed(String),
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub n_values: Vec<usize>,
    pub repeats: usize,
    /// Deterministic mode with seeds `seed`, `seed + 1`, ... per repeat.
    pub seed: Option<u64>,
    pub scenario: Scenario,
    pub server: ServerSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub run: usize,
    pub mergelog_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub runs: usize,
    pub mean: f64,
    /// Standard error of the mean; zero with a single run.
    pub stderr: f64,
}

/// Parses a comma-separated list of N values.
pub fn parse_n_values(s: &str) -> Result<Vec<usize>, CliError> {
    let values: Vec<usize> = s
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::Usage(format!("invalid N value {v:?}")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("the N list is empty".into()));
    }
    Ok(values)
}

pub fn sweep(opts: &SweepOptions) -> Result<Vec<SweepPoint>, CliError> {
    if opts.n_values.is_empty() {
        return Err(CliError::Usage("the N list is empty".into()));
    }
    if opts.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let mut points = Vec::new();
    for &n in &opts.n_values {
        for run in 0..opts.repeats {
            let config = match opts.seed {
                Some(seed) => SimConfig::deterministic(n, seed.wrapping_add(run as u64)),
                None => SimConfig::realistic(n),
            };
            let child;
            let url = match &opts.server {
                ServerSource::Fixed(url) => url.clone(),
                ServerSource::Spawn(exe) => {
                    child = ChildServer::spawn(exe, n)?;
                    child.url.clone()
                }
            };
            let client = HttpTraceClient::new(&url);
            if !client.ping() {
                return Err(CliError::Transport(format!(
                    "trace server at {url} is unreachable"
                )));
            }
            let sink = Arc::new(HttpSink::new(&url));
            let report = run_scenario(&config, &opts.scenario, sink, &client)?;
            points.push(SweepPoint {
                n,
                run,
                mergelog_count: report.mergelog_count,
            });
        }
    }
    Ok(points)
}

/// Mean and standard error per N, in the order N first appears.
pub fn summarize(points: &[SweepPoint]) -> Vec<SweepRow> {
    let mut order: Vec<usize> = Vec::new();
    for p in points {
        if !order.contains(&p.n) {
            order.push(p.n);
        }
    }
    order
        .into_iter()
        .map(|n| {
            let xs: Vec<f64> = points
                .iter()
                .filter(|p| p.n == n)
                .map(|p| p.mergelog_count as f64)
                .collect();
            let k = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / k;
            let stderr = if xs.len() > 1 {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            } else {
                0.0
            };
            SweepRow {
                n,
                runs: xs.len(),
                mean,
                stderr,
            }
        })
        .collect()
}

pub fn render_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("n,run,mergelog_count\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.n, p.run, p.mergelog_count);
    }
    out
}

pub fn render_table(rows: &[SweepRow]) -> String {
    let base = rows.iter().find(|r| r.n == 0).map(|r| r.mean);
    let mut out = format!(
        "{:>4}  {:>4}  {:>10}  {:>8}  {:>8}\n",
        "N", "runs", "mergelogs", "stderr", "vs N=0"
    );
    for r in rows {
        let rel = match base {
            Some(b) if b > 0.0 => format!("{:.1}%", 100.0 * r.mean / b),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:>4}  {:>4}  {:>10.2}  {:>8.2}  {:>8}",
            r.n, r.runs, r.mean, r.stderr, rel
        );
    }
    out
}

/// A `cascade-trace serve` child on an ephemeral port. Killed on drop.
pub struct ChildServer {
    child: Child,
    pub url: String,
}

impl ChildServer {
    pub fn spawn(exe: &std::path::Path, n_ancestors: usize) -> Result<Self, CliError> {
        let mut child = Command::new(exe)
            .args(["serve", "--listen", "127.0.0.1:0", "--n-ancestors"])
            .arg(n_ancestors.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| CliError::Transport(format!("cannot start trace server: {e}")))?;
        let mut line = String::new();
        let stdout = child.stdout.take().expect("piped stdout");
        let _ = BufReader::new(stdout).read_line(&mut line);
        match line.trim().strip_prefix(crate::LISTENING_PREFIX) {
            Some(url) => Ok(ChildServer {
                url: url.to_string(),
                child,
            }),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                Err(CliError::Transport(format!(
                    "trace server did not start: {:?}",
                    line.trim()
                )))
            }
        }
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }
}

impl Drop for ChildServer {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
