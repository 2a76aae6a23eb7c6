use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::{Command, Output};
use std::thread;
use std::time::{Duration, Instant};

use cascade_trace::{Cpid, Mergelog, Span, SpanId, TraceQuery};
use cascade_trace_cli::flame;
use cascade_trace_cli::sweep::ChildServer;
use cascade_trace_server::HttpTraceClient;
use chrono::{TimeDelta, TimeZone, Utc};

fn exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_cascade-trace"))
}

fn cli(args: &[&str]) -> Output {
    Command::new(exe()).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn server() -> ChildServer {
    ChildServer::spawn(&exe(), 5).unwrap()
}

fn c(n: u64) -> Cpid {
    format!("00000000-0000-4000-8000-{n:012x}").parse().unwrap()
}

fn s(n: u64) -> SpanId {
    format!("00000000-0000-4000-9000-{n:012x}").parse().unwrap()
}

fn span(id: u64, parent: Option<u64>, name: &str, start_us: i64, dur_us: i64) -> Span {
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    Span {
        cpid: c(1),
        span_id: s(id),
        parent_id: parent.map(s),
        service: "kubectl".into(),
        name: name.into(),
        start_time: t0 + TimeDelta::microseconds(start_us),
        end_time: t0 + TimeDelta::microseconds(start_us + dur_us),
    }
}

/// Runs a deterministic scenario and returns its JSON report.
fn run(url: &str, scenario: &str, extra: &[&str]) -> serde_json::Value {
    let mut args = vec![
        "run",
        "--server",
        url,
        "--scenario",
        scenario,
        "--deterministic",
        "--seed",
        "9",
        "--format",
        "json",
    ];
    args.extend_from_slice(extra);
    let out = cli(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn roots(report: &serde_json::Value) -> Vec<Cpid> {
    report["root_cpids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn folded_single_span() {
    assert_eq!(
        flame::folded(&[span(1, None, "apply", 0, 1000)]),
        "kubectl;apply 1000\n"
    );
}

#[test]
fn folded_nests_children_under_parents() {
    let spans = [
        span(3, None, "other", 5000, 10),
        span(2, Some(1), "create", 100, 500),
        span(1, None, "apply", 0, 2000),
    ];
    assert_eq!(
        flame::folded(&spans),
        "kubectl;apply 2000\nkubectl;apply;create 500\nkubectl;other 10\n"
    );
    let forest = flame::span_forest(&spans);
    assert_eq!(forest.len(), 2);
    assert_eq!(forest[0].children[0].span.name, "create");
}

#[test]
fn folded_orphans_become_roots() {
    let out = flame::folded(&[span(2, Some(99), "bind pod;x", 0, 7)]);
    assert_eq!(out, "kubectl;bind_pod_x 7\n");
}

#[test]
fn serve_answers_and_refuses_a_taken_port() {
    let srv = server();
    let graph = HttpTraceClient::new(&srv.url).graph().unwrap();
    assert!(graph.nodes.is_empty() && graph.edges.is_empty());

    let addr = srv.url.trim_start_matches("http://");
    let out = cli(&["serve", "--listen", addr]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("already in use"));
}

#[test]
fn serve_prunes_periodically() {
    let mut child = Command::new(exe())
        .args([
            "serve",
            "--listen",
            "127.0.0.1:0",
            "--max-graph-nodes",
            "2",
            "--prune-interval",
            "0.05",
        ])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    std::io::BufRead::read_line(
        &mut std::io::BufReader::new(child.stdout.take().unwrap()),
        &mut line,
    )
    .unwrap();
    let url = line
        .trim()
        .strip_prefix(cascade_trace_cli::LISTENING_PREFIX)
        .unwrap();
    let client = HttpTraceClient::new(url);
    let t0 = Utc::now();
    for i in 1..=6 {
        client
            .post_mergelog(&Mergelog::registration(
                c(i),
                t0 + TimeDelta::seconds(i as i64),
            ))
            .unwrap();
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    while client.graph().unwrap().nodes.len() > 2 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(20));
    }
    let kept: BTreeSet<Cpid> = client
        .graph()
        .unwrap()
        .nodes
        .into_iter()
        .map(|n| n.0)
        .collect();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(kept, BTreeSet::from([c(5), c(6)]));
}

#[test]
fn run_fig5_prints_two_roots() {
    let srv = server();
    let out = cli(&[
        "run",
        "--server",
        &srv.url,
        "--scenario",
        "fig5-service",
        "--deterministic",
        "--seed",
        "1",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("root CPIDs (2):"), "{text}");
    let json = &text[text.find("\n{").unwrap()..];
    let report: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(roots(&report).len(), 2);
    assert_eq!(report["mergelog_count"], 1);
}

#[test]
fn run_sweep_scenario_prints_every_root() {
    let srv = server();
    let report = run(&srv.url, "n-sweep-step", &[]);
    // One create and seven updates per Deployment.
    assert_eq!(roots(&report).len(), 5 * 8);
}

#[test]
fn run_errors() {
    let out = cli(&[
        "run",
        "--scenario",
        "no-such",
        "--server",
        "http://127.0.0.1:1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = cli(&[
        "run",
        "--scenario",
        "fig5-service",
        "--server",
        "http://127.0.0.1:1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(&["run", "--scenario", "fig5-service", "--deterministic"]);
    assert_eq!(out.status.code(), Some(1));
    let out = cli(&["run"]);
    assert_eq!(out.status.code(), Some(1));
    let out = cli(&["graph", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn investigate_fig5() {
    let srv = server();
    let dir = std::env::temp_dir().join(format!("cli-investigate-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let log = dir.join("run.jsonl");
    let report = run(
        &srv.url,
        "fig5-service",
        &["--log-file", log.to_str().unwrap()],
    );
    let alpha = roots(&report)[0];
    let client = HttpTraceClient::new(&srv.url);
    let gamma = client
        .mergelogs(None)
        .unwrap()
        .into_iter()
        .find(|l| !l.is_registration())
        .unwrap()
        .new_cpid;

    let out = cli(&[
        "investigate",
        &alpha.to_string(),
        "--server",
        &srv.url,
        "--log-file",
        log.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let related: Vec<Cpid> = serde_json::from_value(result["related"].clone()).unwrap();
    assert_eq!(related, client.related(&alpha).unwrap());
    assert!(related.contains(&gamma));
    assert!(result["spans_by_service"]["endpoints-controller"]
        .as_array()
        .is_some());
    let records = result["log_records"].as_array().unwrap();
    assert!(!records.is_empty());
    for r in records {
        let cpid: Cpid = r["cpid"].as_str().unwrap().parse().unwrap();
        assert!(related.contains(&cpid));
    }
    for spans in result["spans_by_service"].as_object().unwrap().values() {
        for s in spans.as_array().unwrap() {
            let cpid: Cpid = s["cpid"].as_str().unwrap().parse().unwrap();
            assert!(related.contains(&cpid));
        }
    }

    let out = cli(&["investigate", &gamma.to_string(), "--server", &srv.url]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("related CPIDs (1):"));
    assert!(!text.contains(&alpha.to_string()));

    let out = cli(&["investigate", &c(77).to_string(), "--server", &srv.url]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&c(77).to_string()));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn flame_of_a_scale_up_root() {
    let srv = server();
    let report = run(&srv.url, "scale-up", &[]);
    let alpha = roots(&report)[0];
    let out = cli(&["flame", &alpha.to_string(), "--server", &srv.url]);
    assert!(out.status.success());
    let folded = stdout(&out);
    let services: BTreeSet<&str> = folded
        .lines()
        .map(|l| l.split(';').next().unwrap())
        .collect();
    for want in [
        "kubectl",
        "deployment-controller",
        "replicaset-controller",
        "scheduler",
    ] {
        assert!(services.contains(want), "{want} missing");
    }
    // Durations match the spans exactly.
    let spans = HttpTraceClient::new(&srv.url).spans(Some(&alpha)).unwrap();
    let mut want: Vec<i64> = spans.iter().map(Span::duration_micros).collect();
    let mut got: Vec<i64> = folded
        .lines()
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    want.sort();
    got.sort();
    assert_eq!(got, want);

    let out = cli(&[
        "flame",
        &alpha.to_string(),
        "--server",
        &srv.url,
        "--format",
        "json",
    ]);
    let tree: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(tree
        .as_array()
        .unwrap()
        .iter()
        .any(|n| !n["children"].as_array().unwrap().is_empty()));

    let out = cli(&["flame", &c(5).to_string(), "--server", &srv.url]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn graph_dot_export() {
    let srv = server();
    let empty = stdout(&cli(&["graph", "--server", &srv.url]));
    assert_eq!(empty, "digraph merge_graph {\n}\n");

    let client = HttpTraceClient::new(&srv.url);
    let t0 = Utc::now();
    for (i, (new, sources)) in [
        (1, vec![]),
        (2, vec![]),
        (4, vec![]),
        (6, vec![]),
        (8, vec![]),
        (3, vec![1, 2]),
        (5, vec![3, 4]),
        (7, vec![2, 4, 6]),
    ]
    .into_iter()
    .enumerate()
    {
        let log = Mergelog::new(
            c(new),
            sources.into_iter().map(c).collect(),
            t0 + TimeDelta::seconds(i as i64),
        )
        .unwrap();
        client.post_mergelog(&log).unwrap();
    }
    let dot = stdout(&cli(&["graph", "--server", &srv.url]));
    let nodes = dot.lines().filter(|l| l.contains(" [shape=")).count();
    let edges = dot.lines().filter(|l| l.contains(" -> ")).count();
    assert_eq!((nodes, edges), (8, 7));
    assert_eq!(dot.lines().filter(|l| l.contains("shape=box")).count(), 3);

    assert_eq!(client.prune(7).unwrap(), vec![c(1)]);
    let path = std::env::temp_dir().join(format!("cli-graph-{}.dot", std::process::id()));
    let out = cli(&[
        "graph",
        "--server",
        &srv.url,
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let dot = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).unwrap();
    assert!(!dot.contains(&c(1).to_string()));
    assert_eq!(dot.lines().filter(|l| l.contains(" -> ")).count(), 6);
}

fn sweep_csv(args: &[&str]) -> Vec<(usize, usize, usize)> {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,run,mergelog_count"));
    lines
        .map(|l| {
            let f: Vec<usize> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[0], f[1], f[2])
        })
        .collect()
}

#[test]
fn sweep_trend_and_repeatability() {
    let args = [
        "sweep",
        "--n-values",
        "0,5,15,30",
        "--deterministic",
        "--seed",
        "3",
        "--format",
        "csv",
    ];
    let rows = sweep_csv(&args);
    let count = |n| rows.iter().find(|r| r.0 == n).unwrap().2;
    assert!(count(0) > count(5) && count(5) > count(15));
    assert_eq!(count(15), count(30));
    assert_eq!(sweep_csv(&args), rows);
}

#[test]
fn sweep_against_a_running_server() {
    let srv = server();
    let rows = sweep_csv(&[
        "sweep",
        "--n-values",
        "1",
        "--repeats",
        "2",
        "--deterministic",
        "--seed",
        "3",
        "--server",
        &srv.url,
        "--format",
        "csv",
    ]);
    // Runs share the server but are counted by their own roots.
    assert_eq!(rows, vec![(1, 0, 50), (1, 1, 50)]);
}

#[test]
fn sweep_table_and_usage_errors() {
    let out = cli(&[
        "sweep",
        "--n-values",
        "0,15",
        "--deterministic",
        "--seed",
        "3",
    ]);
    let text = stdout(&out);
    assert!(text.starts_with("n,run,mergelog_count\n"));
    assert!(text.contains("mergelogs"));
    assert_eq!(cli(&["sweep", "--n-values", ""]).status.code(), Some(1));
    assert_eq!(cli(&["sweep", "--n-values", "1,x"]).status.code(), Some(1));
    assert_eq!(cli(&["sweep", "--deterministic"]).status.code(), Some(1));
}
