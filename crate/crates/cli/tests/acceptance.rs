//! Acceptance gate.
//!
//! Runs every acceptance criterion, prints one PASS/FAIL line per criterion
//! and exits nonzero if any failed. Each check also enforces its runtime
//! budget.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cascade_trace::{
    build_cpid_graph, merge_contexts, Cpid, GraphSnapshot, IdGenerator, MergeGraph, Mergelog,
    TraceContext, TraceQuery, TraceStore,
};
use cascade_trace_cli::sweep::{self, ChildServer, ServerSource, SweepOptions};
use cascade_trace_server::{HttpSink, HttpTraceClient};
use cascade_trace_sim::controllers::{ENDPOINTS_CONTROLLER, KUBECTL};
use cascade_trace_sim::scenario::BUILTIN;
use cascade_trace_sim::{
    run_scenario, EventType, Kind, Phase, Scenario, ScenarioReport, SimConfig, SimObject,
    Simulation,
};
use chrono::{TimeDelta, TimeZone, Utc};
use petgraph::algo::{is_cyclic_directed, is_isomorphic_matching};
use petgraph::graph::DiGraph;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SWEEP_N: [usize; 9] = [0, 1, 2, 3, 5, 10, 15, 20, 30];
const SWEEP_SEED: u64 = 42;
const SWEEP_REPEATS: usize = 2;
const MAX_RATIO_N10_TO_N0: f64 = 0.5;
const PRUNE_DAGS: usize = 500;
const PRUNE_MAX_NODES: usize = 12;
const ORACLE_INPUTS: usize = 1000;
const ORACLE_MAX_CONTEXTS: usize = 6;
const MAX_OVERHEAD_RATIO: f64 = 3.0;
const MAX_SERVER_RSS_KIB: u64 = 128 * 1024;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn c(n: u64) -> Cpid {
    format!("00000000-0000-4000-8000-{n:012x}").parse().unwrap()
}

fn epoch() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

fn exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_cascade-trace"))
}

fn clean(report: &ScenarioReport) -> Result<(), String> {
    check(report.audit_violations.is_empty(), || {
        format!("audit violations: {:?}", report.audit_violations)
    })?;
    check(report.controller_errors.is_empty(), || {
        format!("controller errors: {:?}", report.controller_errors)
    })
}

fn in_process(
    config: &SimConfig,
    scenario: &str,
) -> Result<(ScenarioReport, Arc<TraceStore>), String> {
    let store = Arc::new(TraceStore::new());
    let scenario = Scenario::builtin(scenario).map_err(|e| e.to_string())?;
    let report = run_scenario(config, &scenario, store.clone(), store.as_ref())
        .map_err(|e| e.to_string())?;
    Ok((report, store))
}

// 1

fn related_table() -> Outcome {
    let mut g = MergeGraph::new();
    let logs = [
        Mergelog::registration(c(1), epoch()),
        Mergelog::registration(c(2), epoch()),
        Mergelog::registration(c(4), epoch()),
        Mergelog::registration(c(6), epoch()),
        Mergelog::registration(c(8), epoch()),
        Mergelog::new(c(3), vec![c(1), c(2)], epoch()).unwrap(),
        Mergelog::new(c(5), vec![c(3), c(4)], epoch()).unwrap(),
        Mergelog::new(c(7), vec![c(2), c(4), c(6)], epoch()).unwrap(),
    ];
    for l in &logs {
        g.apply_mergelog(l).map_err(|e| e.to_string())?;
    }
    let table: [(u64, &[u64]); 8] = [
        (1, &[1, 3, 5]),
        (2, &[2, 3, 5, 7]),
        (3, &[3, 5]),
        (4, &[4, 5, 7]),
        (5, &[5]),
        (6, &[6, 7]),
        (7, &[7]),
        (8, &[8]),
    ];
    for (input, want) in table {
        let got = g.related_cpids(&c(input)).map_err(|e| e.to_string())?;
        let want: Vec<Cpid> = want.iter().map(|n| c(*n)).collect();
        check(got == want, || {
            format!("related({input}) = {got:?}, want {want:?}")
        })?;
    }
    let snap = g.snapshot();
    check(snap.nodes.len() == 8 && snap.edges.len() == 7, || {
        format!("{} nodes, {} edges", snap.nodes.len(), snap.edges.len())
    })?;
    Ok("8/8 rows exact, 8 nodes, 7 edges".into())
}

// 2

fn fig5() -> Outcome {
    let mut details = Vec::new();
    for config in [SimConfig::deterministic(5, 7), SimConfig::realistic(5)] {
        let server = ChildServer::spawn(&exe(), 5).map_err(|e| e.to_string())?;
        let client = HttpTraceClient::new(&server.url);
        let sink = Arc::new(HttpSink::new(&server.url));
        let scenario = Scenario::builtin("fig5-service").unwrap();
        let report = run_scenario(&config, &scenario, sink, &client).map_err(|e| e.to_string())?;
        clean(&report)?;

        let logs = client.mergelogs(None).map_err(|e| e.to_string())?;
        let registrations: Vec<&Mergelog> = logs.iter().filter(|l| l.is_registration()).collect();
        let merges: Vec<&Mergelog> = logs.iter().filter(|l| !l.is_registration()).collect();
        check(registrations.len() == 2, || {
            format!("{} registrations", registrations.len())
        })?;
        check(merges.len() == 1, || {
            format!("{} merge mergelogs", merges.len())
        })?;
        let merge = merges[0];
        check(merge.source_cpids.len() == 2, || {
            format!("merge has {} sources", merge.source_cpids.len())
        })?;
        check(report.root_cpids.len() == 2, || {
            format!("{} roots", report.root_cpids.len())
        })?;
        for root in &report.root_cpids {
            let related = client.related(root).map_err(|e| e.to_string())?;
            check(related.contains(&merge.new_cpid), || {
                format!("related({root}) lacks the merged CPID")
            })?;
            let spans = client.spans(Some(root)).map_err(|e| e.to_string())?;
            check(
                spans.iter().any(|s| s.service == ENDPOINTS_CONTROLLER),
                || format!("no endpoints-controller spans under {root}"),
            )?;
        }
        details.push(format!("{:?}", config.mode).to_lowercase());
    }
    Ok(format!(
        "2 registrations, 1 merge of 2 sources, over HTTP ({})",
        details.join(" + ")
    ))
}

// 3

fn replacement() -> Outcome {
    let downstream = |r: &ScenarioReport| {
        r.mergelog_count - r.mergelogs_by_controller.get(KUBECTL).copied().unwrap_or(0)
    };
    let mut seen = Vec::new();
    for n in [1, 2, 3, 5, 10] {
        for seed in [1, 2, 3] {
            let (r, _) = in_process(&SimConfig::deterministic(n, seed), "repeated-update")?;
            clean(&r)?;
            check(downstream(&r) == 0, || {
                format!(
                    "N={n} seed={seed}: {} downstream mergelogs {:?}",
                    downstream(&r),
                    r.mergelogs_by_controller
                )
            })?;
        }
        seen.push(format!("N={n}:0"));
    }
    let (r, _) = in_process(&SimConfig::realistic(5), "repeated-update")?;
    clean(&r)?;
    check(downstream(&r) == 0, || {
        format!("realistic N=5: {:?}", r.mergelogs_by_controller)
    })?;
    let (r, _) = in_process(&SimConfig::deterministic(0, 1), "repeated-update")?;
    clean(&r)?;
    check(downstream(&r) >= 1, || {
        "N=0 produced no downstream mergelog".into()
    })?;
    seen.push(format!("N=0:{}", downstream(&r)));
    Ok(format!("downstream mergelogs {}", seen.join(" ")))
}

// 4

fn n_sweep() -> Outcome {
    let opts = SweepOptions {
        n_values: SWEEP_N.to_vec(),
        repeats: SWEEP_REPEATS,
        seed: Some(SWEEP_SEED),
        scenario: Scenario::builtin("n-sweep-step").unwrap(),
        server: ServerSource::Spawn(exe()),
    };
    let points = sweep::sweep(&opts).map_err(|e| e.to_string())?;
    let rows = sweep::summarize(&points);
    let mean: BTreeMap<usize, f64> = rows.iter().map(|r| (r.n, r.mean)).collect();
    let listing = rows
        .iter()
        .map(|r| format!("{}:{}", r.n, r.mean))
        .collect::<Vec<_>>()
        .join(" ");
    for w in rows.windows(2) {
        check(w[1].mean <= w[0].mean, || {
            format!("not non-increasing: {listing}")
        })?;
    }
    check(mean[&15] == mean[&20] && mean[&20] == mean[&30], || {
        format!("no plateau from N=15: {listing}")
    })?;
    let ratio = mean[&10] / mean[&0];
    check(ratio < MAX_RATIO_N10_TO_N0, || {
        format!("count(10)/count(0) = {ratio:.3}")
    })?;

    // Fixed seed reruns give identical counts.
    let again = sweep::sweep(&SweepOptions {
        n_values: vec![0, 5, 15],
        repeats: 1,
        ..opts
    })
    .map_err(|e| e.to_string())?;
    for p in &again {
        let first = points.iter().find(|q| q.n == p.n && q.run == 0).unwrap();
        check(first.mergelog_count == p.mergelog_count, || {
            format!(
                "rerun of N={} gave {} then {}",
                p.n, first.mergelog_count, p.mergelog_count
            )
        })?;
    }
    Ok(format!("means {listing}; count(10)/count(0) = {ratio:.2}"))
}

// 5

/// Random mergelog sequence over ids 1..=n. Sources come from lower ids, so
/// the graph is a DAG.
fn random_dag(rng: &mut ChaCha8Rng) -> Vec<Mergelog> {
    let n = rng.random_range(1..=PRUNE_MAX_NODES);
    (1..=n as u64)
        .map(|i| {
            let ts = epoch() + TimeDelta::seconds(rng.random_range(0..20));
            if i == 1 || rng.random_bool(0.35) {
                return Mergelog::registration(c(i), ts);
            }
            let earlier: Vec<u64> = (1..i).collect();
            let k = rng.random_range(1..=earlier.len().min(3));
            let sources = earlier.choose_multiple(rng, k).map(|j| c(*j)).collect();
            Mergelog::new(c(i), sources, ts).unwrap()
        })
        .collect()
}

fn reach(adj: &HashMap<Cpid, Vec<Cpid>>, from: Cpid) -> BTreeSet<Cpid> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![from];
    while let Some(x) = stack.pop() {
        if seen.insert(x) {
            stack.extend(adj.get(&x).into_iter().flatten().copied());
        }
    }
    seen
}

fn petgraph_of(snap: &GraphSnapshot) -> DiGraph<bool, ()> {
    let mut g = DiGraph::new();
    let mut index = HashMap::new();
    for (cpid, info) in &snap.nodes {
        index.insert(*cpid, g.add_node(info.merge_created));
    }
    for (from, to) in &snap.edges {
        g.add_edge(index[from], index[to], ());
    }
    g
}

fn prune_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut prunes = 0;
    for dag in 0..PRUNE_DAGS {
        let logs = random_dag(&mut rng);
        let mut adj: HashMap<Cpid, Vec<Cpid>> = HashMap::new();
        let mut preds: HashMap<Cpid, Vec<Cpid>> = HashMap::new();
        for l in &logs {
            for s in &l.source_cpids {
                adj.entry(*s).or_default().push(l.new_cpid);
                preds.entry(l.new_cpid).or_default().push(*s);
            }
        }
        let mut base = MergeGraph::new();
        for l in &logs {
            base.apply_mergelog(l).map_err(|e| e.to_string())?;
        }
        let roots: Vec<Cpid> = logs
            .iter()
            .map(|l| l.new_cpid)
            .filter(|x| !preds.contains_key(x))
            .collect();
        let oracle: HashMap<Cpid, BTreeSet<Cpid>> =
            roots.iter().map(|r| (*r, reach(&adj, *r))).collect();

        for max in 0..=logs.len() {
            prunes += 1;
            let mut g = base.clone();
            let removed = g.prune(max);
            let ctx = || format!("dag {dag}, max_nodes {max}");
            check(g.len() <= max, || {
                format!("{}: {} nodes left", ctx(), g.len())
            })?;
            // A removed node had in-degree 0 when removed: each of its
            // predecessors went before it.
            let mut gone = HashSet::new();
            for r in &removed {
                let blocked = preds
                    .get(r)
                    .into_iter()
                    .flatten()
                    .find(|p| !gone.contains(*p));
                check(blocked.is_none(), || {
                    format!(
                        "{}: removed {r} while {} still pointed at it",
                        ctx(),
                        blocked.unwrap()
                    )
                })?;
                gone.insert(*r);
            }
            let snap = g.snapshot();
            check(!is_cyclic_directed(&petgraph_of(&snap)), || {
                format!("{}: cycle", ctx())
            })?;
            for r in roots.iter().filter(|r| !gone.contains(*r)) {
                let got: BTreeSet<Cpid> = g
                    .related_cpids(r)
                    .map_err(|e| format!("{}: {e}", ctx()))?
                    .into_iter()
                    .collect();
                check(got == oracle[r], || {
                    format!("{}: related({r}) changed", ctx())
                })?;
            }
        }
    }
    Ok(format!("{PRUNE_DAGS} DAGs, {prunes} prunes, 0 violations"))
}

// 6

/// Up to six contexts over ids 1..=8, ancestors drawn from lower ids.
fn random_contexts(rng: &mut ChaCha8Rng) -> Vec<TraceContext> {
    let mut lists: HashMap<u64, Vec<u64>> = HashMap::new();
    let k = rng.random_range(1..=ORACLE_MAX_CONTEXTS);
    (0..k)
        .map(|_| {
            let id = rng.random_range(1..=8u64);
            let anc = lists
                .entry(id)
                .or_insert_with(|| {
                    let mut a: Vec<u64> = (1..id).rev().filter(|_| rng.random_bool(0.5)).collect();
                    if a.len() > 1 && rng.random_bool(0.3) {
                        let r = rng.random_range(0..a.len());
                        a.rotate_left(r);
                    }
                    a
                })
                .clone();
            TraceContext::new(c(id), anc.into_iter().map(c).collect()).unwrap()
        })
        .collect()
}

/// Inputs that no other input lists as a transitive literal ancestor.
fn brute_force_sources(tctxs: &[TraceContext]) -> BTreeSet<Cpid> {
    let mut adj: HashMap<Cpid, Vec<Cpid>> = HashMap::new();
    for t in tctxs {
        adj.entry(t.cpid()).or_default().extend(t.ancestors());
    }
    let inputs: BTreeSet<Cpid> = tctxs.iter().map(TraceContext::cpid).collect();
    inputs
        .iter()
        .filter(|x| {
            !inputs.iter().any(|d| {
                let mut r = reach(&adj, *d);
                r.remove(d);
                d != *x && r.contains(*x)
            })
        })
        .copied()
        .collect()
}

fn merge_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ids = IdGenerator::seeded(6);
    let mut merged = 0;
    for i in 0..ORACLE_INPUTS {
        let tctxs = random_contexts(&mut rng);
        let roots: BTreeSet<Cpid> = build_cpid_graph(&tctxs).roots().collect();
        let oracle = brute_force_sources(&tctxs);
        check(roots.len() == oracle.len() && roots == oracle, || {
            format!(
                "input {i}: {} roots vs {} oracle sources",
                roots.len(),
                oracle.len()
            )
        })?;
        let n = rng.random_range(0..8);
        let (_, log) =
            merge_contexts(&tctxs, n, epoch(), || ids.cpid()).map_err(|e| e.to_string())?;
        check(log.is_some() == (roots.len() >= 2), || {
            format!(
                "input {i}: mergelog {} with {} roots",
                log.is_some(),
                roots.len()
            )
        })?;
        merged += usize::from(log.is_some());
    }
    Ok(format!(
        "{ORACLE_INPUTS} inputs, 0 mismatches ({merged} merged)"
    ))
}

// 7

fn without_kubelet() -> Outcome {
    let run = |kubelet: bool| -> Result<(GraphSnapshot, Vec<SimObject>, usize), String> {
        let config = SimConfig {
            kubelet,
            ..SimConfig::deterministic(5, 21)
        };
        let store = Arc::new(TraceStore::new());
        let sim = Simulation::new(config, store.clone()).map_err(|e| e.to_string())?;
        let pods = sim.store().watch(&[Kind::Pod]);
        let outcome = sim
            .run(&Scenario::builtin("scale-up").unwrap())
            .map_err(|e| e.to_string())?;
        check(
            outcome.audit_violations.is_empty() && outcome.controller_errors.is_empty(),
            || "audit or controller errors".into(),
        )?;
        let events: Vec<_> = pods.try_iter().collect();
        // Byte-for-byte pass-through across every Scheduled -> Ready write.
        let mut last: HashMap<String, SimObject> = HashMap::new();
        let mut readied = 0;
        for ev in events {
            if ev.event_type == EventType::Modified && ev.object.pod_phase() == Some(Phase::Ready) {
                let before = &last[&ev.object.name];
                check(before.annotations == ev.object.annotations, || {
                    format!("kubelet changed annotations of {}", ev.object.name)
                })?;
                readied += 1;
            }
            last.insert(ev.object.name.clone(), ev.object);
        }
        let finals = last.into_values().collect();
        Ok((store.snapshot(), finals, readied))
    };
    let (with, pods, readied) = run(true)?;
    let (without, _, _) = run(false)?;
    check(readied == 50, || format!("{readied} pods readied"))?;
    check(
        pods.iter().all(|p| p.pod_phase() == Some(Phase::Ready)),
        || "not every pod is Ready".into(),
    )?;
    let (a, b) = (petgraph_of(&with), petgraph_of(&without));
    let iso = is_isomorphic_matching(&a, &b, |x, y| x == y, |_, _| true);
    check(iso, || {
        format!(
            "graphs differ: {}/{} vs {}/{} nodes/edges",
            a.node_count(),
            a.edge_count(),
            b.node_count(),
            b.edge_count()
        )
    })?;
    Ok(format!(
        "isomorphic ({} nodes, {} edges), {readied} Ready writes preserved annotations",
        a.node_count(),
        a.edge_count()
    ))
}

// 8

fn one_cpid() -> Outcome {
    let mut runs = 0;
    let mut writes = 0;
    for name in BUILTIN {
        for n in [0, 1, 5, 15] {
            let (r, _) = in_process(&SimConfig::deterministic(n, 8), name)?;
            clean(&r).map_err(|e| format!("{name} N={n}: {e}"))?;
            runs += 1;
            writes += r.audited_writes;
        }
        let (r, _) = in_process(&SimConfig::realistic(5), name)?;
        clean(&r).map_err(|e| format!("{name} realistic: {e}"))?;
        runs += 1;
        writes += r.audited_writes;
    }
    check(writes > 0, || "nothing audited".into())?;
    Ok(format!(
        "{runs} runs, {writes} audited writes, 0 violations"
    ))
}

// 9

fn overhead() -> Outcome {
    let server = ChildServer::spawn(&exe(), 5).map_err(|e| e.to_string())?;
    let client = HttpTraceClient::new(&server.url);
    let scenario = Scenario::builtin("scale-up").unwrap();
    let time = |traced: bool| -> Result<f64, String> {
        let config = SimConfig {
            traced,
            ..SimConfig::realistic(5)
        };
        let sink = Arc::new(HttpSink::new(&server.url));
        let r = run_scenario(&config, &scenario, sink, &client).map_err(|e| e.to_string())?;
        clean(&r)?;
        Ok(r.wall_time_ms)
    };
    let untraced = time(false)?;
    let traced = time(true)?;
    let ratio = traced / untraced;
    let status = std::fs::read_to_string(format!("/proc/{}/status", server.pid()))
        .map_err(|e| format!("cannot read server status: {e}"))?;
    let rss_kib: u64 = status
        .lines()
        .find_map(|l| l.strip_prefix("VmRSS:"))
        .and_then(|v| v.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .ok_or("no VmRSS line")?;
    check(ratio <= MAX_OVERHEAD_RATIO, || {
        format!("traced {traced:.0} ms vs untraced {untraced:.0} ms")
    })?;
    check(rss_kib < MAX_SERVER_RSS_KIB, || {
        format!("server RSS {rss_kib} KiB")
    })?;
    Ok(format!(
        "traced {traced:.0} ms / untraced {untraced:.0} ms = {ratio:.2}x, server RSS {:.1} MiB",
        rss_kib as f64 / 1024.0
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            1,
            "related-CPID table",
            Duration::from_secs(1),
            related_table,
        ),
        (2, "service merge end-to-end", Duration::from_secs(10), fig5),
        (
            3,
            "ancestor-CPID replacement",
            Duration::from_secs(10),
            replacement,
        ),
        (4, "N-sweep trend", Duration::from_secs(300), n_sweep),
        (5, "prune safety", Duration::from_secs(30), prune_safety),
        (
            6,
            "merge-or-replace oracle",
            Duration::from_secs(10),
            merge_oracle,
        ),
        (
            7,
            "non-instrumented tolerance",
            Duration::from_secs(30),
            without_kubelet,
        ),
        (8, "one-CPID invariant", Duration::from_secs(120), one_cpid),
        (9, "overhead sanity", Duration::from_secs(120), overhead),
    ];
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        let started = Instant::now();
        let result = f().and_then(|detail| {
            let took = started.elapsed();
            if took > budget {
                Err(format!("took {took:.2?}, budget {budget:?}"))
            } else {
                Ok(detail)
            }
        });
        let took = started.elapsed();
        match result {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail} [{took:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {why} [{took:.2?}]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
