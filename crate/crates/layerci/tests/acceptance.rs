// SPDX-License-Identifier: Apache-2.0

//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every line is printed; the process
//! exits non-zero if any criterion fails. Each criterion carries a pinned
//! wall-clock budget, and exceeding it is a failure too.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use layerci::pipeline::{scenario_suite, ChangeEvent, Edit};
use layerci_core::boot::{compose_boot, run_boot_test, BootTestSpec, LOGIN_PROMPT, MISSING_LIBRARY};
use layerci_core::equivalence::EquivalenceStore;
use layerci_core::pipeline::{plan_propagation, RepoGraph};
use layerci_core::report::{summarize, BuildReport, Disposition};
use layerci_core::taskgraph::IMAGE_COMPLETE_COST;
use layerci_core::Digest;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Verdict = Result<String, String>;

/// `(id, name, wall-clock budget in seconds, check)`
type Criterion = (&'static str, &'static str, u64, fn() -> Verdict);

/// Warm builds must execute strictly less than this share of a cold build.
const MAX_WARM_PERCENT_OF_COLD: u64 = 10;
const RANDOM_TRIGGER_GRAPHS: u32 = 100;
const EQUIVALENCE_CASES: u32 = 1000;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

fn summary_format() -> Verdict {
    let r = BuildReport {
        wanted: 220,
        found: 220,
        missed: 0,
        current: 932,
        attempted: 3614,
        not_rerun: 3356,
        ..BuildReport::default()
    };
    let want = "Sstate summary: Wanted 220 Found 220 Missed 0 Current 932 (100% match, 100% complete)\n\
                Tasks Summary: Attempted 3614 tasks of which 3356 didn't need to be rerun and all succeeded.\n";
    let got = summarize(&r);
    ensure(got == want, format!("got {got:?}"))?;
    Ok("both lines byte-exact".into())
}

fn cold_and_warm(dir: &Path) -> Result<(BuildReport, BuildReport), String> {
    let ws = common::sync_fixture(&dir.join("ws"));
    let svc = common::start_cache(&dir.join("cache"));
    let cache = svc.endpoints().clone();
    let cold = common::build(&ws, &dir.join("local-cold"), Some(&cache), 4).map_err(|e| e.to_string())?;
    let warm = common::build(&ws, &dir.join("local-warm"), Some(&cache), 4).map_err(|e| e.to_string())?;
    Ok((cold.report, warm.report))
}

fn full_match_replay() -> Verdict {
    let dir = tmp();
    let (cold, warm) = cold_and_warm(dir.path())?;
    ensure(cold.found == 0 && cold.missed == cold.wanted, format!("cold build was not cold: {cold:?}"))?;
    ensure(warm.found == warm.wanted && warm.wanted > 0, format!("found {} of {}", warm.found, warm.wanted))?;
    ensure(warm.missed == 0, format!("missed {}", warm.missed))?;
    let executed: Vec<&str> = warm
        .per_task
        .iter()
        .filter(|t| t.disposition == Disposition::Executed)
        .map(|t| t.task.as_str())
        .collect();
    ensure(executed == ["core-image-minimal:image_complete"], format!("executed {executed:?}"))?;
    ensure(warm.executed_cost == IMAGE_COMPLETE_COST, format!("executed_cost {}", warm.executed_cost))?;
    Ok(format!("Wanted {} Found {} Missed 0, executed_cost {}", warm.wanted, warm.found, warm.executed_cost))
}

fn cache_speedup() -> Verdict {
    let dir = tmp();
    let (cold, warm) = cold_and_warm(dir.path())?;
    ensure(
        warm.executed_cost * 100 < cold.executed_cost * MAX_WARM_PERCENT_OF_COLD,
        format!("warm {} vs cold {}", warm.executed_cost, cold.executed_cost),
    )?;
    Ok(format!(
        "warm executed_cost {} < {}% of cold {}",
        warm.executed_cost, MAX_WARM_PERCENT_OF_COLD, cold.executed_cost
    ))
}

fn six_scenarios() -> Verdict {
    let dir = tmp();
    let mut ctx = common::ci_context(dir.path(), None);
    let suite = scenario_suite(&mut ctx).map_err(|e| e.to_string())?;
    for v in &suite.scenarios {
        ensure(v.passed, format!("{}: {:?}", v.name, v.mismatches))?;
        let boot_ok = if v.compile_fail { v.boot_passed.is_none() } else { v.boot_passed == Some(true) };
        ensure(boot_ok, format!("{}: boot {:?}", v.name, v.boot_passed))?;
    }
    ensure(suite.total == 6 && suite.passed == 6, format!("{}/{}", suite.passed, suite.total))?;
    Ok("6/6 verdicts".into())
}

fn random_dag() -> impl Strategy<Value = Vec<(String, Vec<String>)>> {
    (2usize..10).prop_flat_map(|n| {
        let pairs = n * (n - 1) / 2;
        (prop::collection::vec(prop::bool::weighted(0.3), pairs), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
            .prop_map(move |(keep, perm)| {
                let name = |i: usize| format!("r{:02}", perm[i]);
                let mut k = keep.into_iter();
                (0..n)
                    .map(|i| {
                        let ts = (i + 1..n).filter(|_| k.next().unwrap_or(false)).map(name).collect();
                        (name(i), ts)
                    })
                    .collect()
            })
    })
}

/// Plan equals the closure of `edges` from `source` and respects every edge.
fn check_plan(edges: &[(String, Vec<String>)], graph: &RepoGraph, source: &str, plan: &[String]) -> Result<(), String> {
    let mut reach = BTreeSet::from([source.to_owned()]);
    loop {
        let before = reach.len();
        for (from, ts) in edges {
            if reach.contains(from) {
                reach.extend(ts.iter().cloned());
            }
        }
        if reach.len() == before {
            break;
        }
    }
    let got: BTreeSet<String> = plan.iter().cloned().collect();
    ensure(got == reach && got.len() == plan.len(), format!("{source}: plan {plan:?} vs reachable {reach:?}"))?;
    let pos: BTreeMap<&str, usize> = plan.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    for p in plan {
        for t in graph.triggers(p) {
            ensure(pos[p.as_str()] < pos[t], format!("{p} ran after {t}"))?;
        }
    }
    Ok(())
}

fn propagation_is_reachability() -> Verdict {
    let dir = tmp();
    let mut ctx = common::ci_context(dir.path(), None);
    let (graph, configs) = ctx.repo_graph().map_err(|e| e.to_string())?;
    let edges: Vec<(String, Vec<String>)> = configs.values().map(|c| (c.project.clone(), c.triggers.clone())).collect();
    let projects: Vec<String> = graph.projects().map(str::to_owned).collect();
    ensure(projects.len() == 5, format!("{} projects", projects.len()))?;
    for (i, project) in projects.iter().enumerate() {
        ctx.reset();
        let ev = ChangeEvent { project: project.clone(), edit: Edit::Touch, event_id: format!("reach-{i}") };
        let result = ctx.run_event(&ev).map_err(|e| e.to_string())?;
        let ran: Vec<String> = result.runs.iter().map(|r| r.project.clone()).collect();
        check_plan(&edges, &graph, project, &ran)?;
    }

    let mut runner = TestRunner::new(Config { cases: RANDOM_TRIGGER_GRAPHS, failure_persistence: None, ..Config::default() });
    runner
        .run(&random_dag(), |edges| {
            let graph = RepoGraph::new(edges.clone()).unwrap();
            for (source, _) in &edges {
                let plan = plan_propagation(&graph, source).unwrap();
                check_plan(&edges, &graph, source, &plan).map_err(TestCaseError::fail)?;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("5 fixture projects, {RANDOM_TRIGGER_GRAPHS} random trigger graphs"))
}

fn boot_verification() -> Verdict {
    let dir = tmp();
    let ws = common::sync_fixture(&dir.path().join("ws"));
    let image = common::build(&ws, &dir.path().join("local"), None, 4)
        .map_err(|e| e.to_string())?
        .image
        .ok_or("no image")?;
    let t = compose_boot(&image);
    let login = t.login_index().ok_or("no login prompt")?;
    let module = t.module_line("hello-mod").ok_or("no hello-mod line")?;
    ensure(module < login, format!("hello-mod line {module} after login {login}"))?;
    ensure(t.lines[login] == LOGIN_PROMPT, "prompt line differs")?;
    let after = &t.lines[login + 1..];
    ensure(
        after.iter().any(|l| l == "helloworld: Hello World from libhelloworld"),
        format!("no helloworld output after login: {after:?}"),
    )?;
    let spec = BootTestSpec::default();
    ensure(run_boot_test(&image, &spec).passed, "full image failed its boot test")?;

    let stripped = run_boot_test(&image.without_package("libhelloworld"), &spec);
    let cmd = stripped.assertions.iter().find(|a| a.name == "command helloworld").ok_or("no helloworld assertion")?;
    ensure(!cmd.passed, "helloworld still passes without its library")?;
    ensure(
        cmd.detail.contains(&format!("{MISSING_LIBRARY}libhelloworld")),
        format!("unexpected detail {:?}", cmd.detail),
    )?;
    let others_pass = stripped.assertions.iter().filter(|a| a.name != "command helloworld").all(|a| a.passed);
    ensure(others_pass, "removing the library broke other assertions")?;
    Ok("module line before prompt, command after; missing library detected".into())
}

#[derive(Debug, Clone)]
enum HashOp {
    Report(u8, u8),
    Query(u8),
}

/// Brute-force unihash: from the full history, by the rule "a taskhash is
/// named by the first report of its first outhash".
fn model(history: &[(u8, u8)], t: u8) -> Option<u8> {
    let first = history.iter().position(|&(x, _)| x == t)?;
    let out = history[first].1;
    let intro = history.iter().position(|&(_, o)| o == out).unwrap();
    let who = history[intro].0;
    if who == t {
        Some(t)
    } else {
        model(&history[..=intro], who)
    }
}

fn equivalence_soundness() -> Verdict {
    let th = |i: u8| Digest::of(&[b't', i]);
    let oh = |i: u8| Digest::of(&[b'o', i]);
    let ops = prop::collection::vec(
        prop_oneof![(0..6u8, 0..3u8).prop_map(|(t, o)| HashOp::Report(t, o)), (0..6u8).prop_map(HashOp::Query)],
        0..40,
    );
    let mut runner = TestRunner::new(Config { cases: EQUIVALENCE_CASES, failure_persistence: None, ..Config::default() });
    runner
        .run(&ops, |ops| {
            let mut store = EquivalenceStore::new();
            let mut history = Vec::new();
            let mut assigned: BTreeMap<u8, Digest> = BTreeMap::new();
            for op in ops {
                match op {
                    HashOp::Report(t, o) => {
                        history.push((t, o));
                        let u = store.report("m", th(t), oh(o)).unihash;
                        prop_assert_eq!(Some(u), model(&history, t).map(th));
                    }
                    HashOp::Query(t) => prop_assert_eq!(store.query("m", &th(t)), model(&history, t).map(th)),
                }
                let mut by_first_outhash: BTreeMap<u8, Digest> = BTreeMap::new();
                for t in 0..6u8 {
                    let got = store.query("m", &th(t));
                    prop_assert_eq!(got, model(&history, t).map(th));
                    if let Some(u) = got {
                        prop_assert_eq!(*assigned.entry(t).or_insert(u), u, "unihash of {} changed", t);
                        let first = history.iter().find(|(x, _)| *x == t).unwrap().1;
                        prop_assert_eq!(*by_first_outhash.entry(first).or_insert(u), u, "outhash {} split", first);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{EQUIVALENCE_CASES} interleavings agree with the model"))
}

fn schedule_independence() -> Verdict {
    let dir = tmp();
    let ws = common::sync_fixture(&dir.path().join("ws"));
    let one = common::build(&ws, &dir.path().join("j1"), None, 1).map_err(|e| e.to_string())?;
    let four = common::build(&ws, &dir.path().join("j4"), None, 4).map_err(|e| e.to_string())?;
    let outs = |r: &BuildReport| -> Vec<(String, Digest)> {
        r.per_task.iter().map(|t| (t.task.as_str().to_owned(), t.outhash)).collect()
    };
    ensure(outs(&one.report) == outs(&four.report), "per-task outhashes differ")?;
    let (a, b) = (one.image.ok_or("no image")?, four.image.ok_or("no image")?);
    ensure(a.image_digest == b.image_digest, format!("{} vs {}", a.image_digest, b.image_digest))?;
    Ok(format!("{} tasks, image {}", one.report.attempted, a.image_digest.short(12)))
}

fn reproducibility() -> Verdict {
    let dir = tmp();
    let a = common::sync_fixture(&dir.path().join("first/root"));
    let b = common::sync_fixture(&dir.path().join("second"));
    ensure(a.fingerprint() == b.fingerprint(), "workspace fingerprints differ")?;
    let ia = common::build(&a, &dir.path().join("la"), None, 4).map_err(|e| e.to_string())?.image.ok_or("no image")?;
    let ib = common::build(&b, &dir.path().join("lb"), None, 4).map_err(|e| e.to_string())?.image.ok_or("no image")?;
    ensure(ia.image_digest == ib.image_digest, format!("{} vs {}", ia.image_digest, ib.image_digest))?;
    Ok(format!("fingerprint {}, image {}", a.fingerprint().short(12), ia.image_digest.short(12)))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1", "summary format fidelity", 1, summary_format),
        ("2", "100% match replay", 10, full_match_replay),
        ("3", "cache speedup", 10, cache_speedup),
        ("4", "six-scenario suite", 60, six_scenarios),
        ("5", "propagation equals reachability", 30, propagation_is_reachability),
        ("6", "boot verification", 1, boot_verification),
        ("7", "hash-equivalence soundness", 30, equivalence_soundness),
        ("8", "schedule independence", 20, schedule_independence),
        ("9", "reproducibility", 20, reproducibility),
    ];
    let mut failed = 0;
    for (id, name, budget_s, check) in criteria {
        let start = Instant::now();
        let verdict = check();
        let elapsed = start.elapsed();
        let verdict = match verdict {
            Ok(detail) if elapsed > Duration::from_secs(budget_s) => {
                Err(format!("{detail}; took {:.2}s over the {budget_s}s budget", elapsed.as_secs_f64()))
            }
            other => other,
        };
        match verdict {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail} [{:.2}s]", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {why} [{:.2}s]", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {}/9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
