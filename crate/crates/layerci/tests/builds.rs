// SPDX-License-Identifier: Apache-2.0

//! Task graph shape, sstate accounting across cold, rebuild and warm builds,
//! signature sensitivity, and build determinism on the fixture workspace.

mod common;

use std::collections::BTreeMap;
use std::fs;

use layerci::cache::CacheEndpoints;
use layerci::executor::BuildError;
use layerci::sync::scan_sources;
use layerci_core::report::{BuildReport, Disposition};
use layerci_core::task::{TaskId, TaskKind};
use layerci_core::taskgraph::{topological_schedule, IMAGE_COMPLETE_COST};
use layerci_core::Digest;

fn id(s: &str) -> TaskId {
    let (recipe, kind) = s.split_once(':').unwrap();
    let kind = TaskKind::COMPONENT_CHAIN
        .into_iter()
        .chain([TaskKind::Rootfs, TaskKind::ImageComplete])
        .find(|k| k.as_str() == kind)
        .unwrap();
    TaskId::new(recipe, kind)
}

fn outhashes(r: &BuildReport) -> BTreeMap<String, Digest> {
    r.per_task.iter().map(|t| (t.task.as_str().to_owned(), t.outhash)).collect()
}

fn executed(r: &BuildReport) -> Vec<String> {
    r.per_task
        .iter()
        .filter(|t| t.disposition == Disposition::Executed)
        .map(|t| t.task.as_str().to_owned())
        .collect()
}

#[test]
fn fixture_graph_has_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let ws = common::sync_fixture(dir.path());
    let g = common::fixture_graph(&ws);
    assert_eq!(g.len(), 17);
    assert_eq!(g.tasks().filter(|t| t.cacheable).count(), 16);
    assert_eq!(g.tasks().map(|t| t.cost).sum::<u64>(), 99);

    let levels = topological_schedule(&g).unwrap();
    assert_eq!(levels.len(), 11);
    let level_of = |s: &str| levels.iter().position(|l| l.contains(&id(s))).unwrap();
    assert_eq!(levels[0].len(), 3);
    assert!(levels[0].iter().all(|t| t.kind() == TaskKind::Fetch));
    assert_eq!(level_of("helloworld:configure"), 5);
    assert_eq!(level_of("core-image-minimal:rootfs"), 9);
    assert_eq!(level_of("core-image-minimal:image_complete"), 10);
    assert!(g.has_edge(&id("helloworld:configure"), &id("libhelloworld:package")));
}

#[test]
fn cold_rebuild_and_warm_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let ws = common::sync_fixture(&dir.path().join("ws"));
    let svc = common::start_cache(&dir.path().join("cache"));
    let cache = svc.endpoints().clone();

    let cold = common::build(&ws, &dir.path().join("local-a"), Some(&cache), 4).unwrap().report;
    assert_eq!((cold.wanted, cold.found, cold.missed, cold.current), (16, 0, 16, 0));
    assert_eq!((cold.attempted, cold.not_rerun, cold.failed), (17, 0, 0));
    assert_eq!(cold.executed_cost, 99);
    assert!(cold.warnings.is_empty(), "{:?}", cold.warnings);

    // Same local state: everything cacheable is already current.
    let rebuild = common::build(&ws, &dir.path().join("local-a"), Some(&cache), 4).unwrap().report;
    assert_eq!((rebuild.wanted, rebuild.found, rebuild.missed, rebuild.current), (0, 0, 0, 16));
    assert_eq!(executed(&rebuild), ["core-image-minimal:image_complete"]);

    // Fresh local state against the warm server: everything restores.
    let warm = common::build(&ws, &dir.path().join("local-b"), Some(&cache), 4).unwrap().report;
    assert_eq!((warm.wanted, warm.found, warm.missed, warm.current), (16, 16, 0, 0));
    assert_eq!(warm.executed_cost, IMAGE_COMPLETE_COST);
    assert_eq!(outhashes(&warm), outhashes(&cold));
    for r in [&cold, &rebuild, &warm] {
        r.check_identities().unwrap();
    }

    let dump = svc.dump().unwrap();
    assert_eq!(dump.sstate.len(), 16);
    assert_eq!(dump.downloads.len(), 3);
    assert_eq!(dump.by_taskhash.len(), 16);
}

#[test]
fn build_without_cache_uses_taskhash_as_unihash() {
    let dir = tempfile::tempdir().unwrap();
    let ws = common::sync_fixture(&dir.path().join("ws"));
    let r = common::build(&ws, &dir.path().join("local"), None, 2).unwrap().report;
    assert_eq!((r.wanted, r.missed, r.executed_cost), (16, 16, 99));
    assert!(r.per_task.iter().all(|t| t.unihash == t.taskhash));
}

#[test]
fn unreachable_cache_degrades_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let ws = common::sync_fixture(&dir.path().join("ws"));
    // Bind and drop to obtain a port that is very likely closed.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cache = CacheEndpoints { host: "127.0.0.1".into(), hashserv_port: port, downloads_port: port, sstate_port: port };
    let r = common::build(&ws, &dir.path().join("local"), Some(&cache), 4).unwrap().report;
    assert_eq!(r.failed, 0);
    assert_eq!(r.executed_cost, 99);
    assert_eq!(r.warnings.len(), 1, "{:?}", r.warnings);
    assert!(r.warnings[0].contains("continuing without cache"));
}

#[test]
fn source_change_invalidates_exactly_its_dependents() {
    let dir = tempfile::tempdir().unwrap();
    let ws = common::sync_fixture(&dir.path().join("ws"));
    let before = common::build(&ws, &dir.path().join("local"), None, 4).unwrap().report;

    let main_c = dir.path().join("ws/sources/helloworld/main.c");
    let mut text = fs::read_to_string(&main_c).unwrap();
    text.push_str("/* touched */\n");
    fs::write(&main_c, text).unwrap();
    assert_ne!(scan_sources(&ws).unwrap()["helloworld"].digest, ws.entry("helloworld").unwrap().digest);

    let after = common::build(&ws, &dir.path().join("local"), None, 4).unwrap().report;
    let changed: Vec<&str> = before
        .per_task
        .iter()
        .zip(&after.per_task)
        .filter(|(a, b)| a.taskhash != b.taskhash)
        .map(|(a, _)| a.task.as_str())
        .collect();
    assert_eq!(
        changed,
        [
            "core-image-minimal:image_complete",
            "core-image-minimal:rootfs",
            "helloworld:compile",
            "helloworld:configure",
            "helloworld:fetch",
            "helloworld:install",
            "helloworld:package",
        ]
    );
    assert_eq!(executed(&after), changed);
}

#[test]
fn comment_only_recipe_edit_is_absorbed_by_hash_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let ws = common::sync_fixture(&dir.path().join("ws"));
    let svc = common::start_cache(&dir.path().join("cache"));
    let cache = svc.endpoints().clone();
    let cold = common::build(&ws, &dir.path().join("local"), Some(&cache), 4).unwrap();

    let recipe = dir.path().join("ws/layers/meta-custom/recipes/helloworld/helloworld_1.0.recipe");
    let text = fs::read_to_string(&recipe).unwrap();
    fs::write(&recipe, format!("# reworded comment\n{text}")).unwrap();

    let next = common::build(&ws, &dir.path().join("local"), Some(&cache), 4).unwrap();
    let r = &next.report;
    // The helloworld tasks have new taskhashes and run, but their outputs
    // are unchanged, so they map to the old unihashes and nothing
    // downstream of them reruns.
    assert_eq!(
        executed(r),
        [
            "core-image-minimal:image_complete",
            "helloworld:compile",
            "helloworld:configure",
            "helloworld:fetch",
            "helloworld:install",
            "helloworld:package",
        ]
    );
    assert_eq!(r.record(&id("core-image-minimal:rootfs")).unwrap().disposition, Disposition::Current);
    for t in &r.per_task {
        let old = cold.report.record(&t.task).unwrap();
        assert_eq!(t.unihash, old.unihash, "{}", t.task.as_str());
        if t.task.recipe() == "helloworld" {
            assert_ne!(t.taskhash, old.taskhash);
        }
    }
    assert_eq!(next.image.unwrap().image_digest, cold.image.unwrap().image_digest);
}

#[test]
fn compile_failure_stops_the_build_with_a_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let ws = common::sync_fixture(&dir.path().join("ws"));
    let src = dir.path().join("ws/sources/libhelloworld/hello.c");
    let mut text = fs::read_to_string(&src).unwrap();
    text.push_str("COMPILE_FAIL\n");
    fs::write(&src, text).unwrap();

    let err = common::build(&ws, &dir.path().join("local"), None, 4).unwrap_err();
    let BuildError::TaskFailed { task, .. } = &err else { panic!("unexpected {err}") };
    assert_eq!(task.as_str(), "libhelloworld:compile");
    let r = err.report().unwrap();
    assert_eq!(r.failed, 1);
    assert!(r.record(&id("helloworld:configure")).is_none());
    r.check_identities().unwrap();
}

#[test]
fn parallelism_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ws = common::sync_fixture(&dir.path().join("ws"));
    let one = common::build(&ws, &dir.path().join("local-1"), None, 1).unwrap();
    let four = common::build(&ws, &dir.path().join("local-4"), None, 4).unwrap();
    assert_eq!(outhashes(&one.report), outhashes(&four.report));
    assert_eq!(one.image.unwrap().image_digest, four.image.unwrap().image_digest);
}

#[test]
fn separate_workspaces_reproduce_the_same_image() {
    let dir = tempfile::tempdir().unwrap();
    let a = common::sync_fixture(&dir.path().join("a"));
    let b = common::sync_fixture(&dir.path().join("nested/b"));
    assert_eq!(a.fingerprint(), b.fingerprint());
    let ia = common::build(&a, &dir.path().join("la"), None, 3).unwrap().image.unwrap();
    let ib = common::build(&b, &dir.path().join("lb"), None, 2).unwrap().image.unwrap();
    assert_eq!(ia, ib);
    ia.validate().unwrap();
}
