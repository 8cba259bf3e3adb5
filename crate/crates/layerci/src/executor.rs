// SPDX-License-Identifier: Apache-2.0

//! Executes a task graph against local state and an optional remote cache.
//!
//! For each task, in schedule order:
//!
//! 1. taskhash from the task inputs and the dependencies' unihashes;
//! 2. unihash from the hash-equivalence service, else the taskhash;
//! 3. a local stamp holding that unihash makes the task *current*;
//! 4. otherwise an sstate hit on `ss/<task-id>/<unihash>` *restores* it;
//! 5. otherwise the task *executes*, is reported to the equivalence service
//!    and its output uploaded to sstate.
//!
//! Tasks of one schedule level run concurrently on up to `jobs` workers.
//! Results are merged by task id, so the outcome does not depend on
//! interleaving. A cache that cannot be reached degrades the build to
//! local-only and records a warning; it never fails the build.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use layerci_core::image::ImageArtifact;
use layerci_core::output::{run_task, RunError, TaskOutput};
use layerci_core::report::{BuildReport, Disposition, TaskRecord};
use layerci_core::task::TaskId;
use layerci_core::taskgraph::{task_hash, topological_schedule, GraphError, Task, TaskGraph};
use layerci_core::Digest;

use crate::cache::{CacheEndpoints, CacheSession, ClientError};
use crate::store::{decode_tree, digest_of, encode_tree, Tree};

/// Equivalence method token used for every hashserv request.
pub const METHOD: &str = "sstate-sig-v1";

/// Completed-task stamps and task outputs of one build directory.
#[derive(Debug, Clone)]
pub struct LocalState {
    root: PathBuf,
}

fn file_stem(id: &TaskId) -> String {
    // Task ids are `<recipe>:<kind>`; `@` cannot occur in recipe names.
    id.as_str().replace(':', "@")
}

fn write_atomic(path: &Path, data: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(data)?;
    fs::rename(&tmp, path)
}

impl LocalState {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<LocalState> {
        let root = root.into();
        fs::create_dir_all(root.join("stamps"))?;
        fs::create_dir_all(root.join("outputs"))?;
        Ok(LocalState { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn stamp_path(&self, id: &TaskId) -> PathBuf {
        self.root.join("stamps").join(format!("{}.stamp", file_stem(id)))
    }

    fn output_path(&self, id: &TaskId) -> PathBuf {
        self.root.join("outputs").join(format!("{}.out", file_stem(id)))
    }

    /// The stamped unihash and stored output of `id`, if both are present.
    pub fn completed(&self, id: &TaskId) -> Option<(Digest, Vec<u8>)> {
        let stamp = fs::read_to_string(self.stamp_path(id)).ok()?;
        let unihash = stamp.trim().parse().ok()?;
        let blob = fs::read(self.output_path(id)).ok()?;
        Some((unihash, blob))
    }

    /// Stores the output first and the stamp second, so a stamp always has its output.
    pub fn complete(&self, id: &TaskId, unihash: &Digest, blob: &[u8]) -> io::Result<()> {
        let _ = fs::remove_file(self.stamp_path(id));
        write_atomic(&self.output_path(id), blob)?;
        write_atomic(&self.stamp_path(id), unihash.to_hex().as_bytes())
    }

    /// Every stamped task and its unihash.
    pub fn stamps(&self) -> io::Result<BTreeMap<String, Digest>> {
        let mut out = BTreeMap::new();
        for entry in fs::read_dir(self.root.join("stamps"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "stamp") {
                if let (Some(stem), Ok(text)) = (path.file_stem(), fs::read_to_string(&path)) {
                    if let Ok(d) = text.trim().parse() {
                        out.insert(stem.to_string_lossy().replace('@', ":"), d);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Source archives for fetch tasks, looked up by source tree digest.
pub trait SourceArchives: Sync {
    fn archive(&self, digest: &Digest) -> Option<Vec<u8>>;
}

/// No archives: fetch tasks never populate the downloads mirror.
pub struct NoSources;

impl SourceArchives for NoSources {
    fn archive(&self, _: &Digest) -> Option<Vec<u8>> {
        None
    }
}

/// Archives of in-memory trees.
#[derive(Debug, Default)]
pub struct TreeArchives(BTreeMap<Digest, Vec<u8>>);

impl TreeArchives {
    pub fn new<'a>(trees: impl IntoIterator<Item = &'a Tree>) -> Self {
        TreeArchives(trees.into_iter().map(|t| (digest_of(t), encode_tree(t))).collect())
    }
}

impl SourceArchives for TreeArchives {
    fn archive(&self, digest: &Digest) -> Option<Vec<u8>> {
        self.0.get(digest).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildOutcome {
    pub report: BuildReport,
    pub image: Option<ImageArtifact>,
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("task {task} failed: {error}")]
    TaskFailed { task: TaskId, error: RunError, report: Box<BuildReport> },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("local state {path}: {source}")]
    Local { path: PathBuf, source: io::Error },
}

impl BuildError {
    /// The partial report of a failed build.
    pub fn report(&self) -> Option<&BuildReport> {
        match self {
            BuildError::TaskFailed { report, .. } => Some(report),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct Done {
    record: TaskRecord,
}

/// Shared cache access for the workers of one build.
struct Cache<'a> {
    endpoints: Option<&'a CacheEndpoints>,
    down: AtomicBool,
    sessions: Vec<Mutex<Option<CacheSession>>>,
    warnings: Mutex<BTreeSet<String>>,
}

impl<'a> Cache<'a> {
    fn new(endpoints: Option<&'a CacheEndpoints>, workers: usize) -> Self {
        Cache {
            endpoints,
            down: AtomicBool::new(endpoints.is_none()),
            sessions: (0..workers).map(|_| Mutex::new(None)).collect(),
            warnings: Mutex::new(BTreeSet::new()),
        }
    }

    fn warn(&self, message: String) {
        log::warn!("{message}");
        self.warnings.lock().expect("warnings lock").insert(message);
    }

    fn degrade(&self, e: &ClientError) {
        if !self.down.swap(true, Ordering::SeqCst) {
            let host = self.endpoints.map(|e| e.host.as_str()).unwrap_or("");
            self.warn(format!("cache at {host} unavailable ({e}); continuing without cache"));
        }
    }

    /// Runs `f` with worker `w`'s session; `None` when the cache is down or
    /// the call fails (which takes the cache down).
    fn with<T>(&self, w: usize, f: impl FnOnce(&mut CacheSession) -> Result<T, ClientError>) -> Option<T> {
        if self.down.load(Ordering::SeqCst) {
            return None;
        }
        let mut slot = self.sessions[w].lock().expect("session lock");
        if slot.is_none() {
            match CacheSession::connect(self.endpoints?) {
                Ok(s) => *slot = Some(s),
                Err(e) => {
                    self.degrade(&e);
                    return None;
                }
            }
        }
        match f(slot.as_mut().expect("session present")) {
            Ok(v) => Some(v),
            Err(e @ ClientError::Conflict { .. }) => {
                self.warn(format!("sstate conflict: {e}"));
                None
            }
            Err(e) => {
                *slot = None;
                self.degrade(&e);
                None
            }
        }
    }
}

struct Run<'a> {
    graph: &'a TaskGraph,
    cache: Cache<'a>,
    local: &'a LocalState,
    sources: &'a dyn SourceArchives,
    local_lock: Mutex<()>,
}

enum Step {
    Done(Done),
    Failed(RunError),
    Local(PathBuf, io::Error),
}

impl Run<'_> {
    fn step(&self, w: usize, task: &Task, finished: &BTreeMap<TaskId, Done>) -> Step {
        let deps: Vec<TaskId> = self.graph.dependencies(&task.id).cloned().collect();
        let dep_unihashes: Vec<Digest> = deps.iter().map(|d| finished[d].record.unihash).collect();
        let taskhash = task_hash(task, &dep_unihashes);
        let mut unihash = taskhash;
        if task.cacheable {
            if let Some(Some(u)) = self.cache.with(w, |s| s.hashserv.query(METHOD, taskhash)) {
                unihash = u;
            }
        }
        let record = |disposition, unihash, outhash| TaskRecord {
            task: task.id.clone(),
            disposition,
            cost: task.cost,
            taskhash,
            unihash,
            outhash,
        };

        if task.cacheable {
            if let Some((stamped, blob)) = self.local.completed(&task.id) {
                if stamped == unihash {
                    let outhash = Digest::of(&blob);
                    return Step::Done(Done { record: record(Disposition::Current, unihash, outhash) });
                }
            }
            let key = format!("ss/{}/{}", task.id, unihash);
            if let Some(Some(blob)) = self.cache.with(w, |s| s.sstate.get(&key)) {
                let outhash = Digest::of(&blob);
                if let Err(e) = self.store_local(&task.id, &unihash, &blob) {
                    return Step::Local(self.local.root().to_path_buf(), e);
                }
                return Step::Done(Done { record: record(Disposition::Restored, unihash, outhash) });
            }
        }

        if let Some(src) = &task.source_digest {
            self.mirror_sources(w, task, src);
        }
        let dep_outhashes: BTreeMap<TaskId, Digest> =
            deps.iter().map(|d| (d.clone(), finished[d].record.outhash)).collect();
        let TaskOutput { blob, outhash, .. } = match run_task(task, &deps, &dep_outhashes) {
            Ok(out) => out,
            Err(e) => return Step::Failed(e),
        };
        if task.cacheable {
            if let Some(u) = self.cache.with(w, |s| s.hashserv.report(METHOD, taskhash, outhash)) {
                unihash = u;
            }
            let key = format!("ss/{}/{}", task.id, unihash);
            self.cache.with(w, |s| s.sstate.put(&key, &blob));
            if let Err(e) = self.store_local(&task.id, &unihash, &blob) {
                return Step::Local(self.local.root().to_path_buf(), e);
            }
        }
        Step::Done(Done { record: record(Disposition::Executed, unihash, outhash) })
    }

    fn store_local(&self, id: &TaskId, unihash: &Digest, blob: &[u8]) -> io::Result<()> {
        let _guard = self.local_lock.lock().expect("local state lock");
        self.local.complete(id, unihash, blob)
    }

    /// Consults the downloads mirror for the task's sources, uploading them on a miss.
    fn mirror_sources(&self, w: usize, task: &Task, src: &Digest) {
        let key = format!("dl/{}/{}", task.recipe(), src);
        match self.cache.with(w, |s| s.downloads.get(&key)) {
            Some(Some(bytes)) => {
                if decode_tree(&bytes).map(|t| digest_of(&t)) != Some(*src) {
                    self.cache.warn(format!("downloads entry {key} does not match its digest"));
                }
            }
            Some(None) => {
                if let Some(archive) = self.sources.archive(src) {
                    self.cache.with(w, |s| s.downloads.put(&key, &archive));
                }
            }
            None => {}
        }
    }
}

/// Builds every task of `g`; see the module documentation for the rules.
pub fn execute_build(
    g: &TaskGraph,
    cache: Option<&CacheEndpoints>,
    local: &LocalState,
    sources: &dyn SourceArchives,
    jobs: usize,
) -> Result<BuildOutcome, BuildError> {
    let levels = topological_schedule(g)?;
    let jobs = jobs.max(1);
    let run = Run { graph: g, cache: Cache::new(cache, jobs), local, sources, local_lock: Mutex::new(()) };
    let mut finished: BTreeMap<TaskId, Done> = BTreeMap::new();
    let mut failure: Option<(TaskId, RunError)> = None;

    for level in &levels {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(TaskId, Step)>> = Mutex::new(Vec::new());
        let stop = AtomicBool::new(false);
        let workers = jobs.min(level.len());
        std::thread::scope(|scope| {
            for w in 0..workers {
                let (run, finished, next, results, stop) = (&run, &finished, &next, &results, &stop);
                scope.spawn(move || loop {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(id) = level.get(i) else { break };
                    let task = g.task(id).expect("scheduled task exists");
                    let step = run.step(w, task, finished);
                    if !matches!(step, Step::Done(_)) {
                        stop.store(true, Ordering::SeqCst);
                    }
                    results.lock().expect("results lock").push((id.clone(), step));
                });
            }
        });
        let mut results = results.into_inner().expect("results lock");
        results.sort_by(|a, b| a.0.cmp(&b.0));
        for (id, step) in results {
            match step {
                Step::Done(d) => {
                    finished.insert(id, d);
                }
                Step::Failed(e) => {
                    if failure.is_none() {
                        failure = Some((id, e));
                    }
                }
                Step::Local(path, source) => return Err(BuildError::Local { path, source }),
            }
        }
        if failure.is_some() {
            break;
        }
    }

    let cacheable = |id: &TaskId| g.task(id).is_some_and(|t| t.cacheable);
    let mut report = BuildReport::from_records(finished.values().map(|d| d.record.clone()).collect(), cacheable);
    report.warnings = run.cache.warnings.into_inner().expect("warnings lock").into_iter().collect();
    if let Err(identity) = report.check_identities() {
        panic!("build report violates {identity}");
    }
    if let Some((task, error)) = failure {
        report.failed = 1;
        return Err(BuildError::TaskFailed { task, error, report: Box::new(report) });
    }

    let image = g.image().map(|target| {
        ImageArtifact::compose(
            &target.name,
            target.packages.iter().map(|p| {
                let meta = g.package(p).expect("image package has metadata").clone();
                let id = TaskId::new(p, layerci_core::task::TaskKind::Package);
                (meta, finished[&id].record.outhash)
            }),
        )
    });
    Ok(BuildOutcome { report, image })
}
