// SPDX-License-Identifier: Apache-2.0

//! Change events, pipeline execution and the six-scenario suite.
//!
//! A [`CiContext`] tracks the head revision of every project in a
//! [`DirStore`]. An event edits one project, which publishes a new
//! revision, re-pins the manifest, and then runs the pipelines of every
//! downstream project in trigger order. Each run works in a fresh
//! directory of its own; the store and the cache are shared.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use layerci_core::boot::{run_boot_test, BootTestSpec, TestResult};
use layerci_core::image::ImageArtifact;
use layerci_core::manifest::{parse_manifest, Manifest, ManifestError};
use layerci_core::pipeline::{
    expected_statuses, parse_pipeline_config, plan_propagation, run_plan, Action, JobConfig, JobOutcome,
    JobRunner, PipelineConfig, PipelineError, PipelineRun, RepoGraph, RunStatus,
};
use layerci_core::report::{summarize, BuildReport};
use layerci_core::taskgraph::TaskGraph;
use serde::{Deserialize, Serialize};

use crate::cache::CacheEndpoints;
use crate::executor::{execute_build, BuildError, LocalState, TreeArchives};
use crate::layers::{image_graph, load_layers, recipe_graph, LoadError};
use crate::store::{self, DirStore, SourceStore, StoreError, Tree};
use crate::sync::{sync_workspace, workspace_trees, SyncError};

pub const MANIFEST_FILE: &str = "manifest.xml";
pub const PIPELINE_FILE: &str = "pipeline.json";
pub const BOOT_SPEC_FILE: &str = "boot-test.json";
/// File that a plain edit appends to.
pub const CHANGELOG_FILE: &str = "CHANGELOG";

#[derive(Debug, Clone)]
pub struct CiConfig {
    pub store: PathBuf,
    /// Scratch space for per-event workspaces and build state.
    pub work_dir: PathBuf,
    /// The project holding `manifest.xml`; its own pipeline builds the image.
    pub manifest_project: String,
    /// Revision of the manifest project to start from.
    pub base_revision: String,
    pub image: String,
    pub cache: Option<CacheEndpoints>,
    pub jobs: usize,
}

impl CiConfig {
    pub fn new(store: impl Into<PathBuf>, work_dir: impl Into<PathBuf>) -> Self {
        CiConfig {
            store: store.into(),
            work_dir: work_dir.into(),
            manifest_project: "manifest".into(),
            base_revision: "kirkstone".into(),
            image: "core-image-minimal".into(),
            cache: None,
            jobs: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CiError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{project}/{MANIFEST_FILE}: {source}")]
    Manifest { project: String, source: ManifestError },
    #[error("{project}: missing {file}")]
    MissingFile { project: String, file: &'static str },
    #[error("{project}/{file}: {message}")]
    BadFile { project: String, file: &'static str, message: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// What an event does to its project's sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Edit {
    /// Appends a line naming the event to `CHANGELOG`.
    Touch,
    /// Appends a `COMPILE_FAIL` line to the first C source (or `CHANGELOG`).
    CompileFail,
    /// Leaves the sources byte-identical.
    Noop,
    /// Replaces (or creates) one file.
    Write { path: String, contents: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub project: String,
    pub edit: Edit,
    pub event_id: String,
}

/// A build performed by one job of an event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JobBuild {
    pub project: String,
    pub job: String,
    pub report: BuildReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventResult {
    pub event_id: String,
    pub plan: Vec<String>,
    pub runs: Vec<PipelineRun>,
    pub builds: Vec<JobBuild>,
    /// The last image built while handling the event.
    pub image: Option<ImageArtifact>,
    pub boot: Option<TestResult>,
}

impl EventResult {
    pub fn statuses(&self) -> BTreeMap<String, RunStatus> {
        self.runs.iter().map(|r| (r.project.clone(), r.status)).collect()
    }

    pub fn passed(&self) -> bool {
        self.runs.iter().all(|r| r.status == RunStatus::Passed)
    }

    pub fn executed_cost(&self) -> u64 {
        self.runs.iter().flat_map(|r| &r.stage_results).map(|s| s.cost).sum()
    }
}

pub struct CiContext {
    cfg: CiConfig,
    store: DirStore,
    base_heads: BTreeMap<String, String>,
    heads: BTreeMap<String, String>,
}

fn edit_tree(files: &mut Tree, edit: &Edit, event_id: &str) {
    let append = |files: &mut Tree, path: &str, line: &str| {
        let data = files.entry(path.to_owned()).or_default();
        if !data.is_empty() && !data.ends_with(b"\n") {
            data.push(b'\n');
        }
        data.extend_from_slice(line.as_bytes());
        data.push(b'\n');
    };
    match edit {
        Edit::Noop => {}
        Edit::Touch => append(files, CHANGELOG_FILE, &format!("change {event_id}")),
        Edit::CompileFail => {
            let target = files
                .keys()
                .find(|p| p.ends_with(".c"))
                .cloned()
                .unwrap_or_else(|| CHANGELOG_FILE.to_owned());
            append(files, &target, "COMPILE_FAIL");
        }
        Edit::Write { path, contents } => {
            files.insert(path.clone(), contents.clone().into_bytes());
        }
    }
}

/// Content-addressed revision name for a tree.
pub fn revision_for(tree: &Tree) -> String {
    format!("r-{}", store::digest_of(tree).short(12))
}

impl CiContext {
    pub fn open(cfg: CiConfig) -> Result<CiContext, CiError> {
        let store = DirStore::new(&cfg.store);
        let mut heads = BTreeMap::new();
        heads.insert(cfg.manifest_project.clone(), cfg.base_revision.clone());
        let mut ctx = CiContext { cfg, store, base_heads: BTreeMap::new(), heads };
        let manifest = ctx.manifest()?;
        for p in &manifest.projects {
            ctx.heads.insert(p.name.clone(), p.revision.clone());
        }
        ctx.base_heads = ctx.heads.clone();
        Ok(ctx)
    }

    pub fn config(&self) -> &CiConfig {
        &self.cfg
    }

    pub fn store(&self) -> &DirStore {
        &self.store
    }

    pub fn heads(&self) -> &BTreeMap<String, String> {
        &self.heads
    }

    /// Returns every project to the revision it had when the context was opened.
    pub fn reset(&mut self) {
        self.heads = self.base_heads.clone();
    }

    fn head_file(&self, project: &str, file: &'static str) -> Result<Option<String>, CiError> {
        let rev = &self.heads[project];
        let snap = self.store.fetch(project, rev)?;
        match snap.files.get(file) {
            None => Ok(None),
            Some(bytes) => String::from_utf8(bytes.clone()).map(Some).map_err(|_| CiError::BadFile {
                project: project.into(),
                file,
                message: "not UTF-8".into(),
            }),
        }
    }

    /// The manifest at the manifest project's head.
    pub fn manifest(&self) -> Result<Manifest, CiError> {
        let project = &self.cfg.manifest_project;
        let text = self
            .head_file(project, MANIFEST_FILE)?
            .ok_or_else(|| CiError::MissingFile { project: project.clone(), file: MANIFEST_FILE })?;
        parse_manifest(&text).map_err(|source| CiError::Manifest { project: project.clone(), source })
    }

    /// Pipeline configs of every project at its head; projects without one are skipped.
    pub fn configs(&self) -> Result<BTreeMap<String, PipelineConfig>, CiError> {
        let mut out = BTreeMap::new();
        for project in self.heads.keys() {
            if let Some(text) = self.head_file(project, PIPELINE_FILE)? {
                let cfg = parse_pipeline_config(&text).map_err(|e| CiError::BadFile {
                    project: project.clone(),
                    file: PIPELINE_FILE,
                    message: e.to_string(),
                })?;
                if cfg.project != *project {
                    return Err(CiError::BadFile {
                        project: project.clone(),
                        file: PIPELINE_FILE,
                        message: format!("declares project {:?}", cfg.project),
                    });
                }
                out.insert(project.clone(), cfg);
            }
        }
        Ok(out)
    }

    pub fn repo_graph(&self) -> Result<(RepoGraph, BTreeMap<String, PipelineConfig>), CiError> {
        let configs = self.configs()?;
        let graph = RepoGraph::from_configs(configs.values(), &self.cfg.manifest_project)?;
        Ok((graph, configs))
    }

    /// The boot test spec at the manifest project's head, or the default one.
    pub fn boot_spec(&self) -> Result<BootTestSpec, CiError> {
        match self.head_file(&self.cfg.manifest_project, BOOT_SPEC_FILE)? {
            None => Ok(BootTestSpec::default()),
            Some(text) => serde_json::from_str(&text).map_err(|e| CiError::BadFile {
                project: self.cfg.manifest_project.clone(),
                file: BOOT_SPEC_FILE,
                message: e.to_string(),
            }),
        }
    }

    /// Publishes `edit` as a new revision of `project` and re-pins the manifest.
    fn apply_edit(&mut self, project: &str, edit: &Edit, event_id: &str) -> Result<(), CiError> {
        let rev = self.heads[project].clone();
        let mut files = self.store.fetch(project, &rev)?.files;
        let before = store::digest_of(&files);
        edit_tree(&mut files, edit, event_id);
        if store::digest_of(&files) == before {
            return Ok(());
        }
        let new_rev = revision_for(&files);
        self.store.publish(project, &new_rev, &files)?;
        self.heads.insert(project.to_owned(), new_rev.clone());
        log::info!("{event_id}: {project} {rev} -> {new_rev}");

        let mp = self.cfg.manifest_project.clone();
        if project != mp {
            let mut manifest = self.manifest()?;
            if manifest.set_revision(project, &new_rev) {
                let mrev = self.heads[&mp].clone();
                let mut mfiles = self.store.fetch(&mp, &mrev)?.files;
                mfiles.insert(MANIFEST_FILE.into(), manifest.to_xml().into_bytes());
                let new_mrev = revision_for(&mfiles);
                self.store.publish(&mp, &new_mrev, &mfiles)?;
                self.heads.insert(mp, new_mrev);
            }
        }
        Ok(())
    }

    fn event_dir(&self, event_id: &str) -> PathBuf {
        self.cfg.work_dir.join("events").join(event_id)
    }

    /// Applies the event's edit and runs every affected pipeline.
    pub fn run_event(&mut self, ev: &ChangeEvent) -> Result<EventResult, CiError> {
        let (graph, _) = self.repo_graph()?;
        if !graph.contains(&ev.project) {
            return Err(PipelineError::UnknownProject(ev.project.clone()).into());
        }
        if !layerci_core::layer::is_name(&ev.event_id) {
            return Err(CiError::BadFile {
                project: ev.project.clone(),
                file: "event",
                message: format!("invalid event id {:?}", ev.event_id),
            });
        }
        self.apply_edit(&ev.project, &ev.edit, &ev.event_id)?;
        let (graph, configs) = self.repo_graph()?;
        let plan = plan_propagation(&graph, &ev.project)?;

        let dir = self.event_dir(&ev.event_id);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|source| CiError::Io { path: dir.clone(), source })?;
        }
        let manifest = self.manifest()?;
        let boot_spec = self.boot_spec()?;
        let mut runner = EventRunner {
            ctx: self,
            dir,
            manifest,
            boot_spec,
            image: None,
            builds: Vec::new(),
            last_image: None,
            boot: None,
        };
        let runs = run_plan(&ev.event_id, &plan, &graph, &configs, &mut runner);
        Ok(EventResult {
            event_id: ev.event_id.clone(),
            plan,
            runs,
            builds: runner.builds,
            image: runner.last_image,
            boot: runner.boot,
        })
    }
}

struct EventRunner<'a> {
    ctx: &'a CiContext,
    dir: PathBuf,
    manifest: Manifest,
    boot_spec: BootTestSpec,
    /// Image built by the current run.
    image: Option<ImageArtifact>,
    builds: Vec<JobBuild>,
    last_image: Option<ImageArtifact>,
    boot: Option<TestResult>,
}

#[derive(Debug, thiserror::Error)]
enum JobError {
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{0}")]
    Build(#[from] BuildError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn failed(detail: String, cost: u64) -> JobOutcome {
    JobOutcome { passed: false, cost, detail }
}

impl EventRunner<'_> {
    fn run_dir(&self, project: &str) -> PathBuf {
        self.dir.join(project)
    }

    /// Syncs a fresh workspace for this run and builds the graph chosen by `select`.
    fn build(
        &mut self,
        project: &str,
        job: &JobConfig,
        select: impl FnOnce(&layerci_core::manifest::WorkspaceState) -> Result<Option<TaskGraph>, JobError>,
    ) -> Result<Option<BuildReportAndImage>, JobError> {
        let run_dir = self.run_dir(project);
        let ws = sync_workspace(&self.manifest, self.ctx.store(), &run_dir.join("workspace"))?;
        let Some(graph) = select(&ws)? else { return Ok(None) };
        let trees = workspace_trees(&ws)?;
        let archives = TreeArchives::new(trees.values());
        let local_dir = run_dir.join("local").join(&job.name);
        let local = LocalState::open(&local_dir).map_err(|source| JobError::Io { path: local_dir, source })?;
        let cfg = self.ctx.config();
        let outcome = execute_build(&graph, cfg.cache.as_ref(), &local, &archives, cfg.jobs);
        let report = match &outcome {
            Ok(o) => o.report.clone(),
            Err(e) => e.report().cloned().unwrap_or_default(),
        };
        self.builds.push(JobBuild { project: project.into(), job: job.name.clone(), report });
        let outcome = outcome?;
        let report_path = run_dir.join(format!("{}-report.json", job.name));
        fs::write(&report_path, layerci_core::canonical_json(&outcome.report))
            .map_err(|source| JobError::Io { path: report_path, source })?;
        Ok(Some((outcome.report, outcome.image)))
    }

    fn component_build(&mut self, project: &str, job: &JobConfig) -> JobOutcome {
        let result = self.build(project, job, |ws| {
            let loaded = load_layers(ws)?;
            let set = &loaded.set;
            let mut recipes: Vec<String> = set
                .recipe_names()
                .into_iter()
                .filter(|n| set.recipe(n).is_some_and(|r| r.value.src.as_deref() == Some(project)))
                .map(str::to_owned)
                .collect();
            if recipes.is_empty() {
                if let Some((layer, _)) = loaded.origin.iter().find(|(_, p)| p.as_str() == project) {
                    let l = set.layers().iter().find(|l| &l.name == layer).expect("origin names a loaded layer");
                    recipes = l.recipes.keys().cloned().collect();
                }
            }
            if recipes.is_empty() {
                return Ok(None);
            }
            Ok(Some(recipe_graph(ws, set, &recipes)?))
        });
        match result {
            Ok(Some((report, _))) => JobOutcome {
                passed: true,
                cost: report.executed_cost,
                detail: summarize(&report).trim_end().replace('\n', " | "),
            },
            Ok(None) => JobOutcome { passed: true, cost: 0, detail: "nothing to build".into() },
            Err(e) => failed(e.to_string(), self.builds.last().map_or(0, |b| b.report.executed_cost)),
        }
    }

    fn image_build(&mut self, project: &str, job: &JobConfig) -> JobOutcome {
        let image_name = self.ctx.config().image.clone();
        let result = self.build(project, job, |ws| {
            let loaded = load_layers(ws)?;
            Ok(Some(image_graph(ws, &loaded.set, &image_name)?))
        });
        match result {
            Ok(Some((report, Some(image)))) => {
                let path = self.run_dir(project).join(format!("{}.json", image.image_name));
                if let Err(e) = fs::write(&path, image.to_json()) {
                    return failed(format!("{}: {e}", path.display()), report.executed_cost);
                }
                self.image = Some(image.clone());
                self.last_image = Some(image);
                JobOutcome {
                    passed: true,
                    cost: report.executed_cost,
                    detail: summarize(&report).trim_end().replace('\n', " | "),
                }
            }
            Ok(_) => failed("build produced no image".into(), 0),
            Err(e) => failed(e.to_string(), self.builds.last().map_or(0, |b| b.report.executed_cost)),
        }
    }

    fn boot_test(&mut self) -> JobOutcome {
        let Some(image) = &self.image else {
            return failed("no image was built in this pipeline".into(), 0);
        };
        let result = run_boot_test(image, &self.boot_spec);
        let outcome = JobOutcome { passed: result.passed, cost: 0, detail: result.summary() };
        self.boot = Some(result);
        outcome
    }
}

type BuildReportAndImage = (BuildReport, Option<ImageArtifact>);

impl JobRunner for EventRunner<'_> {
    fn begin_run(&mut self, _project: &str) {
        self.image = None;
    }

    fn run_job(&mut self, project: &str, job: &JobConfig) -> JobOutcome {
        match job.action {
            Action::ComponentBuild => self.component_build(project, job),
            Action::ImageBuild => self.image_build(project, job),
            Action::BootTest => self.boot_test(),
        }
    }
}

/// Outcome of one scenario compared with its expectation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioVerdict {
    pub name: String,
    pub project: String,
    pub compile_fail: bool,
    pub expected: BTreeMap<String, RunStatus>,
    pub actual: BTreeMap<String, RunStatus>,
    /// Boot test result of the manifest run, when one ran.
    pub boot_passed: Option<bool>,
    pub executed_cost: u64,
    pub passed: bool,
    pub mismatches: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuiteReport {
    pub scenarios: Vec<ScenarioVerdict>,
    pub passed: usize,
    pub total: usize,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }
}

/// The component projects the suite edits.
pub const SCENARIO_PROJECTS: [&str; 3] = ["libhelloworld", "helloworld", "hello-mod"];

/// Compares an event's outcome with what its plan predicts.
pub fn verdict(name: &str, ev: &ChangeEvent, result: &EventResult) -> ScenarioVerdict {
    let compile_fail = ev.edit == Edit::CompileFail;
    let expected = expected_statuses(&result.plan, compile_fail);
    let actual = result.statuses();
    let mut mismatches = Vec::new();
    for (p, want) in &expected {
        match actual.get(p) {
            Some(got) if got == want => {}
            got => mismatches.push(format!("{p}: expected {want:?}, got {got:?}")),
        }
    }
    let boot_passed = result.boot.as_ref().map(|b| b.passed);
    if !compile_fail && boot_passed != Some(true) {
        mismatches.push(format!("boot test: expected a passing boot test, got {boot_passed:?}"));
    }
    ScenarioVerdict {
        name: name.into(),
        project: ev.project.clone(),
        compile_fail,
        expected,
        actual,
        boot_passed,
        executed_cost: result.executed_cost(),
        passed: mismatches.is_empty(),
        mismatches,
    }
}

/// Runs the six scenarios: each component, once with a plain edit and
/// once with a compile failure, each starting from the original heads.
pub fn scenario_suite(ctx: &mut CiContext) -> Result<SuiteReport, CiError> {
    let mut scenarios = Vec::new();
    let mut n = 0;
    for project in SCENARIO_PROJECTS {
        for (edit, label) in [(Edit::Touch, "success"), (Edit::CompileFail, "compile-fail")] {
            n += 1;
            ctx.reset();
            let name = format!("{project}-{label}");
            let ev = ChangeEvent { project: project.into(), edit, event_id: format!("scenario-{n}-{name}") };
            let result = ctx.run_event(&ev)?;
            scenarios.push(verdict(&name, &ev, &result));
        }
    }
    ctx.reset();
    let passed = scenarios.iter().filter(|s| s.passed).count();
    Ok(SuiteReport { total: scenarios.len(), passed, scenarios })
}

/// Copies a snapshot store (e.g. the bundled fixture) to `dest`.
pub fn copy_store(src: &Path, dest: &Path) -> Result<(), CiError> {
    let tree = store::read_tree(src)?;
    store::write_tree(dest, &tree)?;
    Ok(())
}
