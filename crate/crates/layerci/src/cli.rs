// SPDX-License-Identifier: Apache-2.0

//! The `layerci` command line.
//!
//! Exit codes: 0 on success, 1 when a build, test or pipeline fails,
//! 2 on usage or configuration errors (bad flags, missing or unparseable
//! input files).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use layerci_core::boot::{evaluate, run_boot_test, BootTestSpec};
use layerci_core::image::ImageArtifact;
use layerci_core::manifest::parse_manifest;
use layerci_core::report::summarize;

use crate::boot::{run_external_boot, ExternalBootError};
use crate::cache::{serve, CacheEndpoints};
use crate::executor::{execute_build, LocalState, TreeArchives};
use crate::layers::{image_graph, load_layers};
use crate::pipeline::{scenario_suite, ChangeEvent, CiConfig, CiContext, Edit};
use crate::reports::{load_reports, render_table, write_report};
use crate::store::DirStore;
use crate::sync::{load_state, sync_workspace, workspace_trees};

/// Environment variable supplying the default cache host.
pub const CACHE_HOST_ENV: &str = "CI_CACHE_HOST";

#[derive(Debug, Parser)]
#[command(name = "layerci", version, about = "Layered embedded-image CI: sync, build, cache, pipelines, boot tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the hash-equivalence, downloads and sstate services.
    CacheServe(CacheServeArgs),
    /// Check out every project pinned by a manifest.
    Sync(SyncArgs),
    /// Build an image in a synced workspace.
    Build(BuildArgs),
    /// Boot an image (simulated, or via an emulator command) and check it.
    BootTest(BootTestArgs),
    /// Pipeline operations.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Scenario suite operations.
    #[command(subcommand)]
    Scenarios(ScenariosCommand),
    /// Tabulate stored build reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CacheServeArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = crate::cache::DEFAULT_HASHSERV_PORT)]
    pub hashserv_port: u16,
    #[arg(long, default_value_t = crate::cache::DEFAULT_DOWNLOADS_PORT)]
    pub downloads_port: u16,
    #[arg(long, default_value_t = crate::cache::DEFAULT_SSTATE_PORT)]
    pub sstate_port: u16,
}

#[derive(Debug, Args)]
pub struct SyncArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub workspace: PathBuf,
}

/// Where the cache service is, if anywhere.
#[derive(Debug, Args)]
pub struct CacheArgs {
    /// Cache host; defaults to $CI_CACHE_HOST.
    #[arg(long, env = CACHE_HOST_ENV)]
    pub cache_host: Option<String>,
    #[arg(long, default_value_t = crate::cache::DEFAULT_HASHSERV_PORT)]
    pub hashserv_port: u16,
    #[arg(long, default_value_t = crate::cache::DEFAULT_DOWNLOADS_PORT)]
    pub downloads_port: u16,
    #[arg(long, default_value_t = crate::cache::DEFAULT_SSTATE_PORT)]
    pub sstate_port: u16,
    /// Ignore any configured cache host.
    #[arg(long)]
    pub no_cache: bool,
}

impl CacheArgs {
    fn endpoints(&self) -> Result<Option<CacheEndpoints>, Failure> {
        if self.no_cache {
            return Ok(None);
        }
        let Some(host) = self.cache_host.as_deref().filter(|h| !h.is_empty()) else { return Ok(None) };
        let e = CacheEndpoints {
            host: host.to_owned(),
            hashserv_port: self.hashserv_port,
            downloads_port: self.downloads_port,
            sstate_port: self.sstate_port,
        };
        e.validate().map_err(Failure::usage)?;
        Ok(Some(e))
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// A workspace created by `sync`.
    #[arg(long)]
    pub workspace: PathBuf,
    #[arg(long)]
    pub image: String,
    #[command(flatten)]
    pub cache: CacheArgs,
    /// Stamps and task outputs; defaults to <workspace>/.layerci-local.
    #[arg(long)]
    pub local_state: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    /// Write the build report (canonical JSON) here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also store the report as <label>-<timestamp>.json in this directory.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
    #[arg(long, default_value = "build")]
    pub label: String,
    /// Report timestamp; defaults to the current Unix time.
    #[arg(long)]
    pub timestamp: Option<u64>,
    /// Write the image artifact here; defaults to <local-state>/<image>.json.
    #[arg(long)]
    pub artifact: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootTestArgs {
    /// Image artifact JSON produced by `build`.
    #[arg(long)]
    pub image: PathBuf,
    /// Boot test spec JSON; defaults to the built-in spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Emulator command; `{image}` is replaced by the image path.
    #[arg(long, requires = "timeout")]
    pub emulator_cmd: Option<String>,
    /// Seconds to wait for the login prompt.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Write the test result JSON here instead of standard output.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    /// Apply a change to one project and run every triggered pipeline.
    Run(PipelineRunArgs),
}

#[derive(Debug, Args)]
pub struct CiArgs {
    /// CI working directory.
    #[arg(long)]
    pub workspace: PathBuf,
    /// Snapshot store; defaults to <workspace>/store.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[command(flatten)]
    pub cache: CacheArgs,
    #[arg(long, default_value = "manifest")]
    pub manifest_project: String,
    #[arg(long, default_value = "kirkstone")]
    pub revision: String,
    #[arg(long, default_value = "core-image-minimal")]
    pub image: String,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
}

impl CiArgs {
    fn context(&self) -> Result<CiContext, Failure> {
        let store = self.store.clone().unwrap_or_else(|| self.workspace.join("store"));
        require_dir(&store, "store")?;
        let mut cfg = CiConfig::new(store, self.workspace.join("work"));
        cfg.manifest_project = self.manifest_project.clone();
        cfg.base_revision = self.revision.clone();
        cfg.image = self.image.clone();
        cfg.cache = self.cache.endpoints()?;
        cfg.jobs = self.jobs as usize;
        CiContext::open(cfg).map_err(Failure::usage)
    }
}

#[derive(Debug, Args)]
pub struct PipelineRunArgs {
    #[command(flatten)]
    pub ci: CiArgs,
    /// `PROJECT` for a plain change, `PROJECT:fail` to inject a compile
    /// failure, `PROJECT:noop` for a byte-identical change.
    #[arg(long)]
    pub event: String,
    #[arg(long)]
    pub event_id: Option<String>,
    /// Write the event result (canonical JSON) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ScenariosCommand {
    /// Run the six success/compile-failure scenarios.
    Run(ScenariosRunArgs),
}

#[derive(Debug, Args)]
pub struct ScenariosRunArgs {
    #[command(flatten)]
    pub ci: CiArgs,
    /// Verdict table (canonical JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub report_dir: PathBuf,
    /// Print only the canonical JSON table (default: text table, then the
    /// cold-versus-warm comparison as JSON).
    #[arg(long)]
    pub json: bool,
}

/// Why a command did not succeed, and the exit code that goes with it.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(e: impl std::fmt::Display) -> Failure {
        Failure { code: 2, message: e.to_string() }
    }

    pub fn failed(e: impl std::fmt::Display) -> Failure {
        Failure { code: 1, message: e.to_string() }
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} directory {} does not exist", path.display())))
    }
}

fn read_input(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn write_output(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::failed(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::failed(format!("{}: {e}", path.display())))
}

fn cache_serve(a: &CacheServeArgs) -> Result<(), Failure> {
    let cfg = CacheEndpoints {
        host: a.host.clone(),
        hashserv_port: a.hashserv_port,
        downloads_port: a.downloads_port,
        sstate_port: a.sstate_port,
    };
    cfg.validate().map_err(Failure::usage)?;
    let service = serve(&cfg, &a.data_dir).map_err(Failure::failed)?;
    let e = service.endpoints();
    println!("hashserv  {}:{}", e.host, e.hashserv_port);
    println!("downloads {}:{}", e.host, e.downloads_port);
    println!("sstate    {}:{}", e.host, e.sstate_port);
    service.wait();
    Ok(())
}

fn sync(a: &SyncArgs) -> Result<(), Failure> {
    require_dir(&a.store, "store")?;
    let text = read_input(&a.manifest, "manifest")?;
    let m = parse_manifest(&text).map_err(|e| Failure::usage(format!("{}: {e}", a.manifest.display())))?;
    let ws = sync_workspace(&m, &DirStore::new(&a.store), &a.workspace).map_err(Failure::failed)?;
    for e in &ws.entries {
        println!("{} {} {} {}", e.name, e.snapshot_id, e.digest, e.path);
    }
    println!("fingerprint {}", ws.fingerprint());
    Ok(())
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn build(a: &BuildArgs) -> Result<(), Failure> {
    require_dir(&a.workspace, "workspace")?;
    let ws = load_state(&a.workspace)
        .map_err(Failure::usage)?
        .ok_or_else(|| Failure::usage(format!("{} is not a synced workspace; run `sync` first", a.workspace.display())))?;
    let cache = a.cache.endpoints()?;
    let loaded = load_layers(&ws).map_err(Failure::usage)?;
    let graph = image_graph(&ws, &loaded.set, &a.image).map_err(Failure::usage)?;
    let local_dir = a.local_state.clone().unwrap_or_else(|| a.workspace.join(".layerci-local"));
    let local = LocalState::open(&local_dir).map_err(|e| Failure::failed(format!("{}: {e}", local_dir.display())))?;
    let trees = workspace_trees(&ws).map_err(Failure::failed)?;
    let archives = TreeArchives::new(trees.values());

    let result = execute_build(&graph, cache.as_ref(), &local, &archives, a.jobs as usize);
    let report = match &result {
        Ok(o) => o.report.clone(),
        Err(e) => match e.report() {
            Some(r) => r.clone(),
            None => return Err(Failure::failed(e)),
        },
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", summarize(&report));
    if let Some(path) = &a.report {
        write_output(path, &layerci_core::canonical_json(&report))?;
    }
    if let Some(dir) = &a.report_dir {
        let path = write_report(dir, &a.label, a.timestamp.unwrap_or_else(now), &report).map_err(Failure::usage)?;
        println!("report {}", path.display());
    }
    let outcome = result.map_err(Failure::failed)?;
    if let Some(image) = &outcome.image {
        let path = a.artifact.clone().unwrap_or_else(|| local_dir.join(format!("{}.json", image.image_name)));
        write_output(&path, &image.to_json())?;
        println!("image {} {}", image.image_digest, path.display());
    }
    Ok(())
}

fn boot_test(a: &BootTestArgs) -> Result<(), Failure> {
    let text = read_input(&a.image, "image")?;
    let image = ImageArtifact::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", a.image.display())))?;
    let spec = match &a.spec {
        Some(p) => serde_json::from_str(&read_input(p, "spec")?)
            .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => BootTestSpec::default(),
    };
    let result = match &a.emulator_cmd {
        None => run_boot_test(&image, &spec),
        Some(cmd) => {
            let secs = a.timeout.unwrap_or(60.0);
            if !(secs.is_finite() && secs > 0.0) {
                return Err(Failure::usage("--timeout must be a positive number of seconds"));
            }
            match run_external_boot(&a.image, cmd, Duration::from_secs_f64(secs)) {
                Ok(t) => evaluate(&t, &spec),
                Err(ExternalBootError::Timeout { seconds, transcript }) => {
                    eprintln!("emulator timed out after {seconds} s");
                    evaluate(&transcript, &spec)
                }
                Err(e) => return Err(Failure::failed(e)),
            }
        }
    };
    print!("{}", result.summary());
    let json = layerci_core::canonical_json(&result);
    match &a.json {
        Some(path) => write_output(path, &json)?,
        None => println!("{json}"),
    }
    if result.passed {
        Ok(())
    } else {
        Err(Failure::failed("boot test failed"))
    }
}

fn parse_event(spec: &str) -> Result<(String, Edit), Failure> {
    let (project, edit) = match spec.split_once(':') {
        None => (spec, Edit::Touch),
        Some((p, "fail")) => (p, Edit::CompileFail),
        Some((p, "noop")) => (p, Edit::Noop),
        Some((_, other)) => return Err(Failure::usage(format!("unknown event modifier {other:?}"))),
    };
    if project.is_empty() {
        return Err(Failure::usage("event names no project"));
    }
    Ok((project.to_owned(), edit))
}

/// The serialized (kebab-case) name of a unit enum variant.
fn wire_name<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::from("?"),
    }
}

fn pipeline_run(a: &PipelineRunArgs) -> Result<(), Failure> {
    let (project, edit) = parse_event(&a.event)?;
    let mut ctx = a.ci.context()?;
    let event_id = a.event_id.clone().unwrap_or_else(|| format!("event-{project}"));
    let ev = ChangeEvent { project, edit, event_id };
    let result = ctx.run_event(&ev).map_err(Failure::usage)?;
    for run in &result.runs {
        println!("{} {}", run.project, wire_name(&run.status));
        for s in &run.stage_results {
            println!("  {}/{} {} cost {}", s.stage, s.job, wire_name(&s.status), s.cost);
        }
    }
    if let Some(path) = &a.out {
        write_output(path, &layerci_core::canonical_json(&result))?;
    }
    if result.passed() {
        Ok(())
    } else {
        Err(Failure::failed("pipeline failed"))
    }
}

fn scenarios_run(a: &ScenariosRunArgs) -> Result<(), Failure> {
    let mut ctx = a.ci.context()?;
    let suite = scenario_suite(&mut ctx).map_err(Failure::failed)?;
    for s in &suite.scenarios {
        let mark = if s.passed { "PASS" } else { "FAIL" };
        println!("{mark} {} (executed_cost {})", s.name, s.executed_cost);
        for m in &s.mismatches {
            println!("  {m}");
        }
    }
    println!("{}/{} scenarios passed", suite.passed, suite.total);
    write_output(&a.out, &layerci_core::canonical_json(&suite))?;
    if suite.all_passed() {
        Ok(())
    } else {
        Err(Failure::failed("scenario verdicts failed"))
    }
}

fn report(a: &ReportArgs) -> Result<(), Failure> {
    require_dir(&a.report_dir, "report")?;
    let table = load_reports(&a.report_dir).map_err(Failure::usage)?;
    if a.json {
        println!("{}", layerci_core::canonical_json(&table));
    } else {
        print!("{}", render_table(&table));
        println!("{}", layerci_core::canonical_json(&table.comparison));
    }
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::CacheServe(a) => cache_serve(a),
        Command::Sync(a) => sync(a),
        Command::Build(a) => build(a),
        Command::BootTest(a) => boot_test(a),
        Command::Pipeline(PipelineCommand::Run(a)) => pipeline_run(a),
        Command::Scenarios(ScenariosCommand::Run(a)) => scenarios_run(a),
        Command::Report(a) => report(a),
    }
}

/// Parses `args` and runs the command, mapping every outcome to 0, 1 or 2.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
