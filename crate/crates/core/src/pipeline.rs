// SPDX-License-Identifier: Apache-2.0

//! Per-repository pipelines and downstream trigger propagation.
//!
//! A change to a project runs that project's pipeline, then the pipelines of
//! every project reachable over `triggers`, in topological order. When a run
//! fails, every project downstream of it is recorded as not triggered.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    ComponentBuild,
    ImageBuild,
    BootTest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub name: String,
    pub stage: String,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub project: String,
    pub stages: Vec<String>,
    pub jobs: Vec<JobConfig>,
    #[serde(default)]
    pub triggers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Json(String),
    #[error("{project}: {message}")]
    Invalid { project: String, message: String },
    #[error("{project}: trigger names unknown project {target:?}")]
    UnknownTrigger { project: String, target: String },
    #[error("unknown project {0:?}")]
    UnknownProject(String),
    #[error("trigger graph has a cycle through {0:?}")]
    Cycle(String),
    #[error("duplicate pipeline config for {0:?}")]
    DuplicateProject(String),
}

fn invalid(project: &str, message: String) -> PipelineError {
    PipelineError::Invalid { project: project.to_owned(), message }
}

impl PipelineConfig {
    pub fn has_action(&self, action: Action) -> bool {
        self.jobs.iter().any(|j| j.action == action)
    }

    /// Jobs in execution order: by stage, then as listed.
    pub fn ordered_jobs(&self) -> Vec<&JobConfig> {
        self.stages
            .iter()
            .flat_map(|s| self.jobs.iter().filter(move |j| &j.stage == s))
            .collect()
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let p = &self.project;
        if !crate::layer::is_name(p) {
            return Err(invalid(p, format!("invalid project name {p:?}")));
        }
        if self.stages.is_empty() {
            return Err(invalid(p, "no stages".into()));
        }
        let mut stages = BTreeSet::new();
        for s in &self.stages {
            if s.is_empty() || !stages.insert(s.as_str()) {
                return Err(invalid(p, format!("invalid or duplicate stage {s:?}")));
            }
        }
        let mut names = BTreeSet::new();
        for j in &self.jobs {
            if j.name.is_empty() || !names.insert(j.name.as_str()) {
                return Err(invalid(p, format!("invalid or duplicate job name {:?}", j.name)));
            }
            if !stages.contains(j.stage.as_str()) {
                return Err(invalid(p, format!("job {:?} uses undeclared stage {:?}", j.name, j.stage)));
            }
        }
        let component = self.has_action(Action::ComponentBuild);
        let image = self.has_action(Action::ImageBuild);
        let boot = self.has_action(Action::BootTest);
        if component && (image || boot) {
            return Err(invalid(
                p,
                "image-build and boot-test jobs belong to the manifest project, not a component".into(),
            ));
        }
        if boot {
            let order = self.ordered_jobs();
            let first_build = order.iter().position(|j| j.action == Action::ImageBuild);
            let first_boot = order.iter().position(|j| j.action == Action::BootTest);
            if first_build.is_none() || first_build > first_boot {
                return Err(invalid(p, "boot-test requires an earlier image-build job".into()));
            }
        }
        let mut seen = BTreeSet::new();
        for t in &self.triggers {
            if t == p || !seen.insert(t.as_str()) {
                return Err(invalid(p, format!("invalid or duplicate trigger {t:?}")));
            }
        }
        Ok(())
    }
}

pub fn parse_pipeline_config(text: &str) -> Result<PipelineConfig, PipelineError> {
    let cfg: PipelineConfig =
        serde_json::from_str(text).map_err(|e| PipelineError::Json(format!("{e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Which projects each project's pipeline triggers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepoGraph {
    triggers: BTreeMap<String, BTreeSet<String>>,
}

impl RepoGraph {
    pub fn new<I, S, T>(edges: I) -> Result<RepoGraph, PipelineError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: IntoIterator,
        T::Item: Into<String>,
    {
        let mut triggers: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (p, ts) in edges {
            let set = triggers.entry(p.into()).or_default();
            set.extend(ts.into_iter().map(Into::into));
        }
        for (p, ts) in &triggers {
            if let Some(t) = ts.iter().find(|t| !triggers.contains_key(*t)) {
                return Err(PipelineError::UnknownTrigger { project: p.clone(), target: t.clone() });
            }
        }
        let g = RepoGraph { triggers };
        g.check_acyclic()?;
        Ok(g)
    }

    /// Assembles the graph from every project's config. Image and boot jobs
    /// are only accepted in `manifest_project`.
    pub fn from_configs<'a>(
        configs: impl IntoIterator<Item = &'a PipelineConfig>,
        manifest_project: &str,
    ) -> Result<RepoGraph, PipelineError> {
        let mut edges: Vec<(String, Vec<String>)> = Vec::new();
        for c in configs {
            if edges.iter().any(|(p, _)| p == &c.project) {
                return Err(PipelineError::DuplicateProject(c.project.clone()));
            }
            let manifest_only = c.has_action(Action::ImageBuild) || c.has_action(Action::BootTest);
            if manifest_only && c.project != manifest_project {
                return Err(invalid(
                    &c.project,
                    format!("image-build and boot-test jobs are only valid in {manifest_project:?}"),
                ));
            }
            edges.push((c.project.clone(), c.triggers.clone()));
        }
        RepoGraph::new(edges)
    }

    pub fn projects(&self) -> impl Iterator<Item = &str> {
        self.triggers.keys().map(String::as_str)
    }

    pub fn contains(&self, project: &str) -> bool {
        self.triggers.contains_key(project)
    }

    pub fn triggers(&self, project: &str) -> impl Iterator<Item = &str> {
        self.triggers.get(project).into_iter().flatten().map(String::as_str)
    }

    fn check_acyclic(&self) -> Result<(), PipelineError> {
        let mut indegree: BTreeMap<&str, usize> = self.projects().map(|p| (p, 0)).collect();
        for ts in self.triggers.values() {
            for t in ts {
                *indegree.get_mut(t.as_str()).expect("validated trigger") += 1;
            }
        }
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(p, _)| *p).collect();
        let mut done = 0;
        while let Some(p) = ready.pop() {
            done += 1;
            for t in self.triggers(p) {
                let d = indegree.get_mut(t).expect("validated trigger");
                *d -= 1;
                if *d == 0 {
                    ready.push(t);
                }
            }
        }
        if done != self.triggers.len() {
            let stuck = indegree.iter().find(|(_, d)| **d > 0).map(|(p, _)| (*p).to_owned());
            return Err(PipelineError::Cycle(stuck.unwrap_or_default()));
        }
        Ok(())
    }

    /// Projects reachable from `project`, including itself.
    pub fn reachable(&self, project: &str) -> BTreeSet<&str> {
        let mut seen = BTreeSet::new();
        let mut stack = alloc::vec![project];
        while let Some(p) = stack.pop() {
            if let Some((k, _)) = self.triggers.get_key_value(p) {
                if seen.insert(k.as_str()) {
                    stack.extend(self.triggers(p));
                }
            }
        }
        seen
    }
}

/// The projects whose pipelines a change to `project` runs, source first,
/// in topological order (ties by name).
pub fn plan_propagation(graph: &RepoGraph, project: &str) -> Result<Vec<String>, PipelineError> {
    if !graph.contains(project) {
        return Err(PipelineError::UnknownProject(project.to_owned()));
    }
    let reach = graph.reachable(project);
    let mut indegree: BTreeMap<&str, usize> = reach.iter().map(|p| (*p, 0)).collect();
    for p in &reach {
        for t in graph.triggers(p) {
            *indegree.get_mut(t).expect("reachable") += 1;
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(p, _)| *p).collect();
    let mut plan = Vec::with_capacity(reach.len());
    while let Some(p) = ready.pop_first() {
        plan.push(p.to_owned());
        for t in graph.triggers(p) {
            let d = indegree.get_mut(t).expect("reachable");
            *d -= 1;
            if *d == 0 {
                ready.insert(t);
            }
        }
    }
    if plan.len() != reach.len() {
        return Err(PipelineError::Cycle(project.to_owned()));
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Passed,
    Failed,
    NotTriggered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: String,
    pub job: String,
    pub status: RunStatus,
    pub cost: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub event_id: String,
    pub project: String,
    pub status: RunStatus,
    pub stage_results: Vec<StageResult>,
    pub triggered_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobOutcome {
    pub passed: bool,
    pub cost: u64,
    pub detail: String,
}

/// Executes individual jobs on behalf of [`run_plan`].
pub trait JobRunner {
    /// Called once per run before its first job.
    fn begin_run(&mut self, _project: &str) {}

    fn run_job(&mut self, project: &str, job: &JobConfig) -> JobOutcome;
}

/// Runs the pipelines of `plan` in order, truncating downstream of failures.
pub fn run_plan(
    event_id: &str,
    plan: &[String],
    graph: &RepoGraph,
    configs: &BTreeMap<String, PipelineConfig>,
    runner: &mut dyn JobRunner,
) -> Vec<PipelineRun> {
    let mut runs: Vec<PipelineRun> = Vec::with_capacity(plan.len());
    for project in plan {
        let upstream: Vec<&PipelineRun> = runs
            .iter()
            .filter(|r| graph.triggers(&r.project).any(|t| t == project))
            .collect();
        let triggered_by = upstream.first().map(|r| r.project.clone());
        if upstream.iter().any(|r| r.status != RunStatus::Passed) {
            runs.push(PipelineRun {
                event_id: event_id.to_owned(),
                project: project.clone(),
                status: RunStatus::NotTriggered,
                stage_results: Vec::new(),
                triggered_by,
            });
            continue;
        }
        let mut stage_results = Vec::new();
        let status = match configs.get(project) {
            None => {
                stage_results.push(StageResult {
                    stage: "setup".into(),
                    job: "load-config".into(),
                    status: RunStatus::Failed,
                    cost: 0,
                    detail: format!("no pipeline config for {project}"),
                });
                RunStatus::Failed
            }
            Some(cfg) => {
                runner.begin_run(project);
                let mut status = RunStatus::Passed;
                for job in cfg.ordered_jobs() {
                    let out = runner.run_job(project, job);
                    let job_status = if out.passed { RunStatus::Passed } else { RunStatus::Failed };
                    stage_results.push(StageResult {
                        stage: job.stage.clone(),
                        job: job.name.clone(),
                        status: job_status,
                        cost: out.cost,
                        detail: out.detail,
                    });
                    if !out.passed {
                        status = RunStatus::Failed;
                        break;
                    }
                }
                status
            }
        };
        runs.push(PipelineRun {
            event_id: event_id.to_owned(),
            project: project.clone(),
            status,
            stage_results,
            triggered_by,
        });
    }
    runs
}

/// Statuses a change to `source` should produce: everything passes, or the
/// source fails and everything downstream is not triggered.
pub fn expected_statuses(plan: &[String], source_fails: bool) -> BTreeMap<String, RunStatus> {
    plan.iter()
        .enumerate()
        .map(|(i, p)| {
            let status = match (source_fails, i) {
                (false, _) => RunStatus::Passed,
                (true, 0) => RunStatus::Failed,
                (true, _) => RunStatus::NotTriggered,
            };
            (p.clone(), status)
        })
        .collect()
}
