// SPDX-License-Identifier: Apache-2.0

//! Deterministic task execution.
//!
//! A task's output blob is a canonical record of what it consumed:
//!
//! ```text
//! task <task-id>
//! recipe <content digest>
//! source <source tree digest | ->
//! dep <dependency task-id> <outhash>     (one per dependency, ascending)
//! ```
//!
//! The recipe line uses the comment- and cost-free recipe digest, so edits
//! that only touch comments or `COST_*` change taskhashes but not outputs.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::digest::Digest;
use crate::task::TaskId;
use crate::taskgraph::Task;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskOutput {
    pub blob: Vec<u8>,
    pub outhash: Digest,
    pub cost_spent: u64,
}

impl TaskOutput {
    pub fn from_blob(blob: Vec<u8>, cost_spent: u64) -> Self {
        let outhash = Digest::of(&blob);
        TaskOutput { blob, outhash, cost_spent }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunError {
    #[error("{0}: compilation failed (COMPILE_FAIL marker in sources)")]
    CompileFailed(TaskId),
    #[error("{task}: output of dependency {dependency} is not available")]
    MissingDependencyOutput { task: TaskId, dependency: TaskId },
}

/// Runs `task` given the outhashes of its dependencies.
pub fn run_task(
    task: &Task,
    dependencies: &[TaskId],
    dep_outhashes: &BTreeMap<TaskId, Digest>,
) -> Result<TaskOutput, RunError> {
    if task.fails {
        return Err(RunError::CompileFailed(task.id.clone()));
    }
    let mut deps: Vec<&TaskId> = dependencies.iter().collect();
    deps.sort();
    deps.dedup();
    let mut record = String::new();
    let _ = writeln!(record, "task {}", task.id);
    let _ = writeln!(record, "recipe {}", task.content_digest);
    match &task.source_digest {
        Some(d) => {
            let _ = writeln!(record, "source {d}");
        }
        None => record.push_str("source -\n"),
    }
    for dep in deps {
        let outhash = dep_outhashes.get(dep).ok_or_else(|| RunError::MissingDependencyOutput {
            task: task.id.clone(),
            dependency: dep.clone(),
        })?;
        let _ = writeln!(record, "dep {dep} {outhash}");
    }
    Ok(TaskOutput::from_blob(record.into_bytes(), task.cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::TaskKind;

    fn task(kind: TaskKind) -> Task {
        Task {
            id: TaskId::new("a", kind),
            recipe_digest: Digest::of(b"full"),
            content_digest: Digest::of(b"content"),
            source_digest: None,
            cost: 7,
            cacheable: true,
            fails: false,
        }
    }

    #[test]
    fn deterministic_and_dependency_sensitive() {
        let t = task(TaskKind::Configure);
        let dep = TaskId::new("a", TaskKind::Fetch);
        let mut outs = BTreeMap::new();
        outs.insert(dep.clone(), Digest::of(b"o1"));
        let a = run_task(&t, core::slice::from_ref(&dep), &outs).unwrap();
        let b = run_task(&t, core::slice::from_ref(&dep), &outs).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cost_spent, 7);
        assert_eq!(a.outhash, Digest::of(&a.blob));
        outs.insert(dep.clone(), Digest::of(b"o2"));
        assert_ne!(run_task(&t, &[dep], &outs).unwrap().outhash, a.outhash);
    }

    #[test]
    fn ignores_full_recipe_digest() {
        let t = task(TaskKind::Fetch);
        let mut edited = t.clone();
        edited.recipe_digest = Digest::of(b"edited comment");
        let none = BTreeMap::new();
        assert_eq!(run_task(&t, &[], &none).unwrap(), run_task(&edited, &[], &none).unwrap());
    }

    #[test]
    fn sentinel_and_missing_dependency() {
        let mut t = task(TaskKind::Compile);
        t.fails = true;
        assert_eq!(run_task(&t, &[], &BTreeMap::new()), Err(RunError::CompileFailed(t.id.clone())));
        let t = task(TaskKind::Compile);
        let dep = TaskId::new("a", TaskKind::Configure);
        assert!(matches!(
            run_task(&t, &[dep], &BTreeMap::new()),
            Err(RunError::MissingDependencyOutput { .. })
        ));
    }
}
