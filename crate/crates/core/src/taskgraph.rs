// SPDX-License-Identifier: Apache-2.0

//! Per-task build graph and content-derived task signatures.
//!
//! Each component recipe expands to `fetch → configure → compile → install →
//! package`; an image adds `rootfs` (after every package in its closure) and
//! `image_complete`. A recipe's `configure` waits on the `package` task of
//! each build-time dependency.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest as _, Sha256};

use crate::digest::Digest;
use crate::keyvalue::is_ignorable;
use crate::layer::{closure, resolve_packages, ImageRecipe, LayerSet, Recipe, ResolveError};
use crate::task::{TaskId, TaskKind};

pub const ROOTFS_COST: u64 = 2;
pub const IMAGE_COMPLETE_COST: u64 = 1;

/// What the graph needs to know about a project's checked-out sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceInfo {
    pub digest: Digest,
    /// The tree contains a line consisting solely of `COMPILE_FAIL`.
    pub compile_fails: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    /// SHA-256 of the full recipe (or image) file text. Feeds the taskhash.
    pub recipe_digest: Digest,
    /// SHA-256 of the recipe text without comments and `COST_*` lines.
    /// Feeds the task output instead of `recipe_digest`.
    pub content_digest: Digest,
    /// Source tree digest; only set on fetch tasks of recipes with `SRC`.
    pub source_digest: Option<Digest>,
    pub cost: u64,
    pub cacheable: bool,
    /// Compile task of a recipe whose sources carry the failure sentinel.
    pub fails: bool,
}

impl Task {
    pub fn recipe(&self) -> &str {
        self.id.recipe()
    }

    pub fn kind(&self) -> TaskKind {
        self.id.kind()
    }
}

/// Recipe metadata carried into the image artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageMeta {
    pub name: String,
    pub version: String,
    pub rdepends: Vec<String>,
    pub kernel_module: bool,
    pub autoload: bool,
    pub library: bool,
}

impl From<&Recipe> for PackageMeta {
    fn from(r: &Recipe) -> Self {
        PackageMeta {
            name: r.name.clone(),
            version: r.version.clone(),
            rdepends: r.rdepends.clone(),
            kernel_module: r.kernel_module,
            autoload: r.autoload,
            library: r.is_library(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTarget {
    pub name: String,
    /// The image's package closure, ascending.
    pub packages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskGraph {
    tasks: BTreeMap<TaskId, Task>,
    /// dependee → its dependencies
    deps: BTreeMap<TaskId, BTreeSet<TaskId>>,
    packages: BTreeMap<String, PackageMeta>,
    image: Option<ImageTarget>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error("recipe {recipe:?} takes sources from project {project:?}, which is not in the workspace")]
    MissingSource { recipe: String, project: String },
    #[error("edge references unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task graph has a cycle through {0}")]
    Cycle(TaskId),
}

/// Recipe text as seen by task outputs: comments, blank lines and `COST_*`
/// assignments removed, each remaining line trimmed and `\n`-terminated.
pub fn content_text(text: &str) -> String {
    let mut out = String::new();
    for line in text.lines() {
        if is_ignorable(line) {
            continue;
        }
        let line = line.trim();
        let key = line.split('=').next().unwrap_or("").trim();
        if key.starts_with("COST_") {
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

impl TaskGraph {
    /// Builds a graph from explicit parts; every edge endpoint must be a task.
    pub fn from_parts(
        tasks: impl IntoIterator<Item = Task>,
        edges: impl IntoIterator<Item = (TaskId, TaskId)>,
    ) -> Result<TaskGraph, GraphError> {
        let mut g = TaskGraph::default();
        for t in tasks {
            g.deps.entry(t.id.clone()).or_default();
            g.tasks.insert(t.id.clone(), t);
        }
        for (from, to) in edges {
            for id in [&from, &to] {
                if !g.tasks.contains_key(id) {
                    return Err(GraphError::UnknownTask(id.clone()));
                }
            }
            g.deps.entry(from).or_default().insert(to);
        }
        Ok(g)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn task(&self, id: &TaskId) -> Option<&Task> {
        self.tasks.get(id)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Dependencies of `id`, ascending.
    pub fn dependencies(&self, id: &TaskId) -> impl Iterator<Item = &TaskId> {
        self.deps.get(id).into_iter().flatten()
    }

    /// All `(dependee, dependency)` pairs.
    pub fn edges(&self) -> impl Iterator<Item = (&TaskId, &TaskId)> {
        self.deps.iter().flat_map(|(from, tos)| tos.iter().map(move |to| (from, to)))
    }

    pub fn has_edge(&self, from: &TaskId, to: &TaskId) -> bool {
        self.deps.get(from).is_some_and(|d| d.contains(to))
    }

    pub fn package(&self, name: &str) -> Option<&PackageMeta> {
        self.packages.get(name)
    }

    pub fn image(&self) -> Option<&ImageTarget> {
        self.image.as_ref()
    }

    fn add_recipe(
        &mut self,
        recipe: &Recipe,
        text: &str,
        sources: &BTreeMap<String, SourceInfo>,
    ) -> Result<(), GraphError> {
        let source = match &recipe.src {
            Some(project) => Some(*sources.get(project).ok_or_else(|| {
                GraphError::MissingSource { recipe: recipe.name.clone(), project: project.clone() }
            })?),
            None => None,
        };
        let recipe_digest = Digest::of(text.as_bytes());
        let content_digest = Digest::of(content_text(text).as_bytes());
        let mut prev: Option<TaskId> = None;
        for kind in TaskKind::COMPONENT_CHAIN {
            let id = TaskId::new(&recipe.name, kind);
            self.tasks.insert(
                id.clone(),
                Task {
                    id: id.clone(),
                    recipe_digest,
                    content_digest,
                    source_digest: if kind == TaskKind::Fetch { source.map(|s| s.digest) } else { None },
                    cost: recipe.task_costs.get(kind).unwrap_or(1),
                    cacheable: true,
                    fails: kind == TaskKind::Compile && source.is_some_and(|s| s.compile_fails),
                },
            );
            let deps = self.deps.entry(id.clone()).or_default();
            if let Some(p) = prev {
                deps.insert(p);
            }
            prev = Some(id);
        }
        let configure = TaskId::new(&recipe.name, TaskKind::Configure);
        for dep in &recipe.depends {
            self.deps
                .entry(configure.clone())
                .or_default()
                .insert(TaskId::new(dep, TaskKind::Package));
        }
        self.packages.insert(recipe.name.clone(), PackageMeta::from(recipe));
        Ok(())
    }

    fn add_recipes_with_depends(
        &mut self,
        roots: &[String],
        label: &str,
        layers: &LayerSet,
        sources: &BTreeMap<String, SourceInfo>,
    ) -> Result<(), GraphError> {
        let names = closure(roots, label, |n| layers.recipe(n).map(|r| r.value.depends.as_slice()))?;
        for name in &names {
            let r = layers.recipe(name).expect("closure only yields defined recipes");
            self.add_recipe(&r.value, &r.text, sources)?;
        }
        Ok(())
    }
}

/// Graph for building `img`: its runtime closure plus build-time dependencies.
pub fn build_task_graph(
    img: &ImageRecipe,
    layers: &LayerSet,
    sources: &BTreeMap<String, SourceInfo>,
) -> Result<TaskGraph, GraphError> {
    let packages: Vec<String> =
        resolve_packages(img, layers)?.into_iter().map(|r| r.name.clone()).collect();
    let mut g = TaskGraph::default();
    g.add_recipes_with_depends(&packages, &alloc::format!("image {}", img.name), layers, sources)?;

    let image_text = layers.image(&img.name).map(|s| s.text.clone()).unwrap_or_else(|| img.to_text());
    let recipe_digest = Digest::of(image_text.as_bytes());
    let content_digest = Digest::of(content_text(&image_text).as_bytes());
    let rootfs = TaskId::new(&img.name, TaskKind::Rootfs);
    let complete = TaskId::new(&img.name, TaskKind::ImageComplete);
    for (id, cost, cacheable) in [
        (rootfs.clone(), ROOTFS_COST, true),
        (complete.clone(), IMAGE_COMPLETE_COST, false),
    ] {
        g.tasks.insert(
            id.clone(),
            Task {
                id,
                recipe_digest,
                content_digest,
                source_digest: None,
                cost,
                cacheable,
                fails: false,
            },
        );
    }
    g.deps.insert(
        rootfs.clone(),
        packages.iter().map(|p| TaskId::new(p, TaskKind::Package)).collect(),
    );
    g.deps.insert(complete, BTreeSet::from([rootfs]));
    g.image = Some(ImageTarget { name: img.name.clone(), packages });
    topological_schedule(&g)?;
    Ok(g)
}

/// Graph for building the named recipes (and their build-time dependencies)
/// without composing an image.
pub fn build_recipe_graph(
    recipes: &[String],
    layers: &LayerSet,
    sources: &BTreeMap<String, SourceInfo>,
) -> Result<TaskGraph, GraphError> {
    let mut g = TaskGraph::default();
    g.add_recipes_with_depends(recipes, "build request", layers, sources)?;
    topological_schedule(&g)?;
    Ok(g)
}

/// SHA-256 of `task-id\n recipe-digest\n source-digest-or-"-"\n` followed by
/// one dependency unihash per line. `dep_unihashes` must be ordered by
/// dependency task-id ascending.
pub fn task_hash(task: &Task, dep_unihashes: &[Digest]) -> Digest {
    let mut h = Sha256::new();
    h.update(task.id.as_str().as_bytes());
    h.update(b"\n");
    h.update(task.recipe_digest.to_hex().as_bytes());
    h.update(b"\n");
    match &task.source_digest {
        Some(d) => h.update(d.to_hex().as_bytes()),
        None => h.update(b"-"),
    }
    h.update(b"\n");
    for u in dep_unihashes {
        h.update(u.to_hex().as_bytes());
        h.update(b"\n");
    }
    let out: [u8; 32] = h.finalize().into();
    Digest::from(out)
}

/// Longest-path strata: level 0 holds tasks without dependencies, and every
/// task sits one level above its deepest dependency. Ids within a level are
/// ascending.
pub fn topological_schedule(g: &TaskGraph) -> Result<Vec<Vec<TaskId>>, GraphError> {
    let mut pending: BTreeMap<&TaskId, usize> = BTreeMap::new();
    let mut dependents: BTreeMap<&TaskId, Vec<&TaskId>> = BTreeMap::new();
    for id in g.tasks.keys() {
        pending.insert(id, 0);
    }
    for (from, to) in g.edges() {
        if !g.tasks.contains_key(to) {
            return Err(GraphError::UnknownTask(to.clone()));
        }
        *pending.get_mut(from).ok_or_else(|| GraphError::UnknownTask(from.clone()))? += 1;
        dependents.entry(to).or_default().push(from);
    }
    let mut levels: Vec<Vec<TaskId>> = Vec::new();
    let mut current: BTreeSet<&TaskId> =
        pending.iter().filter(|(_, n)| **n == 0).map(|(id, _)| *id).collect();
    let mut placed = 0;
    while !current.is_empty() {
        let mut next = BTreeSet::new();
        for id in &current {
            for dependent in dependents.get(id).into_iter().flatten() {
                let n = pending.get_mut(dependent).expect("dependent is a task");
                *n -= 1;
                if *n == 0 {
                    next.insert(*dependent);
                }
            }
        }
        placed += current.len();
        levels.push(current.into_iter().cloned().collect());
        current = next;
    }
    if placed != g.tasks.len() {
        let stuck = pending.iter().find(|(_, n)| **n > 0).map(|(id, _)| (*id).clone());
        return Err(GraphError::Cycle(stuck.expect("some task is unplaced")));
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn bare(id: &str) -> Task {
        Task {
            id: id.parse().unwrap(),
            recipe_digest: Digest::of(b"r"),
            content_digest: Digest::of(b"c"),
            source_digest: None,
            cost: 1,
            cacheable: true,
            fails: false,
        }
    }

    fn tid(s: &str) -> TaskId {
        s.parse().unwrap()
    }

    #[test]
    fn content_text_drops_comments_and_costs() {
        let text = "# c\nNAME = a\n  COST_COMPILE = 9\n\nVERSION = 1  \n";
        assert_eq!(content_text(text), "NAME = a\nVERSION = 1\n");
    }

    #[test]
    fn chain_schedules_to_singletons() {
        let ids = ["a:fetch", "a:configure", "a:compile", "a:install", "a:package"];
        let edges = ids.windows(2).map(|w| (tid(w[1]), tid(w[0])));
        let g = TaskGraph::from_parts(ids.iter().map(|i| bare(i)), edges).unwrap();
        let levels = topological_schedule(&g).unwrap();
        assert_eq!(levels.len(), 5);
        assert!(levels.iter().all(|l| l.len() == 1));
        assert_eq!(levels[0][0], tid("a:fetch"));
    }

    #[test]
    fn empty_graph_has_no_levels() {
        assert!(topological_schedule(&TaskGraph::default()).unwrap().is_empty());
    }

    #[test]
    fn cycle_is_reported() {
        let g = TaskGraph::from_parts(
            [bare("a:fetch"), bare("b:fetch")],
            [(tid("a:fetch"), tid("b:fetch")), (tid("b:fetch"), tid("a:fetch"))],
        )
        .unwrap();
        assert!(matches!(topological_schedule(&g), Err(GraphError::Cycle(_))));
    }

    #[test]
    fn unknown_edge_endpoint() {
        assert_eq!(
            TaskGraph::from_parts([bare("a:fetch")], [(tid("a:fetch"), tid("b:fetch"))]),
            Err(GraphError::UnknownTask(tid("b:fetch")))
        );
    }

    #[test]
    fn task_hash_depends_on_each_input() {
        let t = bare("a:configure");
        let d1 = Digest::of(b"1");
        let d2 = Digest::of(b"2");
        assert_eq!(task_hash(&t, &[d1]), task_hash(&t, &[d1]));
        assert_ne!(task_hash(&t, &[d1]), task_hash(&t, &[d2]));
        assert_ne!(task_hash(&t, &[d1]), task_hash(&bare("b:configure"), &[d1]));
        let mut with_src = t.clone();
        with_src.source_digest = Some(d1);
        assert_ne!(task_hash(&t, &[]), task_hash(&with_src, &[]));
    }

    #[test]
    fn levels_respect_diamond() {
        let g = TaskGraph::from_parts(
            ["a:fetch", "b:fetch", "c:fetch", "d:fetch"].map(bare),
            vec![
                (tid("b:fetch"), tid("a:fetch")),
                (tid("c:fetch"), tid("a:fetch")),
                (tid("d:fetch"), tid("b:fetch")),
                (tid("d:fetch"), tid("c:fetch")),
            ],
        )
        .unwrap();
        let levels = topological_schedule(&g).unwrap();
        assert_eq!(levels, vec![vec![tid("a:fetch")], vec![tid("b:fetch"), tid("c:fetch")], vec![tid("d:fetch")]]);
    }
}
