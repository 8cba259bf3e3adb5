// SPDX-License-Identifier: Apache-2.0

//! Layers, component recipes and image recipes.
//!
//! Recipe files are named `<name>_<version>.recipe` and accept the keys
//! `NAME VERSION DEPENDS RDEPENDS SRC COST_FETCH COST_CONFIGURE COST_COMPILE
//! COST_INSTALL COST_PACKAGE KERNEL_MODULE AUTOLOAD`. Image files are
//! `<name>.image` with `IMAGE_NAME` and `INSTALL`. A layer is marked by
//! `conf/layer.conf` carrying `LAYER_NAME` and `LAYER_PRIORITY`.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::keyvalue::{parse_assignments, split_list, Assignment, SyntaxError};
use crate::task::TaskKind;

pub const SRC_SCHEME: &str = "project://";

/// Names usable as recipe, package, image and layer identifiers.
pub fn is_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '+'))
}

fn is_version(s: &str) -> bool {
    !s.is_empty()
        && s.split('.').all(|part| {
            !part.is_empty()
                && part.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '+' | '_'))
        })
}

/// Cost units per component task. Unset costs default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskCosts {
    pub fetch: u64,
    pub configure: u64,
    pub compile: u64,
    pub install: u64,
    pub package: u64,
}

impl Default for TaskCosts {
    fn default() -> Self {
        TaskCosts { fetch: 1, configure: 1, compile: 1, install: 1, package: 1 }
    }
}

impl TaskCosts {
    pub fn get(&self, kind: TaskKind) -> Option<u64> {
        match kind {
            TaskKind::Fetch => Some(self.fetch),
            TaskKind::Configure => Some(self.configure),
            TaskKind::Compile => Some(self.compile),
            TaskKind::Install => Some(self.install),
            TaskKind::Package => Some(self.package),
            TaskKind::Rootfs | TaskKind::ImageComplete => None,
        }
    }

    fn slot(&mut self, kind: TaskKind) -> &mut u64 {
        match kind {
            TaskKind::Fetch => &mut self.fetch,
            TaskKind::Configure => &mut self.configure,
            TaskKind::Compile => &mut self.compile,
            TaskKind::Install => &mut self.install,
            _ => &mut self.package,
        }
    }

    pub fn total(&self) -> u64 {
        self.fetch + self.configure + self.compile + self.install + self.package
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recipe {
    pub name: String,
    pub version: String,
    /// Build-time dependencies (recipe names).
    pub depends: Vec<String>,
    /// Runtime dependencies (package names).
    pub rdepends: Vec<String>,
    /// Project providing the source tree, from `SRC = project://<name>`.
    pub src: Option<String>,
    pub task_costs: TaskCosts,
    pub kernel_module: bool,
    pub autoload: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecipe {
    pub name: String,
    pub install: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecipeError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("line {line}: unknown key {key}")]
    UnknownKey { line: usize, key: String },
    #[error("missing required key {0}")]
    Missing(&'static str),
    #[error("line {line}: invalid value {value:?} for {key}")]
    InvalidValue { line: usize, key: String, value: String },
    #[error("AUTOLOAD requires KERNEL_MODULE = true")]
    AutoloadWithoutKernelModule,
    #[error("INSTALL must list at least one package")]
    EmptyInstall,
    #[error("package {0:?} listed twice in INSTALL")]
    DuplicateInstall(String),
}

fn invalid(a: &Assignment) -> RecipeError {
    RecipeError::InvalidValue { line: a.line, key: a.key.clone(), value: a.value.clone() }
}

fn name_value(a: &Assignment) -> Result<String, RecipeError> {
    if is_name(&a.value) {
        Ok(a.value.clone())
    } else {
        Err(invalid(a))
    }
}

fn name_list(a: &Assignment) -> Result<Vec<String>, RecipeError> {
    let list = split_list(&a.value);
    if list.iter().all(|n| is_name(n)) {
        Ok(list)
    } else {
        Err(invalid(a))
    }
}

fn bool_value(a: &Assignment) -> Result<bool, RecipeError> {
    match a.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(a)),
    }
}

fn cost_key(key: &str) -> Option<TaskKind> {
    let kind = key.strip_prefix("COST_")?;
    TaskKind::COMPONENT_CHAIN.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(kind))
}

pub fn parse_recipe(text: &str) -> Result<Recipe, RecipeError> {
    let mut name = None;
    let mut version = None;
    let mut recipe = Recipe {
        name: String::new(),
        version: String::new(),
        depends: Vec::new(),
        rdepends: Vec::new(),
        src: None,
        task_costs: TaskCosts::default(),
        kernel_module: false,
        autoload: false,
    };
    for a in parse_assignments(text)? {
        match a.key.as_str() {
            "NAME" => name = Some(name_value(&a)?),
            "VERSION" => {
                if !is_version(&a.value) {
                    return Err(invalid(&a));
                }
                version = Some(a.value.clone());
            }
            "DEPENDS" => recipe.depends = name_list(&a)?,
            "RDEPENDS" => recipe.rdepends = name_list(&a)?,
            "SRC" => {
                let project = a.value.strip_prefix(SRC_SCHEME).filter(|p| is_name(p));
                recipe.src = Some(project.ok_or_else(|| invalid(&a))?.to_owned());
            }
            "KERNEL_MODULE" => recipe.kernel_module = bool_value(&a)?,
            "AUTOLOAD" => recipe.autoload = bool_value(&a)?,
            key => match cost_key(key) {
                Some(kind) => {
                    *recipe.task_costs.slot(kind) = a.value.parse().map_err(|_| invalid(&a))?
                }
                None => return Err(RecipeError::UnknownKey { line: a.line, key: a.key }),
            },
        }
    }
    recipe.name = name.ok_or(RecipeError::Missing("NAME"))?;
    recipe.version = version.ok_or(RecipeError::Missing("VERSION"))?;
    if recipe.autoload && !recipe.kernel_module {
        return Err(RecipeError::AutoloadWithoutKernelModule);
    }
    Ok(recipe)
}

impl Recipe {
    /// Canonical text; `parse_recipe(r.to_text()) == r`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "NAME = {}", self.name);
        let _ = writeln!(out, "VERSION = {}", self.version);
        if let Some(src) = &self.src {
            let _ = writeln!(out, "SRC = {SRC_SCHEME}{src}");
        }
        if !self.depends.is_empty() {
            let _ = writeln!(out, "DEPENDS = {}", self.depends.join(" "));
        }
        if !self.rdepends.is_empty() {
            let _ = writeln!(out, "RDEPENDS = {}", self.rdepends.join(" "));
        }
        if self.kernel_module {
            out.push_str("KERNEL_MODULE = true\n");
        }
        if self.autoload {
            out.push_str("AUTOLOAD = true\n");
        }
        for kind in TaskKind::COMPONENT_CHAIN {
            let cost = self.task_costs.get(kind).unwrap_or(1);
            let _ = writeln!(out, "COST_{} = {cost}", kind.as_str().to_ascii_uppercase());
        }
        out
    }

    /// Packages built from this recipe are libraries when the name carries
    /// the conventional `lib` prefix.
    pub fn is_library(&self) -> bool {
        !self.kernel_module && self.name.starts_with("lib")
    }
}

pub fn parse_image(text: &str) -> Result<ImageRecipe, RecipeError> {
    let mut name = None;
    let mut install = None;
    for a in parse_assignments(text)? {
        match a.key.as_str() {
            "IMAGE_NAME" => name = Some(name_value(&a)?),
            "INSTALL" => {
                let list = name_list(&a)?;
                let mut seen = BTreeSet::new();
                for p in &list {
                    if !seen.insert(p.as_str()) {
                        return Err(RecipeError::DuplicateInstall(p.clone()));
                    }
                }
                install = Some(list);
            }
            _ => return Err(RecipeError::UnknownKey { line: a.line, key: a.key }),
        }
    }
    let name = name.ok_or(RecipeError::Missing("IMAGE_NAME"))?;
    let install = install.ok_or(RecipeError::Missing("INSTALL"))?;
    if install.is_empty() {
        return Err(RecipeError::EmptyInstall);
    }
    Ok(ImageRecipe { name, install })
}

impl ImageRecipe {
    pub fn to_text(&self) -> String {
        format!("IMAGE_NAME = {}\nINSTALL = {}\n", self.name, self.install.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerConf {
    pub name: String,
    pub priority: u32,
}

pub fn parse_layer_conf(text: &str) -> Result<LayerConf, RecipeError> {
    let mut name = None;
    let mut priority = None;
    for a in parse_assignments(text)? {
        match a.key.as_str() {
            "LAYER_NAME" => name = Some(name_value(&a)?),
            "LAYER_PRIORITY" => priority = Some(a.value.parse().map_err(|_| invalid(&a))?),
            _ => return Err(RecipeError::UnknownKey { line: a.line, key: a.key }),
        }
    }
    Ok(LayerConf {
        name: name.ok_or(RecipeError::Missing("LAYER_NAME"))?,
        priority: priority.ok_or(RecipeError::Missing("LAYER_PRIORITY"))?,
    })
}

/// A parsed file together with the text it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sourced<T> {
    pub value: T,
    /// Path relative to the workspace root.
    pub path: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub priority: u32,
    pub recipes: BTreeMap<String, Sourced<Recipe>>,
    pub image_recipes: BTreeMap<String, Sourced<ImageRecipe>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayerError {
    #[error("{path}: {source}")]
    Parse { path: String, source: RecipeError },
    #[error("{path}: file name does not match {expected:?}")]
    FileName { path: String, expected: String },
    #[error("recipe {name:?} defined twice in layer {layer:?}")]
    DuplicateRecipe { layer: String, name: String },
    #[error("image {name:?} defined in layers {first:?} and {second:?} of equal priority")]
    DuplicateImage { name: String, first: String, second: String },
    #[error("layer {0:?} appears twice")]
    DuplicateLayer(String),
    #[error("no layers found")]
    NoLayers,
}

fn file_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

/// Raw contents of one layer directory, as read from disk.
#[derive(Debug, Clone, Default)]
pub struct LayerFiles {
    pub conf_path: String,
    pub conf_text: String,
    /// `(path, text)` for every `recipes/**/*.recipe`.
    pub recipes: Vec<(String, String)>,
    /// `(path, text)` for every `images/*.image`.
    pub images: Vec<(String, String)>,
}

impl Layer {
    pub fn from_files(files: LayerFiles) -> Result<Layer, LayerError> {
        let conf = parse_layer_conf(&files.conf_text)
            .map_err(|source| LayerError::Parse { path: files.conf_path.clone(), source })?;
        let mut layer = Layer {
            name: conf.name,
            priority: conf.priority,
            recipes: BTreeMap::new(),
            image_recipes: BTreeMap::new(),
        };
        for (path, text) in files.recipes {
            let recipe = parse_recipe(&text)
                .map_err(|source| LayerError::Parse { path: path.clone(), source })?;
            let expected = format!("{}_{}.recipe", recipe.name, recipe.version);
            if file_name(&path) != expected {
                return Err(LayerError::FileName { path, expected });
            }
            if layer.recipes.contains_key(&recipe.name) {
                return Err(LayerError::DuplicateRecipe { layer: layer.name, name: recipe.name });
            }
            layer.recipes.insert(recipe.name.clone(), Sourced { value: recipe, path, text });
        }
        for (path, text) in files.images {
            let image = parse_image(&text)
                .map_err(|source| LayerError::Parse { path: path.clone(), source })?;
            let expected = format!("{}.image", image.name);
            if file_name(&path) != expected {
                return Err(LayerError::FileName { path, expected });
            }
            if layer.image_recipes.contains_key(&image.name) {
                return Err(LayerError::DuplicateRecipe { layer: layer.name, name: image.name });
            }
            layer.image_recipes.insert(image.name.clone(), Sourced { value: image, path, text });
        }
        Ok(layer)
    }
}

/// Layers in lookup order: descending priority, ties broken by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSet {
    layers: Vec<Layer>,
}

impl LayerSet {
    pub fn new(mut layers: Vec<Layer>) -> Result<LayerSet, LayerError> {
        if layers.is_empty() {
            return Err(LayerError::NoLayers);
        }
        layers.sort_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.name.cmp(&b.name)));
        for pair in layers.windows(2) {
            if pair[0].name == pair[1].name {
                return Err(LayerError::DuplicateLayer(pair[0].name.clone()));
            }
        }
        for (i, a) in layers.iter().enumerate() {
            for b in layers[i + 1..].iter().take_while(|b| b.priority == a.priority) {
                if let Some(name) = a.image_recipes.keys().find(|n| b.image_recipes.contains_key(*n))
                {
                    return Err(LayerError::DuplicateImage {
                        name: name.clone(),
                        first: a.name.clone(),
                        second: b.name.clone(),
                    });
                }
            }
        }
        Ok(LayerSet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// The visible definition of `name`: the first layer in lookup order wins.
    pub fn recipe(&self, name: &str) -> Option<&Sourced<Recipe>> {
        self.layers.iter().find_map(|l| l.recipes.get(name))
    }

    pub fn image(&self, name: &str) -> Option<&Sourced<ImageRecipe>> {
        self.layers.iter().find_map(|l| l.image_recipes.get(name))
    }

    /// Every visible recipe name, ascending.
    pub fn recipe_names(&self) -> BTreeSet<&str> {
        self.layers.iter().flat_map(|l| l.recipes.keys().map(String::as_str)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("package {package:?} (required by {required_by}) has no recipe")]
    Unresolvable { package: String, required_by: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

/// Depth-first closure of `roots` under `edges`, rejecting cycles.
///
/// Returns the visited names ascending. `edges` yields the successors of a
/// node or `None` when the node has no definition.
pub(crate) fn closure<'a, F>(
    roots: &[String],
    root_label: &str,
    mut edges: F,
) -> Result<BTreeSet<String>, ResolveError>
where
    F: FnMut(&str) -> Option<&'a [String]>,
{
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    let mut marks: BTreeMap<String, Mark> = BTreeMap::new();
    let mut sorted_roots: Vec<&String> = roots.iter().collect();
    sorted_roots.sort();
    for root in sorted_roots {
        if marks.contains_key(root.as_str()) {
            continue;
        }
        // (node, successors, next successor index)
        let Some(succ) = edges(root) else {
            return Err(ResolveError::Unresolvable {
                package: root.clone(),
                required_by: root_label.to_owned(),
            });
        };
        let mut stack: Vec<(String, &'a [String], usize)> = alloc::vec![(root.clone(), succ, 0)];
        marks.insert(root.clone(), Mark::Active);
        while let Some((node, succ, idx)) = stack.last_mut() {
            if *idx == succ.len() {
                marks.insert(node.clone(), Mark::Done);
                stack.pop();
                continue;
            }
            let next = succ[*idx].clone();
            *idx += 1;
            let parent = node.clone();
            match marks.get(next.as_str()) {
                Some(Mark::Done) => {}
                Some(Mark::Active) => {
                    let start = stack.iter().position(|(n, _, _)| *n == next).unwrap_or(0);
                    let mut cycle: Vec<String> =
                        stack[start..].iter().map(|(n, _, _)| n.clone()).collect();
                    cycle.push(next);
                    return Err(ResolveError::Cycle(cycle));
                }
                None => {
                    let Some(succ) = edges(&next) else {
                        return Err(ResolveError::Unresolvable { package: next, required_by: parent });
                    };
                    marks.insert(next.clone(), Mark::Active);
                    stack.push((next, succ, 0));
                }
            }
        }
    }
    Ok(marks.into_keys().collect())
}

/// The image's install list closed under runtime dependencies, by name.
pub fn resolve_packages<'a>(
    img: &ImageRecipe,
    layers: &'a LayerSet,
) -> Result<Vec<&'a Recipe>, ResolveError> {
    let label = format!("image {}", img.name);
    let names = closure(&img.install, &label, |n| {
        layers.recipe(n).map(|r| r.value.rdepends.as_slice())
    })?;
    Ok(names
        .iter()
        .map(|n| &layers.recipe(n).expect("closure only yields defined recipes").value)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const HELLOWORLD: &str = "# Application linked against libhelloworld.\nNAME = helloworld\nVERSION = 1.0\nSRC = project://helloworld\nDEPENDS = libhelloworld\nRDEPENDS = libhelloworld\nCOST_COMPILE = 15\n";

    fn recipe(name: &str, rdepends: &[&str]) -> Sourced<Recipe> {
        let mut text = format!("NAME = {name}\nVERSION = 1\n");
        if !rdepends.is_empty() {
            text.push_str(&format!("RDEPENDS = {}\n", rdepends.join(" ")));
        }
        Sourced {
            value: parse_recipe(&text).unwrap(),
            path: format!("recipes/{name}_1.recipe"),
            text,
        }
    }

    fn layer(name: &str, priority: u32, recipes: Vec<Sourced<Recipe>>) -> Layer {
        Layer {
            name: name.into(),
            priority,
            recipes: recipes.into_iter().map(|r| (r.value.name.clone(), r)).collect(),
            image_recipes: BTreeMap::new(),
        }
    }

    fn image(install: &[&str]) -> ImageRecipe {
        ImageRecipe { name: "img".into(), install: install.iter().map(|s| (*s).into()).collect() }
    }

    #[test]
    fn helloworld_links_against_library() {
        let r = parse_recipe(HELLOWORLD).unwrap();
        assert_eq!(r.depends, ["libhelloworld"]);
        assert_eq!(r.rdepends, ["libhelloworld"]);
        assert_eq!(r.src.as_deref(), Some("helloworld"));
        assert_eq!(r.task_costs.compile, 15);
        assert_eq!(r.task_costs.fetch, 1);
        assert!(!r.is_library());
    }

    #[test]
    fn minimal_recipe_defaults() {
        let r = parse_recipe("NAME = a\nVERSION = 1\n").unwrap();
        assert!(r.depends.is_empty() && r.rdepends.is_empty() && r.src.is_none());
        assert_eq!(r.task_costs, TaskCosts::default());
        assert!(!r.kernel_module && !r.autoload);
    }

    #[test]
    fn recipe_validation_errors() {
        assert_eq!(
            parse_recipe("NAME = a\nVERSION = 1\nAUTOLOAD = true\n"),
            Err(RecipeError::AutoloadWithoutKernelModule)
        );
        assert_eq!(parse_recipe("VERSION = 1\n"), Err(RecipeError::Missing("NAME")));
        assert_eq!(parse_recipe("NAME = a\n"), Err(RecipeError::Missing("VERSION")));
        assert!(matches!(
            parse_recipe("NAME = a\nVERSION = 1\nLICENSE = MIT\n"),
            Err(RecipeError::UnknownKey { line: 3, .. })
        ));
        assert!(matches!(
            parse_recipe("NAME = a\nVERSION = 1\nSRC = git://x\n"),
            Err(RecipeError::InvalidValue { .. })
        ));
        assert!(matches!(
            parse_recipe("NAME = a\nVERSION = 1\nCOST_COMPILE = -3\n"),
            Err(RecipeError::InvalidValue { .. })
        ));
    }

    #[test]
    fn image_validation() {
        let img = parse_image("IMAGE_NAME = core-image-minimal\nINSTALL = a b\n").unwrap();
        assert_eq!(img.install, ["a", "b"]);
        assert_eq!(parse_image(&img.to_text()).unwrap(), img);
        assert_eq!(parse_image("IMAGE_NAME = x\nINSTALL =\n"), Err(RecipeError::EmptyInstall));
        assert_eq!(
            parse_image("IMAGE_NAME = x\nINSTALL = a a\n"),
            Err(RecipeError::DuplicateInstall("a".into()))
        );
    }

    #[test]
    fn higher_priority_shadows() {
        let mut low = recipe("x", &[]);
        low.value.version = "1".into();
        let mut high = recipe("x", &[]);
        high.value.version = "2".into();
        let ls = LayerSet::new(vec![layer("meta-low", 5, vec![low]), layer("meta-high", 10, vec![high])])
            .unwrap();
        assert_eq!(ls.recipe("x").unwrap().value.version, "2");
        assert_eq!(ls.layers()[0].name, "meta-high");
    }

    #[test]
    fn zero_layers_is_an_error() {
        assert_eq!(LayerSet::new(Vec::new()), Err(LayerError::NoLayers));
    }

    #[test]
    fn duplicate_image_at_equal_priority() {
        let mut a = layer("meta-a", 5, Vec::new());
        let mut b = layer("meta-b", 5, Vec::new());
        for l in [&mut a, &mut b] {
            l.image_recipes.insert(
                "img".into(),
                Sourced { value: image(&["x"]), path: "images/img.image".into(), text: String::new() },
            );
        }
        assert!(matches!(LayerSet::new(vec![a, b]), Err(LayerError::DuplicateImage { .. })));
    }

    #[test]
    fn closure_follows_rdepends() {
        let ls = LayerSet::new(vec![layer(
            "meta-custom",
            6,
            vec![recipe("libhelloworld", &[]), recipe("helloworld", &["libhelloworld"]), recipe("hello-mod", &[])],
        )])
        .unwrap();
        let names = |img: &ImageRecipe| -> Vec<String> {
            resolve_packages(img, &ls).unwrap().iter().map(|r| r.name.clone()).collect()
        };
        assert_eq!(names(&image(&["helloworld", "hello-mod"])), ["hello-mod", "helloworld", "libhelloworld"]);
        assert_eq!(names(&image(&["libhelloworld"])), ["libhelloworld"]);
    }

    #[test]
    fn rdepends_cycle_and_missing() {
        let ls = LayerSet::new(vec![layer("meta", 1, vec![recipe("a", &["b"]), recipe("b", &["a"]), recipe("c", &["zz"])])])
            .unwrap();
        assert_eq!(
            resolve_packages(&image(&["a"]), &ls),
            Err(ResolveError::Cycle(vec!["a".into(), "b".into(), "a".into()]))
        );
        assert_eq!(
            resolve_packages(&image(&["c"]), &ls),
            Err(ResolveError::Unresolvable { package: "zz".into(), required_by: "c".into() })
        );
        assert!(matches!(resolve_packages(&image(&["nope"]), &ls), Err(ResolveError::Unresolvable { .. })));
    }
}
