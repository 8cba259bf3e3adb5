// SPDX-License-Identifier: Apache-2.0

//! The coordination manifest and the workspace it pins.
//!
//! Grammar (`manifest.xml`):
//!
//! ```text
//! <manifest>
//!   <remote name="…" fetch="…"/>*
//!   <default revision="…" [remote="…"]/>?
//!   <project name="…" path="…" [revision="…"] [remote="…"]/>*
//! </manifest>
//! ```
//!
//! Unknown elements and attributes are rejected. Project revisions and remotes
//! fall back to `<default>` and are stored resolved, so a parsed manifest
//! always carries an explicit revision per project.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::digest::Digest;
use crate::xml::{self, Element};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Remote {
    pub name: String,
    pub fetch: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectEntry {
    pub name: String,
    pub path: String,
    pub revision: String,
    pub remote: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub remotes: Vec<Remote>,
    pub default_revision: Option<String>,
    pub default_remote: Option<String>,
    pub projects: Vec<ProjectEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("line {line}: malformed XML: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown element <{name}>")]
    UnknownElement { line: usize, name: String },
    #[error("line {line}: unknown attribute {attr:?} on <{element}>")]
    UnknownAttribute { line: usize, element: String, attr: String },
    #[error("line {line}: <{element}> is missing attribute {attr:?}")]
    MissingAttribute { line: usize, element: String, attr: &'static str },
    #[error("line {line}: invalid token {value:?} for {what}")]
    InvalidToken { line: usize, what: &'static str, value: String },
    #[error("line {line}: more than one <default> element")]
    DuplicateDefault { line: usize },
    #[error("line {line}: duplicate remote {name:?}")]
    DuplicateRemote { line: usize, name: String },
    #[error("line {line}: duplicate project name {name:?}")]
    DuplicateProject { line: usize, name: String },
    #[error("line {line}: duplicate project path {path:?}")]
    DuplicatePath { line: usize, path: String },
    #[error("line {line}: invalid project path {path:?} (must be relative without '..')")]
    InvalidPath { line: usize, path: String },
    #[error("line {line}: project {project:?} references unknown remote {remote:?}")]
    DanglingRemote { line: usize, project: String, remote: String },
    #[error("line {line}: project {project:?} has no revision and no default revision is set")]
    MissingRevision { line: usize, project: String },
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

/// A relative path with `/` separators, no empty, `.` or `..` components.
pub fn is_relative_path(path: &str) -> bool {
    !path.is_empty()
        && !path.starts_with('/')
        && !path.contains('\\')
        && !path.chars().any(char::is_control)
        && path.split('/').all(|c| !c.is_empty() && c != "." && c != "..")
}

fn check_attrs(el: &Element, allowed: &[&str]) -> Result<(), ManifestError> {
    for (k, _) in &el.attrs {
        if !allowed.contains(&k.as_str()) {
            return Err(ManifestError::UnknownAttribute {
                line: el.line,
                element: el.name.clone(),
                attr: k.clone(),
            });
        }
    }
    Ok(())
}

fn required<'e>(el: &'e Element, attr: &'static str) -> Result<&'e str, ManifestError> {
    el.attr(attr).ok_or_else(|| ManifestError::MissingAttribute {
        line: el.line,
        element: el.name.clone(),
        attr,
    })
}

fn token(el: &Element, value: &str, what: &'static str) -> Result<String, ManifestError> {
    if is_token(value) {
        Ok(value.to_owned())
    } else {
        Err(ManifestError::InvalidToken { line: el.line, what, value: value.to_owned() })
    }
}

/// Parses `manifest.xml` text, applying `<default>` values to projects.
pub fn parse_manifest(text: &str) -> Result<Manifest, ManifestError> {
    let root = xml::parse_document(text)
        .map_err(|e| ManifestError::Malformed { line: e.line, message: e.message })?;
    if root.name != "manifest" {
        return Err(ManifestError::UnknownElement { line: root.line, name: root.name });
    }
    check_attrs(&root, &[])?;

    let mut m = Manifest::default();
    let mut default_line = None;
    // (element, explicit revision, explicit remote)
    let mut pending: Vec<(&Element, Option<String>, Option<String>)> = Vec::new();

    for el in &root.children {
        if !el.children.is_empty() {
            return Err(ManifestError::UnknownElement {
                line: el.children[0].line,
                name: el.children[0].name.clone(),
            });
        }
        match el.name.as_str() {
            "remote" => {
                check_attrs(el, &["name", "fetch"])?;
                let name = token(el, required(el, "name")?, "remote name")?;
                let fetch = required(el, "fetch")?.to_owned();
                if m.remotes.iter().any(|r| r.name == name) {
                    return Err(ManifestError::DuplicateRemote { line: el.line, name });
                }
                m.remotes.push(Remote { name, fetch });
            }
            "default" => {
                check_attrs(el, &["revision", "remote"])?;
                if default_line.is_some() {
                    return Err(ManifestError::DuplicateDefault { line: el.line });
                }
                default_line = Some(el.line);
                m.default_revision = Some(token(el, required(el, "revision")?, "revision")?);
                m.default_remote =
                    el.attr("remote").map(|r| token(el, r, "remote name")).transpose()?;
            }
            "project" => {
                check_attrs(el, &["name", "path", "revision", "remote"])?;
                let revision = el.attr("revision").map(|r| token(el, r, "revision")).transpose()?;
                let remote = el.attr("remote").map(|r| token(el, r, "remote name")).transpose()?;
                pending.push((el, revision, remote));
            }
            _ => {
                return Err(ManifestError::UnknownElement { line: el.line, name: el.name.clone() })
            }
        }
    }

    if let (Some(line), Some(remote)) = (default_line, &m.default_remote) {
        if !m.remotes.iter().any(|r| &r.name == remote) {
            return Err(ManifestError::DanglingRemote {
                line,
                project: "<default>".to_owned(),
                remote: remote.clone(),
            });
        }
    }

    let mut names = BTreeSet::new();
    let mut paths = BTreeSet::new();
    for (el, revision, remote) in pending {
        let name = token(el, required(el, "name")?, "project name")?;
        let path = required(el, "path")?.to_owned();
        if !is_relative_path(&path) {
            return Err(ManifestError::InvalidPath { line: el.line, path });
        }
        if !names.insert(name.clone()) {
            return Err(ManifestError::DuplicateProject { line: el.line, name });
        }
        if !paths.insert(path.clone()) {
            return Err(ManifestError::DuplicatePath { line: el.line, path });
        }
        let revision = match revision.or_else(|| m.default_revision.clone()) {
            Some(r) => r,
            None => return Err(ManifestError::MissingRevision { line: el.line, project: name }),
        };
        let remote = remote.or_else(|| m.default_remote.clone());
        if let Some(r) = &remote {
            if !m.remotes.iter().any(|x| &x.name == r) {
                return Err(ManifestError::DanglingRemote {
                    line: el.line,
                    project: name,
                    remote: r.clone(),
                });
            }
        }
        m.projects.push(ProjectEntry { name, path, revision, remote });
    }
    Ok(m)
}

impl Manifest {
    pub fn project(&self, name: &str) -> Option<&ProjectEntry> {
        self.projects.iter().find(|p| p.name == name)
    }

    /// Re-pins `project` to `revision`. Returns false if the project is unknown.
    pub fn set_revision(&mut self, project: &str, revision: &str) -> bool {
        match self.projects.iter_mut().find(|p| p.name == project) {
            Some(p) => {
                p.revision = revision.to_owned();
                true
            }
            None => false,
        }
    }

    /// Emits the manifest in the grammar accepted by [`parse_manifest`].
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<manifest>\n");
        for r in &self.remotes {
            let _ = writeln!(
                out,
                "  <remote name=\"{}\" fetch=\"{}\"/>",
                xml::escape_attr(&r.name),
                xml::escape_attr(&r.fetch)
            );
        }
        if let Some(rev) = &self.default_revision {
            let _ = write!(out, "  <default revision=\"{}\"", xml::escape_attr(rev));
            if let Some(remote) = &self.default_remote {
                let _ = write!(out, " remote=\"{}\"", xml::escape_attr(remote));
            }
            out.push_str("/>\n");
        }
        for p in &self.projects {
            let _ = write!(
                out,
                "  <project name=\"{}\" path=\"{}\" revision=\"{}\"",
                xml::escape_attr(&p.name),
                xml::escape_attr(&p.path),
                xml::escape_attr(&p.revision)
            );
            if let Some(remote) = &p.remote {
                let _ = write!(out, " remote=\"{}\"", xml::escape_attr(remote));
            }
            out.push_str("/>\n");
        }
        out.push_str("</manifest>\n");
        out
    }
}

/// One materialized project in a workspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceEntry {
    pub name: String,
    pub path: String,
    pub snapshot_id: String,
    pub digest: Digest,
}

/// The result of a sync: what is checked out where.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceState {
    pub root: String,
    pub entries: Vec<WorkspaceEntry>,
}

impl WorkspaceState {
    pub fn new(root: impl Into<String>, mut entries: Vec<WorkspaceEntry>) -> Self {
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        WorkspaceState { root: root.into(), entries }
    }

    pub fn entry(&self, name: &str) -> Option<&WorkspaceEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// SHA-256 over `<name> <snapshot-id> <digest>\n` lines sorted by name.
    /// Independent of `root` and of entry order.
    pub fn fingerprint(&self) -> Digest {
        let mut triples: Vec<(&str, &str, String)> = self
            .entries
            .iter()
            .map(|e| (e.name.as_str(), e.snapshot_id.as_str(), e.digest.to_hex()))
            .collect();
        triples.sort();
        let mut hasher = Sha256::new();
        for (name, id, digest) in triples {
            hasher.update(format!("{name} {id} {digest}\n").as_bytes());
        }
        let bytes: [u8; 32] = hasher.finalize().into();
        Digest::from(bytes)
    }
}
