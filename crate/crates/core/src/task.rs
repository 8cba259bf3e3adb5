// SPDX-License-Identifier: Apache-2.0

use alloc::borrow::ToOwned;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskKind {
    Fetch,
    Configure,
    Compile,
    Install,
    Package,
    Rootfs,
    ImageComplete,
}

impl TaskKind {
    /// The per-recipe chain, in execution order.
    pub const COMPONENT_CHAIN: [TaskKind; 5] = [
        TaskKind::Fetch,
        TaskKind::Configure,
        TaskKind::Compile,
        TaskKind::Install,
        TaskKind::Package,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Fetch => "fetch",
            TaskKind::Configure => "configure",
            TaskKind::Compile => "compile",
            TaskKind::Install => "install",
            TaskKind::Package => "package",
            TaskKind::Rootfs => "rootfs",
            TaskKind::ImageComplete => "image_complete",
        }
    }

    pub fn is_component(self) -> bool {
        !matches!(self, TaskKind::Rootfs | TaskKind::ImageComplete)
    }

    pub fn cacheable(self) -> bool {
        self != TaskKind::ImageComplete
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "fetch" => TaskKind::Fetch,
            "configure" => TaskKind::Configure,
            "compile" => TaskKind::Compile,
            "install" => TaskKind::Install,
            "package" => TaskKind::Package,
            "rootfs" => TaskKind::Rootfs,
            "image_complete" => TaskKind::ImageComplete,
            other => return Err(other.to_owned()),
        })
    }
}

/// `<recipe>:<task>`. Orders by the rendered string.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(String);

impl TaskId {
    pub fn new(recipe: &str, kind: TaskKind) -> Self {
        TaskId(alloc::format!("{recipe}:{kind}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn recipe(&self) -> &str {
        self.0.rsplit_once(':').map(|(r, _)| r).unwrap_or("")
    }

    pub fn kind(&self) -> TaskKind {
        self.0
            .rsplit_once(':')
            .and_then(|(_, k)| k.parse().ok())
            .expect("TaskId is constructed from a valid kind")
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (recipe, kind) = s.rsplit_once(':').ok_or_else(|| s.to_owned())?;
        if recipe.is_empty() {
            return Err(s.to_owned());
        }
        let kind: TaskKind = kind.parse()?;
        Ok(TaskId::new(recipe, kind))
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TaskId({})", self.0)
    }
}

impl Serialize for TaskId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(|bad| serde::de::Error::custom(alloc::format!("bad task id {bad:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_id_parts() {
        let id = TaskId::new("hello-mod", TaskKind::ImageComplete);
        assert_eq!(id.as_str(), "hello-mod:image_complete");
        assert_eq!(id.recipe(), "hello-mod");
        assert_eq!(id.kind(), TaskKind::ImageComplete);
        assert_eq!("hello-mod:image_complete".parse::<TaskId>().unwrap(), id);
        assert!("x:link".parse::<TaskId>().is_err());
    }

    #[test]
    fn orders_by_string() {
        let a = TaskId::new("a-b", TaskKind::Fetch);
        let b = TaskId::new("a", TaskKind::Fetch);
        assert!(a < b, "'-' sorts before ':'");
    }
}
