// SPDX-License-Identifier: Apache-2.0

//! The composed image description produced by an image build.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::taskgraph::PackageMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackageKind {
    /// Installs a command named after the package.
    Command,
    Library,
    KernelModule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePackage {
    pub name: String,
    pub version: String,
    pub kind: PackageKind,
    /// Outhash of the package's `package` task.
    pub outhash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageArtifact {
    pub image_name: String,
    /// Sorted by name.
    pub packages: Vec<ImagePackage>,
    /// Sorted.
    pub autoload_modules: Vec<String>,
    pub rdepends: BTreeMap<String, Vec<String>>,
    pub image_digest: Digest,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    image_name: &'a str,
    packages: &'a [ImagePackage],
    autoload_modules: &'a [String],
    rdepends: &'a BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error("invalid image JSON: {0}")]
    Json(String),
    #[error("image digest does not match its contents")]
    DigestMismatch,
    #[error("autoload module {0:?} is not an installed kernel module")]
    StrayAutoload(String),
}

impl ImageArtifact {
    /// Composes an artifact from package metadata and package outhashes.
    pub fn compose(image_name: &str, packages: impl IntoIterator<Item = (PackageMeta, Digest)>) -> Self {
        let mut pkgs = Vec::new();
        let mut autoload = Vec::new();
        let mut rdepends = BTreeMap::new();
        for (meta, outhash) in packages {
            let kind = if meta.kernel_module {
                PackageKind::KernelModule
            } else if meta.library {
                PackageKind::Library
            } else {
                PackageKind::Command
            };
            if meta.autoload && meta.kernel_module {
                autoload.push(meta.name.clone());
            }
            let mut deps = meta.rdepends.clone();
            deps.sort();
            deps.dedup();
            rdepends.insert(meta.name.clone(), deps);
            pkgs.push(ImagePackage { name: meta.name, version: meta.version, kind, outhash });
        }
        pkgs.sort_by(|a, b| a.name.cmp(&b.name));
        autoload.sort();
        let mut img = ImageArtifact {
            image_name: image_name.into(),
            packages: pkgs,
            autoload_modules: autoload,
            rdepends,
            image_digest: Digest::empty(),
        };
        img.image_digest = img.compute_digest();
        img
    }

    /// SHA-256 of the canonical JSON of every field except the digest.
    pub fn compute_digest(&self) -> Digest {
        let input = DigestInput {
            image_name: &self.image_name,
            packages: &self.packages,
            autoload_modules: &self.autoload_modules,
            rdepends: &self.rdepends,
        };
        Digest::of(crate::canonical_json(&input).as_bytes())
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        for m in &self.autoload_modules {
            let ok = self.package(m).is_some_and(|p| p.kind == PackageKind::KernelModule);
            if !ok {
                return Err(ImageError::StrayAutoload(m.clone()));
            }
        }
        if self.compute_digest() != self.image_digest {
            return Err(ImageError::DigestMismatch);
        }
        Ok(())
    }

    pub fn package(&self, name: &str) -> Option<&ImagePackage> {
        self.packages.iter().find(|p| p.name == name)
    }

    /// The same image with `name` left out (and its digest recomputed).
    pub fn without_package(&self, name: &str) -> ImageArtifact {
        let mut img = self.clone();
        img.packages.retain(|p| p.name != name);
        img.autoload_modules.retain(|m| m != name);
        img.rdepends.remove(name);
        img.image_digest = img.compute_digest();
        img
    }

    pub fn to_json(&self) -> String {
        crate::canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<ImageArtifact, ImageError> {
        let img: ImageArtifact =
            serde_json::from_str(text).map_err(|e| ImageError::Json(alloc::format!("{e}")))?;
        img.validate()?;
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn meta(name: &str, rdepends: &[&str], kernel_module: bool) -> PackageMeta {
        PackageMeta {
            name: name.into(),
            version: "1.0".into(),
            rdepends: rdepends.iter().map(|s| (*s).into()).collect(),
            kernel_module,
            autoload: kernel_module,
            library: name.starts_with("lib"),
        }
    }

    fn fixture() -> ImageArtifact {
        ImageArtifact::compose(
            "core-image-minimal",
            vec![
                (meta("libhelloworld", &[], false), Digest::of(b"l")),
                (meta("helloworld", &["libhelloworld"], false), Digest::of(b"h")),
                (meta("hello-mod", &[], true), Digest::of(b"m")),
            ],
        )
    }

    #[test]
    fn compose_sorts_and_classifies() {
        let img = fixture();
        let names: Vec<_> = img.packages.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["hello-mod", "helloworld", "libhelloworld"]);
        assert_eq!(img.autoload_modules, ["hello-mod"]);
        assert_eq!(img.package("libhelloworld").unwrap().kind, PackageKind::Library);
        assert_eq!(img.package("helloworld").unwrap().kind, PackageKind::Command);
        img.validate().unwrap();
    }

    #[test]
    fn json_round_trip_checks_digest() {
        let img = fixture();
        assert_eq!(ImageArtifact::from_json(&img.to_json()).unwrap(), img);
        let mut tampered = img.clone();
        tampered.packages[0].version = "2.0".into();
        assert_eq!(ImageArtifact::from_json(&tampered.to_json()), Err(ImageError::DigestMismatch));
    }

    #[test]
    fn removal_changes_digest() {
        let img = fixture();
        let smaller = img.without_package("libhelloworld");
        assert_ne!(smaller.image_digest, img.image_digest);
        smaller.validate().unwrap();
    }
}
