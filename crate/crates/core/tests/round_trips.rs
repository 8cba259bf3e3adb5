// SPDX-License-Identifier: Apache-2.0

//! Serialization round trips: manifests, recipes, image recipes, wire
//! protocol lines and image artifacts.

use layerci_core::layer::{parse_image, parse_recipe, ImageRecipe, Recipe, TaskCosts};
use layerci_core::manifest::{parse_manifest, Manifest, ProjectEntry, Remote};
use layerci_core::protocol::{BlobRequest, BlobResponse, HashRequest, HashResponse};
use layerci_core::Digest;
use proptest::prelude::*;

fn name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9+_.-]{0,11}"
}

fn path() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-zA-Z0-9_-][a-zA-Z0-9_.-]{0,7}", 1..4).prop_map(|c| c.join("/"))
}

fn revision() -> impl Strategy<Value = String> {
    "[!#-~]{1,16}"
}

fn digest() -> impl Strategy<Value = Digest> {
    any::<[u8; 8]>().prop_map(|b| Digest::of(&b))
}

fn manifest() -> impl Strategy<Value = Manifest> {
    let remotes = prop::collection::btree_map(name(), "[ -~]{0,20}", 0..3)
        .prop_map(|m| m.into_iter().map(|(name, fetch)| Remote { name, fetch }).collect::<Vec<_>>());
    let projects = prop::collection::btree_map(name(), (path(), revision(), any::<prop::sample::Index>(), any::<bool>()), 0..6);
    (remotes, projects, prop::option::of(revision()), any::<prop::sample::Index>(), any::<bool>()).prop_map(
        |(remotes, projects, default_revision, default_remote_ix, use_default_remote)| {
            let default_remote = (default_revision.is_some() && use_default_remote && !remotes.is_empty())
                .then(|| remotes[default_remote_ix.index(remotes.len())].name.clone());
            let mut seen_paths = std::collections::BTreeSet::new();
            let projects = projects
                .into_iter()
                // Project paths must be unique.
                .filter(|(_, (p, ..))| seen_paths.insert(p.clone()))
                .map(|(name, (path, revision, rix, explicit_remote))| {
                    let remote = if explicit_remote && !remotes.is_empty() {
                        Some(remotes[rix.index(remotes.len())].name.clone())
                    } else {
                        default_remote.clone()
                    };
                    ProjectEntry { name, path, revision, remote }
                })
                .collect();
            Manifest { remotes, default_revision, default_remote, projects }
        },
    )
}

fn recipe() -> impl Strategy<Value = Recipe> {
    (
        name(),
        "[0-9a-z+_-]{1,4}(\\.[0-9a-z+_-]{1,4}){0,2}",
        prop::collection::vec(name(), 0..3),
        prop::collection::vec(name(), 0..3),
        prop::option::of(name()),
        prop::array::uniform5(0u64..1000),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(name, version, depends, rdepends, src, c, kernel_module, autoload)| Recipe {
            name,
            version,
            depends,
            rdepends,
            src,
            task_costs: TaskCosts { fetch: c[0], configure: c[1], compile: c[2], install: c[3], package: c[4] },
            kernel_module,
            autoload: autoload && kernel_module,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn manifest_xml_round_trips(m in manifest()) {
        let xml = m.to_xml();
        let back = parse_manifest(&xml).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_xml(), xml);
    }

    #[test]
    fn recipe_text_round_trips(r in recipe()) {
        let text = r.to_text();
        prop_assert_eq!(parse_recipe(&text).unwrap(), r);
        let annotated = format!("# comment\n\n{text}");
        prop_assert_eq!(parse_recipe(&annotated).unwrap().to_text(), text);
    }

    #[test]
    fn image_recipe_round_trips(n in name(), mut install in prop::collection::vec(name(), 1..5)) {
        // Install entries are unique; keep the first occurrence of each.
        let mut seen = std::collections::BTreeSet::new();
        install.retain(|p| seen.insert(p.clone()));
        let img = ImageRecipe { name: n, install };
        prop_assert_eq!(parse_image(&img.to_text()).unwrap(), img);
    }

    #[test]
    fn hash_protocol_lines_round_trip(method in "[!-~]{1,20}", t in digest(), o in digest(), reason in "[ -~]{0,40}") {
        for req in [
            HashRequest::Query { method: method.clone(), taskhash: t },
            HashRequest::Report { method: method.clone(), taskhash: t, outhash: o },
        ] {
            prop_assert_eq!(HashRequest::parse(&req.to_line()).unwrap(), req);
        }
        for resp in [HashResponse::Unihash(t), HashResponse::Miss, HashResponse::Err(reason.clone())] {
            prop_assert_eq!(HashResponse::parse(&resp.to_line()).unwrap(), resp);
        }
    }

    #[test]
    fn blob_protocol_lines_round_trip(key in "[!-~]{1,255}", size in any::<u64>(), reason in "[ -~]{0,40}") {
        for req in [BlobRequest::Get { key: key.clone() }, BlobRequest::Put { key: key.clone(), size }] {
            prop_assert_eq!(BlobRequest::parse(&req.to_line()).unwrap(), req);
        }
        for resp in [BlobResponse::Found(size), BlobResponse::Stored, BlobResponse::Miss, BlobResponse::Err(reason.clone())] {
            prop_assert_eq!(BlobResponse::parse(&resp.to_line()).unwrap(), resp);
        }
    }

    #[test]
    fn digests_round_trip_through_hex(d in digest()) {
        prop_assert_eq!(d.to_hex().parse::<Digest>().unwrap(), d);
        prop_assert_eq!(d.to_hex().len(), 64);
    }
}

#[test]
fn malformed_protocol_lines_are_rejected() {
    for line in ["", "QUERY m\n", "QUERY m xyz\n", "REPORT m a b\n", "query m 00\n", "QUERY  m 00\n"] {
        assert!(HashRequest::parse(line).is_err(), "{line:?}");
    }
    for line in ["GET\n", "GET a b\n", "PUT k -1\n", "PUT k 1e3\n", "PUT k 99999999999999999999999\n", "DEL k\n"] {
        assert!(BlobRequest::parse(line).is_err(), "{line:?}");
    }
}
