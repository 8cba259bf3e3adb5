// SPDX-License-Identifier: Apache-2.0

//! IO-free core of layerci.
//!
//! Everything in this crate is a pure function over in-memory values: the
//! coordination manifest, recipe and layer files, the per-task build graph and
//! its content-derived signatures, the hash-equivalence store, the cache wire
//! protocol, sstate accounting, image composition and the simulated boot.
//! Filesystem, network and process handling live in the `layerci` crate.

#![no_std]

extern crate alloc;

pub mod boot;
pub mod digest;
pub mod equivalence;
pub mod image;
pub mod keyvalue;
pub mod layer;
pub mod manifest;
pub mod output;
pub mod pipeline;
pub mod protocol;
pub mod report;
pub mod task;
pub mod taskgraph;
mod xml;

pub use digest::{Digest, DigestParseError};

use alloc::string::String;

/// JSON with object keys sorted and no insignificant whitespace.
pub fn canonical_json<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("in-memory value serializes");
    serde_json::to_string(&v).expect("JSON value serializes")
}
