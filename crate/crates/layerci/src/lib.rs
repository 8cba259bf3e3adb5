// SPDX-License-Identifier: Apache-2.0

//! Host side of layerci: source store, workspace sync, layer loading, the
//! cache service and its clients, the build executor, pipeline orchestration,
//! external boot hook, reports and the command line.

pub mod cache;
pub mod layers;
pub mod store;
pub mod sync;
pub mod executor;
pub mod boot;
pub mod pipeline;
pub mod cli;
pub mod reports;
