// SPDX-License-Identifier: Apache-2.0

//! The cache service: hash equivalence, downloads mirror and sstate store,
//! each on its own TCP port, plus the matching clients.

mod blobstore;
mod client;
mod hashserv;
mod server;

pub use blobstore::{BlobError, BlobStore};
pub use client::{BlobClient, CacheSession, ClientError, HashservClient};
pub use hashserv::{HashservError, PersistentEquivalence};
pub use server::{serve, CacheService, ServeError, StoreDump};

use serde::{Deserialize, Serialize};

pub const DEFAULT_HASHSERV_PORT: u16 = 8001;
pub const DEFAULT_DOWNLOADS_PORT: u16 = 8002;
pub const DEFAULT_SSTATE_PORT: u16 = 8003;

/// Key namespace of the downloads store.
pub const DOWNLOADS_NAMESPACE: &str = "dl/";
/// Key namespace of the sstate store.
pub const SSTATE_NAMESPACE: &str = "ss/";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEndpoints {
    pub host: String,
    pub hashserv_port: u16,
    pub downloads_port: u16,
    pub sstate_port: u16,
}

impl Default for CacheEndpoints {
    fn default() -> Self {
        CacheEndpoints::on_host("127.0.0.1")
    }
}

impl CacheEndpoints {
    pub fn on_host(host: &str) -> Self {
        CacheEndpoints {
            host: host.to_owned(),
            hashserv_port: DEFAULT_HASHSERV_PORT,
            downloads_port: DEFAULT_DOWNLOADS_PORT,
            sstate_port: DEFAULT_SSTATE_PORT,
        }
    }

    /// Ports must be distinct; port 0 (pick any free port) may repeat.
    pub fn validate(&self) -> Result<(), String> {
        let ports = [self.hashserv_port, self.downloads_port, self.sstate_port];
        for (i, a) in ports.iter().enumerate() {
            if *a != 0 && ports[i + 1..].contains(a) {
                return Err(format!("cache ports must be distinct, {a} is used twice"));
            }
        }
        if self.host.is_empty() {
            return Err("cache host is empty".into());
        }
        Ok(())
    }

    pub fn hashserv_addr(&self) -> String {
        format!("{}:{}", self.host, self.hashserv_port)
    }

    pub fn downloads_addr(&self) -> String {
        format!("{}:{}", self.host, self.downloads_port)
    }

    pub fn sstate_addr(&self) -> String {
        format!("{}:{}", self.host, self.sstate_port)
    }
}
