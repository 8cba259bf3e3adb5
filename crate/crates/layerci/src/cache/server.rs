// SPDX-License-Identifier: Apache-2.0

//! TCP listeners for the three cache stores.
//!
//! One thread accepts per port and one thread serves each connection. Each
//! store applies requests under its own lock, so every store sees a single
//! serialized order of operations.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Ipv4Addr, Ipv6Addr, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use layerci_core::protocol::{
    BlobRequest, BlobResponse, HashRequest, HashResponse, CONFLICT, MAX_BLOB_SIZE, MAX_LINE_LEN,
};
use layerci_core::Digest;
use serde::Serialize;

use super::blobstore::{BlobError, BlobStore};
use super::hashserv::{HashservError, PersistentEquivalence};
use super::{CacheEndpoints, DOWNLOADS_NAMESPACE, SSTATE_NAMESPACE};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("invalid endpoints: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Hashserv(#[from] HashservError),
    #[error(transparent)]
    Blob(#[from] BlobError),
}

/// Full contents of a cache data directory, for persistence checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoreDump {
    /// `(method, taskhash, unihash)`
    pub by_taskhash: Vec<(String, Digest, Digest)>,
    /// `(method, outhash, unihash)`
    pub by_outhash: Vec<(String, Digest, Digest)>,
    /// `(key, SHA-256 of blob)`
    pub downloads: Vec<(String, Digest)>,
    pub sstate: Vec<(String, Digest)>,
}

struct Stores {
    hashserv: PersistentEquivalence,
    downloads: BlobStore,
    sstate: BlobStore,
}

#[derive(Default)]
struct Connections {
    live: Vec<(TcpStream, JoinHandle<()>)>,
}

impl Connections {
    fn add(&mut self, stream: TcpStream, handle: JoinHandle<()>) {
        self.live.retain(|(_, h)| !h.is_finished());
        self.live.push((stream, handle));
    }
}

/// A running cache service. Dropping it shuts it down.
pub struct CacheService {
    endpoints: CacheEndpoints,
    addrs: Vec<SocketAddr>,
    stop: Arc<AtomicBool>,
    stores: Arc<Stores>,
    conns: Arc<Mutex<Connections>>,
    acceptors: Vec<JoinHandle<()>>,
    data_dir: PathBuf,
}

/// Reads one `\n`-terminated line of at most `max` bytes (newline excluded).
/// `Ok(None)` on clean end of stream.
pub(crate) fn read_line_limited(r: &mut impl BufRead, max: usize) -> io::Result<Option<String>> {
    let mut buf = Vec::new();
    let n = r.by_ref().take(max as u64 + 1).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        let reason = if buf.len() > max { "line too long" } else { "truncated line" };
        return Err(io::Error::new(io::ErrorKind::InvalidData, reason));
    }
    buf.pop();
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "line is not UTF-8"))
}

fn one_line(s: impl std::fmt::Display) -> String {
    s.to_string().replace(['\n', '\r'], " ")
}

fn serve_hashserv(stream: TcpStream, stores: &Stores) -> io::Result<()> {
    let mut out = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    loop {
        let line = match read_line_limited(&mut reader, MAX_LINE_LEN) {
            Ok(Some(line)) => line,
            Ok(None) => return Ok(()),
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                out.write_all(HashResponse::Err(one_line(e)).to_line().as_bytes())?;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let reply = match HashRequest::parse(&line) {
            Ok(HashRequest::Query { method, taskhash }) => match stores.hashserv.query(&method, &taskhash) {
                Some(u) => HashResponse::Unihash(u),
                None => HashResponse::Miss,
            },
            Ok(HashRequest::Report { method, taskhash, outhash }) => {
                match stores.hashserv.report(&method, taskhash, outhash) {
                    Ok(u) => HashResponse::Unihash(u),
                    Err(e) => HashResponse::Err(one_line(format!("storage: {e}"))),
                }
            }
            Err(e) => HashResponse::Err(one_line(e)),
        };
        out.write_all(reply.to_line().as_bytes())?;
    }
}

fn serve_blobs(stream: TcpStream, store: &BlobStore) -> io::Result<()> {
    let mut out = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    loop {
        let line = match read_line_limited(&mut reader, MAX_LINE_LEN) {
            Ok(Some(line)) => line,
            Ok(None) => return Ok(()),
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                out.write_all(BlobResponse::Err(one_line(e)).to_line().as_bytes())?;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        match BlobRequest::parse(&line) {
            Ok(BlobRequest::Get { key }) => match store.get(&key) {
                Ok(Some(data)) => {
                    out.write_all(BlobResponse::Found(data.len() as u64).to_line().as_bytes())?;
                    out.write_all(&data)?;
                }
                Ok(None) => out.write_all(BlobResponse::Miss.to_line().as_bytes())?,
                Err(e) => out.write_all(BlobResponse::Err(one_line(e)).to_line().as_bytes())?,
            },
            Ok(BlobRequest::Put { key, size }) => {
                if size > MAX_BLOB_SIZE {
                    // The body cannot be skipped safely; drop the connection.
                    out.write_all(BlobResponse::Err("blob too large".into()).to_line().as_bytes())?;
                    return Ok(());
                }
                let mut data = vec![0u8; size as usize];
                reader.read_exact(&mut data)?;
                let reply = match store.put(&key, &data) {
                    Ok(()) => BlobResponse::Stored,
                    Err(BlobError::Conflict(_)) => BlobResponse::Err(CONFLICT.into()),
                    Err(e) => BlobResponse::Err(one_line(e)),
                };
                out.write_all(reply.to_line().as_bytes())?;
            }
            Err(e) => {
                out.write_all(BlobResponse::Err(one_line(&e)).to_line().as_bytes())?;
                if line.starts_with("PUT ") {
                    // Unknown body length follows; resynchronizing is impossible.
                    return Ok(());
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Role {
    Hashserv,
    Downloads,
    Sstate,
}

fn handle(role: Role, stream: TcpStream, stores: &Stores) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    // The service keeps a clone of every stream for shutdown, so dropping
    // ours would not close the socket; end it explicitly.
    let closer = stream.try_clone();
    let result = match role {
        Role::Hashserv => serve_hashserv(stream, stores),
        Role::Downloads => serve_blobs(stream, &stores.downloads),
        Role::Sstate => serve_blobs(stream, &stores.sstate),
    };
    if let Err(e) = result {
        log::debug!("connection from {peer} ended: {e}");
    }
    if let Ok(c) = closer {
        let _ = c.shutdown(std::net::Shutdown::Both);
    }
}

/// Opens the stores under `data_dir` and starts the three listeners.
pub fn serve(cfg: &CacheEndpoints, data_dir: &Path) -> Result<CacheService, ServeError> {
    cfg.validate().map_err(ServeError::Config)?;
    let stores = Arc::new(Stores {
        hashserv: PersistentEquivalence::open(&data_dir.join("hashserv"))?,
        downloads: BlobStore::open(data_dir.join("downloads"), DOWNLOADS_NAMESPACE)?,
        sstate: BlobStore::open(data_dir.join("sstate"), SSTATE_NAMESPACE)?,
    });
    let mut listeners = Vec::new();
    for (role, port) in [
        (Role::Hashserv, cfg.hashserv_port),
        (Role::Downloads, cfg.downloads_port),
        (Role::Sstate, cfg.sstate_port),
    ] {
        let addr = format!("{}:{}", cfg.host, port);
        let l = TcpListener::bind(&addr).map_err(|source| ServeError::Bind { addr: addr.clone(), source })?;
        listeners.push((role, l));
    }
    let addrs: Vec<SocketAddr> = listeners
        .iter()
        .map(|(_, l)| l.local_addr())
        .collect::<io::Result<_>>()
        .map_err(|source| ServeError::Bind { addr: cfg.host.clone(), source })?;
    let endpoints = CacheEndpoints {
        host: cfg.host.clone(),
        hashserv_port: addrs[0].port(),
        downloads_port: addrs[1].port(),
        sstate_port: addrs[2].port(),
    };

    let stop = Arc::new(AtomicBool::new(false));
    let conns = Arc::new(Mutex::new(Connections::default()));
    let mut acceptors = Vec::new();
    for (role, listener) in listeners {
        let (stop, stores, conns) = (stop.clone(), stores.clone(), conns.clone());
        acceptors.push(std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let Ok(shutdown_handle) = stream.try_clone() else { continue };
                let stores = stores.clone();
                let h = std::thread::spawn(move || handle(role, stream, &stores));
                conns.lock().expect("connection list lock").add(shutdown_handle, h);
            }
        }));
    }
    log::info!(
        "cache serving hashserv on {}, downloads on {}, sstate on {}",
        addrs[0],
        addrs[1],
        addrs[2]
    );
    Ok(CacheService { endpoints, addrs, stop, stores, conns, acceptors, data_dir: data_dir.to_path_buf() })
}

impl CacheService {
    /// Endpoints with the ports actually bound.
    pub fn endpoints(&self) -> &CacheEndpoints {
        &self.endpoints
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn dump(&self) -> Result<StoreDump, BlobError> {
        let (by_taskhash, by_outhash) = self.stores.hashserv.snapshot().dump();
        Ok(StoreDump {
            by_taskhash,
            by_outhash,
            downloads: self.stores.downloads.dump()?,
            sstate: self.stores.sstate.dump()?,
        })
    }

    /// Blocks until the acceptor threads end (they only end on shutdown).
    pub fn wait(mut self) {
        for h in self.acceptors.drain(..) {
            let _ = h.join();
        }
    }

    fn stop_now(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        for addr in &self.addrs {
            let mut wake = *addr;
            if wake.ip().is_unspecified() {
                wake.set_ip(if wake.is_ipv4() { Ipv4Addr::LOCALHOST.into() } else { Ipv6Addr::LOCALHOST.into() });
            }
            let _ = TcpStream::connect(wake);
        }
        for h in self.acceptors.drain(..) {
            let _ = h.join();
        }
        let live = std::mem::take(&mut self.conns.lock().expect("connection list lock").live);
        for (stream, h) in live {
            let _ = stream.shutdown(std::net::Shutdown::Both);
            let _ = h.join();
        }
        if let Err(e) = self.stores.hashserv.sync() {
            log::warn!("flushing hash log: {e}");
        }
    }

    /// Stops accepting, closes open connections and flushes state.
    pub fn shutdown(mut self) {
        self.stop_now();
    }
}

impl Drop for CacheService {
    fn drop(&mut self) {
        self.stop_now();
    }
}
