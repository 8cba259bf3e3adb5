// SPDX-License-Identifier: Apache-2.0

//! The equivalence store made durable by an append-only log of reports.
//!
//! Every report that changes the store is appended to `reports.log` as its
//! protocol line before the reply is sent. Opening the store replays the
//! log; a final line without its newline is a torn write and is dropped.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use layerci_core::equivalence::EquivalenceStore;
use layerci_core::protocol::HashRequest;
use layerci_core::Digest;

pub const LOG_FILE: &str = "reports.log";

#[derive(Debug, thiserror::Error)]
pub enum HashservError {
    #[error("corrupt hash log {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug)]
struct Inner {
    store: EquivalenceStore,
    log: File,
}

#[derive(Debug)]
pub struct PersistentEquivalence {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl PersistentEquivalence {
    pub fn open(dir: &Path) -> Result<Self, HashservError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| HashservError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOG_FILE);
        let text = match fs::read(&path) {
            Ok(bytes) => String::from_utf8(bytes).map_err(|_| HashservError::Corrupt {
                path: path.clone(),
                line: 0,
                message: "not UTF-8".into(),
            })?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(HashservError::Io { path, source: e }),
        };
        let mut store = EquivalenceStore::new();
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        if complete.len() != text.len() {
            log::warn!("{}: dropping incomplete final record", path.display());
        }
        for (i, line) in complete.lines().enumerate() {
            match HashRequest::parse(line) {
                Ok(HashRequest::Report { method, taskhash, outhash }) => {
                    store.report(&method, taskhash, outhash);
                }
                Ok(HashRequest::Query { .. }) => {
                    return Err(HashservError::Corrupt {
                        path,
                        line: i + 1,
                        message: "unexpected QUERY record".into(),
                    })
                }
                Err(e) => {
                    return Err(HashservError::Corrupt { path, line: i + 1, message: e.to_string() })
                }
            }
        }
        if complete.len() != text.len() {
            let f = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
            f.set_len(complete.len() as u64).map_err(io_err(&path))?;
        }
        let log = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        Ok(PersistentEquivalence { path, inner: Mutex::new(Inner { store, log }) })
    }

    pub fn query(&self, method: &str, taskhash: &Digest) -> Option<Digest> {
        self.inner.lock().expect("hashserv lock").store.query(method, taskhash)
    }

    pub fn report(&self, method: &str, taskhash: Digest, outhash: Digest) -> Result<Digest, HashservError> {
        let mut inner = self.inner.lock().expect("hashserv lock");
        let mut next = inner.store.clone();
        let reported = next.report(method, taskhash, outhash);
        if reported.changed {
            let line = HashRequest::Report { method: method.into(), taskhash, outhash }.to_line();
            inner
                .log
                .write_all(line.as_bytes())
                .map_err(|source| HashservError::Io { path: self.path.clone(), source })?;
            inner.store = next;
        }
        Ok(reported.unihash)
    }

    pub fn snapshot(&self) -> EquivalenceStore {
        self.inner.lock().expect("hashserv lock").store.clone()
    }

    pub fn sync(&self) -> io::Result<()> {
        self.inner.lock().expect("hashserv lock").log.sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_survive_reopen_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let (t1, t2, o) = (Digest::of(b"t1"), Digest::of(b"t2"), Digest::of(b"o"));
        {
            let s = PersistentEquivalence::open(dir.path()).unwrap();
            assert_eq!(s.report("m", t1, o).unwrap(), t1);
            assert_eq!(s.report("m", t2, o).unwrap(), t1);
        }
        let mut f = OpenOptions::new().append(true).open(dir.path().join(LOG_FILE)).unwrap();
        f.write_all(b"REPORT m 00").unwrap();
        drop(f);
        let s = PersistentEquivalence::open(dir.path()).unwrap();
        assert_eq!(s.query("m", &t2), Some(t1));
        assert_eq!(s.snapshot().len(), 2);
    }

    #[test]
    fn garbage_log_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LOG_FILE), "hello\n").unwrap();
        assert!(matches!(PersistentEquivalence::open(dir.path()), Err(HashservError::Corrupt { .. })));
    }
}
