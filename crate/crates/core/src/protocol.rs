// SPDX-License-Identifier: Apache-2.0

//! Line-oriented cache wire protocol.
//!
//! Hash equivalence:
//!
//! ```text
//! QUERY <method> <taskhash>            -> UNIHASH <u> | MISS
//! REPORT <method> <taskhash> <outhash> -> UNIHASH <u>
//! ```
//!
//! Blob stores (downloads, sstate):
//!
//! ```text
//! GET <key>                     -> OK <size>\n<bytes> | MISS
//! PUT <key> <size>\n<bytes>     -> OK | ERR conflict
//! ```
//!
//! Any malformed request gets `ERR <reason>`. Lines end with `\n`.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;

use crate::digest::Digest;

pub const MAX_KEY_LEN: usize = 255;
pub const MAX_LINE_LEN: usize = 1024;
pub const MAX_BLOB_SIZE: u64 = 64 * 1024 * 1024;
pub const CONFLICT: &str = "conflict";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("empty request")]
    Empty,
    #[error("unknown command {0:?}")]
    UnknownCommand(String),
    #[error("{command} expects {expected} arguments")]
    Arity { command: &'static str, expected: usize },
    #[error("bad hash {0:?}")]
    BadHash(String),
    #[error("bad token {0:?}")]
    BadToken(String),
    #[error("bad key {0:?}")]
    BadKey(String),
    #[error("bad size {0:?}")]
    BadSize(String),
    #[error("unexpected response {0:?}")]
    UnexpectedResponse(String),
}

/// Printable ASCII without whitespace, 1..=255 bytes.
pub fn valid_key(key: &str) -> bool {
    !key.is_empty() && key.len() <= MAX_KEY_LEN && key.bytes().all(|b| (0x21..=0x7e).contains(&b))
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && s.len() <= MAX_KEY_LEN && s.bytes().all(|b| (0x21..=0x7e).contains(&b))
}

fn hash(s: &str) -> Result<Digest, ProtocolError> {
    s.parse().map_err(|_| ProtocolError::BadHash(s.to_owned()))
}

fn token(s: &str) -> Result<String, ProtocolError> {
    if valid_token(s) {
        Ok(s.to_owned())
    } else {
        Err(ProtocolError::BadToken(s.to_owned()))
    }
}

fn key(s: &str) -> Result<String, ProtocolError> {
    if valid_key(s) {
        Ok(s.to_owned())
    } else {
        Err(ProtocolError::BadKey(s.to_owned()))
    }
}

fn size(s: &str) -> Result<u64, ProtocolError> {
    let valid = !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && s.len() <= 20;
    let n = if valid { s.parse::<u64>().ok() } else { None };
    n.ok_or_else(|| ProtocolError::BadSize(s.to_owned()))
}

fn words(line: &str) -> (&str, alloc::vec::Vec<&str>) {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut it = line.split(' ');
    let cmd = it.next().unwrap_or("");
    (cmd, it.collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HashRequest {
    Query { method: String, taskhash: Digest },
    Report { method: String, taskhash: Digest, outhash: Digest },
}

impl HashRequest {
    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        match words(line) {
            ("", _) => Err(ProtocolError::Empty),
            ("QUERY", args) => match args.as_slice() {
                [m, t] => Ok(HashRequest::Query { method: token(m)?, taskhash: hash(t)? }),
                _ => Err(ProtocolError::Arity { command: "QUERY", expected: 2 }),
            },
            ("REPORT", args) => match args.as_slice() {
                [m, t, o] => Ok(HashRequest::Report {
                    method: token(m)?,
                    taskhash: hash(t)?,
                    outhash: hash(o)?,
                }),
                _ => Err(ProtocolError::Arity { command: "REPORT", expected: 3 }),
            },
            (cmd, _) => Err(ProtocolError::UnknownCommand(cmd.to_owned())),
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            HashRequest::Query { method, taskhash } => format!("QUERY {method} {taskhash}\n"),
            HashRequest::Report { method, taskhash, outhash } => {
                format!("REPORT {method} {taskhash} {outhash}\n")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HashResponse {
    Unihash(Digest),
    Miss,
    Err(String),
}

impl HashResponse {
    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if let Some(reason) = trimmed.strip_prefix("ERR ") {
            return Ok(HashResponse::Err(reason.to_owned()));
        }
        match words(line) {
            ("MISS", args) if args.is_empty() => Ok(HashResponse::Miss),
            ("UNIHASH", args) if args.len() == 1 => Ok(HashResponse::Unihash(hash(args[0])?)),
            _ => Err(ProtocolError::UnexpectedResponse(trimmed.to_owned())),
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            HashResponse::Unihash(u) => format!("UNIHASH {u}\n"),
            HashResponse::Miss => "MISS\n".to_owned(),
            HashResponse::Err(reason) => format!("ERR {reason}\n"),
        }
    }
}

/// A blob request header; a `Put` is followed by `size` raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlobRequest {
    Get { key: String },
    Put { key: String, size: u64 },
}

impl BlobRequest {
    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        match words(line) {
            ("", _) => Err(ProtocolError::Empty),
            ("GET", args) => match args.as_slice() {
                [k] => Ok(BlobRequest::Get { key: key(k)? }),
                _ => Err(ProtocolError::Arity { command: "GET", expected: 1 }),
            },
            ("PUT", args) => match args.as_slice() {
                [k, n] => Ok(BlobRequest::Put { key: key(k)?, size: size(n)? }),
                _ => Err(ProtocolError::Arity { command: "PUT", expected: 2 }),
            },
            (cmd, _) => Err(ProtocolError::UnknownCommand(cmd.to_owned())),
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            BlobRequest::Get { key } => format!("GET {key}\n"),
            BlobRequest::Put { key, size } => format!("PUT {key} {size}\n"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlobResponse {
    /// `OK <size>`, followed by the blob.
    Found(u64),
    /// `OK`
    Stored,
    Miss,
    Err(String),
}

impl BlobResponse {
    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if let Some(reason) = trimmed.strip_prefix("ERR ") {
            return Ok(BlobResponse::Err(reason.to_owned()));
        }
        match words(line) {
            ("OK", args) if args.is_empty() => Ok(BlobResponse::Stored),
            ("OK", args) if args.len() == 1 => Ok(BlobResponse::Found(size(args[0])?)),
            ("MISS", args) if args.is_empty() => Ok(BlobResponse::Miss),
            _ => Err(ProtocolError::UnexpectedResponse(trimmed.to_owned())),
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            BlobResponse::Found(n) => format!("OK {n}\n"),
            BlobResponse::Stored => "OK\n".to_owned(),
            BlobResponse::Miss => "MISS\n".to_owned(),
            BlobResponse::Err(reason) => format!("ERR {reason}\n"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_requests() {
        let t = Digest::of(b"t");
        let o = Digest::of(b"o");
        let q = HashRequest::Query { method: "m".into(), taskhash: t };
        assert_eq!(HashRequest::parse(&q.to_line()).unwrap(), q);
        let r = HashRequest::Report { method: "m".into(), taskhash: t, outhash: o };
        assert_eq!(HashRequest::parse(&r.to_line()).unwrap(), r);
        assert!(matches!(HashRequest::parse("QUERY m abc\n"), Err(ProtocolError::BadHash(_))));
        assert!(matches!(HashRequest::parse("QUERY m\n"), Err(ProtocolError::Arity { .. })));
        assert!(matches!(HashRequest::parse("DELETE x\n"), Err(ProtocolError::UnknownCommand(_))));
        assert_eq!(HashRequest::parse("\n"), Err(ProtocolError::Empty));
    }

    #[test]
    fn uppercase_hex_is_malformed() {
        let t = Digest::of(b"t").to_hex().to_uppercase();
        assert!(HashRequest::parse(&format!("QUERY m {t}\n")).is_err());
    }

    #[test]
    fn responses() {
        let u = Digest::of(b"u");
        for r in [HashResponse::Unihash(u), HashResponse::Miss, HashResponse::Err("bad hash".into())] {
            assert_eq!(HashResponse::parse(&r.to_line()).unwrap(), r);
        }
        for r in [
            BlobResponse::Found(12),
            BlobResponse::Stored,
            BlobResponse::Miss,
            BlobResponse::Err(CONFLICT.into()),
        ] {
            assert_eq!(BlobResponse::parse(&r.to_line()).unwrap(), r);
        }
    }

    #[test]
    fn blob_headers() {
        assert_eq!(
            BlobRequest::parse("PUT ss/a:fetch/00 12\n").unwrap(),
            BlobRequest::Put { key: "ss/a:fetch/00".into(), size: 12 }
        );
        assert!(matches!(BlobRequest::parse("PUT k -1\n"), Err(ProtocolError::BadSize(_))));
        assert!(matches!(BlobRequest::parse("PUT k 1 2\n"), Err(ProtocolError::Arity { .. })));
        let long = "k".repeat(MAX_KEY_LEN + 1);
        assert!(matches!(BlobRequest::parse(&format!("GET {long}\n")), Err(ProtocolError::BadKey(_))));
        assert!(BlobRequest::parse(&format!("GET {}\n", &long[1..])).is_ok());
    }
}
