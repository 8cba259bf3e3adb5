// SPDX-License-Identifier: Apache-2.0

//! Single-connection request/response clients for the cache service.

use std::io::{self, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use layerci_core::protocol::{
    BlobRequest, BlobResponse, HashRequest, HashResponse, ProtocolError, CONFLICT, MAX_BLOB_SIZE,
    MAX_LINE_LEN,
};
use layerci_core::Digest;

use super::server::read_line_limited;
use super::CacheEndpoints;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);
const IO_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{addr}: {source}")]
    Io { addr: String, source: io::Error },
    #[error("{addr}: connection closed")]
    Closed { addr: String },
    #[error("{addr}: {source}")]
    Protocol { addr: String, source: ProtocolError },
    #[error("{addr}: server error: {message}")]
    Server { addr: String, message: String },
    #[error("{addr}: key {key:?} already holds different bytes")]
    Conflict { addr: String, key: String },
}

struct Conn {
    addr: String,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Conn {
    fn connect(addr: &str) -> Result<Conn, ClientError> {
        let io = |source| ClientError::Io { addr: addr.to_owned(), source };
        let mut last = io::Error::new(io::ErrorKind::NotFound, "address did not resolve");
        for sa in addr.to_socket_addrs().map_err(io)? {
            match TcpStream::connect_timeout(&sa, CONNECT_TIMEOUT) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(IO_TIMEOUT)).map_err(io)?;
                    stream.set_write_timeout(Some(IO_TIMEOUT)).map_err(io)?;
                    let _ = stream.set_nodelay(true);
                    let writer = stream.try_clone().map_err(io)?;
                    return Ok(Conn { addr: addr.to_owned(), reader: BufReader::new(stream), writer });
                }
                Err(e) => last = e,
            }
        }
        Err(io(last))
    }

    fn io_err(&self, source: io::Error) -> ClientError {
        ClientError::Io { addr: self.addr.clone(), source }
    }

    fn send(&mut self, header: &str, body: &[u8]) -> Result<(), ClientError> {
        let mut msg = Vec::with_capacity(header.len() + body.len());
        msg.extend_from_slice(header.as_bytes());
        msg.extend_from_slice(body);
        self.writer.write_all(&msg).map_err(|e| self.io_err(e))
    }

    fn line(&mut self) -> Result<String, ClientError> {
        match read_line_limited(&mut self.reader, MAX_LINE_LEN) {
            Ok(Some(line)) => Ok(line),
            Ok(None) => Err(ClientError::Closed { addr: self.addr.clone() }),
            Err(e) => Err(self.io_err(e)),
        }
    }

    fn protocol(&self, source: ProtocolError) -> ClientError {
        ClientError::Protocol { addr: self.addr.clone(), source }
    }

    fn server(&self, message: String) -> ClientError {
        ClientError::Server { addr: self.addr.clone(), message }
    }
}

pub struct HashservClient {
    conn: Conn,
}

impl HashservClient {
    pub fn connect(addr: &str) -> Result<Self, ClientError> {
        Ok(HashservClient { conn: Conn::connect(addr)? })
    }

    fn call(&mut self, req: HashRequest) -> Result<Option<Digest>, ClientError> {
        self.conn.send(&req.to_line(), &[])?;
        let line = self.conn.line()?;
        match HashResponse::parse(&line).map_err(|e| self.conn.protocol(e))? {
            HashResponse::Unihash(u) => Ok(Some(u)),
            HashResponse::Miss => Ok(None),
            HashResponse::Err(m) => Err(self.conn.server(m)),
        }
    }

    pub fn query(&mut self, method: &str, taskhash: Digest) -> Result<Option<Digest>, ClientError> {
        self.call(HashRequest::Query { method: method.into(), taskhash })
    }

    pub fn report(&mut self, method: &str, taskhash: Digest, outhash: Digest) -> Result<Digest, ClientError> {
        match self.call(HashRequest::Report { method: method.into(), taskhash, outhash })? {
            Some(u) => Ok(u),
            None => Err(self.conn.server("MISS in reply to REPORT".into())),
        }
    }
}

pub struct BlobClient {
    conn: Conn,
}

impl BlobClient {
    pub fn connect(addr: &str) -> Result<Self, ClientError> {
        Ok(BlobClient { conn: Conn::connect(addr)? })
    }

    pub fn get(&mut self, key: &str) -> Result<Option<Vec<u8>>, ClientError> {
        self.conn.send(&BlobRequest::Get { key: key.into() }.to_line(), &[])?;
        let line = self.conn.line()?;
        match BlobResponse::parse(&line).map_err(|e| self.conn.protocol(e))? {
            BlobResponse::Found(n) if n <= MAX_BLOB_SIZE => {
                let mut data = vec![0u8; n as usize];
                self.conn.reader.read_exact(&mut data).map_err(|e| self.conn.io_err(e))?;
                Ok(Some(data))
            }
            BlobResponse::Miss => Ok(None),
            BlobResponse::Err(m) => Err(self.conn.server(m)),
            other => Err(self.conn.server(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn put(&mut self, key: &str, data: &[u8]) -> Result<(), ClientError> {
        let header = BlobRequest::Put { key: key.into(), size: data.len() as u64 }.to_line();
        self.conn.send(&header, data)?;
        let line = self.conn.line()?;
        match BlobResponse::parse(&line).map_err(|e| self.conn.protocol(e))? {
            BlobResponse::Stored => Ok(()),
            BlobResponse::Err(m) if m == CONFLICT => {
                Err(ClientError::Conflict { addr: self.conn.addr.clone(), key: key.into() })
            }
            BlobResponse::Err(m) => Err(self.conn.server(m)),
            other => Err(self.conn.server(format!("unexpected reply {other:?}"))),
        }
    }
}

/// One connection to each of the three stores.
pub struct CacheSession {
    pub hashserv: HashservClient,
    pub downloads: BlobClient,
    pub sstate: BlobClient,
}

impl CacheSession {
    pub fn connect(e: &CacheEndpoints) -> Result<Self, ClientError> {
        Ok(CacheSession {
            hashserv: HashservClient::connect(&e.hashserv_addr())?,
            downloads: BlobClient::connect(&e.downloads_addr())?,
            sstate: BlobClient::connect(&e.sstate_addr())?,
        })
    }
}
