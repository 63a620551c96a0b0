//! Message delivery between users and the server.
//!
//! Both transports carry the same encoded weight messages; the socket mode
//! wraps each one in a `u32` little-endian length prefix.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::codec::{decode_weight_message, encode_weight_message};
use crate::dbwm::WeightTable;
use crate::error::{Error, Result};
use crate::strategies::{apply_round, LoadInstruction, StrategyKind};

/// Frames above this size are rejected before allocating.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    InProcess,
    Socket,
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| Error::Config("frame exceeds u32 length".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(Error::Malformed {
            offset: 0,
            reason: format!("frame length {len} exceeds limit"),
        });
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Encoded reply addressed to one user.
pub type Reply = (u32, Vec<u8>);

/// Server-side round: decode uploads, build the table, run the strategy and
/// encode one reply per instruction. Returns `(user_id, message)` pairs.
pub fn serve_round(
    strategy: StrategyKind,
    epoch: u32,
    uploads: &[Vec<u8>],
) -> Result<(Vec<LoadInstruction>, Vec<Reply>)> {
    let mut table = WeightTable::new(epoch);
    for msg in uploads {
        let (bundle, msg_epoch, user) = decode_weight_message(msg)?;
        if msg_epoch != epoch {
            return Err(Error::State(format!("upload from user {user} tagged epoch {msg_epoch}, expected {epoch}")));
        }
        table.insert(user, bundle)?;
    }
    let instructions = apply_round(strategy, &table)?;
    let replies = instructions
        .iter()
        .map(|ins| Ok((ins.user_id, encode_weight_message(&ins.bundle, epoch, ins.user_id)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((instructions, replies))
}

/// A server thread owning one connection per connected user.
pub struct SocketServer {
    pub addr: SocketAddr,
    handle: JoinHandle<Result<()>>,
}

/// Client ends, keyed by user id.
pub struct SocketClients {
    streams: HashMap<u32, TcpStream>,
}

impl SocketServer {
    /// Binds `127.0.0.1:port` (0 picks a free port), connects one client per
    /// user and serves `epochs` rounds in the background. Each connection
    /// first sends its user id as a 4-byte frame.
    pub fn start(
        port: u16,
        users: &[u32],
        strategy: StrategyKind,
        epochs: u32,
    ) -> Result<(SocketServer, SocketClients)> {
        let listener = TcpListener::bind(("127.0.0.1", port))?;
        let addr = listener.local_addr()?;
        let expected = users.len();
        let handle = std::thread::spawn(move || -> Result<()> {
            let mut conns: Vec<(u32, TcpStream)> = Vec::with_capacity(expected);
            for _ in 0..expected {
                let (mut s, _) = listener.accept()?;
                let hello = read_frame(&mut s)?;
                let id = u32::from_le_bytes(hello.as_slice().try_into().map_err(|_| Error::Malformed {
                    offset: 0,
                    reason: "handshake must be 4 bytes".into(),
                })?);
                conns.push((id, s));
            }
            conns.sort_by_key(|(id, _)| *id);
            for epoch in 1..=epochs {
                // barrier: every connected user's upload before matching
                let uploads = std::thread::scope(|scope| {
                    let readers: Vec<_> = conns
                        .iter_mut()
                        .map(|(_, s)| scope.spawn(move || read_frame(s)))
                        .collect();
                    readers
                        .into_iter()
                        .map(|h| h.join().map_err(|_| Error::State("reader thread panicked".into()))?)
                        .collect::<Result<Vec<_>>>()
                })?;
                let (_, replies) = serve_round(strategy, epoch, &uploads)?;
                let mut by_user: HashMap<u32, Vec<u8>> = replies.into_iter().collect();
                std::thread::scope(|scope| {
                    let writers: Vec<_> = conns
                        .iter_mut()
                        .filter_map(|(id, s)| by_user.remove(id).map(|msg| (s, msg)))
                        .map(|(s, msg)| scope.spawn(move || write_frame(s, &msg)))
                        .collect();
                    writers
                        .into_iter()
                        .try_for_each(|h| h.join().map_err(|_| Error::State("writer thread panicked".into()))?)
                })?;
                if let Some(id) = by_user.keys().next() {
                    return Err(Error::State(format!("no connection for user {id}")));
                }
            }
            Ok(())
        });
        let mut streams = HashMap::with_capacity(expected);
        for &id in users {
            let mut s = TcpStream::connect(addr)?;
            s.set_nodelay(true)?;
            write_frame(&mut s, &id.to_le_bytes())?;
            streams.insert(id, s);
        }
        Ok((SocketServer { addr, handle }, SocketClients { streams }))
    }

    pub fn join(self) -> Result<()> {
        self.handle
            .join()
            .map_err(|_| Error::State("server thread panicked".into()))?
    }
}

impl SocketClients {
    pub fn send(&mut self, user: u32, msg: &[u8]) -> Result<()> {
        write_frame(self.stream(user)?, msg)
    }

    pub fn receive(&mut self, user: u32) -> Result<Vec<u8>> {
        read_frame(self.stream(user)?)
    }

    fn stream(&mut self, user: u32) -> Result<&mut TcpStream> {
        self.streams
            .get_mut(&user)
            .ok_or_else(|| Error::State(format!("user {user} has no connection")))
    }
}
