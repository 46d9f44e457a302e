//! Client for reconstructor servers speaking the wire protocol.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::wire::{self, Header, Message, Tag, WireError, PROTOCOL_VERSION};
use super::{check_chunked, OracleError, Reconstructor};
use crate::video::Video;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Spawn a process and talk over its stdin/stdout.
    Exec { program: String, args: Vec<String> },
    Tcp { host: String, port: u16 },
}

type Inbound = Result<Message, WireError>;

/// A live connection to an external reconstructor. One request is in flight
/// at a time; any transport or protocol failure makes the handle unusable.
pub struct ExternalOracle {
    id: String,
    k: usize,
    version: u32,
    caps: Vec<String>,
    writer: Box<dyn Write + Send>,
    inbox: Receiver<Inbound>,
    timeout: Duration,
    broken: Option<String>,
    child: Option<Child>,
}

pub fn connect_external(endpoint: &Endpoint, timeout: Duration) -> Result<ExternalOracle, OracleError> {
    match endpoint {
        Endpoint::Exec { program, args } => {
            let mut child = Command::new(program)
                .args(args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| OracleError::OracleUnavailable(format!("spawn {program}: {e}")))?;
            let stdin = child.stdin.take().unwrap();
            let stdout = child.stdout.take().unwrap();
            let id = format!("exec:{}", std::iter::once(program).chain(args).cloned().collect::<Vec<_>>().join(" "));
            let mut oracle = ExternalOracle::from_streams(id, stdout, stdin, timeout)?;
            oracle.child = Some(child);
            Ok(oracle)
        }
        Endpoint::Tcp { host, port } => {
            let unavailable = |e: std::io::Error| OracleError::OracleUnavailable(format!("{host}:{port}: {e}"));
            let addrs: Vec<_> = (host.as_str(), *port).to_socket_addrs().map_err(unavailable)?.collect();
            let mut last = None;
            for addr in addrs {
                match TcpStream::connect_timeout(&addr, timeout) {
                    Ok(stream) => {
                        stream.set_nodelay(true).ok();
                        let read_half = stream.try_clone().map_err(unavailable)?;
                        return ExternalOracle::from_streams(format!("tcp:{host}:{port}"), read_half, stream, timeout);
                    }
                    Err(e) => last = Some(e),
                }
            }
            Err(OracleError::OracleUnavailable(format!(
                "{host}:{port}: {}",
                last.map_or_else(|| "no addresses".to_string(), |e| e.to_string())
            )))
        }
    }
}

impl ExternalOracle {
    /// Performs the handshake over an already-open byte stream pair.
    pub fn from_streams<R, W>(id: String, reader: R, writer: W, timeout: Duration) -> Result<Self, OracleError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, inbox) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let msg = match wire::read_message(&mut reader) {
                    Ok(Some(m)) => Ok(m),
                    Ok(None) => Err(WireError::UnexpectedEof),
                    Err(e) => Err(e),
                };
                let stop = msg.is_err();
                if tx.send(msg).is_err() || stop {
                    break;
                }
            }
        });
        let mut oracle = Self {
            id,
            k: 0,
            version: 0,
            caps: Vec::new(),
            writer: Box::new(BufWriter::new(writer)),
            inbox,
            timeout,
            broken: None,
            child: None,
        };
        oracle.handshake()?;
        Ok(oracle)
    }

    fn handshake(&mut self) -> Result<(), OracleError> {
        let hello = Message::new(Tag::Hello, Header::new().with("version", PROTOCOL_VERSION));
        let fail = |m: String| OracleError::HandshakeFailure(m);
        wire::write_message(&mut self.writer, &hello).map_err(|e| fail(e.to_string()))?;
        let ack = match self.inbox.recv_timeout(self.timeout) {
            Ok(Ok(m)) => m,
            Ok(Err(e)) => return Err(fail(e.to_string())),
            Err(RecvTimeoutError::Timeout) => return Err(OracleError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(fail("reader stopped".into())),
        };
        match ack.tag {
            Tag::HelloAck => {}
            Tag::Error => {
                return Err(fail(format!(
                    "server refused: {} {}",
                    ack.header.get("code").unwrap_or("?"),
                    ack.header.get("msg").unwrap_or("")
                )))
            }
            other => return Err(fail(format!("expected HACK, got {other}"))),
        }
        let version: u32 = ack.header.parse_value("version").map_err(fail)?;
        if version != PROTOCOL_VERSION {
            return Err(OracleError::VersionMismatch {
                server: version,
                client_max: PROTOCOL_VERSION,
            });
        }
        let k: usize = ack.header.parse_value("k").map_err(fail)?;
        if k < 1 {
            return Err(fail("server advertised k=0".into()));
        }
        let caps: Vec<String> = ack
            .header
            .get("caps")
            .unwrap_or("")
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if !caps.iter().any(|c| c == "reconstruct") {
            return Err(fail(format!("server lacks reconstruct capability ({caps:?})")));
        }
        self.k = k;
        self.version = version;
        self.caps = caps;
        Ok(())
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn capabilities(&self) -> &[String] {
        &self.caps
    }

    fn poison(&mut self, err: OracleError) -> OracleError {
        self.broken = Some(err.to_string());
        err
    }

    fn round_trip(&mut self, window: &Video) -> Result<Video, OracleError> {
        let request = Message::tensor(Tag::Request, window);
        if let Err(e) = wire::write_message(&mut self.writer, &request) {
            return Err(self.poison(OracleError::OracleUnavailable(e.to_string())));
        }
        let reply = match self.inbox.recv_timeout(self.timeout) {
            Ok(Ok(m)) => m,
            Ok(Err(e)) => return Err(self.poison(OracleError::OracleUnavailable(e.to_string()))),
            Err(RecvTimeoutError::Timeout) => return Err(self.poison(OracleError::Timeout(self.timeout))),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.poison(OracleError::OracleUnavailable("connection closed".into())))
            }
        };
        match reply.tag {
            Tag::Response => {
                let out = wire::decode_tensor(&reply)
                    .map_err(|e| OracleError::ProtocolViolation(format!("{}: {}", e.code, e.message)));
                match out {
                    Ok(v) if v.frames() == window.frames() && v.shape() == window.shape() => Ok(v),
                    Ok(v) => Err(self.poison(OracleError::ProtocolViolation(format!(
                        "response is {}x{}, request was {}x{}",
                        v.frames(),
                        v.shape(),
                        window.frames(),
                        window.shape()
                    )))),
                    Err(e) => Err(self.poison(e)),
                }
            }
            Tag::Error => Err(OracleError::Remote {
                code: reply.header.get("code").unwrap_or("unknown").to_string(),
                message: reply.header.get("msg").unwrap_or("").to_string(),
            }),
            other => Err(self.poison(OracleError::ProtocolViolation(format!("unexpected {other}")))),
        }
    }
}

impl Reconstructor for ExternalOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn chunk_frames(&self) -> usize {
        self.k
    }

    fn reconstruct(&mut self, window: &Video) -> Result<Video, OracleError> {
        if let Some(reason) = &self.broken {
            return Err(OracleError::OracleUnavailable(format!("connection unusable after: {reason}")));
        }
        check_chunked(window, self.k)?;
        self.round_trip(window)
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
