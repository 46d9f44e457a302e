//! Reconstructor wire protocol, version 1.
//!
//! Every message is framed the same way over stdio or TCP:
//!
//! ```text
//! tag: 4 ASCII bytes | header_len: u32 LE | header: UTF-8 key=value lines
//! payload_len: u64 LE | payload bytes
//! ```
//!
//! `HELO`/`HACK` negotiate the version and chunk size, `RECQ`/`RECR` carry
//! f32 LE tensors, and `ERRR` reports a failure with `code` and `msg`.

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use super::Reconstructor;
use crate::video::{FrameShape, Video};

pub const PROTOCOL_VERSION: u32 = 1;
/// Headers are small text blocks; anything larger is a framing error.
pub const MAX_HEADER_LEN: u32 = 64 * 1024;
pub const MAX_PAYLOAD_LEN: u64 = 1 << 32;
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Hello,
    HelloAck,
    Request,
    Response,
    Error,
}

impl Tag {
    pub fn bytes(self) -> [u8; 4] {
        *match self {
            Tag::Hello => b"HELO",
            Tag::HelloAck => b"HACK",
            Tag::Request => b"RECQ",
            Tag::Response => b"RECR",
            Tag::Error => b"ERRR",
        }
    }

    pub fn from_bytes(b: [u8; 4]) -> Option<Self> {
        Some(match &b {
            b"HELO" => Tag::Hello,
            b"HACK" => Tag::HelloAck,
            b"RECQ" => Tag::Request,
            b"RECR" => Tag::Response,
            b"ERRR" => Tag::Error,
            _ => return None,
        })
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(std::str::from_utf8(&self.bytes()).unwrap())
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed mid-message")]
    UnexpectedEof,
    #[error("framing: {0}")]
    Framing(String),
}

/// Ordered `key=value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Header(Vec<(String, String)>);

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T, String> {
        let raw = self.get(key).ok_or_else(|| format!("missing header key `{key}`"))?;
        raw.parse().map_err(|_| format!("bad value `{raw}` for `{key}`"))
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses newline-separated `key=value` lines; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut pairs = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("header line `{line}` lacks `=`"))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self(pairs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub tag: Tag,
    pub header: Header,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(tag: Tag, header: Header) -> Self {
        Self {
            tag,
            header,
            payload: Vec::new(),
        }
    }

    pub fn error(code: &str, msg: impl fmt::Display) -> Self {
        // Keep the message on one header line.
        let msg = msg.to_string().replace(['\n', '\r'], " ");
        Self::new(Tag::Error, Header::new().with("code", code).with("msg", msg))
    }

    /// A `RECQ` or `RECR` carrying `video`.
    pub fn tensor(tag: Tag, video: &Video) -> Self {
        let mut payload = Vec::with_capacity(4 * video.data().len());
        for v in video.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            tag,
            header: tensor_header(video.frames(), video.shape()),
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header.render();
        let mut buf = Vec::with_capacity(16 + header.len() + self.payload.len());
        buf.extend_from_slice(&self.tag.bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        buf.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.payload);
        buf
    }
}

pub fn tensor_header(frames: usize, shape: FrameShape) -> Header {
    Header::new()
        .with("t", frames)
        .with("h", shape.height)
        .with("w", shape.width)
        .with("c", shape.channels)
        .with("dtype", DTYPE)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&msg.to_bytes())?;
    w.flush()
}

/// Reads one message. `Ok(None)` means the peer closed cleanly between
/// messages.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, WireError> {
    let mut tag = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut tag[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::UnexpectedEof),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let tag = Tag::from_bytes(tag)
        .ok_or_else(|| WireError::Framing(format!("unknown tag {:02x?}", tag)))?;
    let mut len4 = [0u8; 4];
    read_exact(r, &mut len4)?;
    let header_len = u32::from_le_bytes(len4);
    if header_len > MAX_HEADER_LEN {
        return Err(WireError::Framing(format!("header length {header_len} too large")));
    }
    let mut header = vec![0u8; header_len as usize];
    read_exact(r, &mut header)?;
    let header = String::from_utf8(header)
        .map_err(|_| WireError::Framing("header is not UTF-8".into()))?;
    let header = Header::parse(&header).map_err(WireError::Framing)?;
    let mut len8 = [0u8; 8];
    read_exact(r, &mut len8)?;
    let payload_len = u64::from_le_bytes(len8);
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(WireError::Framing(format!("payload length {payload_len} too large")));
    }
    let mut payload = vec![0u8; payload_len as usize];
    read_exact(r, &mut payload)?;
    Ok(Some(Message {
        tag,
        header,
        payload,
    }))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), WireError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::UnexpectedEof,
        _ => WireError::Io(e),
    })
}

/// Why a tensor message was rejected; `code` is the `ERRR` symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadError {
    pub code: &'static str,
    pub message: String,
}

/// Decodes the tensor of a `RECQ`/`RECR`. Values outside `[0, 1]` are clamped.
pub fn decode_tensor(msg: &Message) -> Result<Video, PayloadError> {
    let bad = |code, message: String| PayloadError { code, message };
    let dim = |k| msg.header.parse_value::<usize>(k).map_err(|m| bad("bad_header", m));
    let (t, h, w, c) = (dim("t")?, dim("h")?, dim("w")?, dim("c")?);
    match msg.header.get("dtype") {
        Some(DTYPE) => {}
        other => return Err(bad("bad_dtype", format!("dtype {other:?}, expected {DTYPE}"))),
    }
    let expected = [t, h, w, c, 4]
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| bad("bad_payload", "dimensions overflow".into()))?;
    if expected != msg.payload.len() {
        return Err(bad(
            "bad_payload",
            format!("dims {t}x{h}x{w}x{c} need {expected} bytes, payload has {}", msg.payload.len()),
        ));
    }
    let data: Vec<f32> = msg
        .payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Video::new_clamped(t, FrameShape::new(h, w, c), data)
        .map(|(v, _)| v)
        .map_err(|e| bad("bad_payload", e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServeOptions {
    /// Version advertised in `HACK`.
    pub version: u32,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            version: PROTOCOL_VERSION,
        }
    }
}

/// Serves one connection until the client disconnects.
///
/// Framing violations and malformed tensors are answered with `ERRR` and the
/// connection is closed; a failed reconstruction is answered with `ERRR` and
/// the loop continues.
pub fn serve_connection<R: Read, W: Write>(
    reader: &mut R,
    writer: &mut W,
    oracle: &mut dyn Reconstructor,
    opts: ServeOptions,
) -> Result<(), WireError> {
    let hello = match read_message(reader) {
        Ok(Some(m)) => m,
        Ok(None) => return Ok(()),
        Err(e) => return reject(writer, "framing", e),
    };
    if hello.tag != Tag::Hello {
        let err = WireError::Framing(format!("expected HELO, got {}", hello.tag));
        return reject(writer, "protocol", err);
    }
    let ack = Header::new()
        .with("version", opts.version)
        .with("k", oracle.chunk_frames())
        .with("caps", "reconstruct");
    write_message(writer, &Message::new(Tag::HelloAck, ack))?;
    loop {
        let msg = match read_message(reader) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(e) => return reject(writer, "framing", e),
        };
        if msg.tag != Tag::Request {
            let err = WireError::Framing(format!("expected RECQ, got {}", msg.tag));
            return reject(writer, "protocol", err);
        }
        let window = match decode_tensor(&msg) {
            Ok(v) => v,
            Err(e) => {
                write_message(writer, &Message::error(e.code, &e.message))?;
                return Err(WireError::Framing(e.message));
            }
        };
        let reply = match oracle.reconstruct(&window) {
            Ok(out) => Message::tensor(Tag::Response, &out),
            Err(e) => Message::error("reconstruct_failed", e),
        };
        write_message(writer, &reply)?;
    }
}

fn reject<W: Write>(writer: &mut W, code: &str, err: WireError) -> Result<(), WireError> {
    // The peer may already be gone; the original error is what matters.
    let _ = write_message(writer, &Message::error(code, &err));
    Err(err)
}
