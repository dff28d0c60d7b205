//! Client side of the prior service wire protocol.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! handshake  client → "SIDP1", server echoes "SIDP1"
//! request    [msg_type u8: 1 depth | 2 features][height u32][width u32][f32 × H·W·3 RGB]
//! depth      [height u32][width u32][f32 × H·W]
//! features   [dim u32][f32 × dim]
//! error      [0xFFFF_FFFF u32][status u8: msg_type echo | 0xFF][len u32][UTF-8 message]
//! ```
//! The error sentinel occupies the position of the first header field, a value
//! no success response can carry.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Mutex;
use std::time::Duration;

use crate::buffer::{Image, Map};
use crate::error::{Error, Result};

pub const HANDSHAKE: &[u8; 5] = b"SIDP1";
pub const MSG_DEPTH: u8 = 1;
pub const MSG_FEATURES: u8 = 2;
pub const ERROR_SENTINEL: u32 = 0xFFFF_FFFF;
pub const STATUS_UNKNOWN: u8 = 0xFF;

/// Largest payload element count accepted from a server.
const MAX_ELEMENTS: usize = 1 << 28;

pub fn encode_request(msg_type: u8, image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + image.data.len() * 4);
    out.push(msg_type);
    out.extend_from_slice(&(image.height as u32).to_le_bytes());
    out.extend_from_slice(&(image.width as u32).to_le_bytes());
    for v in &image.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn encode_depth_response(map: &Map) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + map.data.len() * 4);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    for v in &map.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn encode_features_response(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + values.len() * 4);
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn encode_error_frame(status: u8, message: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + message.len());
    out.extend_from_slice(&ERROR_SENTINEL.to_le_bytes());
    out.push(status);
    out.extend_from_slice(&(message.len() as u32).to_le_bytes());
    out.extend_from_slice(message.as_bytes());
    out
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    if count > MAX_ELEMENTS {
        return Err(Error::Service(format!("response announces {count} values")));
    }
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Reads the first header word, surfacing an error frame verbatim.
fn read_header(r: &mut impl Read) -> Result<u32> {
    let first = read_u32(r)?;
    if first != ERROR_SENTINEL {
        return Ok(first);
    }
    let mut status = [0u8; 1];
    r.read_exact(&mut status)?;
    let len = read_u32(r)? as usize;
    if len > MAX_ELEMENTS {
        return Err(Error::Service(format!("error frame announces {len} bytes")));
    }
    let mut msg = vec![0u8; len];
    r.read_exact(&mut msg)?;
    Err(Error::Remote(String::from_utf8_lossy(&msg).into_owned()))
}

/// Decodes a depth response and checks it against the requested size.
pub fn decode_depth_response(r: &mut impl Read, width: usize, height: usize) -> Result<Map> {
    let h = read_header(r)? as usize;
    let w = read_u32(r)? as usize;
    if (w, h) != (width, height) {
        return Err(Error::DimensionMismatch {
            expected: (width, height),
            actual: (w, h),
        });
    }
    let values = read_f32s(r, w * h)?;
    Map::from_data(w, h, values)
}

pub fn decode_features_response(r: &mut impl Read) -> Result<Vec<f64>> {
    let dim = read_header(r)? as usize;
    read_f32s(r, dim)
}

/// Blocking client holding one connection; requests are serialized.
#[derive(Debug)]
pub struct ServiceClient {
    endpoint: String,
    timeout: Duration,
    conn: Mutex<Option<TcpStream>>,
}

impl Clone for ServiceClient {
    fn clone(&self) -> Self {
        Self::new(self.endpoint.clone(), self.timeout)
    }
}

impl ServiceClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
            conn: Mutex::new(None),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn connect(&self) -> Result<TcpStream> {
        let unreachable = |e: std::io::Error| Error::Service(format!("{}: {e}", self.endpoint));
        let mut stream = TcpStream::connect(&self.endpoint).map_err(unreachable)?;
        stream.set_read_timeout(Some(self.timeout)).map_err(unreachable)?;
        stream.set_write_timeout(Some(self.timeout)).map_err(unreachable)?;
        stream.set_nodelay(true).ok();
        stream.write_all(HANDSHAKE).map_err(unreachable)?;
        let mut echo = [0u8; 5];
        stream.read_exact(&mut echo).map_err(unreachable)?;
        if &echo != HANDSHAKE {
            return Err(Error::Service(format!("unexpected handshake reply {echo:?}")));
        }
        Ok(stream)
    }

    fn round_trip<T>(&self, request: &[u8], decode: impl FnOnce(&mut TcpStream) -> Result<T>) -> Result<T> {
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        let stream = guard.as_mut().unwrap();
        let result = stream
            .write_all(request)
            .map_err(Error::from)
            .and_then(|_| decode(stream));
        match result {
            // a remote error frame leaves the stream in sync
            Err(Error::Remote(_)) | Ok(_) => result,
            Err(e) => {
                *guard = None;
                Err(match e {
                    Error::Stream(io) => Error::Service(format!("{}: {io}", self.endpoint)),
                    other => other,
                })
            }
        }
    }

    pub fn depth(&self, image: &Image) -> Result<Map> {
        let request = encode_request(MSG_DEPTH, image);
        self.round_trip(&request, |s| decode_depth_response(s, image.width, image.height))
    }

    pub fn features(&self, patch: &Image) -> Result<Vec<f64>> {
        let request = encode_request(MSG_FEATURES, patch);
        self.round_trip(&request, decode_features_response)
    }
}
