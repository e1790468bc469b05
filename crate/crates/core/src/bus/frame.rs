//! Loopback wire frames.
//!
//! ```text
//! u32 LE  length of everything that follows
//! u8      kind (0 topic msg, 1 service req, 2 service resp, 3 param op)
//! u16 LE  name length, then the UTF-8 name
//! ...     payload
//! ```
//!
//! Payload conventions per kind:
//!
//! * topic msg: `u64 LE` stamp in nanoseconds, then the message bytes. A
//!   topic frame with an empty payload sent by a client subscribes it.
//! * service req: `u32 LE` request id, then the request bytes.
//! * service resp: `u32 LE` request id, `u8` status (see [`ServiceStatus`]),
//!   then the response bytes.
//! * param op: `u32 LE` request id, `u8` op (see [`ParamOp`]), then either an
//!   encoded [`ParamValue`] or, for errors, a `u8` error code.

use std::io::{self, Read, Write};

use super::ParamValue;

pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    TopicMsg = 0,
    ServiceReq = 1,
    ServiceResp = 2,
    ParamOp = 3,
}

impl FrameKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::TopicMsg),
            1 => Some(Self::ServiceReq),
            2 => Some(Self::ServiceResp),
            3 => Some(Self::ParamOp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ServiceStatus {
    Ok = 0,
    UnknownService = 1,
    Timeout = 2,
    NoHandler = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ParamOp {
    Get = 0,
    Set = 1,
    ReplyOk = 2,
    ReplyErr = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ParamErrorCode {
    Unknown = 1,
    NotWritable = 2,
    TypeMismatch = 3,
    Malformed = 4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub name: String,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, name: &str, payload: Vec<u8>) -> Self {
        Self {
            kind,
            name: name.to_string(),
            payload,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let name = self.name.as_bytes();
        let body_len = 1 + 2 + name.len() + self.payload.len();
        let mut out = Vec::with_capacity(4 + body_len);
        out.extend_from_slice(&(body_len as u32).to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decode one frame from the front of `buf`. `Ok(None)` means more bytes
    /// are needed; on success also returns the number of bytes consumed.
    pub fn decode(buf: &[u8]) -> io::Result<Option<(Frame, usize)>> {
        if buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
        if !(3..=MAX_FRAME_LEN).contains(&len) {
            return Err(invalid("bad frame length"));
        }
        if buf.len() < 4 + len {
            return Ok(None);
        }
        let body = &buf[4..4 + len];
        Ok(Some((Self::decode_body(body)?, 4 + len)))
    }

    fn decode_body(body: &[u8]) -> io::Result<Frame> {
        let kind = FrameKind::from_u8(body[0]).ok_or_else(|| invalid("bad frame kind"))?;
        let name_len = u16::from_le_bytes([body[1], body[2]]) as usize;
        if body.len() < 3 + name_len {
            return Err(invalid("name overruns frame"));
        }
        let name = std::str::from_utf8(&body[3..3 + name_len])
            .map_err(|_| invalid("name not UTF-8"))?
            .to_string();
        Ok(Frame {
            kind,
            name,
            payload: body[3 + name_len..].to_vec(),
        })
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Frame> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if !(3..=MAX_FRAME_LEN).contains(&len) {
            return Err(invalid("bad frame length"));
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)?;
        Self::decode_body(&body)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

pub fn encode_param_value(v: &ParamValue, out: &mut Vec<u8>) {
    match v {
        ParamValue::Bool(b) => {
            out.push(0);
            out.push(*b as u8);
        }
        ParamValue::Int(i) => {
            out.push(1);
            out.extend_from_slice(&i.to_le_bytes());
        }
        ParamValue::Float(f) => {
            out.push(2);
            out.extend_from_slice(&f.to_le_bytes());
        }
        ParamValue::FloatArray(a) => {
            out.push(3);
            out.extend_from_slice(&(a.len() as u32).to_le_bytes());
            for f in a {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        ParamValue::Str(s) => {
            out.push(4);
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
    }
}

pub fn decode_param_value(buf: &[u8]) -> Option<ParamValue> {
    let (&tag, rest) = buf.split_first()?;
    match tag {
        0 => Some(ParamValue::Bool(*rest.first()? != 0)),
        1 => Some(ParamValue::Int(i64::from_le_bytes(rest.get(..8)?.try_into().ok()?))),
        2 => Some(ParamValue::Float(f64::from_le_bytes(rest.get(..8)?.try_into().ok()?))),
        3 => {
            let n = u32::from_le_bytes(rest.get(..4)?.try_into().ok()?) as usize;
            let data = rest.get(4..4 + n.checked_mul(8)?)?;
            Some(ParamValue::FloatArray(
                data.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ))
        }
        4 => {
            let n = u32::from_le_bytes(rest.get(..4)?.try_into().ok()?) as usize;
            let s = std::str::from_utf8(rest.get(4..4 + n)?).ok()?;
            Some(ParamValue::Str(s.to_string()))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_length_kind_name_payload() {
        let f = Frame::new(FrameKind::ServiceReq, "ab", vec![9, 8]);
        assert_eq!(f.encode(), vec![7, 0, 0, 0, 1, 2, 0, b'a', b'b', 9, 8]);
    }

    #[test]
    fn partial_input_needs_more() {
        let bytes = Frame::new(FrameKind::TopicMsg, "t", vec![1; 10]).encode();
        assert!(Frame::decode(&bytes[..5]).unwrap().is_none());
        assert!(Frame::decode(&[9, 0, 0, 0, 7, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
    }

    fn param_strategy() -> impl Strategy<Value = ParamValue> {
        prop_oneof![
            any::<bool>().prop_map(ParamValue::Bool),
            any::<i64>().prop_map(ParamValue::Int),
            (-1e9f64..1e9).prop_map(ParamValue::Float),
            proptest::collection::vec(-1e9f64..1e9, 0..8).prop_map(ParamValue::FloatArray),
            "[a-z/_]{0,16}".prop_map(ParamValue::Str),
        ]
    }

    proptest! {
        #[test]
        fn frame_and_param_codec_round_trip(
            kind in 0u8..4,
            name in "[a-z/_]{0,24}",
            payload in proptest::collection::vec(any::<u8>(), 0..256),
            value in param_strategy(),
        ) {
            let f = Frame::new(FrameKind::from_u8(kind).unwrap(), &name, payload);
            let bytes = f.encode();
            let (g, used) = Frame::decode(&bytes).unwrap().unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(g, f);
            let mut buf = Vec::new();
            encode_param_value(&value, &mut buf);
            prop_assert_eq!(decode_param_value(&buf), Some(value));
        }
    }
}
