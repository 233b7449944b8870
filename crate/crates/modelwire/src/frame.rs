//! Frame and tensor encodings.
//!
//! A frame is `"GMW1"`, a message type byte, a little-endian `u32` payload
//! length and the payload. A tensor is a `u8` rank, one little-endian `u32`
//! per dimension and row-major little-endian `f32` data.

use std::io::{Read, Write};

use crate::error::{WireError, WireResult};

pub const MAGIC: [u8; 4] = *b"GMW1";
pub const HEADER_LEN: usize = 9;
/// Largest payload accepted from a peer.
pub const MAX_PAYLOAD: u32 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    ForwardReq = 0x02,
    ForwardResp = 0x03,
    VjpReq = 0x04,
    VjpResp = 0x05,
    Error = 0x06,
    Shutdown = 0x07,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Option<MsgType> {
        Some(match b {
            0x01 => MsgType::Hello,
            0x02 => MsgType::ForwardReq,
            0x03 => MsgType::ForwardResp,
            0x04 => MsgType::VjpReq,
            0x05 => MsgType::VjpResp,
            0x06 => MsgType::Error,
            0x07 => MsgType::Shutdown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Frame { msg_type, payload }
    }

    pub fn error(message: &str) -> Self {
        Frame::new(MsgType::Error, message.as_bytes().to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> WireResult<Frame> {
        let mut cursor = bytes;
        let frame = read_frame(&mut cursor)?.ok_or_else(|| WireError::Protocol("empty input".into()))?;
        if !cursor.is_empty() {
            return Err(WireError::Protocol(format!("{} trailing bytes after frame", cursor.len())));
        }
        Ok(frame)
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> WireResult<()> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` means the stream ended cleanly before a header.
pub fn read_frame(r: &mut impl Read) -> WireResult<Option<Frame>> {
    match read_raw_frame(r)? {
        None => Ok(None),
        Some((ty, payload)) => {
            let msg_type = MsgType::from_byte(ty)
                .ok_or_else(|| WireError::Protocol(format!("unknown message type 0x{ty:02x}")))?;
            Ok(Some(Frame { msg_type, payload }))
        }
    }
}

/// Reads one frame without interpreting its type byte, so a reader can skip
/// frames of unknown type and stay in sync.
pub fn read_raw_frame(r: &mut impl Read) -> WireResult<Option<(u8, Vec<u8>)>> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Protocol("truncated frame header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if header[..4] != MAGIC {
        return Err(WireError::Protocol(format!("bad magic {:02x?}", &header[..4])));
    }
    let len = u32::from_le_bytes([header[5], header[6], header[7], header[8]]);
    if len > MAX_PAYLOAD {
        return Err(WireError::Protocol(format!("payload of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => WireError::Protocol("truncated frame payload".into()),
        _ => e.into(),
    })?;
    Ok(Some((header[4], payload)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireTensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl WireTensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> WireResult<Self> {
        let t = WireTensor { dims, data };
        t.check()?;
        Ok(t)
    }

    /// Rounds `values` to `f32`.
    pub fn from_f64(dims: &[usize], values: &[f64]) -> WireResult<Self> {
        let dims = dims
            .iter()
            .map(|&d| u32::try_from(d).map_err(|_| WireError::Protocol(format!("dimension {d} too large"))))
            .collect::<WireResult<Vec<u32>>>()?;
        WireTensor::new(dims, values.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    pub fn element_count(&self) -> u64 {
        self.dims.iter().map(|&d| u64::from(d)).product()
    }

    fn check(&self) -> WireResult<()> {
        if self.dims.is_empty() || self.dims.len() > usize::from(u8::MAX) {
            return Err(WireError::Protocol(format!("unsupported tensor rank {}", self.dims.len())));
        }
        let n = self.element_count();
        if n == 0 {
            return Err(WireError::Protocol("zero-length tensor".into()));
        }
        if n != self.data.len() as u64 {
            return Err(WireError::Protocol(format!(
                "tensor dims {:?} need {n} values, got {}",
                self.dims,
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 * (self.dims.len() + self.data.len()));
        self.encode_into(&mut out);
        out
    }

    /// Decodes one tensor from the front of `bytes` and returns the rest.
    pub fn decode_prefix(bytes: &[u8]) -> WireResult<(WireTensor, &[u8])> {
        let short = || WireError::Protocol("truncated tensor".into());
        let (&ndim, mut rest) = bytes.split_first().ok_or_else(short)?;
        let mut dims = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            let (d, tail) = rest.split_first_chunk::<4>().ok_or_else(short)?;
            dims.push(u32::from_le_bytes(*d));
            rest = tail;
        }
        if ndim == 0 {
            return Err(WireError::Protocol("unsupported tensor rank 0".into()));
        }
        let n: u64 = dims.iter().map(|&d| u64::from(d)).product();
        if n == 0 {
            return Err(WireError::Protocol("zero-length tensor".into()));
        }
        let byte_len = n.checked_mul(4).filter(|&b| b <= rest.len() as u64).ok_or_else(short)? as usize;
        let (body, rest) = rest.split_at(byte_len);
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((WireTensor { dims, data }, rest))
    }

    /// Decodes a payload holding exactly one tensor.
    pub fn decode(bytes: &[u8]) -> WireResult<WireTensor> {
        let (t, rest) = WireTensor::decode_prefix(bytes)?;
        if !rest.is_empty() {
            return Err(WireError::Protocol(format!("{} trailing bytes after tensor", rest.len())));
        }
        Ok(t)
    }

    /// Decodes a payload holding exactly two tensors.
    pub fn decode_pair(bytes: &[u8]) -> WireResult<(WireTensor, WireTensor)> {
        let (a, rest) = WireTensor::decode_prefix(bytes)?;
        Ok((a, WireTensor::decode(rest)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hello_header_bytes() {
        let f = Frame::new(MsgType::Hello, 1u32.to_le_bytes().to_vec());
        assert_eq!(f.encode(), b"GMW1\x01\x04\x00\x00\x00\x01\x00\x00\x00");
    }

    #[test]
    fn tensor_bytes() {
        let t = WireTensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        assert_eq!(t.encode(), [1, 2, 0, 0, 0, 0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Frame::decode(b"XXXX\x01\x00\x00\x00\x00"), Err(WireError::Protocol(_))));
        assert!(Frame::decode(b"GMW1\x09\x00\x00\x00\x00").is_err());
        assert!(Frame::decode(b"GMW1\x02\x05\x00\x00\x00ab").is_err());
        assert!(Frame::decode(b"GMW1\x02").is_err());
        assert!(WireTensor::new(vec![0, 3], vec![]).is_err());
        assert!(WireTensor::decode(&[1, 0, 0, 0, 0]).is_err());
        assert!(WireTensor::decode(&[1, 2, 0, 0, 0, 0, 0, 0, 0]).is_err());
        assert!(WireTensor::decode(&[0]).is_err());
        assert!(WireTensor::new(vec![2], vec![1.0]).is_err());
    }

    #[test]
    fn clean_end_of_stream() {
        let mut empty: &[u8] = &[];
        assert!(read_frame(&mut empty).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn frame_round_trip(ty in 1u8..=7, payload in proptest::collection::vec(any::<u8>(), 0..64)) {
            let f = Frame::new(MsgType::from_byte(ty).unwrap(), payload);
            prop_assert_eq!(Frame::decode(&f.encode()).unwrap(), f);
        }

        #[test]
        fn tensor_round_trip(dims in proptest::collection::vec(1u32..4, 1..4), seed in any::<u32>()) {
            let n: u32 = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| (i ^ seed) as f32 * 0.25 - 3.0).collect();
            let t = WireTensor::new(dims, data).unwrap();
            let mut two = t.encode();
            t.encode_into(&mut two);
            let (a, b) = WireTensor::decode_pair(&two).unwrap();
            prop_assert_eq!(&a, &t);
            prop_assert_eq!(&b, &t);
        }
    }
}
