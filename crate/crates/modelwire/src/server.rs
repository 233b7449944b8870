//! Serving side of the protocol, used by the bundled toy server and by tests.

use std::io::{Read, Write};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use gmfim_core::model::DiffModel;

use crate::channel::Channel;
use crate::client::{hello_response, PROTOCOL_VERSION};
use crate::error::{WireError, WireResult};
use crate::frame::{read_raw_frame, write_frame, Frame, MsgType, WireTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServeOptions {
    pub version: u32,
    pub vjp: bool,
    /// Log every received frame type to standard error.
    pub log_frames: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            version: PROTOCOL_VERSION,
            vjp: true,
            log_frames: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeSummary {
    pub requests: usize,
    pub errors: usize,
    pub shutdown: bool,
}

fn check_dims(t: &WireTensor, expected: &[usize], what: &str) -> Result<(), String> {
    if t.dims_usize() != expected {
        return Err(format!("{what} dims {:?} do not match expected dims {expected:?}", t.dims));
    }
    Ok(())
}

fn answer(model: &dyn DiffModel, opts: &ServeOptions, ty: MsgType, payload: &[u8]) -> Result<Frame, String> {
    let spec = model.spec();
    match ty {
        MsgType::ForwardReq => {
            let x = WireTensor::decode(payload).map_err(|e| e.to_string())?;
            check_dims(&x, &spec.input_shape, "input")?;
            let y = model.forward(&x.to_f64()).map_err(|e| e.to_string())?;
            let t = WireTensor::from_f64(&spec.output_shape, &y).map_err(|e| e.to_string())?;
            Ok(Frame::new(MsgType::ForwardResp, t.encode()))
        }
        MsgType::VjpReq => {
            if !opts.vjp {
                return Err("vjp unsupported".into());
            }
            let (x, c) = WireTensor::decode_pair(payload).map_err(|e| e.to_string())?;
            check_dims(&x, &spec.input_shape, "primal")?;
            check_dims(&c, &spec.output_shape, "cotangent")?;
            let g = model.vjp(&x.to_f64(), &c.to_f64()).map_err(|e| e.to_string())?;
            let t = WireTensor::from_f64(&spec.input_shape, &g).map_err(|e| e.to_string())?;
            Ok(Frame::new(MsgType::VjpResp, t.encode()))
        }
        other => Err(format!("unexpected {other:?} frame from client")),
    }
}

/// Answers frames from `reader` on `writer` until SHUTDOWN or end of input.
///
/// Malformed requests get an ERROR reply and the loop continues. A frame
/// with bad magic loses framing, so it is answered with ERROR and the
/// session ends with a protocol error.
pub fn serve(
    mut reader: impl Read,
    mut writer: impl Write,
    model: &dyn DiffModel,
    opts: &ServeOptions,
) -> WireResult<ServeSummary> {
    let mut summary = ServeSummary::default();
    let mut ready = false;
    loop {
        let (ty, payload) = match read_raw_frame(&mut reader) {
            Ok(Some(raw)) => raw,
            Ok(None) => return Ok(summary),
            Err(e) => {
                let _ = write_frame(&mut writer, &Frame::error(&e.to_string()));
                return Err(e);
            }
        };
        summary.requests += 1;
        let Some(ty) = MsgType::from_byte(ty) else {
            summary.errors += 1;
            write_frame(&mut writer, &Frame::error(&format!("unknown message type 0x{ty:02x}")))?;
            continue;
        };
        if opts.log_frames {
            eprintln!("modelwire: received {ty:?} ({} bytes)", payload.len());
        }
        let reply = match ty {
            MsgType::Shutdown => {
                summary.shutdown = true;
                return Ok(summary);
            }
            MsgType::Hello => {
                // the reply carries our version; the client decides on a mismatch
                ready = payload.first_chunk::<4>().map(|v| u32::from_le_bytes(*v)) == Some(opts.version);
                Ok(hello_response(opts.version, model.spec()))
            }
            _ if !ready => Err("handshake required".to_string()),
            _ => answer(model, opts, ty, &payload),
        };
        let frame = reply.unwrap_or_else(|msg| {
            summary.errors += 1;
            Frame::error(&msg)
        });
        write_frame(&mut writer, &frame)?;
    }
}

/// Serves `model` on a thread connected to the returned channel by pipes.
pub fn loopback(
    model: Arc<dyn DiffModel>,
    opts: ServeOptions,
    timeout: Duration,
) -> WireResult<(Channel, JoinHandle<WireResult<ServeSummary>>)> {
    let (client_read, server_write) = std::io::pipe()?;
    let (server_read, client_write) = std::io::pipe()?;
    let handle = std::thread::spawn(move || serve(server_read, server_write, model.as_ref(), &opts));
    Ok((Channel::from_streams(client_read, client_write, timeout), handle))
}

/// Accepts one TCP connection on `listener` and serves it.
pub fn serve_tcp_once(
    listener: &std::net::TcpListener,
    model: &dyn DiffModel,
    opts: &ServeOptions,
) -> WireResult<ServeSummary> {
    let (stream, _) = listener.accept()?;
    let read_half = stream.try_clone().map_err(WireError::Io)?;
    serve(read_half, stream, model, opts)
}
