//! Remote models: the handshake and `DiffModel` over a channel.

use std::net::ToSocketAddrs;
use std::process::Command;
use std::sync::Mutex;
use std::time::Duration;

use gmfim_core::model::{DiffModel, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::channel::{Channel, DEFAULT_TIMEOUT};
use crate::error::{WireError, WireResult};
use crate::frame::{Frame, MsgType, WireTensor};

pub const PROTOCOL_VERSION: u32 = 1;

/// Payload of the client HELLO.
pub fn hello_request(version: u32) -> Frame {
    Frame::new(MsgType::Hello, version.to_le_bytes().to_vec())
}

/// Payload of the server HELLO: its version followed by the spec as JSON.
pub fn hello_response(version: u32, spec: &ModelSpec) -> Frame {
    let mut payload = version.to_le_bytes().to_vec();
    payload.extend_from_slice(&serde_json::to_vec(spec).expect("spec serializes"));
    Frame::new(MsgType::Hello, payload)
}

fn remote_error(frame: &Frame) -> WireError {
    WireError::Remote(String::from_utf8_lossy(&frame.payload).into_owned())
}

/// Performs the HELLO exchange and returns the served spec.
pub fn handshake(channel: &mut Channel, version: u32) -> WireResult<ModelSpec> {
    let reply = channel.request(&hello_request(version))?;
    match reply.msg_type {
        MsgType::Hello => {}
        MsgType::Error => return Err(remote_error(&reply)),
        other => return Err(WireError::Protocol(format!("expected HELLO, got {other:?}"))),
    }
    let (head, json) = reply
        .payload
        .split_first_chunk::<4>()
        .ok_or_else(|| WireError::Protocol("HELLO reply shorter than a version".into()))?;
    let server = u32::from_le_bytes(*head);
    if server != version {
        return Err(WireError::Version { client: version, server });
    }
    let spec: ModelSpec = serde_json::from_slice(json).map_err(|e| WireError::Spec(e.to_string()))?;
    spec.validate().map_err(|e| WireError::Spec(e.to_string()))?;
    Ok(spec)
}

/// A model served by another process.
#[derive(Debug)]
pub struct RemoteModel {
    spec: ModelSpec,
    channel: Mutex<Channel>,
}

impl RemoteModel {
    pub fn handshake(mut channel: Channel) -> WireResult<Self> {
        let spec = handshake(&mut channel, PROTOCOL_VERSION)?;
        Ok(RemoteModel {
            spec,
            channel: Mutex::new(channel),
        })
    }

    pub fn spawn(command: &mut Command, timeout: Duration) -> WireResult<Self> {
        RemoteModel::handshake(Channel::spawn(command, timeout)?)
    }

    pub fn connect_tcp(addr: impl ToSocketAddrs, timeout: Duration) -> WireResult<Self> {
        RemoteModel::handshake(Channel::connect_tcp(addr, timeout)?)
    }

    fn call(&self, request: Frame, expect: MsgType, out_dims: &[usize]) -> WireResult<Vec<f64>> {
        let mut ch = self.channel.lock().map_err(|_| WireError::Closed)?;
        let reply = ch.request(&request)?;
        if reply.msg_type == MsgType::Error {
            return Err(remote_error(&reply));
        }
        if reply.msg_type != expect {
            return Err(WireError::Protocol(format!("expected {expect:?}, got {:?}", reply.msg_type)));
        }
        let t = WireTensor::decode(&reply.payload)?;
        if t.dims_usize() != out_dims {
            return Err(WireError::Protocol(format!("response dims {:?}, expected {out_dims:?}", t.dims)));
        }
        Ok(t.to_f64())
    }

    pub fn forward_wire(&self, input: &[f64]) -> WireResult<Vec<f64>> {
        let t = WireTensor::from_f64(&self.spec.input_shape, input)?;
        self.call(
            Frame::new(MsgType::ForwardReq, t.encode()),
            MsgType::ForwardResp,
            &self.spec.output_shape,
        )
    }

    pub fn vjp_wire(&self, input: &[f64], cotangent: &[f64]) -> WireResult<Vec<f64>> {
        let mut payload = WireTensor::from_f64(&self.spec.input_shape, input)?.encode();
        WireTensor::from_f64(&self.spec.output_shape, cotangent)?.encode_into(&mut payload);
        self.call(
            Frame::new(MsgType::VjpReq, payload),
            MsgType::VjpResp,
            &self.spec.input_shape,
        )
    }

    pub fn shutdown(&self) -> WireResult<()> {
        self.channel.lock().map_err(|_| WireError::Closed)?.shutdown()
    }
}

impl DiffModel for RemoteModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn forward(&self, input: &[f64]) -> gmfim_core::Result<Vec<f64>> {
        Ok(self.forward_wire(input)?)
    }

    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> gmfim_core::Result<Vec<f64>> {
        Ok(self.vjp_wire(input, cotangent)?)
    }
}

/// Where a remote model lives; the form used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "lowercase")]
pub enum Endpoint {
    Stdio {
        command: Vec<String>,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
    Tcp {
        address: String,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
}

impl Endpoint {
    pub fn timeout(&self) -> Duration {
        let secs = match self {
            Endpoint::Stdio { timeout_secs, .. } | Endpoint::Tcp { timeout_secs, .. } => *timeout_secs,
        };
        secs.filter(|s| *s > 0.0).map(Duration::from_secs_f64).unwrap_or(DEFAULT_TIMEOUT)
    }

    pub fn connect(&self) -> WireResult<RemoteModel> {
        match self {
            Endpoint::Stdio { command, .. } => {
                let (program, args) = command
                    .split_first()
                    .ok_or_else(|| WireError::Protocol("empty server command".into()))?;
                RemoteModel::spawn(Command::new(program).args(args), self.timeout())
            }
            Endpoint::Tcp { address, .. } => RemoteModel::connect_tcp(address.as_str(), self.timeout()),
        }
    }
}
