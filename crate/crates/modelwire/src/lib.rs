//! Out-of-process differentiable models.
//!
//! A server answers forward and vector-Jacobian product requests for one
//! model over a framed binary protocol; [`RemoteModel`] is the client and
//! implements [`gmfim_core::model::DiffModel`], so the engine uses remote
//! and in-process models interchangeably. Tensors travel as `f32`.

pub mod channel;
pub mod client;
pub mod error;
pub mod frame;
pub mod server;

pub use channel::{Channel, DEFAULT_TIMEOUT};
pub use client::{handshake, Endpoint, RemoteModel, PROTOCOL_VERSION};
pub use error::{WireError, WireResult};
pub use frame::{Frame, MsgType, WireTensor};
pub use server::{loopback, serve, serve_tcp_once, ServeOptions, ServeSummary};
