//! Request/response channels over stdio pipes or TCP.

use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::{WireError, WireResult};
use crate::frame::{read_frame, write_frame, Frame, MsgType};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// One connection to a model server with at most one request in flight.
///
/// Frames are read on a background thread so every response wait can be
/// bounded by the timeout. A protocol error, timeout or closed stream leaves
/// the channel unusable.
pub struct Channel {
    writer: Box<dyn Write + Send>,
    incoming: Receiver<WireResult<Frame>>,
    timeout: Duration,
    broken: bool,
    child: Option<Child>,
    reader: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel")
            .field("timeout", &self.timeout)
            .field("broken", &self.broken)
            .field("child", &self.child.as_ref().map(Child::id))
            .finish()
    }
}

impl Channel {
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        let handle = std::thread::spawn(move || {
            let mut reader = reader;
            loop {
                match read_frame(&mut reader) {
                    Ok(Some(frame)) => {
                        if tx.send(Ok(frame)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Channel {
            writer: Box::new(writer),
            incoming: rx,
            timeout,
            broken: false,
            child: None,
            reader: Some(handle),
        }
    }

    /// Starts `command` with piped stdin and stdout; stderr is inherited.
    pub fn spawn(command: &mut Command, timeout: Duration) -> WireResult<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().ok_or(WireError::Closed)?;
        let stdout = child.stdout.take().ok_or(WireError::Closed)?;
        let mut ch = Channel::from_streams(stdout, stdin, timeout);
        ch.child = Some(child);
        Ok(ch)
    }

    pub fn connect_tcp(addr: impl ToSocketAddrs, timeout: Duration) -> WireResult<Self> {
        let mut last = None;
        for a in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    let read_half = stream.try_clone()?;
                    return Ok(Channel::from_streams(read_half, stream, timeout));
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.map(WireError::Io).unwrap_or_else(|| WireError::Protocol("no address to connect to".into())))
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn is_broken(&self) -> bool {
        self.broken
    }

    pub fn send(&mut self, frame: &Frame) -> WireResult<()> {
        if self.broken {
            return Err(WireError::Closed);
        }
        write_frame(&mut self.writer, frame).inspect_err(|_| self.broken = true)
    }

    pub fn receive(&mut self) -> WireResult<Frame> {
        if self.broken {
            return Err(WireError::Closed);
        }
        let result = match self.incoming.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(WireError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(WireError::Closed),
        };
        if result.is_err() {
            self.broken = true;
        }
        result
    }

    /// Sends `frame` and waits for the single reply.
    pub fn request(&mut self, frame: &Frame) -> WireResult<Frame> {
        self.send(frame)?;
        self.receive()
    }

    /// Sends SHUTDOWN and, for a spawned server, waits briefly for it to exit.
    pub fn shutdown(&mut self) -> WireResult<()> {
        let sent = if self.broken {
            Ok(())
        } else {
            self.send(&Frame::new(MsgType::Shutdown, Vec::new()))
        };
        self.broken = true;
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_secs(2);
            loop {
                if child.try_wait()?.is_some() {
                    break;
                }
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    break;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
        }
        sent
    }
}

impl Drop for Channel {
    fn drop(&mut self) {
        let _ = self.shutdown();
        // the reader thread ends when the peer closes its side
        drop(self.reader.take());
    }
}
