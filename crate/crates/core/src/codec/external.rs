use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use log::{debug, error};
use serde_json::Value;

use super::wire::{Request, PROTOCOL_VERSION};
use super::{Codec, DecodingStrategy};
use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::latent::LatentVector;

/// Where the external codec lives.
#[derive(Debug, Clone, PartialEq)]
pub enum Transport {
    /// Program plus arguments; spoken to over its stdin/stdout.
    Subprocess(Vec<String>),
    /// `host:port` of a listening socket.
    Socket(String),
}

/// Proxy for a codec running in another process.
pub struct ExternalCodec {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    latent_dim: usize,
    timeout: Duration,
    next_id: u64,
    /// Set after a timeout or transport error; later calls fail fast.
    broken: Option<String>,
}

impl std::fmt::Debug for ExternalCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalCodec")
            .field("latent_dim", &self.latent_dim)
            .field("timeout", &self.timeout)
            .field("broken", &self.broken)
            .finish()
    }
}

fn spawn_reader<R: std::io::Read + Send + 'static>(source: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(source);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

impl ExternalCodec {
    /// Opens the transport and performs the handshake for `latent_dim`.
    pub fn connect(
        transport: Transport,
        latent_dim: usize,
        decoding: DecodingStrategy,
        timeout: Duration,
    ) -> Result<Self> {
        let (writer, lines, child): (Box<dyn Write + Send>, _, _) = match &transport {
            Transport::Subprocess(argv) => {
                let (program, args) = argv
                    .split_first()
                    .ok_or_else(|| Error::Connection("empty codec command".into()))?;
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Connection(format!("cannot spawn '{program}': {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdin), spawn_reader(stdout), Some(child))
            }
            Transport::Socket(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| Error::Connection(format!("cannot connect to {addr}: {e}")))?;
                // Small request/response lines stall on Nagle otherwise.
                stream
                    .set_nodelay(true)
                    .map_err(|e| Error::Connection(e.to_string()))?;
                let read_half = stream
                    .try_clone()
                    .map_err(|e| Error::Connection(e.to_string()))?;
                (Box::new(stream), spawn_reader(read_half), None)
            }
        };
        let mut codec = ExternalCodec {
            writer,
            lines,
            child,
            latent_dim,
            timeout,
            next_id: 0,
            broken: None,
        };
        let id = codec.fresh_id();
        let reply = codec.call(Request::Hello {
            id,
            version: PROTOCOL_VERSION.into(),
            latent_dim: Some(latent_dim),
            decoding: Some(decoding.as_str().into()),
        })?;
        let version = reply.get("version").and_then(Value::as_str);
        let dim = reply.get("latent_dim").and_then(Value::as_u64);
        if version != Some(PROTOCOL_VERSION) || dim != Some(latent_dim as u64) {
            return Err(protocol(
                format!("handshake expected version {PROTOCOL_VERSION} and latent_dim {latent_dim}"),
                &reply.to_string(),
            ));
        }
        Ok(codec)
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn call(&mut self, request: Request) -> Result<Value> {
        if let Some(reason) = &self.broken {
            return Err(Error::Connection(format!("codec unusable after earlier failure: {reason}")));
        }
        let id = request.id();
        let op = request.op();
        let line = serde_json::to_string(&request)?;
        debug!("codec > {line}");
        if let Err(e) = writeln!(self.writer, "{line}").and_then(|_| self.writer.flush()) {
            self.broken = Some(e.to_string());
            return Err(Error::Connection(format!("write failed: {e}")));
        }
        let raw = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(raw)) => raw,
            Ok(Err(e)) => {
                self.broken = Some(e.to_string());
                return Err(Error::Connection(format!("read failed: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = Some(format!("'{op}' timed out"));
                return Err(Error::Timeout {
                    op: op.into(),
                    seconds: self.timeout.as_secs_f64(),
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = Some("connection closed".into());
                return Err(Error::Connection("codec closed the connection".into()));
            }
        };
        let raw = raw.trim_end();
        debug!("codec < {raw}");
        let value: Value = serde_json::from_str(raw)
            .map_err(|e| protocol(format!("response is not JSON: {e}"), raw))?;
        if value.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(protocol(format!("response id does not match request id {id}"), raw));
        }
        if let Some(msg) = value.get("error") {
            return Err(protocol(format!("codec reported an error for '{op}': {msg}"), raw));
        }
        Ok(value)
    }

    fn vector_from(&self, reply: &Value) -> Result<LatentVector> {
        let payload = reply.to_string();
        let items = reply
            .get("vector")
            .and_then(Value::as_array)
            .ok_or_else(|| protocol("missing 'vector' array".into(), &payload))?;
        let values: Option<Vec<f64>> = items.iter().map(Value::as_f64).collect();
        let values = values.ok_or_else(|| protocol("non-numeric vector element".into(), &payload))?;
        if values.len() != self.latent_dim {
            return Err(protocol(
                format!("vector has {} elements, negotiated {}", values.len(), self.latent_dim),
                &payload,
            ));
        }
        Ok(LatentVector(values))
    }

    fn expect_ok(reply: &Value) -> Result<()> {
        if reply.get("ok").and_then(Value::as_bool) == Some(true) {
            Ok(())
        } else {
            Err(protocol("expected {\"ok\":true}".into(), &reply.to_string()))
        }
    }
}

fn protocol(reason: String, payload: &str) -> Error {
    error!("codec protocol violation: {reason}; payload: {payload}");
    Error::Protocol {
        reason,
        payload: payload.to_string(),
    }
}

impl Codec for ExternalCodec {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn encode(&mut self, text: &str) -> Result<LatentVector> {
        let id = self.fresh_id();
        let reply = self.call(Request::Encode {
            id,
            text: text.to_string(),
        })?;
        self.vector_from(&reply)
    }

    fn inform(&mut self, pair: &SentencePair, z_write: &LatentVector) -> Result<()> {
        z_write.check_dim(self.latent_dim)?;
        let id = self.fresh_id();
        let reply = self.call(Request::Inform {
            id,
            prompt: pair.prompt.clone(),
            input: pair.input.clone(),
            vector: z_write.0.clone(),
        })?;
        Self::expect_ok(&reply)
    }

    fn decode(&mut self, prompt: &str, z: &LatentVector) -> Result<String> {
        z.check_dim(self.latent_dim)?;
        let id = self.fresh_id();
        let reply = self.call(Request::Decode {
            id,
            prompt: prompt.to_string(),
            vector: z.0.clone(),
        })?;
        reply
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| protocol("missing 'text' string".into(), &reply.to_string()))
    }

    fn reset(&mut self) -> Result<()> {
        let id = self.fresh_id();
        let reply = self.call(Request::Reset { id })?;
        Self::expect_ok(&reply)
    }
}

impl Drop for ExternalCodec {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
