//! Line-delimited JSON protocol between the harness and an external codec.
//!
//! Every request carries an `op` and an integer `id`; every response echoes
//! the `id`. The session opens with a handshake:
//!
//! ```text
//! > {"op":"hello","id":0,"version":"1","latent_dim":64,"decoding":"greedy"}
//! < {"id":0,"version":"1","latent_dim":64}
//! > {"op":"encode","id":1,"text":"..."}
//! < {"id":1,"vector":[...]}
//! > {"op":"inform","id":2,"prompt":"...","input":"...","vector":[...]}
//! < {"id":2,"ok":true}
//! > {"op":"decode","id":3,"prompt":"...","vector":[...]}
//! < {"id":3,"text":"..."}
//! > {"op":"reset","id":4}
//! < {"id":4,"ok":true}
//! ```
//!
//! A server that cannot satisfy a request answers `{"id":..,"error":".."}`.
//! Vectors must have the `latent_dim` agreed in the handshake.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::Codec;
use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::latent::LatentVector;

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Hello {
        id: u64,
        version: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latent_dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decoding: Option<String>,
    },
    Encode {
        id: u64,
        text: String,
    },
    Decode {
        id: u64,
        prompt: String,
        vector: Vec<f64>,
    },
    Inform {
        id: u64,
        prompt: String,
        input: String,
        vector: Vec<f64>,
    },
    Reset {
        id: u64,
    },
}

impl Request {
    pub fn id(&self) -> u64 {
        match self {
            Request::Hello { id, .. }
            | Request::Encode { id, .. }
            | Request::Decode { id, .. }
            | Request::Inform { id, .. }
            | Request::Reset { id } => *id,
        }
    }

    pub fn op(&self) -> &'static str {
        match self {
            Request::Hello { .. } => "hello",
            Request::Encode { .. } => "encode",
            Request::Decode { .. } => "decode",
            Request::Inform { .. } => "inform",
            Request::Reset { .. } => "reset",
        }
    }
}

/// Serves `codec` until `reader` hits end of input. Requests before the
/// handshake, malformed lines and codec failures get `error` responses;
/// only I/O failures end the loop early.
pub fn serve<C: Codec + ?Sized>(
    codec: &mut C,
    reader: impl BufRead,
    mut writer: impl Write,
) -> Result<()> {
    let mut greeted = false;
    let mut entry_counter = 0usize;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Connection(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").cloned())
                    .unwrap_or(Value::Null);
                json!({"id": id, "error": format!("bad request: {e}")})
            }
            Ok(req) => {
                let id = req.id();
                match handle(codec, req, &mut greeted, &mut entry_counter) {
                    Ok(body) => body,
                    Err(e) => json!({"id": id, "error": e.to_string()}),
                }
            }
        };
        writeln!(writer, "{response}").map_err(|e| Error::Connection(e.to_string()))?;
        writer.flush().map_err(|e| Error::Connection(e.to_string()))?;
    }
    Ok(())
}

fn handle<C: Codec + ?Sized>(
    codec: &mut C,
    req: Request,
    greeted: &mut bool,
    counter: &mut usize,
) -> Result<Value> {
    let dim = codec.latent_dim();
    if !*greeted && !matches!(req, Request::Hello { .. }) {
        return Err(Error::InvalidParameter("handshake required before any other op".into()));
    }
    match req {
        Request::Hello {
            id,
            version,
            latent_dim,
            ..
        } => {
            if version != PROTOCOL_VERSION {
                return Err(Error::InvalidParameter(format!(
                    "unsupported protocol version '{version}'"
                )));
            }
            if let Some(want) = latent_dim {
                if want != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: want,
                    });
                }
            }
            *greeted = true;
            Ok(json!({"id": id, "version": PROTOCOL_VERSION, "latent_dim": dim}))
        }
        Request::Encode { id, text } => {
            let z = codec.encode(&text)?;
            Ok(json!({"id": id, "vector": z.0}))
        }
        Request::Decode { id, prompt, vector } => {
            let text = codec.decode(&prompt, &LatentVector(vector))?;
            Ok(json!({"id": id, "text": text}))
        }
        Request::Inform {
            id,
            prompt,
            input,
            vector,
        } => {
            *counter += 1;
            let pair = SentencePair {
                entry_id: String::new(),
                j: *counter,
                prompt,
                input,
            };
            codec.inform(&pair, &LatentVector(vector))?;
            Ok(json!({"id": id, "ok": true}))
        }
        Request::Reset { id } => {
            *counter = 0;
            codec.reset()?;
            Ok(json!({"id": id, "ok": true}))
        }
    }
}
