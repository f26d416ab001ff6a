//! Encoders (text to latent) and decoders (prompt plus latent constraint to
//! text).
//!
//! [`ReferenceCodec`] is the deterministic in-process implementation;
//! [`ExternalCodec`] proxies the same calls to another process over the
//! line-delimited JSON protocol in [`wire`].

mod external;
mod reference;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use external::{ExternalCodec, Transport};
pub use reference::{CodebookDecoder, CodebookEntry, HashingEncoder, ReferenceCodec};

use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::latent::LatentVector;

/// Separator literal placed between prompt and input in write payloads.
pub const SEP: &str = "[SEP]";
/// Leading literal of query payloads.
pub const CLS: &str = "[CLS]";

/// Text encoded for the inform step: `prompt [SEP] input`.
pub fn write_text(pair: &SentencePair) -> String {
    format!("{} {SEP} {}", pair.prompt, pair.input)
}

/// Text encoded for the ask step: `[CLS] prompt [SEP]`.
pub fn query_text(prompt: &str) -> String {
    format!("{CLS} {prompt} {SEP}")
}

/// What the decoder emits when no codebook entry is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Return the prompt itself.
    #[default]
    EchoPrompt,
    /// Greedy continuation from a unigram/bigram table over informed inputs.
    BackgroundNgram,
}

/// Generation strategy an external decoder must be told about explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodingStrategy {
    Greedy,
    Sampling,
}

impl DecodingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            DecodingStrategy::Greedy => "greedy",
            DecodingStrategy::Sampling => "sampling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalCodecConfig {
    /// Program and arguments of a codec subprocess speaking the protocol on
    /// stdin/stdout.
    #[serde(default)]
    pub command: Vec<String>,
    /// `host:port` of a codec listening on a local socket; used when
    /// `command` is empty.
    #[serde(default)]
    pub address: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Must be set; there is no silent default.
    #[serde(default)]
    pub decoding: Option<DecodingStrategy>,
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub latent_dim: usize,
    pub seed: u64,
    pub ngram_order: usize,
    pub hash_dim: usize,
    /// Relative acceptance radius of the reference decoder.
    pub tau: f64,
    pub fallback: Fallback,
    pub external: Option<ExternalCodecConfig>,
}

/// Acceptance radius shipped with the desk-scale defaults.
pub const DEFAULT_TAU: f64 = 0.35;

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            latent_dim: 64,
            seed: 0,
            ngram_order: 2,
            hash_dim: 4096,
            tau: DEFAULT_TAU,
            fallback: Fallback::EchoPrompt,
            external: None,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.ngram_order == 0 || self.hash_dim == 0 {
            return Err(Error::InvalidParameter(
                "codec latent_dim, ngram_order and hash_dim must be positive".into(),
            ));
        }
        if self.hash_dim < self.latent_dim {
            return Err(Error::InvalidParameter(format!(
                "codec hash_dim ({}) must be >= latent_dim ({})",
                self.hash_dim, self.latent_dim
            )));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "codec tau must be finite and non-negative, got {}",
                self.tau
            )));
        }
        if let Some(ext) = &self.external {
            if ext.command.is_empty() && ext.address.is_none() {
                return Err(Error::InvalidParameter(
                    "external codec needs either a command or an address".into(),
                ));
            }
            if ext.decoding.is_none() {
                return Err(Error::InvalidParameter(
                    "external codec requires codec.external.decoding (greedy | sampling)".into(),
                ));
            }
            if !(ext.timeout_secs > 0.0) {
                return Err(Error::InvalidParameter(
                    "external codec timeout must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Encoder/decoder pair used by the harness. One instance per worker; the
/// codebook a decoder builds up lives until [`Codec::reset`].
pub trait Codec: Send {
    fn latent_dim(&self) -> usize;

    fn encode(&mut self, text: &str) -> Result<LatentVector>;

    /// Records `(z_write, pair.input)` as a decodable association.
    fn inform(&mut self, pair: &SentencePair, z_write: &LatentVector) -> Result<()>;

    fn decode(&mut self, prompt: &str, z: &LatentVector) -> Result<String>;

    /// Clears decoder state accumulated by `inform`.
    fn reset(&mut self) -> Result<()>;

    fn encode_write(&mut self, pair: &SentencePair) -> Result<LatentVector> {
        self.encode(&write_text(pair))
    }

    fn encode_query(&mut self, prompt: &str) -> Result<LatentVector> {
        self.encode(&query_text(prompt))
    }
}

/// Builds one codec per worker.
pub fn build_codec(config: &CodecConfig, shared: Option<&std::sync::Arc<HashingEncoder>>) -> Result<Box<dyn Codec>> {
    config.validate()?;
    match &config.external {
        None => {
            let encoder = match shared {
                Some(e) => std::sync::Arc::clone(e),
                None => std::sync::Arc::new(HashingEncoder::new(config)?),
            };
            Ok(Box::new(ReferenceCodec::with_encoder(encoder, config)))
        }
        Some(ext) => {
            let transport = if ext.command.is_empty() {
                Transport::Socket(ext.address.clone().unwrap_or_default())
            } else {
                Transport::Subprocess(ext.command.clone())
            };
            Ok(Box::new(ExternalCodec::connect(
                transport,
                config.latent_dim,
                ext.decoding.expect("validated"),
                std::time::Duration::from_secs_f64(ext.timeout_secs),
            )?))
        }
    }
}
