use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Codec, CodecConfig, Fallback, CLS, SEP};
use crate::corpus::{self, SentencePair};
use crate::error::Result;
use crate::latent::LatentVector;
use crate::seed;

/// Hashed n-gram counts, L2-normalized, then a fixed Gaussian projection
/// to `C` dimensions.
#[derive(Debug)]
pub struct HashingEncoder {
    latent_dim: usize,
    ngram_order: usize,
    hash_dim: usize,
    hash_offset: u64,
    /// `hash_dim x C`, row-major, entries `N(0, 1)`.
    projection: Vec<f64>,
}

impl HashingEncoder {
    pub fn new(config: &CodecConfig) -> Result<Self> {
        config.validate()?;
        let (h, c) = (config.hash_dim, config.latent_dim);
        let mut rng = seed::rng(config.seed, "encoder-projection");
        let projection = (0..h * c).map(|_| rng.sample(StandardNormal)).collect();
        Ok(HashingEncoder {
            latent_dim: c,
            ngram_order: config.ngram_order,
            hash_dim: h,
            hash_offset: seed::derive(config.seed, "feature-hash"),
            projection,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Corpus tokens, with the reserved `[CLS]` / `[SEP]` literals kept
    /// as single tokens.
    pub fn tokens(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = text;
        loop {
            let next = [CLS, SEP]
                .iter()
                .filter_map(|lit| rest.find(lit).map(|pos| (pos, *lit)))
                .min_by_key(|(pos, _)| *pos);
            match next {
                Some((pos, lit)) => {
                    out.extend(corpus::tokenize(&rest[..pos]).tokens);
                    out.push(lit.to_string());
                    rest = &rest[pos + lit.len()..];
                }
                None => {
                    out.extend(corpus::tokenize(rest).tokens);
                    return out;
                }
            }
        }
    }

    /// Hashed n-gram count vector (sparse, sorted by bucket).
    pub fn features(&self, text: &str) -> BTreeMap<usize, f64> {
        let tokens = Self::tokens(text);
        let mut counts = BTreeMap::new();
        for order in 1..=self.ngram_order {
            for gram in tokens.windows(order) {
                let mut h = self.hash_offset;
                for (i, tok) in gram.iter().enumerate() {
                    if i > 0 {
                        h = seed::fnv1a_extend(h, &[0x1f]);
                    }
                    h = seed::fnv1a_extend(h, tok.as_bytes());
                }
                *counts.entry((h % self.hash_dim as u64) as usize).or_insert(0.0) += 1.0;
            }
        }
        counts
    }

    pub fn encode(&self, text: &str) -> LatentVector {
        let counts = self.features(text);
        let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
        let c = self.latent_dim;
        let mut z = vec![0.0; c];
        if norm == 0.0 {
            return LatentVector(z);
        }
        for (&bucket, &count) in &counts {
            let weight = count / norm;
            let row = &self.projection[bucket * c..(bucket + 1) * c];
            for (acc, p) in z.iter_mut().zip(row) {
                *acc += weight * p;
            }
        }
        LatentVector(z)
    }

    /// Largest singular value of the projection matrix (power iteration).
    pub fn projection_spectral_norm(&self) -> f64 {
        let c = self.latent_dim;
        let mut v = vec![1.0 / (c as f64).sqrt(); c];
        let mut sigma = 0.0;
        for _ in 0..200 {
            // u = P v, v' = P^T u
            let u: Vec<f64> = self
                .projection
                .chunks(c)
                .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            let mut next = vec![0.0; c];
            for (row, ui) in self.projection.chunks(c).zip(&u) {
                for (n, p) in next.iter_mut().zip(row) {
                    *n += p * ui;
                }
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            sigma = norm.sqrt();
            v = next.into_iter().map(|x| x / norm).collect();
        }
        sigma
    }
}

/// A decodable association recorded by `inform`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookEntry {
    pub latent: LatentVector,
    pub text: String,
    pub entry_id: String,
    pub j: usize,
}

/// Nearest-codebook decoder: the candidate is the entry with the highest
/// cosine to `z`; it is accepted when `||z - latent|| <= tau * ||latent||`,
/// otherwise the fallback text is produced.
#[derive(Debug, Clone)]
pub struct CodebookDecoder {
    latent_dim: usize,
    tau: f64,
    fallback: Fallback,
    entries: Vec<CodebookEntry>,
}

/// Outcome of a decode, with the selection details the text alone hides.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub text: String,
    /// Index of the cosine-best codebook entry, if any.
    pub candidate: Option<usize>,
    pub accepted: bool,
}

impl CodebookDecoder {
    pub fn new(latent_dim: usize, tau: f64, fallback: Fallback) -> Self {
        CodebookDecoder {
            latent_dim,
            tau,
            fallback,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[CodebookEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn inform(&mut self, pair: &SentencePair, z_write: &LatentVector) -> Result<()> {
        z_write.check_dim(self.latent_dim)?;
        self.entries.push(CodebookEntry {
            latent: z_write.clone(),
            text: pair.input.clone(),
            entry_id: pair.entry_id.clone(),
            j: pair.j,
        });
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn decode_detailed(&self, prompt: &str, z: &LatentVector) -> Result<Decoded> {
        z.check_dim(self.latent_dim)?;
        let mut best: Option<(usize, f64)> = None;
        for (idx, e) in self.entries.iter().enumerate() {
            let cos = e.latent.cosine(z);
            if best.is_none_or(|(_, b)| cos > b) {
                best = Some((idx, cos));
            }
        }
        if let Some((idx, _)) = best {
            let e = &self.entries[idx];
            if e.latent.distance(z) <= self.tau * e.latent.norm() {
                return Ok(Decoded {
                    text: e.text.clone(),
                    candidate: Some(idx),
                    accepted: true,
                });
            }
        }
        Ok(Decoded {
            text: self.fallback_text(prompt),
            candidate: best.map(|(i, _)| i),
            accepted: false,
        })
    }

    pub fn decode(&self, prompt: &str, z: &LatentVector) -> Result<String> {
        Ok(self.decode_detailed(prompt, z)?.text)
    }

    fn fallback_text(&self, prompt: &str) -> String {
        match self.fallback {
            Fallback::EchoPrompt => prompt.to_string(),
            Fallback::BackgroundNgram => self
                .background_continuation(prompt)
                .unwrap_or_else(|| prompt.to_string()),
        }
    }

    fn background_continuation(&self, prompt: &str) -> Option<String> {
        if self.entries.is_empty() {
            return None;
        }
        let mut unigrams: HashMap<&str, usize> = HashMap::new();
        let mut bigrams: HashMap<&str, HashMap<&str, usize>> = HashMap::new();
        let token_lists: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|e| corpus::tokenize(&e.text).tokens)
            .collect();
        let mut total = 0usize;
        for toks in &token_lists {
            total += toks.len();
            for t in toks {
                *unigrams.entry(t).or_default() += 1;
            }
            for w in toks.windows(2) {
                *bigrams.entry(&w[0]).or_default().entry(&w[1]).or_default() += 1;
            }
        }
        if unigrams.is_empty() {
            return None;
        }
        let budget = (total as f64 / token_lists.len() as f64).round().max(1.0) as usize;
        // Highest count, then lexicographically smallest token.
        let pick = |table: &HashMap<&str, usize>| -> Option<String> {
            table
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(t, _)| t.to_string())
        };
        let prompt_tokens = corpus::tokenize(prompt).tokens;
        // Continue from the prompt's last token when the table knows it,
        // otherwise start from the most frequent unigram.
        let (mut current, mut out) = match prompt_tokens
            .last()
            .filter(|t| bigrams.contains_key(t.as_str()))
        {
            Some(t) => (t.clone(), Vec::with_capacity(budget)),
            None => {
                let start = pick(&unigrams)?;
                (start.clone(), vec![start])
            }
        };
        while out.len() < budget {
            let Some(next) = bigrams.get(current.as_str()).and_then(pick) else {
                break;
            };
            out.push(next.clone());
            if next == "." {
                break;
            }
            current = next;
        }
        Some(corpus::detokenize(&out))
    }
}

/// Reference encoder plus codebook decoder.
#[derive(Debug, Clone)]
pub struct ReferenceCodec {
    encoder: Arc<HashingEncoder>,
    decoder: CodebookDecoder,
}

impl ReferenceCodec {
    pub fn new(config: &CodecConfig) -> Result<Self> {
        Ok(Self::with_encoder(Arc::new(HashingEncoder::new(config)?), config))
    }

    /// Shares an already-built encoder (the projection matrix is the only
    /// sizeable state and is immutable).
    pub fn with_encoder(encoder: Arc<HashingEncoder>, config: &CodecConfig) -> Self {
        let decoder = CodebookDecoder::new(encoder.latent_dim(), config.tau, config.fallback);
        ReferenceCodec { encoder, decoder }
    }

    pub fn encoder(&self) -> &Arc<HashingEncoder> {
        &self.encoder
    }

    pub fn decoder(&self) -> &CodebookDecoder {
        &self.decoder
    }
}

impl Codec for ReferenceCodec {
    fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    fn encode(&mut self, text: &str) -> Result<LatentVector> {
        Ok(self.encoder.encode(text))
    }

    fn inform(&mut self, pair: &SentencePair, z_write: &LatentVector) -> Result<()> {
        self.decoder.inform(pair, z_write)
    }

    fn decode(&mut self, prompt: &str, z: &LatentVector) -> Result<String> {
        self.decoder.decode(prompt, z)
    }

    fn reset(&mut self) -> Result<()> {
        self.decoder.clear();
        Ok(())
    }
}
