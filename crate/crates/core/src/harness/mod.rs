//! Inform / Ask / Concatenate synthesis over a corpus, scoring, sweeps and
//! run artifacts.
//!
//! Each entry is processed by one worker with its own codec. The codec is
//! reset and the memory returns to its prior at the start of every entry,
//! so an entry's output does not depend on which worker handled it or in
//! which order. Results are reassembled in corpus order.

mod config;
mod output;
mod sweep;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use config::{GeometryConfig, MetricsConfig, RunConfig, ENV_PREFIX};
pub use output::{
    load_records, read_summary, write_artifacts, write_records, RunSummaryFile, ARTIFACT_LATENTS,
    ARTIFACT_MANIFEST, ARTIFACT_SCORES, ARTIFACT_SUMMARY, ARTIFACT_TEXTS, ARTIFACT_TIMING,
};
pub use sweep::{
    calibrate_lambda, format_partial_table, format_sweep_table, run_partial_sweep, run_sweep,
    Calibration, PartialRow, SweepRow,
};

use crate::codec::{build_codec, Codec, HashingEncoder};
use crate::corpus::{augment_prompt, make_pairs, ReferenceTokenizer, Tokenizer, WikiBioEntry};
use crate::error::{Error, Result};
use crate::memory::{estimate_scale, scale_readout, MemoryScope, MemoryState, ReadoutRecord};
use crate::metrics::{score_entry, summarize, MetricScore, Summaries};

/// Query phrase of the random-prompt ablation.
pub const DEFAULT_RANDOM_PHRASE: &str = "Try to come up with the next wikibio sentence.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthesisMode {
    #[default]
    Base,
    Scaled {
        s: f64,
    },
    Ideal,
    PartialInput {
        f: f64,
    },
    RandomPrompt {
        phrase: String,
    },
}

impl SynthesisMode {
    pub fn random_prompt() -> Self {
        SynthesisMode::RandomPrompt {
            phrase: DEFAULT_RANDOM_PHRASE.to_string(),
        }
    }

    /// Readout scaling factor; 1 for every mode except `scaled`.
    pub fn s(&self) -> f64 {
        match self {
            SynthesisMode::Scaled { s } => *s,
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SynthesisMode::Scaled { s } if !(*s > 0.0 && s.is_finite()) => Err(
                Error::InvalidParameter(format!("scaling factor must be positive, got {s}")),
            ),
            SynthesisMode::PartialInput { f } if !(0.0..=1.0).contains(f) => Err(
                Error::InvalidParameter(format!("partial-input fraction must lie in [0, 1], got {f}")),
            ),
            _ => Ok(()),
        }
    }

    fn query_prompt(&self, pair: &crate::corpus::SentencePair, tokenizer: &dyn Tokenizer) -> Result<String> {
        match self {
            SynthesisMode::PartialInput { f } => augment_prompt(pair, *f, tokenizer),
            SynthesisMode::RandomPrompt { phrase } => Ok(phrase.clone()),
            _ => Ok(pair.prompt.clone()),
        }
    }
}

impl fmt::Display for SynthesisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthesisMode::Base => write!(f, "base"),
            SynthesisMode::Scaled { s } => write!(f, "scaled {s}"),
            SynthesisMode::Ideal => write!(f, "ideal"),
            SynthesisMode::PartialInput { f: frac } => write!(f, "partial {frac}"),
            SynthesisMode::RandomPrompt { phrase } => write!(f, "random-prompt {phrase:?}"),
        }
    }
}

/// Parses `base`, `ideal`, `scaled 3`, `scaled=3`, `partial 0.5`,
/// `random-prompt` and `random-prompt <phrase>`.
impl FromStr for SynthesisMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, rest) = match s.find(|c: char| c.is_whitespace() || c == '=') {
            Some(i) => (&s[..i], s[i + 1..].trim()),
            None => (s, ""),
        };
        let number = |what: &str| -> Result<f64> {
            rest.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("mode '{head}' needs a numeric {what}, got '{rest}'")))
        };
        let mode = match head.to_ascii_lowercase().replace('_', "-").as_str() {
            "base" => SynthesisMode::Base,
            "ideal" => SynthesisMode::Ideal,
            "scaled" => SynthesisMode::Scaled { s: number("factor")? },
            "partial" | "partial-input" => SynthesisMode::PartialInput { f: number("fraction")? },
            "random-prompt" | "random" => SynthesisMode::RandomPrompt {
                phrase: if rest.is_empty() {
                    DEFAULT_RANDOM_PHRASE.to_string()
                } else {
                    rest.trim_matches('"').to_string()
                },
            },
            other => return Err(Error::InvalidParameter(format!("unknown synthesis mode '{other}'"))),
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// Time spent in each stage, accumulated with a monotonic clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub encode: Duration,
    pub memory: Duration,
    pub decode: Duration,
    pub metrics: Duration,
}

impl StageTimes {
    fn add(&mut self, other: &StageTimes) {
        self.encode += other.encode;
        self.memory += other.memory;
        self.decode += other.decode;
        self.metrics += other.metrics;
    }

    pub fn attributed(&self) -> Duration {
        self.encode + self.memory + self.decode + self.metrics
    }
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed();
    out
}

/// Output of [`synthesize_entry`].
#[derive(Debug, Clone, PartialEq)]
pub struct EntrySynthesis {
    pub text: String,
    pub outputs: Vec<String>,
    pub records: Vec<ReadoutRecord>,
    /// Pairs whose generated sentence equals the pair's input exactly.
    pub exact_pairs: usize,
}

/// Runs the Inform / Ask / Concatenate loop for one entry.
///
/// `fresh` must be an unwritten memory; with [`MemoryScope::PerPair`] each
/// pair is written into its own copy of it, with
/// [`MemoryScope::PerEntry`] the episode at pair `j` holds the write
/// encodings of pairs `1..=j`. The codec is reset before the first pair.
pub fn synthesize_entry(
    entry: &WikiBioEntry,
    mode: &SynthesisMode,
    codec: &mut dyn Codec,
    fresh: &MemoryState,
    tokenizer: &dyn Tokenizer,
    times: &mut StageTimes,
) -> Result<EntrySynthesis> {
    mode.validate()?;
    if entry.n() == 0 {
        return Err(Error::InvalidEntry {
            id: entry.id.clone(),
            reason: "entry has no sentences".into(),
        });
    }
    let s = mode.s();
    let pairs = make_pairs(entry);
    // A failed reset is charged to the pair it was preparing.
    codec
        .reset()
        .map_err(|e| e.at_pair(&entry.id, pairs.first().map_or(0, |p| p.j)))?;
    let mut text = entry.hal_sentences[0].clone();
    let mut outputs = Vec::with_capacity(pairs.len());
    let mut records = Vec::with_capacity(pairs.len());
    let mut episode = Vec::new();
    let mut exact_pairs = 0;

    for pair in &pairs {
        let j = pair.j;
        let mut step = |times: &mut StageTimes, codec: &mut dyn Codec| -> Result<(String, ReadoutRecord)> {
            // Inform
            let z_write = timed(&mut times.encode, || codec.encode_write(pair))?;
            let tag = format!("{}/{}", entry.id, j);
            let memory = timed(&mut times.memory, || match fresh.config().scope {
                MemoryScope::PerPair => fresh.write_episode(std::slice::from_ref(&z_write), &tag),
                MemoryScope::PerEntry => {
                    episode.push(z_write.clone());
                    fresh.write_episode(&episode, &tag)
                }
            })?;
            timed(&mut times.decode, || codec.inform(pair, &z_write))?;

            // Ask
            let query = mode.query_prompt(pair, tokenizer)?;
            let z_q = timed(&mut times.encode, || codec.encode_query(&query))?;
            let readout = timed(&mut times.memory, || memory.read(&z_q))?;
            let (z_readout, z_used) = match mode {
                SynthesisMode::Ideal => (z_write.clone(), z_write.clone()),
                _ => {
                    let scaled = timed(&mut times.memory, || scale_readout(&readout.z, s))?;
                    (readout.z.clone(), scaled)
                }
            };
            // Partial-input runs hand the decoder the same augmented prompt
            // that formed the query; the other modes decode from the pair's
            // own prompt.
            let decode_prompt = match mode {
                SynthesisMode::PartialInput { .. } => &query,
                _ => &pair.prompt,
            };
            let output = timed(&mut times.decode, || codec.decode(decode_prompt, &z_used))?;

            let z_generate = timed(&mut times.encode, || codec.encode(&output))?;
            let z_input = timed(&mut times.encode, || codec.encode(&pair.input))?;
            let record = ReadoutRecord {
                entry_id: entry.id.clone(),
                j,
                s,
                z_write,
                z_readout,
                z_readout_scaled: z_used,
                address: readout.address,
                z_generate: Some(z_generate),
                z_input: Some(z_input),
                fresh_memory: readout.fresh,
            };
            Ok((output, record))
        };
        let (output, record) = step(times, codec).map_err(|e| e.at_pair(&entry.id, j))?;
        if output == pair.input {
            exact_pairs += 1;
        }
        text.push(' ');
        text.push_str(&output);
        outputs.push(output);
        records.push(record);
    }
    Ok(EntrySynthesis {
        text,
        outputs,
        records,
        exact_pairs,
    })
}

/// Outcome for one corpus entry. Exactly one of `text` / `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub entry_id: String,
    pub text: Option<String>,
    pub score: Option<MetricScore>,
    pub pairs: usize,
    pub exact_pairs: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    /// Mean per-entry time (synthesis plus scoring).
    pub mean_seconds_per_entry: f64,
    /// Sum of per-entry times; equals wall time when single-threaded.
    pub total_seconds: f64,
    pub wall_seconds: f64,
    pub encode_seconds: f64,
    pub memory_seconds: f64,
    pub decode_seconds: f64,
    pub metrics_seconds: f64,
    /// Mean memory write + read time per processed pair.
    pub memory_seconds_per_pair: f64,
    pub entries: usize,
    pub pairs: usize,
}

impl TimingSummary {
    pub fn breakdown_seconds(&self) -> f64 {
        self.encode_seconds + self.memory_seconds + self.decode_seconds + self.metrics_seconds
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: SynthesisMode,
    pub entries: Vec<EntryReport>,
    /// `None` only when every entry failed.
    pub summaries: Option<Summaries>,
    /// Mean `||z_write|| / ||z_readout||` over the run's pairs.
    pub scale_estimate: Option<f64>,
    /// Fraction of pairs whose output equals the pair's input.
    pub exact_recall: f64,
    pub latent_dump: Option<PathBuf>,
    pub timing: TimingSummary,
    #[serde(skip)]
    pub records: Vec<ReadoutRecord>,
    #[serde(skip)]
    times: StageTimes,
    #[serde(skip)]
    entry_durations: Vec<Duration>,
    #[serde(skip)]
    summary_time: Duration,
    #[serde(skip)]
    wall: Duration,
}

impl RunReport {
    pub fn scores(&self) -> Vec<MetricScore> {
        self.entries.iter().filter_map(|e| e.score.clone()).collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &EntryReport> {
        self.entries.iter().filter(|e| e.error.is_some())
    }

    /// Equality of everything except timing.
    pub fn same_results(&self, other: &RunReport) -> bool {
        self.mode == other.mode
            && self.entries == other.entries
            && self.summaries == other.summaries
            && self.scale_estimate.map(f64::to_bits) == other.scale_estimate.map(f64::to_bits)
            && self.exact_recall.to_bits() == other.exact_recall.to_bits()
            && self.records == other.records
    }

    pub fn rouge_mean(&self) -> f64 {
        self.summaries.map_or(f64::NAN, |s| s.rouge_l.mean)
    }

    pub fn jaccard_mean(&self) -> f64 {
        self.summaries.map_or(f64::NAN, |s| s.jaccard.mean)
    }
}

/// Wall-clock mean per entry, total and per-stage breakdown of a run.
pub fn time_synthesis(report: &RunReport) -> TimingSummary {
    let entries = report.entry_durations.len();
    let total: Duration = report.entry_durations.iter().sum::<Duration>() + report.summary_time;
    let pairs: usize = report.entries.iter().map(|e| e.pairs).sum();
    let t = &report.times;
    TimingSummary {
        mean_seconds_per_entry: if entries == 0 { 0.0 } else { total.as_secs_f64() / entries as f64 },
        total_seconds: total.as_secs_f64(),
        wall_seconds: report.wall.as_secs_f64(),
        encode_seconds: t.encode.as_secs_f64(),
        memory_seconds: t.memory.as_secs_f64(),
        decode_seconds: t.decode.as_secs_f64(),
        metrics_seconds: t.metrics.as_secs_f64(),
        memory_seconds_per_pair: if pairs == 0 { 0.0 } else { t.memory.as_secs_f64() / pairs as f64 },
        entries,
        pairs,
    }
}

struct EntryOutcome {
    report: EntryReport,
    records: Vec<ReadoutRecord>,
    times: StageTimes,
    elapsed: Duration,
}

fn process_entry(
    entry: &WikiBioEntry,
    config: &RunConfig,
    codec: &mut dyn Codec,
    fresh: &MemoryState,
    tokenizer: &dyn Tokenizer,
) -> Result<EntryOutcome> {
    let start = Instant::now();
    let mut times = StageTimes::default();
    let result = synthesize_entry(entry, &config.mode, codec, fresh, tokenizer, &mut times);
    let pairs = entry.n().saturating_sub(1);
    let outcome = match result {
        Ok(syn) => {
            let metrics_start = Instant::now();
            let score = score_entry(entry, &syn.text, tokenizer, config.metrics.rouge_variant);
            times.metrics += metrics_start.elapsed();
            EntryOutcome {
                report: EntryReport {
                    entry_id: entry.id.clone(),
                    text: Some(syn.text),
                    score: Some(score),
                    pairs,
                    exact_pairs: syn.exact_pairs,
                    error: None,
                },
                records: syn.records,
                times,
                elapsed: Duration::ZERO,
            }
        }
        Err(e) if config.skip_failures => {
            warn!("entry {} failed and is skipped: {e}", entry.id);
            EntryOutcome {
                report: EntryReport {
                    entry_id: entry.id.clone(),
                    text: None,
                    score: None,
                    pairs,
                    exact_pairs: 0,
                    error: Some(e.to_string()),
                },
                records: Vec::new(),
                times,
                elapsed: Duration::ZERO,
            }
        }
        Err(e) => return Err(e),
    };
    Ok(EntryOutcome {
        elapsed: start.elapsed(),
        ..outcome
    })
}

/// Synthesizes and scores `entries` under `config`. Does not touch the
/// filesystem; see [`run`] for the artifact-writing variant.
pub fn run_entries(config: &RunConfig, entries: &[WikiBioEntry]) -> Result<RunReport> {
    config.validate()?;
    if entries.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let wall_start = Instant::now();
    let fresh = MemoryState::init(&config.memory)?;
    let shared_encoder = match config.codec.external {
        None => Some(Arc::new(HashingEncoder::new(&config.codec)?)),
        Some(_) => None,
    };
    let workers = config.parallelism.min(entries.len());
    let tokenizer = ReferenceTokenizer;

    // Entry i goes to worker i % workers; each worker owns one codec.
    let worker = |w: usize| -> Result<Vec<(usize, EntryOutcome)>> {
        let mut codec = build_codec(&config.codec, shared_encoder.as_ref())?;
        let mut out = Vec::new();
        for i in (w..entries.len()).step_by(workers) {
            out.push((i, process_entry(&entries[i], config, codec.as_mut(), &fresh, &tokenizer)?));
        }
        Ok(out)
    };
    let per_worker: Vec<Result<Vec<(usize, EntryOutcome)>>> = if workers == 1 {
        vec![worker(0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers).map(|w| scope.spawn(move || worker(w))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Config("worker thread panicked".into()))))
                .collect()
        })
    };

    let mut slots: Vec<Option<EntryOutcome>> = (0..entries.len()).map(|_| None).collect();
    for result in per_worker {
        for (i, outcome) in result? {
            slots[i] = Some(outcome);
        }
    }

    let mut report = RunReport {
        mode: config.mode.clone(),
        entries: Vec::with_capacity(entries.len()),
        summaries: None,
        scale_estimate: None,
        exact_recall: 0.0,
        latent_dump: config.dump_latents.clone(),
        timing: TimingSummary::default(),
        records: Vec::new(),
        times: StageTimes::default(),
        entry_durations: Vec::with_capacity(entries.len()),
        summary_time: Duration::ZERO,
        wall: Duration::ZERO,
    };
    for outcome in slots.into_iter().map(|o| o.expect("every entry assigned to a worker")) {
        report.times.add(&outcome.times);
        report.entry_durations.push(outcome.elapsed);
        report.records.extend(outcome.records);
        report.entries.push(outcome.report);
    }

    let scores = report.scores();
    if !scores.is_empty() {
        let start = Instant::now();
        report.summaries = Some(summarize(&scores, config.metrics.std)?);
        report.summary_time = start.elapsed();
        report.times.metrics += report.summary_time;
    }
    let pairs: usize = report.entries.iter().filter(|e| e.error.is_none()).map(|e| e.pairs).sum();
    let exact: usize = report.entries.iter().map(|e| e.exact_pairs).sum();
    report.exact_recall = if pairs == 0 { 1.0 } else { exact as f64 / pairs as f64 };
    report.scale_estimate = estimate_scale(&report.records).ok().map(|e| e.scale);
    report.wall = wall_start.elapsed();
    report.timing = time_synthesis(&report);
    info!(
        "{}: {} entries, RougeL {}, Jaccard {}, {:.3}s",
        config.mode,
        report.entries.len(),
        report.summaries.map_or("n/a".into(), |s| s.rouge_l.to_string()),
        report.summaries.map_or("n/a".into(), |s| s.jaccard.to_string()),
        report.timing.wall_seconds
    );
    Ok(report)
}

/// Loads the corpus named in `config`, runs it, and writes artifacts to
/// `config.output_dir` when set.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let path = config
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("no corpus path configured".into()))?;
    let entries = crate::corpus::load_entries(path)?;
    let report = run_entries(config, &entries)?;
    if let Some(dir) = &config.output_dir {
        write_artifacts(dir, config, &report)?;
    } else if let Some(dump) = &config.dump_latents {
        write_records(dump, &report.records)?;
    }
    Ok(report)
}
