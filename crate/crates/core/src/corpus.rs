//! Biography corpus ingestion, (prompt, input) pairing, tokenization and
//! partial-input prompt augmentation.
//!
//! The on-disk corpus is line-delimited JSON, one entry per line:
//!
//! ```text
//! {"id":"17","actual_sentences":["..",".."],"hal_sentences":["..",".."],"annotations":["accurate",..]}
//! ```
//!
//! `annotations` is optional and never used for scoring.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Per-sentence factuality label carried by the upstream dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    Accurate,
    MinorInaccurate,
    MajorInaccurate,
}

/// One biography: aligned actual and hallucinated sentence lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WikiBioEntry {
    pub id: String,
    pub actual_sentences: Vec<String>,
    pub hal_sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<Annotation>>,
}

impl WikiBioEntry {
    /// Number of aligned sentences used for pairing.
    pub fn n(&self) -> usize {
        self.actual_sentences.len().min(self.hal_sentences.len())
    }

    /// Trims every sentence, rejects empty sentences and truncates both
    /// lists to the common length `n`.
    pub fn validated(mut self) -> Result<Self> {
        for (side, list) in [
            ("actual", &mut self.actual_sentences),
            ("hal", &mut self.hal_sentences),
        ] {
            for (idx, s) in list.iter_mut().enumerate() {
                let trimmed = s.trim();
                if trimmed.is_empty() {
                    return Err(Error::InvalidEntry {
                        id: self.id.clone(),
                        reason: format!("{side} sentence {} is empty", idx + 1),
                    });
                }
                if trimmed.len() != s.len() {
                    *s = trimmed.to_string();
                }
            }
        }
        let n = self.n();
        if n < 1 {
            return Err(Error::InvalidEntry {
                id: self.id.clone(),
                reason: format!(
                    "needs at least one actual and one hal sentence (got {} / {})",
                    self.actual_sentences.len(),
                    self.hal_sentences.len()
                ),
            });
        }
        if self.actual_sentences.len() != self.hal_sentences.len() {
            warn!(
                "entry '{}': {} actual vs {} hal sentences; ignoring trailing sentences beyond n = {n}",
                self.id,
                self.actual_sentences.len(),
                self.hal_sentences.len()
            );
            self.actual_sentences.truncate(n);
            self.hal_sentences.truncate(n);
        }
        if let Some(labels) = self.annotations.as_mut() {
            labels.truncate(n);
        }
        Ok(self)
    }

    /// Actual sentences joined by single spaces: the reference text.
    pub fn reference_text(&self) -> String {
        self.actual_sentences.join(" ")
    }
}

/// The (prompt, input) unit of the inform/ask protocol. `j` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub entry_id: String,
    pub j: usize,
    pub prompt: String,
    pub input: String,
}

/// Ordered token sequence produced by a [`Tokenizer`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.tokens
    }
}

impl From<Vec<String>> for TokenSeq {
    fn from(tokens: Vec<String>) -> Self {
        TokenSeq { tokens }
    }
}

impl<'a> From<Vec<&'a str>> for TokenSeq {
    fn from(tokens: Vec<&'a str>) -> Self {
        TokenSeq {
            tokens: tokens.into_iter().map(str::to_string).collect(),
        }
    }
}

/// Text segmentation used by the metrics and the prompt augmentation.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> TokenSeq;

    /// Inverse used when token prefixes are spliced back into text.
    fn detokenize(&self, tokens: &[String]) -> String {
        tokens.join(" ")
    }
}

/// Lowercased Unicode word segmentation: runs of letters/digits form one
/// token, every other non-whitespace character is a token of its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceTokenizer;

impl Tokenizer for ReferenceTokenizer {
    fn tokenize(&self, text: &str) -> TokenSeq {
        tokenize(text)
    }
}

pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_lowercase().collect());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    TokenSeq { tokens }
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Builds the `n - 1` pairs `(hal[j], actual[j + 1])`, `j = 1..n-1`.
pub fn make_pairs(entry: &WikiBioEntry) -> Vec<SentencePair> {
    let n = entry.n();
    (1..n)
        .map(|j| SentencePair {
            entry_id: entry.id.clone(),
            j,
            prompt: entry.hal_sentences[j - 1].clone(),
            input: entry.actual_sentences[j].clone(),
        })
        .collect()
}

/// Appends the first `ceil(f * m)` input tokens to the prompt.
pub fn augment_prompt(pair: &SentencePair, f: f64, tokenizer: &dyn Tokenizer) -> Result<String> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidParameter(format!(
            "input fraction must lie in [0, 1], got {f}"
        )));
    }
    if f == 0.0 {
        return Ok(pair.prompt.clone());
    }
    let input = tokenizer.tokenize(&pair.input);
    let take = prefix_len(input.len(), f);
    Ok(format!(
        "{} {}",
        pair.prompt,
        tokenizer.detokenize(&input.tokens[..take])
    ))
}

fn prefix_len(m: usize, f: f64) -> usize {
    // f * m is exact for small m; the clamp guards 1.0000000000000002-style
    // products from ceil() overshooting.
    ((f * m as f64).ceil() as usize).min(m)
}

#[derive(Deserialize)]
struct RawRecord {
    id: Value,
    actual_sentences: Vec<String>,
    hal_sentences: Vec<String>,
    #[serde(default)]
    annotations: Option<Vec<Annotation>>,
}

/// Reads a line-delimited corpus. Blank lines are skipped; any malformed or
/// invalid record aborts the load with its line number.
pub fn load_entries(path: impl AsRef<Path>) -> Result<Vec<WikiBioEntry>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: lineno,
                reason: e.to_string(),
            })?;
        let id = match raw.id {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            other => {
                return Err(Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: lineno,
                    reason: format!("id must be a string or number, got {other}"),
                })
            }
        };
        let entry = WikiBioEntry {
            id,
            actual_sentences: raw.actual_sentences,
            hal_sentences: raw.hal_sentences,
            annotations: raw.annotations,
        }
        .validated()
        .map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: lineno,
            reason: e.to_string(),
        })?;
        entries.push(entry);
    }
    if entries.is_empty() {
        warn!("corpus {} contains no entries", path.display());
    }
    Ok(entries)
}

/// Writes entries in the line-delimited corpus format.
pub fn save_entries(path: impl AsRef<Path>, entries: &[WikiBioEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Converts an upstream dataset export into the corpus format.
///
/// Every `*.json` / `*.jsonl` file under `raw_dir` is read in file-name
/// order. A file may hold one object per line, a JSON array of objects, or
/// a datasets-server page (`{"rows":[{"row":{..}}]}`). Field aliases:
///
/// | corpus field       | accepted source keys                      |
/// |--------------------|-------------------------------------------|
/// | `id`               | `id`, `wiki_bio_test_idx`, else row index |
/// | `hal_sentences`    | `hal_sentences`, `gpt3_sentences`         |
/// | `actual_sentences` | `actual_sentences`, `wiki_bio_sentences`  |
/// | `annotations`      | `annotations`, `annotation`               |
///
/// Records lacking a sentence-segmented actual text are rejected rather
/// than segmented here.
pub fn ingest(raw_dir: impl AsRef<Path>) -> Result<Vec<WikiBioEntry>> {
    let raw_dir = raw_dir.as_ref();
    let mut files: Vec<_> = fs::read_dir(raw_dir)
        .map_err(|e| Error::io(raw_dir, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("json") | Some("jsonl")
            )
        })
        .collect();
    files.sort();

    let mut entries = Vec::new();
    for file in files {
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        for (lineno, obj) in raw_objects(&file, &text)? {
            let entry = raw_to_entry(&obj, entries.len()).map_err(|reason| {
                Error::MalformedRecord {
                    path: file.clone(),
                    line: lineno,
                    reason,
                }
            })?;
            let entry = entry.validated().map_err(|e| Error::MalformedRecord {
                path: file.clone(),
                line: lineno,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
    }
    Ok(entries)
}

fn raw_objects(file: &Path, text: &str) -> Result<Vec<(usize, Value)>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') || trimmed.starts_with("{\"rows\"") {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::MalformedRecord {
            path: file.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let items = match doc {
            Value::Array(items) => items,
            Value::Object(mut map) => match map.remove("rows") {
                Some(Value::Array(rows)) => rows
                    .into_iter()
                    .map(|r| match r {
                        Value::Object(mut o) => o.remove("row").unwrap_or(Value::Object(o)),
                        other => other,
                    })
                    .collect(),
                _ => Vec::new(),
            },
            _ => Vec::new(),
        };
        return Ok(items.into_iter().map(|v| (1, v)).collect());
    }
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: file.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push((idx + 1, v));
    }
    Ok(out)
}

fn raw_to_entry(obj: &Value, ordinal: usize) -> std::result::Result<WikiBioEntry, String> {
    let field = |keys: &[&str]| keys.iter().find_map(|k| obj.get(*k));
    let strings = |v: &Value, name: &str| -> std::result::Result<Vec<String>, String> {
        v.as_array()
            .ok_or_else(|| format!("{name} must be an array of strings"))?
            .iter()
            .map(|s| {
                s.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| format!("{name} must contain only strings"))
            })
            .collect()
    };
    let id = match field(&["id", "wiki_bio_test_idx"]) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => ordinal.to_string(),
    };
    let hal = field(&["hal_sentences", "gpt3_sentences"])
        .ok_or("missing hal_sentences / gpt3_sentences")?;
    let actual = field(&["actual_sentences", "wiki_bio_sentences"]).ok_or(
        "missing actual_sentences / wiki_bio_sentences (the actual text must be sentence-segmented)",
    )?;
    let annotations = match field(&["annotations", "annotation"]) {
        Some(v) => Some(
            serde_json::from_value::<Vec<Annotation>>(v.clone())
                .map_err(|e| format!("bad annotation labels: {e}"))?,
        ),
        None => None,
    };
    Ok(WikiBioEntry {
        id,
        actual_sentences: strings(actual, "actual_sentences")?,
        hal_sentences: strings(hal, "hal_sentences")?,
        annotations,
    })
}
