//! Run artifacts. Line-delimited JSON for per-entry and per-pair data,
//! plain JSON for the manifest and summary, and a text table for people.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunConfig, RunReport, SynthesisMode, TimingSummary};
use crate::error::{Error, Result};
use crate::memory::ReadoutRecord;
use crate::metrics::Summaries;

pub const ARTIFACT_MANIFEST: &str = "manifest.json";
pub const ARTIFACT_TEXTS: &str = "texts.jsonl";
pub const ARTIFACT_SCORES: &str = "scores.jsonl";
pub const ARTIFACT_SUMMARY: &str = "summary.json";
pub const ARTIFACT_TIMING: &str = "timing.json";
pub const ARTIFACT_LATENTS: &str = "latents.jsonl";
const SUMMARY_TABLE: &str = "summary.txt";

#[derive(Serialize)]
struct Manifest<'a> {
    crate_version: &'a str,
    entries: usize,
    seeds: Seeds,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct Seeds {
    run: u64,
    codec: u64,
    memory: u64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryFile {
    pub mode: SynthesisMode,
    pub entries: usize,
    pub failed: usize,
    pub summaries: Option<Summaries>,
    pub scale_estimate: Option<f64>,
    pub exact_recall: f64,
    pub latent_dump: Option<std::path::PathBuf>,
    pub timing: TimingSummary,
}

impl RunSummaryFile {
    pub fn from_report(report: &RunReport) -> Self {
        RunSummaryFile {
            mode: report.mode.clone(),
            entries: report.entries.len(),
            failed: report.failures().count(),
            summaries: report.summaries,
            scale_estimate: report.scale_estimate,
            exact_recall: report.exact_recall,
            latent_dump: report.latent_dump.clone(),
            timing: report.timing,
        }
    }

    pub fn table(&self) -> String {
        let fmt = |v: Option<String>| v.unwrap_or_else(|| "n/a".into());
        format!(
            "mode            {}\n\
             entries         {} ({} failed)\n\
             RougeL          {}\n\
             Jaccard         {}\n\
             exact recall    {:.3}\n\
             scale estimate  {}\n\
             time / entry    {:.4} s\n\
             total time      {:.3} s (wall {:.3} s)\n\
             breakdown       encode {:.3} s, memory {:.3} s, decode {:.3} s, metrics {:.3} s\n",
            self.mode,
            self.entries,
            self.failed,
            fmt(self.summaries.map(|s| s.rouge_l.to_string())),
            fmt(self.summaries.map(|s| s.jaccard.to_string())),
            self.exact_recall,
            fmt(self.scale_estimate.map(|s| format!("{s:.3}"))),
            self.timing.mean_seconds_per_entry,
            self.timing.total_seconds,
            self.timing.wall_seconds,
            self.timing.encode_seconds,
            self.timing.memory_seconds,
            self.timing.decode_seconds,
            self.timing.metrics_seconds,
        )
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// One [`ReadoutRecord`] per line.
pub fn write_records(path: &Path, records: &[ReadoutRecord]) -> Result<()> {
    write_json_lines(path, records)
}

pub fn load_records(path: &Path) -> Result<Vec<ReadoutRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Serialize)]
struct TextLine<'a> {
    entry_id: &'a str,
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    entry_id: &'a str,
    rouge_l: Option<f64>,
    jaccard: Option<f64>,
    pairs: usize,
    exact_pairs: usize,
}

/// Writes manifest, texts, scores, summary (JSON and table), timing and,
/// if requested, the latent dump to `config.dump_latents`.
pub fn write_artifacts(dir: &Path, config: &RunConfig, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(
        &dir.join(ARTIFACT_MANIFEST),
        &Manifest {
            crate_version: env!("CARGO_PKG_VERSION"),
            entries: report.entries.len(),
            seeds: Seeds {
                run: config.seed,
                codec: config.codec.seed,
                memory: config.memory.seed,
            },
            config,
        },
    )?;
    write_json_lines(
        &dir.join(ARTIFACT_TEXTS),
        report.entries.iter().map(|e| TextLine {
            entry_id: &e.entry_id,
            text: e.text.as_deref(),
            error: e.error.as_deref(),
        }),
    )?;
    write_json_lines(
        &dir.join(ARTIFACT_SCORES),
        report.entries.iter().map(|e| ScoreLine {
            entry_id: &e.entry_id,
            rouge_l: e.score.as_ref().map(|s| s.rouge_l),
            jaccard: e.score.as_ref().map(|s| s.jaccard),
            pairs: e.pairs,
            exact_pairs: e.exact_pairs,
        }),
    )?;
    let summary = RunSummaryFile::from_report(report);
    write_json(&dir.join(ARTIFACT_SUMMARY), &summary)?;
    write_json(&dir.join(ARTIFACT_TIMING), &report.timing)?;
    let table_path = dir.join(SUMMARY_TABLE);
    fs::write(&table_path, summary.table()).map_err(|e| Error::io(&table_path, e))?;
    if let Some(dump) = &config.dump_latents {
        write_records(dump, &report.records)?;
    }
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<RunSummaryFile> {
    let path = dir.join(ARTIFACT_SUMMARY);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
