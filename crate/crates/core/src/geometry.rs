//! Distance / angle / norm statistics between latent vectors at pipeline
//! stages, per-entry averages and the histograms built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentVector;
use crate::memory::{ReadoutRecord, DEGENERATE_NORM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VectorStats {
    pub distance: f64,
    /// `None` when either vector has norm below `1e-12`.
    pub angle_deg: Option<f64>,
    pub norm_a: f64,
    pub norm_b: f64,
}

pub fn vector_stats(a: &LatentVector, b: &LatentVector) -> Result<VectorStats> {
    b.check_dim(a.dim())?;
    let norm_a = a.norm();
    let norm_b = b.norm();
    let angle_deg = if norm_a < DEGENERATE_NORM || norm_b < DEGENERATE_NORM {
        None
    } else {
        // 2 atan2(|a/|a| - b/|b||, |a/|a| + b/|b||) keeps full precision
        // near 0 and 180 degrees, where acos of the cosine does not.
        let (mut diff, mut sum) = (0.0, 0.0);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let (u, v) = (x / norm_a, y / norm_b);
            diff += (u - v) * (u - v);
            sum += (u + v) * (u + v);
        }
        Some((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
    };
    Ok(VectorStats {
        distance: a.distance(b),
        angle_deg,
        norm_a,
        norm_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryAggregate {
    pub entry_id: String,
    pub mean_distance: f64,
    pub mean_angle_deg: Option<f64>,
    pub mean_norm_a: f64,
    pub mean_norm_b: f64,
    /// Pairs contributing to the distance and norm means.
    pub count: usize,
    /// Pairs with a defined angle.
    pub count_angles: usize,
}

/// Groups by entry id (sorted) and averages each property over the
/// entry's defined values.
pub fn aggregate_per_entry(stats: &[(String, VectorStats)]) -> Vec<EntryAggregate> {
    let mut groups: BTreeMap<&str, Vec<&VectorStats>> = BTreeMap::new();
    for (id, s) in stats {
        groups.entry(id.as_str()).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(id, items)| {
            let n = items.len() as f64;
            let angles: Vec<f64> = items.iter().filter_map(|s| s.angle_deg).collect();
            EntryAggregate {
                entry_id: id.to_string(),
                mean_distance: items.iter().map(|s| s.distance).sum::<f64>() / n,
                mean_angle_deg: (!angles.is_empty())
                    .then(|| angles.iter().sum::<f64>() / angles.len() as f64),
                mean_norm_a: items.iter().map(|s| s.norm_a).sum::<f64>() / n,
                mean_norm_b: items.iter().map(|s| s.norm_b).sum::<f64>() / n,
                count: items.len(),
                count_angles: angles.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<Bin>,
    /// Values outside the requested range.
    pub out_of_range: usize,
}

pub const DEFAULT_BINS: usize = 30;

/// Equal-width bins over `range` (or `[min, max]` of the data). Bins are
/// right-open except the last, which is closed.
pub fn histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if !(lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "histogram range must satisfy lo < hi, got ({lo}, {hi})"
                )));
            }
            (lo, hi)
        }
        None => {
            if values.is_empty() {
                return Err(Error::Empty("histogram values without an explicit range"));
            }
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        }
    };
    let width = (hi - lo) / bins as f64;
    let edge = |i: usize| if i == bins { hi } else { lo + width * i as f64 };
    let mut counts = vec![0usize; bins];
    let mut out_of_range = 0;
    for &v in values {
        if !(v >= lo && v <= hi) {
            out_of_range += 1;
            continue;
        }
        let mut idx = (((v - lo) / width).floor() as usize).min(bins - 1);
        // Re-check against the materialized edges so bin membership agrees
        // with the reported (lo, hi) exactly.
        while idx > 0 && v < edge(idx) {
            idx -= 1;
        }
        while idx + 1 < bins && v >= edge(idx + 1) {
            idx += 1;
        }
        counts[idx] += 1;
    }
    Ok(Histogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| Bin {
                lo: edge(i),
                hi: edge(i + 1),
                count,
            })
            .collect(),
        out_of_range,
    })
}

/// Which two pipeline latents are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    /// Write encoding vs raw memory readout.
    WriteReadout,
    /// Readout handed to the decoder vs encoding of the generated sentence.
    ReadoutGenerate,
    /// Encoding of the pair's input vs encoding of the generated output.
    InputOutput,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::WriteReadout => "write-readout",
            StageTag::ReadoutGenerate => "readout-generate",
            StageTag::InputOutput => "input-output",
        }
    }

    fn pick(self, r: &ReadoutRecord) -> Option<(&LatentVector, &LatentVector)> {
        match self {
            StageTag::WriteReadout => Some((&r.z_write, &r.z_readout)),
            StageTag::ReadoutGenerate => Some((&r.z_readout_scaled, r.z_generate.as_ref()?)),
            StageTag::InputOutput => Some((r.z_input.as_ref()?, r.z_generate.as_ref()?)),
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "write-readout" => Ok(StageTag::WriteReadout),
            "readout-generate" => Ok(StageTag::ReadoutGenerate),
            "input-output" => Ok(StageTag::InputOutput),
            other => Err(Error::InvalidParameter(format!("unknown stage '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub entry_id: String,
    pub j: usize,
    #[serde(flatten)]
    pub stats: VectorStats,
}

/// Histogram panels over per-entry means: distance, angle and both norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageHistograms {
    pub distance: Histogram,
    pub angle_deg: Histogram,
    pub norm_a: Histogram,
    pub norm_b: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageGeometry {
    pub tag: StageTag,
    pub pairs: Vec<PairStats>,
    pub entries: Vec<EntryAggregate>,
    pub histograms: StageHistograms,
}

impl StageGeometry {
    /// Mean over entries of the per-entry mean distance.
    pub fn mean_distance(&self) -> f64 {
        mean(self.entries.iter().map(|e| e.mean_distance))
    }

    /// Mean over entries with a defined angle.
    pub fn mean_angle_deg(&self) -> Option<f64> {
        let v: Vec<f64> = self.entries.iter().filter_map(|e| e.mean_angle_deg).collect();
        (!v.is_empty()).then(|| mean(v.into_iter()))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn stage_geometry(records: &[ReadoutRecord], tag: StageTag, bins: usize) -> Result<StageGeometry> {
    let mut pairs = Vec::with_capacity(records.len());
    for r in records {
        let (a, b) = tag
            .pick(r)
            .ok_or_else(|| Error::MissingLatents(format!("{tag} (entry '{}', pair {})", r.entry_id, r.j)))?;
        pairs.push(PairStats {
            entry_id: r.entry_id.clone(),
            j: r.j,
            stats: vector_stats(a, b)?,
        });
    }
    let keyed: Vec<(String, VectorStats)> =
        pairs.iter().map(|p| (p.entry_id.clone(), p.stats)).collect();
    let entries = aggregate_per_entry(&keyed);
    let panel = |values: Vec<f64>, range: Option<(f64, f64)>| -> Result<Histogram> {
        if values.is_empty() && range.is_none() {
            return histogram(&values, bins, Some((0.0, 1.0)));
        }
        histogram(&values, bins, range)
    };
    let histograms = StageHistograms {
        distance: panel(entries.iter().map(|e| e.mean_distance).collect(), None)?,
        angle_deg: panel(
            entries.iter().filter_map(|e| e.mean_angle_deg).collect(),
            Some((0.0, 180.0)),
        )?,
        norm_a: panel(entries.iter().map(|e| e.mean_norm_a).collect(), None)?,
        norm_b: panel(entries.iter().map(|e| e.mean_norm_b).collect(), None)?,
    };
    Ok(StageGeometry {
        tag,
        pairs,
        entries,
        histograms,
    })
}
