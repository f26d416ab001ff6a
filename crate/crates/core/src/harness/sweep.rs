use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use super::{run_entries, RunConfig, RunReport, SynthesisMode};
use crate::corpus::WikiBioEntry;
use crate::error::{Error, Result};
use crate::geometry::{stage_geometry, StageTag};
use crate::metrics::MetricSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub s: f64,
    pub rouge_l: MetricSummary,
    pub jaccard: MetricSummary,
    pub exact_recall: f64,
    pub scale_estimate: Option<f64>,
    /// Mean input/output latent distance and angle over entries.
    pub input_output_distance: f64,
    pub input_output_angle_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialRow {
    pub f: f64,
    pub jaccard: MetricSummary,
    pub rouge_l: MetricSummary,
    pub exact_recall: f64,
}

fn summaries_of(report: &RunReport) -> Result<crate::metrics::Summaries> {
    report
        .summaries
        .ok_or(Error::Empty("run produced no scored entries"))
}

/// One run per scaling factor, all other settings shared.
pub fn run_sweep(config: &RunConfig, entries: &[WikiBioEntry], s_values: &[f64]) -> Result<Vec<SweepRow>> {
    if s_values.is_empty() {
        return Err(Error::Empty("scaling factor list"));
    }
    let mut rows = Vec::with_capacity(s_values.len());
    for &s in s_values {
        let mut cfg = config.clone();
        cfg.mode = SynthesisMode::Scaled { s };
        cfg.validate()?;
        let report = run_entries(&cfg, entries)?;
        let sums = summaries_of(&report)?;
        let geo = stage_geometry(&report.records, StageTag::InputOutput, cfg.geometry.bins)?;
        info!("sweep s = {s}: RougeL {} Jaccard {}", sums.rouge_l, sums.jaccard);
        rows.push(SweepRow {
            s,
            rouge_l: sums.rouge_l,
            jaccard: sums.jaccard,
            exact_recall: report.exact_recall,
            scale_estimate: report.scale_estimate,
            input_output_distance: geo.mean_distance(),
            input_output_angle_deg: geo.mean_angle_deg(),
        });
    }
    Ok(rows)
}

/// One partial-input run per fraction.
pub fn run_partial_sweep(config: &RunConfig, entries: &[WikiBioEntry], f_values: &[f64]) -> Result<Vec<PartialRow>> {
    if f_values.is_empty() {
        return Err(Error::Empty("fraction list"));
    }
    let mut rows = Vec::with_capacity(f_values.len());
    for &f in f_values {
        let mut cfg = config.clone();
        cfg.mode = SynthesisMode::PartialInput { f };
        cfg.validate()?;
        let report = run_entries(&cfg, entries)?;
        let sums = summaries_of(&report)?;
        info!("partial f = {f}: Jaccard {}", sums.jaccard);
        rows.push(PartialRow {
            f,
            jaccard: sums.jaccard,
            rouge_l: sums.rouge_l,
            exact_recall: report.exact_recall,
        });
    }
    Ok(rows)
}

fn factor(s: f64) -> String {
    if s.fract() == 0.0 {
        format!("×{}", s as i64)
    } else {
        format!("×{s}")
    }
}

pub fn format_sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| Scaling | RougeL      | Jaccard     | exact | io-dist | io-angle |");
    let _ = writeln!(out, "|---------|-------------|-------------|-------|---------|----------|");
    for r in rows {
        let angle = r
            .input_output_angle_deg
            .map_or("n/a".to_string(), |a| format!("{a:.1}"));
        let _ = writeln!(
            out,
            "| {:<7} | {} | {} | {:.3} | {:>7.3} | {:>8} |",
            factor(r.s),
            r.rouge_l,
            r.jaccard,
            r.exact_recall,
            r.input_output_distance,
            angle
        );
    }
    out
}

pub fn format_partial_table(rows: &[PartialRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| f    | Jaccard     | RougeL      | exact |");
    let _ = writeln!(out, "|------|-------------|-------------|-------|");
    for r in rows {
        let _ = writeln!(out, "| {:<4} | {} | {} | {:.3} |", r.f, r.jaccard, r.rouge_l, r.exact_recall);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    pub scale: f64,
    pub iterations: usize,
}

/// Bisects the read-side ridge coefficient until the base run's
/// `estimate_scale` is within `tolerance` of `target`. The estimate grows
/// with `lambda`, so the search brackets from `[0, 1]` and doubles the
/// upper end as needed.
pub fn calibrate_lambda(
    config: &RunConfig,
    entries: &[WikiBioEntry],
    target: f64,
    tolerance: f64,
) -> Result<Calibration> {
    if !(target > 0.0) || !(tolerance > 0.0) {
        return Err(Error::InvalidParameter("target and tolerance must be positive".into()));
    }
    let mut iterations = 0;
    let mut scale_at = |lambda: f64| -> Result<f64> {
        iterations += 1;
        let mut cfg = config.clone();
        cfg.mode = SynthesisMode::Base;
        cfg.memory.lambda = lambda;
        let report = run_entries(&cfg, entries)?;
        report
            .scale_estimate
            .ok_or(Error::DegenerateRecords(report.records.len()))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut s_lo = scale_at(lo)?;
    if s_lo >= target - tolerance {
        return Ok(Calibration { lambda: lo, scale: s_lo, iterations });
    }
    let mut s_hi = scale_at(hi)?;
    while s_hi < target {
        if hi > 1e6 {
            return Err(Error::InvalidParameter(format!(
                "no lambda up to {hi} reaches scale {target} (got {s_hi})"
            )));
        }
        lo = hi;
        s_lo = s_hi;
        hi *= 2.0;
        s_hi = scale_at(hi)?;
    }
    for _ in 0..60 {
        if (s_hi - target).abs() <= tolerance {
            return Ok(Calibration { lambda: hi, scale: s_hi, iterations });
        }
        if (s_lo - target).abs() <= tolerance {
            return Ok(Calibration { lambda: lo, scale: s_lo, iterations });
        }
        let mid = 0.5 * (lo + hi);
        let s_mid = scale_at(mid)?;
        if s_mid < target {
            lo = mid;
            s_lo = s_mid;
        } else {
            hi = mid;
            s_hi = s_mid;
        }
    }
    let (lambda, scale) = if (s_lo - target).abs() < (s_hi - target).abs() {
        (lo, s_lo)
    } else {
        (hi, s_hi)
    };
    Ok(Calibration { lambda, scale, iterations })
}
