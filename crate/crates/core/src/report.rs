//! Run reports: the per-stage metrics CSV, a human-readable summary, and
//! the named-floats CSV used for parameter files.

use crate::driver::{EmState, MetricsRow, Stage};
use crate::error::{Error, Result};

/// `step,stage,mean_iou,precision,energy`, one row per logged stage.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("step,stage,mean_iou,precision,energy\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            row.step,
            row.stage.as_str(),
            row.metrics.mean_iou,
            row.metrics.precision,
            row.metrics.energy
        ));
    }
    out
}

/// Per-step digest: stage mIoU values, the pairwise delta against the
/// previous step, the energy column, and a flag whenever the propagated
/// result fell below the unary one.
pub fn summary(state: &EmState) -> String {
    let mut out = String::new();
    if let Some(seeds) = state.row(0, Stage::Seeds) {
        out.push_str(&format!(
            "seeds: miou {:.3} precision {:.3}\n",
            seeds.metrics.mean_iou, seeds.metrics.precision
        ));
    }
    let mut prev_pairwise: Option<f64> = None;
    for step in state.completed_steps() {
        let unary = state.row(step, Stage::Unary);
        let mined = state.row(step, Stage::Mined);
        let pairwise = state.row(step, Stage::Pairwise);
        let (Some(unary), Some(mined), Some(pairwise)) = (unary, mined, pairwise) else {
            continue;
        };
        let delta = prev_pairwise
            .map(|p| format!("{:+.3}", pairwise.metrics.mean_iou - p))
            .unwrap_or_else(|| "  -  ".to_string());
        out.push_str(&format!(
            "step {}: unary {:.3} | mined {:.3} (prec {:.3}) | pairwise {:.3} (delta {}) | energy {:.6}",
            step,
            unary.metrics.mean_iou,
            mined.metrics.mean_iou,
            mined.metrics.precision,
            pairwise.metrics.mean_iou,
            delta,
            pairwise.metrics.energy
        ));
        if pairwise.metrics.mean_iou < unary.metrics.mean_iou {
            out.push_str("  [pairwise below unary]");
        }
        out.push('\n');
        prev_pairwise = Some(pairwise.metrics.mean_iou);
    }
    for diag in &state.diagnostics {
        out.push_str(&format!(
            "step {}: mined-energy check holds on {:.0}% of images\n",
            diag.step,
            diag.eq_fraction * 100.0
        ));
    }
    out
}

/// `name,value` rows. Values use the shortest round-trip float formatting,
/// so writing and re-reading is lossless.
pub fn named_floats_csv(pairs: &[(String, f64)]) -> String {
    let mut out = String::from("name,value\n");
    for (name, value) in pairs {
        out.push_str(&format!("{name},{value}\n"));
    }
    out
}

pub fn parse_named_floats(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line == "name,value") {
            continue;
        }
        let (name, value) = line
            .split_once(',')
            .ok_or_else(|| Error::MalformedParams(format!("line {}: {line}", idx + 1)))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::MalformedParams(format!("line {}: {line}", idx + 1)))?;
        out.push((name.trim().to_string(), value));
    }
    Ok(out)
}
