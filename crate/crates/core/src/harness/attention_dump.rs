//! Per-row attention weights of both branches for one clip.

use super::HarnessError;
use crate::data::Episode;
use crate::sap::{infer, AblationVariant, SapConfig, SapParams};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionRow {
    pub row: usize,
    pub frame_index: usize,
    pub confidence: f64,
    pub noun_weight: f64,
    pub verb_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionReport {
    /// Sorted by noun-branch weight, largest first; ties keep row order.
    pub rows: Vec<AttentionRow>,
    /// True when the bank was empty and the clip went down the baseline path.
    pub fallback: bool,
}

impl AttentionReport {
    pub fn to_csv(&self) -> String {
        if self.fallback {
            return "# fallback: empty object bank, baseline path, no attention weights\n".to_string();
        }
        let mut out = String::from("row,frame_index,confidence,noun_weight,verb_weight\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.row, r.frame_index, r.confidence, r.noun_weight, r.verb_weight
            );
        }
        out
    }
}

/// Attention weights of the `full` model on one clip.
pub fn dump_attention(params: &SapParams, episode: &Episode, cfg: &SapConfig) -> Result<AttentionReport, HarnessError> {
    let out = infer(params, episode.inputs(), AblationVariant::Full, cfg)?;
    let (Some(nw), Some(vw)) = (out.noun.attention_weights, out.verb.attention_weights) else {
        return Ok(AttentionReport {
            rows: Vec::new(),
            fallback: true,
        });
    };
    let bank = &episode.bank;
    let mut rows: Vec<AttentionRow> = (0..bank.rows())
        .map(|i| AttentionRow {
            row: i,
            frame_index: bank.frame_index()[i],
            confidence: bank.confidences()[i],
            noun_weight: nw[i],
            verb_weight: vw[i],
        })
        .collect();
    rows.sort_by(|a, b| b.noun_weight.total_cmp(&a.noun_weight));
    Ok(AttentionReport {
        rows,
        fallback: out.fallback,
    })
}

pub fn write_attention(report: &AttentionReport, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, report.to_csv()).map_err(HarnessError::io(path))
}
