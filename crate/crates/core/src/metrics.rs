//! Detection metrics over paired in/out score samples.
//!
//! In-distribution samples are the positive class and higher scores mean
//! "more in-distribution" throughout.

use serde::{Deserialize, Serialize};

use crate::detector::{check_tpr, threshold_for};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub in_scores: Vec<f64>,
    pub out_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(in_scores: Vec<f64>, out_scores: Vec<f64>) -> Result<Self> {
        let set = Self {
            in_scores,
            out_scores,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_scores.is_empty() || self.out_scores.is_empty() {
            return Err(Error::invalid(format!(
                "score set needs both sides non-empty (in={}, out={})",
                self.in_scores.len(),
                self.out_scores.len()
            )));
        }
        let bad = self
            .in_scores
            .iter()
            .chain(&self.out_scores)
            .find(|s| !s.is_finite());
        if let Some(s) = bad {
            return Err(Error::invalid(format!(
                "score set contains non-finite value {s}"
            )));
        }
        Ok(())
    }

    /// Swaps which side is treated as positive.
    pub fn swapped(&self) -> Self {
        Self {
            in_scores: self.out_scores.clone(),
            out_scores: self.in_scores.clone(),
        }
    }

    /// Applies `f` to every score.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            in_scores: self.in_scores.iter().map(|&s| f(s)).collect(),
            out_scores: self.out_scores.iter().map(|&s| f(s)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fpr_at_tpr: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub n_in: usize,
    pub n_out: usize,
    pub tpr_target: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "fpr_at_tpr,auroc,aupr,n_in,n_out,tpr_target";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.fpr_at_tpr, self.auroc, self.aupr, self.n_in, self.n_out, self.tpr_target
        )
    }
}

/// False positive rate on OOD samples at the threshold calibrated to reach
/// `q` TPR on the in-distribution side.
pub fn fpr_at_tpr(set: &ScoreSet, q: f64) -> Result<f64> {
    set.validate()?;
    check_tpr(q)?;
    let tau = threshold_for(&set.in_scores, q)?;
    let fp = set.out_scores.iter().filter(|&&s| s > tau).count();
    Ok(fp as f64 / set.out_scores.len() as f64)
}

/// Mann-Whitney AUROC with ties counted as one half.
pub fn auroc(set: &ScoreSet) -> Result<f64> {
    set.validate()?;
    let mut out = set.out_scores.clone();
    out.sort_by(f64::total_cmp);
    // Twice the U statistic, kept integral.
    let mut u2: u64 = 0;
    for &s in &set.in_scores {
        let lo = out.partition_point(|&o| o < s);
        let hi = out.partition_point(|&o| o <= s);
        u2 += 2 * lo as u64 + (hi - lo) as u64;
    }
    let pairs = set.in_scores.len() as f64 * set.out_scores.len() as f64;
    Ok(u2 as f64 / 2.0 / pairs)
}

/// Average precision: step integration of precision over recall, with tied
/// scores grouped into a single operating point.
pub fn aupr(set: &ScoreSet) -> Result<f64> {
    set.validate()?;
    let mut all: Vec<(f64, bool)> = set
        .in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(set.out_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let n_pos = set.in_scores.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let score = all[i].0;
        let mut group_pos = 0usize;
        while i < all.len() && all[i].0 == score {
            if all[i].1 {
                group_pos += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        tp += group_pos;
        if group_pos > 0 {
            let precision = tp as f64 / (tp + fp) as f64;
            ap += precision * group_pos as f64;
        }
    }
    Ok(ap / n_pos)
}

pub fn full_report(set: &ScoreSet, q: f64) -> Result<MetricsReport> {
    Ok(MetricsReport {
        fpr_at_tpr: fpr_at_tpr(set, q)?,
        auroc: auroc(set)?,
        aupr: aupr(set)?,
        n_in: set.in_scores.len(),
        n_out: set.out_scores.len(),
        tpr_target: q,
    })
}
