//! Fleiss' multi-rater kappa over sleep-stage scorings.

mod report;
pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gray::GrayMask;
use crate::staging::{Hypnogram, SleepStage};

pub use report::{
    kappa_for_directory, kappa_report, load_scorings, AssignmentLayout, CellSummary, Condition,
    ConditionSummary, KappaTable, PsgKappa, PsgScorings, TechnologistSummary,
};

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("at least two raters are required, got {0}")]
    SingleRater(usize),
    #[error("no epochs to rate")]
    NoEpochs,
    #[error("epoch {epoch} has {found} ratings, expected {expected}")]
    RowSum {
        epoch: usize,
        found: u32,
        expected: u32,
    },
    #[error("scorings differ in length or epoch duration")]
    LengthMismatch,
    #[error("all ratings fall in one category but agreement is not perfect")]
    DegenerateMarginals,
    #[error("mask selects no epochs")]
    EmptyMask,
    #[error("cannot summarize an empty list")]
    EmptyList,
    #[error("invalid assignment layout: {0}")]
    InvalidLayout(String),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
}

pub type Result<T, E = AgreementError> = std::result::Result<T, E>;

/// Per-epoch counts of how many raters chose each stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    counts: Vec<[u32; 5]>,
    raters: u32,
}

impl RatingMatrix {
    pub fn new(counts: Vec<[u32; 5]>, raters: u32) -> Result<Self> {
        if raters < 2 {
            return Err(AgreementError::SingleRater(raters as usize));
        }
        if counts.is_empty() {
            return Err(AgreementError::NoEpochs);
        }
        for (epoch, row) in counts.iter().enumerate() {
            let found: u32 = row.iter().sum();
            if found != raters {
                return Err(AgreementError::RowSum {
                    epoch,
                    found,
                    expected: raters,
                });
            }
        }
        Ok(RatingMatrix { counts, raters })
    }

    pub fn counts(&self) -> &[[u32; 5]] {
        &self.counts
    }

    pub fn raters(&self) -> u32 {
        self.raters
    }

    pub fn epochs(&self) -> usize {
        self.counts.len()
    }

    /// Rows where `keep` is true.
    pub fn subset(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.counts.len() {
            return Err(AgreementError::LengthMismatch);
        }
        let counts: Vec<[u32; 5]> = self
            .counts
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(row, _)| *row)
            .collect();
        if counts.is_empty() {
            return Err(AgreementError::EmptyMask);
        }
        Ok(RatingMatrix {
            counts,
            raters: self.raters,
        })
    }
}

/// Tallies, per epoch, the stages chosen by each hypnogram (one per rater).
pub fn build_rating_matrix(hypnograms: &[Hypnogram]) -> Result<RatingMatrix> {
    let first = hypnograms
        .first()
        .ok_or(AgreementError::SingleRater(0))?;
    if hypnograms
        .iter()
        .any(|h| h.len() != first.len() || h.epoch_length_s() != first.epoch_length_s())
    {
        return Err(AgreementError::LengthMismatch);
    }
    let mut counts = vec![[0u32; 5]; first.len()];
    for h in hypnograms {
        for (row, stage) in counts.iter_mut().zip(h.stages()) {
            row[stage.code()] += 1;
        }
    }
    RatingMatrix::new(counts, hypnograms.len() as u32)
}

/// Fleiss' kappa, `(P̄ − P̄ₑ) / (1 − P̄ₑ)`.
///
/// When every rating falls into one category `P̄ₑ = 1` and the ratio is 0/0;
/// that case is reported as perfect agreement (1.0).
pub fn fleiss_kappa(m: &RatingMatrix) -> Result<f64> {
    let r = f64::from(m.raters);
    let n = m.counts.len() as f64;
    let mut column_totals = [0u64; SleepStage::COUNT];
    let mut p_sum = 0.0;
    for row in &m.counts {
        let squares: u64 = row.iter().map(|&c| u64::from(c) * u64::from(c)).sum();
        p_sum += (squares as f64 - r) / (r * (r - 1.0));
        for (total, &c) in column_totals.iter_mut().zip(row) {
            *total += u64::from(c);
        }
    }
    let all_ratings = m.counts.len() as u64 * u64::from(m.raters);
    if column_totals.contains(&all_ratings) {
        let perfect = m
            .counts
            .iter()
            .all(|row| row.iter().filter(|&&c| c > 0).count() == 1);
        return if perfect {
            Ok(1.0)
        } else {
            Err(AgreementError::DegenerateMarginals)
        };
    }
    let p_bar = p_sum / n;
    let p_e: f64 = column_totals
        .iter()
        .map(|&t| {
            let p = t as f64 / (n * r);
            p * p
        })
        .sum();
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Kappa restricted to the gray epochs of `mask`.
pub fn kappa_on_mask(m: &RatingMatrix, mask: &GrayMask) -> Result<f64> {
    if mask.len() != m.epochs() {
        return Err(AgreementError::LengthMismatch);
    }
    fleiss_kappa(&m.subset(&mask.flags)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub sd: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(AgreementError::EmptyList);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Summary { mean, sd, n })
}

/// Agreement of one scoring set, overall and on gray epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub overall_kappa: f64,
    pub gray_only_kappa: Option<f64>,
    pub n_epochs: usize,
    pub n_gray_epochs: usize,
}

impl KappaReport {
    pub fn compute(m: &RatingMatrix, mask: Option<&GrayMask>) -> Result<Self> {
        let overall_kappa = fleiss_kappa(m)?;
        let (gray_only_kappa, n_gray_epochs) = match mask {
            Some(mask) => {
                let n_gray = mask.gray_count();
                let k = match kappa_on_mask(m, mask) {
                    Ok(k) => Some(k),
                    Err(AgreementError::EmptyMask) => None,
                    Err(e) => return Err(e),
                };
                (k, n_gray)
            }
            None => (None, 0),
        };
        Ok(KappaReport {
            overall_kappa,
            gray_only_kappa,
            n_epochs: m.epochs(),
            n_gray_epochs,
        })
    }
}
