//! Sleep stages, hypnograms and hypnodensities.

mod csv_io;

use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{
    read_hypnodensity_csv, read_hypnogram_csv, read_labels_csv, write_hypnodensity_csv,
    write_hypnogram_csv, write_labels_csv,
};

pub const DEFAULT_EPOCH_LENGTH_S: f64 = 30.0;

/// Allowed deviation of a hypnodensity row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Prefix of scoring labels for gray-area epochs.
pub const UNCERTAIN_PREFIX: &str = "uncertain";

#[derive(Debug, Error)]
pub enum StagingError {
    #[error("epoch length must be positive, got {0}")]
    InvalidEpochLength(f64),
    #[error("hypnogram has no epochs")]
    EmptyHypnogram,
    #[error("epoch {epoch}: invalid probability row ({reason})")]
    InvalidProbabilityRow { epoch: usize, reason: String },
    #[error("analysis window must satisfy lights_out < lights_on")]
    InvalidWindow,
    #[error("analysis window does not overlap the hypnogram")]
    EmptyWindow,
    #[error("unknown sleep stage label {0:?}")]
    UnknownStage(String),
    #[error("expected epoch index {expected}, found {found}")]
    NonSequentialEpoch { expected: usize, found: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StagingError> = std::result::Result<T, E>;

/// AASM sleep stages in canonical order; `code()` is the index in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SleepStage {
    W,
    N1,
    N2,
    N3,
    #[serde(rename = "REM")]
    Rem,
}

impl SleepStage {
    pub const COUNT: usize = 5;
    pub const ALL: [SleepStage; 5] = [
        SleepStage::W,
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::Rem,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            SleepStage::W => "W",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::Rem => "REM",
        }
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SleepStage {
    type Err = StagingError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| StagingError::UnknownStage(s.to_string()))
    }
}

fn check_epoch_length(epoch_length_s: f64) -> Result<()> {
    if epoch_length_s > 0.0 && epoch_length_s.is_finite() {
        Ok(())
    } else {
        Err(StagingError::InvalidEpochLength(epoch_length_s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypnogram {
    epoch_length_s: f64,
    start_time: NaiveDateTime,
    stages: Vec<SleepStage>,
}

impl Hypnogram {
    pub fn new(
        epoch_length_s: f64,
        start_time: NaiveDateTime,
        stages: Vec<SleepStage>,
    ) -> Result<Self> {
        check_epoch_length(epoch_length_s)?;
        if stages.is_empty() {
            return Err(StagingError::EmptyHypnogram);
        }
        Ok(Hypnogram {
            epoch_length_s,
            start_time,
            stages,
        })
    }

    pub fn epoch_length_s(&self) -> f64 {
        self.epoch_length_s
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.start_time
    }

    pub fn stages(&self) -> &[SleepStage] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Start of epoch `i` as an offset from `start_time`, in milliseconds.
    fn epoch_offset_ms(&self, i: usize) -> i64 {
        (i as f64 * self.epoch_length_s * 1000.0).round() as i64
    }
}

/// Per-epoch probabilities over the five stages, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypnodensity {
    epoch_length_s: f64,
    rows: Vec<[f64; 5]>,
}

impl Hypnodensity {
    /// Validates that every entry is finite and non-negative and that every
    /// row sums to 1 within [`ROW_SUM_TOLERANCE`].
    pub fn new(epoch_length_s: f64, rows: Vec<[f64; 5]>) -> Result<Self> {
        check_epoch_length(epoch_length_s)?;
        if rows.is_empty() {
            return Err(StagingError::EmptyHypnogram);
        }
        for (epoch, row) in rows.iter().enumerate() {
            check_row(epoch, row)?;
        }
        Ok(Hypnodensity {
            epoch_length_s,
            rows,
        })
    }

    pub fn epoch_length_s(&self) -> f64 {
        self.epoch_length_s
    }

    pub fn rows(&self) -> &[[f64; 5]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub(crate) fn check_row(epoch: usize, row: &[f64; 5]) -> Result<()> {
    let invalid = |reason: String| Err(StagingError::InvalidProbabilityRow { epoch, reason });
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return invalid(format!("entry {p} is negative or not finite"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return invalid(format!("row sums to {sum}"));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64; 5]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = i;
        }
    }
    best
}

pub fn hypnodensity_to_hypnogram(h: &Hypnodensity, start_time: NaiveDateTime) -> Hypnogram {
    Hypnogram {
        epoch_length_s: h.epoch_length_s,
        start_time,
        stages: h
            .rows
            .iter()
            .map(|r| SleepStage::ALL[argmax(r)])
            .collect(),
    }
}

/// Epoch of a hypnogram with gray areas rendered as blanks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarEntry {
    Stage(SleepStage),
    /// Gray-area epoch; keeps the scorer's suggestion for the technologist.
    Gray { suggested: SleepStage },
}

impl StarEntry {
    pub fn is_gray(self) -> bool {
        matches!(self, StarEntry::Gray { .. })
    }

    pub fn stage(self) -> SleepStage {
        match self {
            StarEntry::Stage(s) | StarEntry::Gray { suggested: s } => s,
        }
    }

    pub fn label(self) -> String {
        match self {
            StarEntry::Stage(s) => s.label().to_string(),
            StarEntry::Gray { suggested } => format!("{UNCERTAIN_PREFIX}-{suggested}"),
        }
    }
}

impl FromStr for StarEntry {
    type Err = StagingError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().strip_prefix(UNCERTAIN_PREFIX) {
            Some(rest) => {
                let stage = rest
                    .strip_prefix('-')
                    .ok_or_else(|| StagingError::UnknownStage(s.to_string()))?;
                Ok(StarEntry::Gray {
                    suggested: stage.parse()?,
                })
            }
            None => Ok(StarEntry::Stage(s.parse()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarHypnogram {
    pub epoch_length_s: f64,
    pub start_time: NaiveDateTime,
    pub entries: Vec<StarEntry>,
}

impl StarHypnogram {
    pub fn gray_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_gray()).count()
    }
}

/// Stage labels for the scoring software: gray epochs become
/// `uncertain-<suggested stage>` so they can be found by searching "uncertain".
pub fn encode_scoring_labels(s: &StarHypnogram) -> Vec<String> {
    s.entries.iter().map(|e| e.label()).collect()
}

/// Lights-out to lights-on analysis period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisWindow {
    lights_out: NaiveDateTime,
    lights_on: NaiveDateTime,
}

impl AnalysisWindow {
    pub fn new(lights_out: NaiveDateTime, lights_on: NaiveDateTime) -> Result<Self> {
        if lights_out < lights_on {
            Ok(AnalysisWindow {
                lights_out,
                lights_on,
            })
        } else {
            Err(StagingError::InvalidWindow)
        }
    }

    pub fn lights_out(&self) -> NaiveDateTime {
        self.lights_out
    }

    pub fn lights_on(&self) -> NaiveDateTime {
        self.lights_on
    }
}

/// Keeps the epochs whose start lies in `[lights_out, lights_on)`.
pub fn trim_to_window(hyp: &Hypnogram, w: &AnalysisWindow) -> Result<Hypnogram> {
    let lo = (w.lights_out - hyp.start_time).num_milliseconds();
    let hi = (w.lights_on - hyp.start_time).num_milliseconds();
    let kept: Vec<usize> = (0..hyp.len())
        .filter(|&i| {
            let t = hyp.epoch_offset_ms(i);
            lo <= t && t < hi
        })
        .collect();
    let (Some(&first), Some(&last)) = (kept.first(), kept.last()) else {
        return Err(StagingError::EmptyWindow);
    };
    Ok(Hypnogram {
        epoch_length_s: hyp.epoch_length_s,
        start_time: hyp.start_time + Duration::milliseconds(hyp.epoch_offset_ms(first)),
        stages: hyp.stages[first..=last].to_vec(),
    })
}
