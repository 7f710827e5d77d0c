//! Automatic sleep-stage scoring.
//!
//! Two scorers sit behind [`ScorerSpec`]: a loader for hypnodensities computed
//! by an external network, and a transparent spectral baseline that maps
//! per-epoch EEG features through a softmax-normalized linear rule.

use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::EdfRecording;
use crate::staging::{self, Hypnodensity, SleepStage, StagingError};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("channel {0:?} is not present in the recording")]
    ChannelMissing(String),
    #[error("hypnodensity has {found} rows but the recording spans {expected} epochs")]
    PrecomputedLengthMismatch { expected: usize, found: usize },
    #[error("epoch {epoch}: invalid probability row ({reason})")]
    InvalidProbabilityRow { epoch: usize, reason: String },
    #[error("recording is shorter than one epoch")]
    RecordingTooShort,
    #[error("cannot read hypnodensity {path}: {source}")]
    SourceUnreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid scorer configuration: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Staging(StagingError),
}

impl From<StagingError> for ScoringError {
    fn from(e: StagingError) -> Self {
        match e {
            StagingError::InvalidProbabilityRow { epoch, reason } => {
                ScoringError::InvalidProbabilityRow { epoch, reason }
            }
            other => ScoringError::Staging(other),
        }
    }
}

pub type Result<T, E = ScoringError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum ScorerSpec {
    /// Hypnodensity CSV produced elsewhere, passed through after validation.
    Precomputed { source: PathBuf },
    /// Spectral baseline on a single channel.
    Baseline {
        channel_label: String,
        coefficients: BaselineCoefficients,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Precomputed,
    Baseline,
}

/// `[scorer]` configuration section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub channel: Option<String>,
    #[serde(default)]
    pub coefficients: Option<BaselineCoefficients>,
}

impl ScorerConfig {
    pub fn to_spec(&self) -> Result<ScorerSpec> {
        match self.kind {
            ScorerKind::Precomputed => Ok(ScorerSpec::Precomputed {
                source: self.source.clone().ok_or_else(|| {
                    ScoringError::InvalidSpec("precomputed scorer needs `source`".into())
                })?,
            }),
            ScorerKind::Baseline => Ok(ScorerSpec::Baseline {
                channel_label: self.channel.clone().ok_or_else(|| {
                    ScoringError::InvalidSpec("baseline scorer needs `channel`".into())
                })?,
                coefficients: self.coefficients.clone().unwrap_or_default(),
            }),
        }
    }
}

/// Relative band power limits in Hz, half-open.
pub const DELTA_HZ: (f64, f64) = (0.5, 4.0);
pub const THETA_HZ: (f64, f64) = (4.0, 8.0);
pub const ALPHA_HZ: (f64, f64) = (8.0, 12.0);
pub const BETA_HZ: (f64, f64) = (12.0, 30.0);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EpochFeatures {
    pub delta: f64,
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Population variance of the epoch, in squared physical units.
    pub variance: f64,
    /// Sign changes of the mean-removed signal per second.
    pub zero_crossing_rate: f64,
}

impl EpochFeatures {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.delta,
            self.theta,
            self.alpha,
            self.beta,
            self.variance,
            self.zero_crossing_rate,
        ]
    }
}

/// One row per stage (canonical order): `[bias, delta, theta, alpha, beta, variance, zcr]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaselineCoefficients(pub [[f64; 7]; 5]);

impl Default for BaselineCoefficients {
    fn default() -> Self {
        BaselineCoefficients([
            [0.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.02], // W
            [0.5, 0.5, 3.0, 1.0, 1.0, 0.0, 0.0],  // N1
            [0.5, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0],  // N2
            [0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],  // N3
            [0.0, 0.0, 2.5, 1.0, 2.0, 0.0, 0.0],  // REM
        ])
    }
}

impl BaselineCoefficients {
    pub fn probabilities(&self, f: &EpochFeatures) -> [f64; 5] {
        let x = f.as_array();
        let mut logits = [0.0; 5];
        for (logit, w) in logits.iter_mut().zip(&self.0) {
            *logit = w[0] + w[1..].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        }
        softmax(logits)
    }
}

pub fn softmax(logits: [f64; 5]) -> [f64; 5] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.map(|l| (l - max).exp());
    let sum: f64 = exp.iter().sum();
    exp.map(|e| e / sum)
}

/// Spectral and time-domain features of one epoch.
pub fn epoch_features(samples: &[f64], sample_rate_hz: f64) -> EpochFeatures {
    let n = samples.len();
    if n < 2 {
        return EpochFeatures::default();
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = samples.iter().map(|x| x - mean).collect();
    let variance = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let crossings = centered
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    let zero_crossing_rate = crossings as f64 / (n as f64 / sample_rate_hz);

    let mut spectrum: Vec<Complex<f64>> = centered.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut spectrum);
    let resolution = sample_rate_hz / n as f64;
    let mut total = 0.0;
    let mut bands = [0.0; 4];
    for (k, c) in spectrum.iter().enumerate().take(n / 2 + 1).skip(1) {
        // One-sided spectrum: every bin except Nyquist stands for two.
        let weight = if 2 * k == n { 1.0 } else { 2.0 };
        let power = weight * c.norm_sqr();
        total += power;
        let freq = k as f64 * resolution;
        for (band, (lo, hi)) in bands
            .iter_mut()
            .zip([DELTA_HZ, THETA_HZ, ALPHA_HZ, BETA_HZ])
        {
            if lo <= freq && freq < hi {
                *band += power;
            }
        }
    }
    let [delta, theta, alpha, beta] = if total > 0.0 {
        bands.map(|b| b / total)
    } else {
        [0.0; 4]
    };
    EpochFeatures {
        delta,
        theta,
        alpha,
        beta,
        variance,
        zero_crossing_rate,
    }
}

/// Number of whole epochs in a recording; a trailing partial epoch is dropped.
pub fn epoch_count(rec: &EdfRecording, epoch_length_s: f64) -> usize {
    (rec.duration_s() / epoch_length_s + 1e-9).floor() as usize
}

/// Scores a one-night recording, one probability row per whole epoch.
pub fn score(rec: &EdfRecording, spec: &ScorerSpec, epoch_length_s: f64) -> Result<Hypnodensity> {
    if !(epoch_length_s > 0.0) {
        return Err(StagingError::InvalidEpochLength(epoch_length_s).into());
    }
    let epochs = epoch_count(rec, epoch_length_s);
    if epochs == 0 {
        return Err(ScoringError::RecordingTooShort);
    }
    match spec {
        ScorerSpec::Precomputed { source } => {
            let h = load_precomputed(source, epoch_length_s)?;
            validate_hypnodensity(h.rows(), epochs)?;
            Ok(h)
        }
        ScorerSpec::Baseline {
            channel_label,
            coefficients,
        } => {
            let idx = rec
                .signal_index(channel_label)
                .filter(|&i| !rec.signals[i].is_annotation())
                .ok_or_else(|| ScoringError::ChannelMissing(channel_label.clone()))?;
            let rate = rec.signals[idx].samples_per_record as f64 / rec.header.record_duration();
            let per_epoch = (rate * epoch_length_s).round() as usize;
            let samples = rec.physical_samples(idx);
            let rows = samples
                .chunks_exact(per_epoch)
                .take(epochs)
                .map(|chunk| coefficients.probabilities(&epoch_features(chunk, rate)))
                .collect();
            Ok(Hypnodensity::new(epoch_length_s, rows)?)
        }
    }
}

fn load_precomputed(path: &Path, epoch_length_s: f64) -> Result<Hypnodensity> {
    let file = std::fs::File::open(path).map_err(|source| ScoringError::SourceUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(staging::read_hypnodensity_csv(
        std::io::BufReader::new(file),
        epoch_length_s,
    )?)
}

/// Checks row count, non-negativity and row sums (within 1e-6).
pub fn validate_hypnodensity(rows: &[[f64; 5]], expected_epochs: usize) -> Result<()> {
    for (epoch, row) in rows.iter().enumerate() {
        staging::check_row(epoch, row)?;
    }
    if rows.len() != expected_epochs {
        return Err(ScoringError::PrecomputedLengthMismatch {
            expected: expected_epochs,
            found: rows.len(),
        });
    }
    Ok(())
}

/// Stage with the highest baseline probability for a feature vector.
pub fn baseline_stage(coefficients: &BaselineCoefficients, f: &EpochFeatures) -> SleepStage {
    SleepStage::ALL[staging::argmax(&coefficients.probabilities(f))]
}
