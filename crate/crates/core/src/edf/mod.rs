//! EDF and EDF+ recordings.
//!
//! Samples are kept as raw 16-bit digital values so that reading, splitting and
//! writing never touch the physical scaling. Decimal header fields keep their
//! textual form, which makes `write(read(bytes)) == bytes` hold for conformant
//! input.

mod decimal;
mod night;
mod read;
pub mod synth;
pub mod tal;
mod write;

use std::fmt;

use chrono::NaiveDateTime;
use thiserror::Error;

pub use decimal::DecimalField;
pub use night::{
    detect_night_boundaries, split_nights, NightManifest, NightSpan, DEFAULT_GAP_THRESHOLD_S,
};
pub use read::{read_file, read_recording};
pub use write::{write_file, write_recording, write_to};

/// Size of the fixed part of the header and of each per-signal header block.
pub const HEADER_BLOCK: usize = 256;

/// Label that marks an EDF+ annotation signal.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Error)]
pub enum EdfError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data records: header implies {expected} bytes of data, found {actual}")]
    TruncatedRecords { expected: usize, actual: usize },
    #[error("header declares {header_bytes} header bytes for {signal_count} signals")]
    InconsistentSignalCount {
        header_bytes: usize,
        signal_count: usize,
    },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("recording carries no record timestamps and no night manifest was given")]
    NoTimestamps,
    #[error("recording has no data records")]
    EmptyRecording,
    #[error("record range {start}..{end} is out of bounds for {records} records")]
    RangeOutOfBounds {
        start: usize,
        end: usize,
        records: usize,
    },
    #[error("invalid night manifest: {0}")]
    InvalidManifest(String),
    #[error("malformed annotation: {0}")]
    Annotation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EdfError> = std::result::Result<T, E>;

/// File flavour, taken from the first bytes of the reserved header field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdfVariant {
    Edf,
    /// EDF+ continuous.
    PlusC,
    /// EDF+ discontinuous: record onsets come from the annotation signal.
    PlusD,
}

impl fmt::Display for EdfVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdfVariant::Edf => "EDF",
            EdfVariant::PlusC => "EDF+C",
            EdfVariant::PlusD => "EDF+D",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_datetime: NaiveDateTime,
    pub header_bytes: usize,
    /// 44-char field; carries the "EDF+C"/"EDF+D" marker for EDF+.
    pub reserved: String,
    /// Number of data records, `-1` when unknown.
    pub record_count: i64,
    pub record_duration_s: DecimalField,
    pub signal_count: usize,
}

impl EdfHeader {
    pub fn variant(&self) -> EdfVariant {
        if self.reserved.starts_with("EDF+D") {
            EdfVariant::PlusD
        } else if self.reserved.starts_with("EDF+C") {
            EdfVariant::PlusC
        } else {
            EdfVariant::Edf
        }
    }

    pub fn record_duration(&self) -> f64 {
        self.record_duration_s.value()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dim: String,
    pub phys_min: DecimalField,
    pub phys_max: DecimalField,
    pub dig_min: i32,
    pub dig_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    pub fn is_annotation(&self) -> bool {
        self.label.trim() == ANNOTATION_LABEL
    }

    /// Physical units per digital step.
    pub fn gain(&self) -> f64 {
        (self.phys_max.value() - self.phys_min.value()) / f64::from(self.dig_max - self.dig_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        self.phys_min.value() + (f64::from(digital) - f64::from(self.dig_min)) * self.gain()
    }

    /// Inverse of [`to_physical`](Self::to_physical), rounded and clamped to the digital range.
    pub fn to_digital(&self, physical: f64) -> i16 {
        let d = f64::from(self.dig_min) + (physical - self.phys_min.value()) / self.gain();
        d.round()
            .clamp(f64::from(self.dig_min), f64::from(self.dig_max)) as i16
    }

    /// Annotation signal header with room for `samples_per_record * 2` bytes of TALs.
    pub fn annotation(samples_per_record: usize) -> Self {
        SignalHeader {
            label: ANNOTATION_LABEL.to_string(),
            transducer: String::new(),
            physical_dim: String::new(),
            phys_min: DecimalField::from_f64(-1.0).expect("fits"),
            phys_max: DecimalField::from_f64(1.0).expect("fits"),
            dig_min: -32768,
            dig_max: 32767,
            prefiltering: String::new(),
            samples_per_record,
            reserved: String::new(),
        }
    }
}

/// One data record: `signals[s]` holds exactly `samples_per_record` samples of signal `s`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataRecord {
    pub signals: Vec<Vec<i16>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfRecording {
    pub header: EdfHeader,
    pub signals: Vec<SignalHeader>,
    pub records: Vec<DataRecord>,
}

impl EdfRecording {
    pub fn variant(&self) -> EdfVariant {
        self.header.variant()
    }

    /// Bytes occupied by one data record.
    pub fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }

    /// Total size of the serialized file.
    pub fn byte_len(&self) -> usize {
        HEADER_BLOCK * (1 + self.signals.len()) + self.record_bytes() * self.records.len()
    }

    pub fn annotation_signal(&self) -> Option<usize> {
        self.signals.iter().position(SignalHeader::is_annotation)
    }

    pub fn signal_index(&self, label: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.label.trim() == label.trim())
    }

    /// Recorded duration, `records × record_duration`.
    pub fn duration_s(&self) -> f64 {
        self.records.len() as f64 * self.header.record_duration()
    }

    /// Onset of every data record in seconds from the file start.
    ///
    /// EDF+D files take the onset from the time-keeping TAL of each record;
    /// other files are contiguous so the onset is `index × record_duration`.
    pub fn record_onsets(&self) -> Result<Vec<f64>> {
        match (self.variant(), self.annotation_signal()) {
            (EdfVariant::PlusD, Some(a)) => self
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let bytes = tal::samples_to_bytes(&r.signals[a]);
                    tal::timekeeping_onset(&bytes)
                        .map_err(|e| EdfError::Annotation(format!("record {i}: {e}")))
                })
                .collect(),
            (EdfVariant::PlusD, None) => Err(EdfError::NoTimestamps),
            _ => {
                let d = self.header.record_duration();
                Ok((0..self.records.len()).map(|i| i as f64 * d).collect())
            }
        }
    }

    /// Physical values of one signal across all records.
    pub fn physical_samples(&self, signal: usize) -> Vec<f64> {
        let header = &self.signals[signal];
        self.records
            .iter()
            .flat_map(|r| r.signals[signal].iter().map(|&d| header.to_physical(d)))
            .collect()
    }

    /// Checks every structural invariant a writable recording must satisfy.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        let violation = |m: String| Err(EdfError::InvariantViolation(m));
        if h.signal_count == 0 || h.signal_count != self.signals.len() {
            return violation(format!(
                "signal_count {} does not match {} signal headers",
                h.signal_count,
                self.signals.len()
            ));
        }
        if h.header_bytes != HEADER_BLOCK * (1 + h.signal_count) {
            return Err(EdfError::InconsistentSignalCount {
                header_bytes: h.header_bytes,
                signal_count: h.signal_count,
            });
        }
        if h.record_duration() <= 0.0 {
            return violation("record duration must be positive".into());
        }
        if h.record_count != -1 && h.record_count != self.records.len() as i64 {
            return violation(format!(
                "record_count {} but {} records present",
                h.record_count,
                self.records.len()
            ));
        }
        for (i, s) in self.signals.iter().enumerate() {
            if s.dig_min >= s.dig_max {
                return violation(format!("signal {i}: dig_min >= dig_max"));
            }
            if !(i32::from(i16::MIN)..=i32::from(i16::MAX)).contains(&s.dig_min)
                || !(i32::from(i16::MIN)..=i32::from(i16::MAX)).contains(&s.dig_max)
            {
                return violation(format!("signal {i}: digital range exceeds 16 bits"));
            }
            if s.phys_min.value() == s.phys_max.value() {
                return violation(format!("signal {i}: phys_min == phys_max"));
            }
            if s.samples_per_record == 0 {
                return violation(format!("signal {i}: samples_per_record is zero"));
            }
        }
        for (r, rec) in self.records.iter().enumerate() {
            if rec.signals.len() != self.signals.len() {
                return violation(format!("record {r}: wrong number of signals"));
            }
            for (s, samples) in rec.signals.iter().enumerate() {
                if samples.len() != self.signals[s].samples_per_record {
                    return violation(format!(
                        "record {r} signal {s}: {} samples, expected {}",
                        samples.len(),
                        self.signals[s].samples_per_record
                    ));
                }
            }
        }
        if self.variant() == EdfVariant::PlusD {
            let onsets = self.record_onsets()?;
            if onsets.windows(2).any(|w| w[1] <= w[0]) {
                return violation("EDF+D record onsets are not strictly increasing".into());
            }
        }
        Ok(())
    }
}

pub(crate) fn is_printable_ascii(s: &[u8]) -> bool {
    s.iter().all(|b| (0x20..=0x7e).contains(b))
}
