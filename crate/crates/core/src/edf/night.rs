use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{tal, EdfError, EdfRecording, EdfVariant, Result};

/// Gap between records that starts a new night.
pub const DEFAULT_GAP_THRESHOLD_S: f64 = 3600.0;

/// Sidecar file describing night boundaries of a continuous recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightManifest {
    pub nights: Vec<NightSpan>,
}

/// Half-open record range `start_record..end_record`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightSpan {
    pub start_record: usize,
    pub end_record: usize,
}

impl NightManifest {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| EdfError::InvalidManifest(e.to_string()))
    }

    /// Ranges must be non-empty, contiguous and cover exactly `0..records`.
    pub fn ranges(&self, records: usize) -> Result<Vec<Range<usize>>> {
        if self.nights.is_empty() {
            return Err(EdfError::InvalidManifest("no nights listed".into()));
        }
        let mut expected_start = 0;
        for n in &self.nights {
            if n.start_record != expected_start {
                return Err(EdfError::InvalidManifest(format!(
                    "night starting at record {} leaves a gap or overlap (expected {expected_start})",
                    n.start_record
                )));
            }
            if n.end_record <= n.start_record {
                return Err(EdfError::InvalidManifest(format!(
                    "empty night {}..{}",
                    n.start_record, n.end_record
                )));
            }
            expected_start = n.end_record;
        }
        if expected_start != records {
            return Err(EdfError::InvalidManifest(format!(
                "nights end at record {expected_start} but the recording has {records}"
            )));
        }
        Ok(self
            .nights
            .iter()
            .map(|n| n.start_record..n.end_record)
            .collect())
    }
}

/// Groups records into nights.
///
/// A manifest, when given, is authoritative. Otherwise EDF+D record onsets are
/// scanned and a new night starts wherever
/// `onset[i+1] - (onset[i] + record_duration) > gap_threshold_s`.
pub fn detect_night_boundaries(
    rec: &EdfRecording,
    gap_threshold_s: f64,
    manifest: Option<&NightManifest>,
) -> Result<Vec<Range<usize>>> {
    if rec.records.is_empty() {
        return Err(EdfError::EmptyRecording);
    }
    if let Some(m) = manifest {
        return m.ranges(rec.records.len());
    }
    if rec.variant() != EdfVariant::PlusD {
        return Err(EdfError::NoTimestamps);
    }
    let onsets = rec.record_onsets()?;
    let duration = rec.header.record_duration();
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 0..onsets.len() - 1 {
        if onsets[i + 1] - (onsets[i] + duration) > gap_threshold_s {
            ranges.push(start..i + 1);
            start = i + 1;
        }
    }
    ranges.push(start..onsets.len());
    Ok(ranges)
}

/// Cuts a recording into one recording per range.
///
/// Each output starts at the (whole-second) onset of its first record; EDF+
/// annotation onsets are re-based on that start. Samples are copied untouched.
pub fn split_nights(rec: &EdfRecording, ranges: &[Range<usize>]) -> Result<Vec<EdfRecording>> {
    let n = rec.records.len();
    for r in ranges {
        if r.start >= r.end || r.end > n {
            return Err(EdfError::RangeOutOfBounds {
                start: r.start,
                end: r.end,
                records: n,
            });
        }
    }
    let onsets = rec.record_onsets()?;
    let annotation_signals: Vec<usize> = rec
        .signals
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_annotation())
        .map(|(i, _)| i)
        .collect();

    ranges
        .iter()
        .map(|r| {
            let shift = onsets[r.start].floor() as i64;
            let mut records = rec.records[r.clone()].to_vec();
            if shift != 0 {
                for (offset, record) in records.iter_mut().enumerate() {
                    for &a in &annotation_signals {
                        let bytes = tal::samples_to_bytes(&record.signals[a]);
                        let annotation_error = |e: tal::TalError| {
                            EdfError::Annotation(format!("record {}: {e}", r.start + offset))
                        };
                        let shifted = tal::shift_onsets(&bytes, shift).map_err(annotation_error)?;
                        record.signals[a] =
                            tal::bytes_to_samples(&shifted, rec.signals[a].samples_per_record)
                                .map_err(annotation_error)?;
                    }
                }
            }
            let mut header = rec.header.clone();
            header.start_datetime = rec.header.start_datetime + Duration::seconds(shift);
            header.record_count = records.len() as i64;
            header.recording_id = restamp_recording_id(&header.recording_id, header.start_datetime);
            Ok(EdfRecording {
                header,
                signals: rec.signals.clone(),
                records,
            })
        })
        .collect()
}

const MONTHS: [&str; 12] = [
    "JAN", "FEB", "MAR", "APR", "MAY", "JUN", "JUL", "AUG", "SEP", "OCT", "NOV", "DEC",
];

/// EDF+ recording ids start with `Startdate dd-MMM-yyyy`; keep that date in step
/// with the header start. Other ids are returned unchanged.
fn restamp_recording_id(id: &str, start: NaiveDateTime) -> String {
    let Some(rest) = id.strip_prefix("Startdate ") else {
        return id.to_string();
    };
    let (date, tail) = rest.split_at(rest.find(' ').unwrap_or(rest.len()));
    let parsed = date.len() == 11 && {
        let month = MONTHS.iter().position(|m| *m == &date[3..6]);
        match (date[..2].parse::<u32>(), month, date[7..].parse::<i32>()) {
            (Ok(d), Some(m), Ok(y)) => NaiveDate::from_ymd_opt(y, m as u32 + 1, d).is_some(),
            _ => false,
        }
    };
    if !parsed {
        return id.to_string();
    }
    format!(
        "Startdate {:02}-{}-{}{tail}",
        start.day(),
        MONTHS[start.month0() as usize],
        start.year()
    )
}
