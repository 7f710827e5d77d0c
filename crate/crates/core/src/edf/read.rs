use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};

use super::{
    is_printable_ascii, DataRecord, DecimalField, EdfError, EdfHeader, EdfRecording, Result,
    SignalHeader, HEADER_BLOCK,
};

/// Field widths of the per-signal header block, in file order.
const SIGNAL_FIELDS: [usize; 10] = [16, 80, 8, 8, 8, 8, 8, 80, 8, 32];

/// Parses a complete EDF/EDF+ file held in memory.
pub fn read_recording(bytes: &[u8]) -> Result<EdfRecording> {
    if bytes.len() < HEADER_BLOCK {
        return Err(EdfError::MalformedHeader(format!(
            "file is {} bytes, shorter than the fixed header",
            bytes.len()
        )));
    }
    let mut cursor = Fields::new(&bytes[..HEADER_BLOCK]);
    let version = cursor.text(8)?;
    let patient_id = cursor.text(80)?;
    let recording_id = cursor.text(80)?;
    let date = cursor.text(8)?;
    let time = cursor.text(8)?;
    let header_bytes: usize = cursor.number(8, "header bytes")?;
    let reserved = cursor.text(44)?;
    let record_count: i64 = cursor.number(8, "record count")?;
    let record_duration_s = DecimalField::new(&cursor.text(8)?)?;
    let signal_count: usize = cursor.number(4, "signal count")?;

    if signal_count == 0 {
        return Err(EdfError::MalformedHeader("signal count is zero".into()));
    }
    if header_bytes != HEADER_BLOCK * (1 + signal_count) {
        return Err(EdfError::InconsistentSignalCount {
            header_bytes,
            signal_count,
        });
    }
    if record_duration_s.value() <= 0.0 {
        return Err(EdfError::MalformedHeader(
            "record duration must be positive".into(),
        ));
    }
    if record_count < -1 {
        return Err(EdfError::MalformedHeader(format!(
            "record count {record_count}"
        )));
    }
    if bytes.len() < header_bytes {
        return Err(EdfError::MalformedHeader(format!(
            "file is {} bytes but the header alone needs {header_bytes}",
            bytes.len()
        )));
    }

    let signals = read_signal_headers(&bytes[HEADER_BLOCK..header_bytes], signal_count)?;
    let record_bytes: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
    let data = &bytes[header_bytes..];
    let n_records = if record_count == -1 {
        data.len() / record_bytes
    } else {
        let n = record_count as usize;
        if data.len() < n * record_bytes {
            return Err(EdfError::TruncatedRecords {
                expected: n * record_bytes,
                actual: data.len(),
            });
        }
        n
    };

    let records = data
        .chunks_exact(record_bytes)
        .take(n_records)
        .map(|chunk| {
            let mut offset = 0;
            let signals = signals
                .iter()
                .map(|s| {
                    let len = s.samples_per_record * 2;
                    let samples = chunk[offset..offset + len]
                        .chunks_exact(2)
                        .map(|b| i16::from_le_bytes([b[0], b[1]]))
                        .collect();
                    offset += len;
                    samples
                })
                .collect();
            DataRecord { signals }
        })
        .collect();

    Ok(EdfRecording {
        header: EdfHeader {
            version,
            patient_id,
            recording_id,
            start_datetime: parse_start(&date, &time)?,
            header_bytes,
            reserved,
            record_count: n_records as i64,
            record_duration_s,
            signal_count,
        },
        signals,
        records,
    })
}

pub fn read_file(path: impl AsRef<Path>) -> Result<EdfRecording> {
    read_recording(&std::fs::read(path)?)
}

fn read_signal_headers(block: &[u8], n: usize) -> Result<Vec<SignalHeader>> {
    // Signal headers are stored field-major: all labels, then all transducers, ...
    let mut cursor = Fields::new(block);
    let mut columns: Vec<Vec<String>> = Vec::with_capacity(SIGNAL_FIELDS.len());
    for width in SIGNAL_FIELDS {
        columns.push((0..n).map(|_| cursor.text(width)).collect::<Result<_>>()?);
    }
    let mut headers = Vec::with_capacity(n);
    for i in 0..n {
        let col = |c: usize| columns[c][i].as_str();
        let int = |c: usize, what: &str| -> Result<i64> {
            col(c).trim().parse::<i64>().map_err(|_| {
                EdfError::MalformedHeader(format!("signal {i}: invalid {what} {:?}", col(c)))
            })
        };
        let dig_min = int(5, "digital minimum")?;
        let dig_max = int(6, "digital maximum")?;
        let samples_per_record = int(8, "samples per record")?;
        if dig_min >= dig_max || dig_min < i64::from(i16::MIN) || dig_max > i64::from(i16::MAX) {
            return Err(EdfError::MalformedHeader(format!(
                "signal {i}: digital range {dig_min}..{dig_max}"
            )));
        }
        if samples_per_record < 1 {
            return Err(EdfError::MalformedHeader(format!(
                "signal {i}: samples per record {samples_per_record}"
            )));
        }
        let phys_min = DecimalField::new(col(3))?;
        let phys_max = DecimalField::new(col(4))?;
        if phys_min.value() == phys_max.value() {
            return Err(EdfError::MalformedHeader(format!(
                "signal {i}: physical minimum equals maximum"
            )));
        }
        headers.push(SignalHeader {
            label: col(0).to_string(),
            transducer: col(1).to_string(),
            physical_dim: col(2).to_string(),
            phys_min,
            phys_max,
            dig_min: dig_min as i32,
            dig_max: dig_max as i32,
            prefiltering: col(7).to_string(),
            samples_per_record: samples_per_record as usize,
            reserved: col(9).to_string(),
        });
    }
    Ok(headers)
}

/// Years 85..=99 are 19xx, everything else 20xx (EDF clipping date convention).
fn parse_start(date: &str, time: &str) -> Result<NaiveDateTime> {
    let bad = || EdfError::MalformedHeader(format!("invalid start date/time {date:?} {time:?}"));
    let triple = |s: &str| -> Option<(u32, u32, u32)> {
        let parts: Vec<&str> = s.split('.').collect();
        if parts.len() != 3 || parts.iter().any(|p| p.len() != 2) {
            return None;
        }
        Some((
            parts[0].parse().ok()?,
            parts[1].parse().ok()?,
            parts[2].parse().ok()?,
        ))
    };
    let (day, month, yy) = triple(date).ok_or_else(bad)?;
    let (hour, minute, second) = triple(time).ok_or_else(bad)?;
    let year = if yy >= 85 { 1900 + yy } else { 2000 + yy } as i32;
    NaiveDate::from_ymd_opt(year, month, day)
        .and_then(|d| d.and_hms_opt(hour, minute, second))
        .ok_or_else(bad)
}

struct Fields<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Fields<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Fields { bytes, pos: 0 }
    }

    /// Next fixed-width ASCII field with trailing padding removed.
    fn text(&mut self, width: usize) -> Result<String> {
        let raw = self
            .bytes
            .get(self.pos..self.pos + width)
            .ok_or_else(|| EdfError::MalformedHeader("header ends early".into()))?;
        self.pos += width;
        if !is_printable_ascii(raw) {
            return Err(EdfError::MalformedHeader(format!(
                "non-ASCII bytes in header field at offset {}",
                self.pos - width
            )));
        }
        let s = std::str::from_utf8(raw).expect("checked ascii");
        Ok(s.trim_end_matches(' ').to_string())
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, what: &str) -> Result<T> {
        let s = self.text(width)?;
        s.trim()
            .parse()
            .map_err(|_| EdfError::MalformedHeader(format!("invalid {what} {s:?}")))
    }
}
