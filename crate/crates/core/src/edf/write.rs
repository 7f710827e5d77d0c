use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Timelike};

use super::{is_printable_ascii, EdfError, EdfRecording, Result, HEADER_BLOCK};

/// Serializes a recording to EDF bytes. `record_count = -1` is written as the
/// actual number of records.
pub fn write_recording(rec: &EdfRecording) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(rec.byte_len());
    write_to(rec, &mut out)?;
    Ok(out)
}

pub fn write_file(rec: &EdfRecording, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_to(rec, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_to<W: Write>(rec: &EdfRecording, w: &mut W) -> Result<()> {
    rec.validate()?;
    let h = &rec.header;
    let start = h.start_datetime;
    if !(1985..=2084).contains(&start.year()) {
        return Err(EdfError::InvariantViolation(format!(
            "start year {} outside the 1985-2084 EDF window",
            start.year()
        )));
    }

    let mut header = Vec::with_capacity(h.header_bytes);
    put(&mut header, &h.version, 8)?;
    put(&mut header, &h.patient_id, 80)?;
    put(&mut header, &h.recording_id, 80)?;
    put(
        &mut header,
        &format!(
            "{:02}.{:02}.{:02}",
            start.day(),
            start.month(),
            start.year() % 100
        ),
        8,
    )?;
    put(
        &mut header,
        &format!(
            "{:02}.{:02}.{:02}",
            start.hour(),
            start.minute(),
            start.second()
        ),
        8,
    )?;
    put(&mut header, &h.header_bytes.to_string(), 8)?;
    put(&mut header, &h.reserved, 44)?;
    put(&mut header, &rec.records.len().to_string(), 8)?;
    put(&mut header, h.record_duration_s.as_str(), 8)?;
    put(&mut header, &h.signal_count.to_string(), 4)?;

    let s = &rec.signals;
    for x in s {
        put(&mut header, &x.label, 16)?;
    }
    for x in s {
        put(&mut header, &x.transducer, 80)?;
    }
    for x in s {
        put(&mut header, &x.physical_dim, 8)?;
    }
    for x in s {
        put(&mut header, x.phys_min.as_str(), 8)?;
    }
    for x in s {
        put(&mut header, x.phys_max.as_str(), 8)?;
    }
    for x in s {
        put(&mut header, &x.dig_min.to_string(), 8)?;
    }
    for x in s {
        put(&mut header, &x.dig_max.to_string(), 8)?;
    }
    for x in s {
        put(&mut header, &x.prefiltering, 80)?;
    }
    for x in s {
        put(&mut header, &x.samples_per_record.to_string(), 8)?;
    }
    for x in s {
        put(&mut header, &x.reserved, 32)?;
    }
    debug_assert_eq!(header.len(), HEADER_BLOCK * (1 + s.len()));
    w.write_all(&header)?;

    let mut buf = Vec::with_capacity(rec.record_bytes());
    for record in &rec.records {
        buf.clear();
        for samples in &record.signals {
            for v in samples {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn put(out: &mut Vec<u8>, value: &str, width: usize) -> Result<()> {
    if value.len() > width || !is_printable_ascii(value.as_bytes()) {
        return Err(EdfError::InvariantViolation(format!(
            "{value:?} is not printable ASCII of at most {width} characters"
        )));
    }
    out.extend_from_slice(value.as_bytes());
    out.resize(out.len() + width - value.len(), b' ');
    Ok(())
}
