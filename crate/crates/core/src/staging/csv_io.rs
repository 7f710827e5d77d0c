//! CSV forms: `epoch_index,stage`, `epoch_index,pW,pN1,pN2,pN3,pREM` and
//! `epoch_index,label`.

use std::io::{Read, Write};

use chrono::NaiveDateTime;

use super::{Hypnodensity, Hypnogram, Result, SleepStage, StagingError, StarEntry};

const HYPNODENSITY_HEADER: [&str; 6] = ["epoch_index", "pW", "pN1", "pN2", "pN3", "pREM"];

pub fn write_hypnogram_csv<W: Write>(hyp: &Hypnogram, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch_index", "stage"])?;
    for (i, s) in hyp.stages().iter().enumerate() {
        out.write_record([i.to_string().as_str(), s.label()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_hypnogram_csv<R: Read>(
    r: R,
    epoch_length_s: f64,
    start_time: NaiveDateTime,
) -> Result<Hypnogram> {
    let stages = indexed_rows(r, 2)?
        .into_iter()
        .map(|row| row[1].parse::<SleepStage>())
        .collect::<Result<Vec<_>>>()?;
    Hypnogram::new(epoch_length_s, start_time, stages)
}

pub fn write_hypnodensity_csv<W: Write>(h: &Hypnodensity, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HYPNODENSITY_HEADER)?;
    for (i, row) in h.rows().iter().enumerate() {
        let mut fields = vec![i.to_string()];
        fields.extend(row.iter().map(|p| p.to_string()));
        out.write_record(&fields)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates a hypnodensity; each row must sum to 1.
pub fn read_hypnodensity_csv<R: Read>(r: R, epoch_length_s: f64) -> Result<Hypnodensity> {
    let rows = indexed_rows(r, 6)?
        .into_iter()
        .enumerate()
        .map(|(epoch, row)| {
            let mut probs = [0.0; 5];
            for (k, p) in probs.iter_mut().enumerate() {
                *p = row[k + 1].trim().parse().map_err(|_| {
                    StagingError::InvalidProbabilityRow {
                        epoch,
                        reason: format!("{:?} is not a number", &row[k + 1]),
                    }
                })?;
            }
            Ok(probs)
        })
        .collect::<Result<Vec<_>>>()?;
    Hypnodensity::new(epoch_length_s, rows)
}

pub fn write_labels_csv<W: Write>(labels: &[String], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch_index", "label"])?;
    for (i, l) in labels.iter().enumerate() {
        out.write_record([i.to_string().as_str(), l.as_str()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(r: R) -> Result<Vec<StarEntry>> {
    indexed_rows(r, 2)?
        .into_iter()
        .map(|row| row[1].parse())
        .collect()
}

/// Rows of a headed CSV whose first column counts 0, 1, 2, ...
fn indexed_rows<R: Read>(r: R, columns: usize) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut rows = Vec::new();
    for (expected, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != columns {
            return Err(StagingError::Csv(csv::Error::from(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("row {expected} has {} columns, expected {columns}", record.len()),
            ))));
        }
        let found: usize = record[0].parse().map_err(|_| {
            StagingError::NonSequentialEpoch {
                expected,
                found: usize::MAX,
            }
        })?;
        if found != expected {
            return Err(StagingError::NonSequentialEpoch { expected, found });
        }
        rows.push(record);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn hypnodensity_csv_roundtrip() {
        let h = Hypnodensity::new(
            30.0,
            vec![[0.1, 0.2, 0.3, 0.3, 0.1], [1.0, 0.0, 0.0, 0.0, 0.0]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_hypnodensity_csv(&h, &mut buf).unwrap();
        assert!(buf.starts_with(b"epoch_index,pW,pN1,pN2,pN3,pREM\n0,0.1,"));
        assert_eq!(read_hypnodensity_csv(&buf[..], 30.0).unwrap(), h);
    }

    #[test]
    fn hypnodensity_csv_validates_rows() {
        let csv = "epoch_index,pW,pN1,pN2,pN3,pREM\n0,0.5,0.6,0,0,0\n";
        assert!(matches!(
            read_hypnodensity_csv(csv.as_bytes(), 30.0),
            Err(StagingError::InvalidProbabilityRow { epoch: 0, .. })
        ));
        let gap = "epoch_index,pW,pN1,pN2,pN3,pREM\n0,1,0,0,0,0\n2,1,0,0,0,0\n";
        assert!(matches!(
            read_hypnodensity_csv(gap.as_bytes(), 30.0),
            Err(StagingError::NonSequentialEpoch {
                expected: 1,
                found: 2
            })
        ));
    }

    #[test]
    fn hypnogram_csv_roundtrip() {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(22, 30, 0)
            .unwrap();
        let h = Hypnogram::new(
            30.0,
            start,
            vec![SleepStage::W, SleepStage::N3, SleepStage::Rem],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_hypnogram_csv(&h, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "epoch_index,stage\n0,W\n1,N3\n2,REM\n"
        );
        assert_eq!(read_hypnogram_csv(&buf[..], 30.0, start).unwrap(), h);
    }
}
