//! Gray-area tagging: epochs whose scorer certainty is below a threshold are
//! flagged for mandatory human review.

mod mixture;

use std::io::{Read, Write};

use thiserror::Error;

use crate::staging::{Hypnodensity, Hypnogram, StarEntry, StarHypnogram};

pub use mixture::{fit_threshold, BetaComponent, MixtureFit, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Deployed gray-area threshold on the modal stage probability.
pub const DEFAULT_THRESHOLD: f64 = 0.73;

#[derive(Debug, Error)]
pub enum GrayError {
    #[error("threshold {0} must lie strictly between 0 and 1")]
    ThresholdOutOfRange(f64),
    #[error("certainty series needs at least two distinct values")]
    DegenerateData,
    #[error("mask covers {mask} epochs, hypnogram has {hypnogram}")]
    LengthMismatch { mask: usize, hypnogram: usize },
    #[error("invalid gray mask file: {0}")]
    InvalidMask(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = GrayError> = std::result::Result<T, E>;

/// How sure the scorer is about one epoch, on a 0..=1 scale.
pub trait CertaintyMeasure {
    fn certainty(&self, row: &[f64; 5]) -> f64;
}

/// Probability of the most likely stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModalProbability;

impl CertaintyMeasure for ModalProbability {
    fn certainty(&self, row: &[f64; 5]) -> f64 {
        row.iter().copied().fold(0.0, f64::max).clamp(0.0, 1.0)
    }
}

/// `1 - H(row) / ln 5`: 1 for a one-hot row, 0 for a uniform row.
#[derive(Debug, Clone, Copy, Default)]
pub struct EntropyComplement;

impl CertaintyMeasure for EntropyComplement {
    fn certainty(&self, row: &[f64; 5]) -> f64 {
        let h: f64 = row
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        (1.0 - h / 5f64.ln()).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertaintySeries(Vec<f64>);

impl CertaintySeries {
    pub fn new(values: Vec<f64>) -> Option<Self> {
        values
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
            .then_some(CertaintySeries(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Modal-probability certainty of every epoch.
pub fn certainty(h: &Hypnodensity) -> CertaintySeries {
    certainty_with(h, &ModalProbability)
}

pub fn certainty_with(h: &Hypnodensity, measure: &dyn CertaintyMeasure) -> CertaintySeries {
    CertaintySeries(h.rows().iter().map(|r| measure.certainty(r)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayMask {
    pub flags: Vec<bool>,
    /// `None` for masks loaded from a file, which does not record the threshold.
    pub threshold_used: Option<f64>,
    pub certainty: Vec<f64>,
}

impl GrayMask {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn gray_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn gray_fraction(&self) -> f64 {
        if self.flags.is_empty() {
            0.0
        } else {
            self.gray_count() as f64 / self.flags.len() as f64
        }
    }
}

/// An epoch is gray iff its certainty is strictly below `threshold`.
pub fn tag_series(c: &CertaintySeries, threshold: f64) -> Result<GrayMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(GrayError::ThresholdOutOfRange(threshold));
    }
    Ok(GrayMask {
        flags: c.values().iter().map(|&v| v < threshold).collect(),
        threshold_used: Some(threshold),
        certainty: c.values().to_vec(),
    })
}

pub fn tag_gray(h: &Hypnodensity, threshold: f64) -> Result<GrayMask> {
    tag_series(&certainty(h), threshold)
}

/// Replaces gray epochs with blanks that remember the suggested stage.
pub fn apply_mask(hyp: &Hypnogram, m: &GrayMask) -> Result<StarHypnogram> {
    if hyp.len() != m.len() {
        return Err(GrayError::LengthMismatch {
            mask: m.len(),
            hypnogram: hyp.len(),
        });
    }
    Ok(StarHypnogram {
        epoch_length_s: hyp.epoch_length_s(),
        start_time: hyp.start_time(),
        entries: hyp
            .stages()
            .iter()
            .zip(&m.flags)
            .map(|(&s, &gray)| {
                if gray {
                    StarEntry::Gray { suggested: s }
                } else {
                    StarEntry::Stage(s)
                }
            })
            .collect(),
    })
}

/// Writes `epoch_index,is_gray,certainty` with `is_gray` as 0/1.
pub fn write_mask_csv<W: Write>(m: &GrayMask, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch_index", "is_gray", "certainty"])?;
    for (i, (&gray, c)) in m.flags.iter().zip(&m.certainty).enumerate() {
        out.write_record([
            i.to_string(),
            u8::from(gray).to_string(),
            c.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a mask file and checks that some threshold explains its flags.
pub fn read_mask_csv<R: Read>(r: R) -> Result<GrayMask> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut flags = Vec::new();
    let mut certainty = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| GrayError::InvalidMask(format!("row {i}: {what}"));
        if record.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        if record[0].parse::<usize>().ok() != Some(i) {
            return Err(bad("epoch_index out of sequence"));
        }
        flags.push(match &record[1] {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad("is_gray must be 0/1")),
        });
        let c: f64 = record[2].parse().map_err(|_| bad("certainty"))?;
        if !(0.0..=1.0).contains(&c) {
            return Err(bad("certainty outside [0, 1]"));
        }
        certainty.push(c);
    }
    let max_gray = flags
        .iter()
        .zip(&certainty)
        .filter(|(f, _)| **f)
        .map(|(_, c)| *c)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_clear = flags
        .iter()
        .zip(&certainty)
        .filter(|(f, _)| !**f)
        .map(|(_, c)| *c)
        .fold(f64::INFINITY, f64::min);
    if max_gray >= min_clear {
        return Err(GrayError::InvalidMask(
            "flags are not explained by a single certainty threshold".into(),
        ));
    }
    Ok(GrayMask {
        flags,
        threshold_used: None,
        certainty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::staging::{hypnodensity_to_hypnogram, SleepStage};
    use chrono::NaiveDate;

    fn hd(rows: Vec<[f64; 5]>) -> Hypnodensity {
        Hypnodensity::new(30.0, rows).unwrap()
    }

    #[test]
    fn certainty_is_modal_probability() {
        let h = hd(vec![
            [1.0, 0.0, 0.0, 0.0, 0.0],
            [0.2; 5],
            [0.6, 0.3, 0.1, 0.0, 0.0],
        ]);
        assert_eq!(certainty(&h).values(), &[1.0, 0.2, 0.6]);
    }

    #[test]
    fn entropy_complement_bounds() {
        assert!((EntropyComplement.certainty(&[1.0, 0.0, 0.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(EntropyComplement.certainty(&[0.2; 5]).abs() < 1e-12);
    }

    #[test]
    fn tagging_at_default_threshold() {
        let one_hot = hd(vec![[0.0, 0.0, 1.0, 0.0, 0.0]; 4]);
        assert_eq!(tag_gray(&one_hot, DEFAULT_THRESHOLD).unwrap().gray_count(), 0);
        let uniform = hd(vec![[0.2; 5]; 4]);
        assert_eq!(tag_gray(&uniform, DEFAULT_THRESHOLD).unwrap().gray_count(), 4);
        let boundary = hd(vec![[0.73, 0.27, 0.0, 0.0, 0.0]]);
        assert_eq!(certainty(&boundary).values(), &[0.73]);
        assert!(!tag_gray(&boundary, 0.73).unwrap().flags[0]);
    }

    #[test]
    fn threshold_must_be_inside_unit_interval() {
        let h = hd(vec![[0.2; 5]]);
        for t in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                tag_gray(&h, t),
                Err(GrayError::ThresholdOutOfRange(_))
            ));
        }
    }

    #[test]
    fn mask_application() {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let h = hd(vec![[0.9, 0.1, 0.0, 0.0, 0.0], [0.1, 0.5, 0.4, 0.0, 0.0]]);
        let hyp = hypnodensity_to_hypnogram(&h, start);
        let star = apply_mask(&hyp, &tag_gray(&h, DEFAULT_THRESHOLD).unwrap()).unwrap();
        assert_eq!(
            star.entries,
            vec![
                StarEntry::Stage(SleepStage::W),
                StarEntry::Gray {
                    suggested: SleepStage::N1
                }
            ]
        );
        let short = GrayMask {
            flags: vec![true],
            threshold_used: None,
            certainty: vec![0.1],
        };
        assert!(matches!(
            apply_mask(&hyp, &short),
            Err(GrayError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mask_csv_roundtrip() {
        let h = hd(vec![[0.9, 0.1, 0.0, 0.0, 0.0], [0.2; 5], [0.5, 0.5, 0.0, 0.0, 0.0]]);
        let m = tag_gray(&h, DEFAULT_THRESHOLD).unwrap();
        let mut buf = Vec::new();
        write_mask_csv(&m, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "epoch_index,is_gray,certainty\n0,0,0.9\n1,1,0.2\n2,1,0.5\n"
        );
        let back = read_mask_csv(&buf[..]).unwrap();
        assert_eq!(back.flags, m.flags);
        assert_eq!(back.certainty, m.certainty);

        let inconsistent = "epoch_index,is_gray,certainty\n0,1,0.9\n1,0,0.2\n";
        assert!(read_mask_csv(inconsistent.as_bytes()).is_err());
    }
}
