//! Time-stamped annotation lists (TALs) carried by EDF+ annotation signals.
//!
//! Only onset stamps are interpreted. Annotation text is kept as raw bytes and
//! re-encoded verbatim.

use std::fmt;

const ONSET_END: u8 = 0x14;
const DURATION_MARK: u8 = 0x15;
const TAL_END: u8 = 0x00;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TalError(pub String);

impl fmt::Display for TalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for TalError {}

/// One TAL: `+onset[\x15duration]\x14text\x14...\x14\x00`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tal {
    pub onset: String,
    pub duration: Option<String>,
    /// Annotation texts; the time-keeping TAL has a single empty entry.
    pub texts: Vec<Vec<u8>>,
}

impl Tal {
    pub fn timekeeping(onset: &str) -> Self {
        Tal {
            onset: onset.to_string(),
            duration: None,
            texts: vec![Vec::new()],
        }
    }

    pub fn onset_seconds(&self) -> Result<f64, TalError> {
        parse_onset(&self.onset).map(|d| d.to_f64())
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.onset.as_bytes());
        if let Some(d) = &self.duration {
            out.push(DURATION_MARK);
            out.extend_from_slice(d.as_bytes());
        }
        for t in &self.texts {
            out.push(ONSET_END);
            out.extend_from_slice(t);
        }
        out.push(ONSET_END);
        out.push(TAL_END);
    }
}

pub fn samples_to_bytes(samples: &[i16]) -> Vec<u8> {
    samples.iter().flat_map(|s| s.to_le_bytes()).collect()
}

/// Packs bytes into 16-bit samples, zero-padding to `sample_count`.
pub fn bytes_to_samples(bytes: &[u8], sample_count: usize) -> Result<Vec<i16>, TalError> {
    if bytes.len() > sample_count * 2 {
        return Err(TalError(format!(
            "{} annotation bytes exceed the {} available",
            bytes.len(),
            sample_count * 2
        )));
    }
    let mut padded = bytes.to_vec();
    padded.resize(sample_count * 2, 0);
    Ok(padded
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect())
}

pub fn parse_tals(bytes: &[u8]) -> Result<Vec<Tal>, TalError> {
    bytes
        .split(|&b| b == TAL_END)
        .filter(|chunk| !chunk.is_empty())
        .map(parse_one)
        .collect()
}

pub fn encode_tals(tals: &[Tal]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in tals {
        t.encode_into(&mut out);
    }
    out
}

/// Onset of the first TAL of a record, which EDF+ reserves for time keeping.
pub fn timekeeping_onset(bytes: &[u8]) -> Result<f64, TalError> {
    parse_tals(bytes)?
        .first()
        .ok_or_else(|| TalError("annotation signal has no time-keeping TAL".into()))?
        .onset_seconds()
}

/// Subtracts whole seconds from every onset stamp, preserving each stamp's
/// number of fractional digits.
pub fn shift_onsets(bytes: &[u8], seconds: i64) -> Result<Vec<u8>, TalError> {
    let mut tals = parse_tals(bytes)?;
    for t in &mut tals {
        t.onset = shift_onset(&t.onset, seconds)?;
    }
    Ok(encode_tals(&tals))
}

pub fn shift_onset(onset: &str, seconds: i64) -> Result<String, TalError> {
    let d = parse_onset(onset)?;
    let shifted = d.units - i128::from(seconds) * 10i128.pow(d.scale);
    Ok(ExactDecimal {
        units: shifted,
        scale: d.scale,
    }
    .to_onset_string())
}

fn parse_one(chunk: &[u8]) -> Result<Tal, TalError> {
    let mut parts: Vec<&[u8]> = chunk.split(|&b| b == ONSET_END).collect();
    // A well-formed TAL ends with 0x14, leaving an empty trailing part.
    if parts.len() < 2 || !parts.last().is_some_and(|p| p.is_empty()) {
        return Err(TalError(format!(
            "TAL {:?} is not terminated by 0x14",
            String::from_utf8_lossy(chunk)
        )));
    }
    parts.pop();
    let head = parts.remove(0);
    let mut head_parts = head.splitn(2, |&b| b == DURATION_MARK);
    let onset = ascii(head_parts.next().unwrap_or_default())?;
    parse_onset(&onset)?;
    let duration = head_parts.next().map(ascii).transpose()?;
    Ok(Tal {
        onset,
        duration,
        texts: parts.into_iter().map(<[u8]>::to_vec).collect(),
    })
}

fn ascii(b: &[u8]) -> Result<String, TalError> {
    std::str::from_utf8(b)
        .ok()
        .filter(|s| s.is_ascii())
        .map(str::to_string)
        .ok_or_else(|| TalError("non-ASCII onset or duration".into()))
}

/// Signed decimal `units × 10^-scale`.
#[derive(Debug, Clone, Copy)]
struct ExactDecimal {
    units: i128,
    scale: u32,
}

impl ExactDecimal {
    fn to_f64(self) -> f64 {
        self.units as f64 / 10f64.powi(self.scale as i32)
    }

    fn to_onset_string(self) -> String {
        let sign = if self.units < 0 { '-' } else { '+' };
        let abs = self.units.unsigned_abs();
        let p = 10u128.pow(self.scale);
        if self.scale == 0 {
            format!("{sign}{abs}")
        } else {
            format!(
                "{sign}{}.{:0width$}",
                abs / p,
                abs % p,
                width = self.scale as usize
            )
        }
    }
}

fn parse_onset(s: &str) -> Result<ExactDecimal, TalError> {
    let bad = || TalError(format!("invalid onset {s:?}"));
    let (negative, body) = match s.as_bytes().first() {
        Some(b'+') => (false, &s[1..]),
        Some(b'-') => (true, &s[1..]),
        _ => return Err(bad()),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty()
        || !int.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
        || int.len() + frac.len() > 30
    {
        return Err(bad());
    }
    let scale = frac.len() as u32;
    let digits: i128 = format!("{int}{frac}").parse().map_err(|_| bad())?;
    Ok(ExactDecimal {
        units: if negative { -digits } else { digits },
        scale,
    })
}
