use std::fmt;
use std::str::FromStr;

use super::EdfError;

/// An 8-character decimal header field.
///
/// The text is kept verbatim (minus padding) so a parsed header serializes back
/// to the same bytes; [`value`](Self::value) gives the number.
#[derive(Debug, Clone, PartialEq)]
pub struct DecimalField {
    text: String,
    value: f64,
}

impl DecimalField {
    pub const WIDTH: usize = 8;

    pub fn new(text: &str) -> Result<Self, EdfError> {
        let text = text.trim();
        if text.is_empty() || text.len() > Self::WIDTH || !super::is_printable_ascii(text.as_bytes())
        {
            return Err(EdfError::MalformedHeader(format!(
                "invalid decimal field {text:?}"
            )));
        }
        let value = text
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| EdfError::MalformedHeader(format!("invalid decimal field {text:?}")))?;
        Ok(DecimalField {
            text: text.to_string(),
            value,
        })
    }

    /// Shortest representation of `value` that fits in 8 characters.
    pub fn from_f64(value: f64) -> Result<Self, EdfError> {
        if !value.is_finite() {
            return Err(EdfError::InvariantViolation(format!(
                "{value} cannot be stored in a header"
            )));
        }
        let shortest = format!("{value}");
        if shortest.len() <= Self::WIDTH {
            return Self::new(&shortest);
        }
        for precision in (0..Self::WIDTH).rev() {
            let s = format!("{value:.precision$}");
            let s = if s.contains('.') {
                s.trim_end_matches('0').trim_end_matches('.').to_string()
            } else {
                s
            };
            if s.len() <= Self::WIDTH {
                return Self::new(&s);
            }
        }
        Err(EdfError::InvariantViolation(format!(
            "{value} does not fit in {} characters",
            Self::WIDTH
        )))
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl FromStr for DecimalField {
    type Err = EdfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DecimalField::new(s)
    }
}

impl fmt::Display for DecimalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}
