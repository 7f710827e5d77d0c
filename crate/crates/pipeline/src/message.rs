use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Version tag written into every serialized message.
pub const MESSAGE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Split,
    Process,
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobKind::Split => "split",
            JobKind::Process => "process",
        })
    }
}

/// Queue envelope for one unit of split or process work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobMessage {
    pub v: u32,
    pub job_id: String,
    pub kind: JobKind,
    pub recording_id: String,
    /// Storage-relative path of the input file.
    pub recording_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub night_index: Option<usize>,
    pub attempt: u32,
    pub enqueued_at: DateTime<Utc>,
}

impl JobMessage {
    /// Split job for an uploaded recording. The id is derived from the
    /// recording so that re-submission is recognised.
    pub fn split(recording_id: &str, recording_ref: &str, now: DateTime<Utc>) -> Self {
        JobMessage {
            v: MESSAGE_VERSION,
            job_id: format!("split-{recording_id}"),
            kind: JobKind::Split,
            recording_id: recording_id.to_string(),
            recording_ref: recording_ref.to_string(),
            night_index: None,
            attempt: 1,
            enqueued_at: now,
        }
    }

    pub fn process(
        recording_id: &str,
        night_ref: &str,
        night_index: usize,
        now: DateTime<Utc>,
    ) -> Self {
        JobMessage {
            v: MESSAGE_VERSION,
            job_id: format!("process-{recording_id}-night-{night_index}"),
            kind: JobKind::Process,
            recording_id: recording_id.to_string(),
            recording_ref: night_ref.to_string(),
            night_index: Some(night_index),
            attempt: 1,
            enqueued_at: now,
        }
    }

    /// Checks the envelope rules; `max_attempts` bounds `attempt`.
    pub fn validate(&self, max_attempts: u32) -> Result<(), String> {
        if self.v != MESSAGE_VERSION {
            return Err(format!("unsupported message version {}", self.v));
        }
        if self.job_id.is_empty() || self.recording_id.is_empty() {
            return Err("empty job_id or recording_id".into());
        }
        if self.attempt == 0 || self.attempt > max_attempts {
            return Err(format!(
                "attempt {} outside 1..={max_attempts}",
                self.attempt
            ));
        }
        match (self.kind, self.night_index) {
            (JobKind::Split, None) | (JobKind::Process, Some(_)) => Ok(()),
            (JobKind::Split, Some(_)) => Err("split job with night_index".into()),
            (JobKind::Process, None) => Err("process job without night_index".into()),
        }
    }
}
