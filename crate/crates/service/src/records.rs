//! Upload records and the state machine the worker callbacks drive.
//!
//! `received → splitting → split → processing → ready`, with `failed`
//! reachable from any state. Callbacks that repeat an already applied step
//! are accepted as no-ops so that redelivered jobs stay harmless.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use somnoline_pipeline::storage::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordState {
    Received,
    Splitting,
    Split,
    Processing,
    Ready,
    Failed,
}

impl RecordState {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordState::Received => "received",
            RecordState::Splitting => "splitting",
            RecordState::Split => "split",
            RecordState::Processing => "processing",
            RecordState::Ready => "ready",
            RecordState::Failed => "failed",
        }
    }

    /// The single forward step allowed from this state.
    fn successor(self) -> Option<RecordState> {
        match self {
            RecordState::Received => Some(RecordState::Splitting),
            RecordState::Splitting => Some(RecordState::Split),
            RecordState::Split => Some(RecordState::Processing),
            RecordState::Processing => Some(RecordState::Ready),
            RecordState::Ready | RecordState::Failed => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NightState {
    Processing,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightRecord {
    pub index: usize,
    pub state: NightState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gray_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ready_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: RecordState,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadRecord {
    pub recording_id: String,
    pub center_id: String,
    pub uploader: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
    pub size_bytes: u64,
    pub state: RecordState,
    pub nights: Vec<NightRecord>,
    pub transitions: Vec<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("unknown recording {0}")]
    UnknownRecording(String),
    #[error("recording {recording_id} cannot go from {from} to {to}")]
    IllegalTransition {
        recording_id: String,
        from: &'static str,
        to: String,
    },
    #[error("recording {0} already exists")]
    Duplicate(String),
    #[error("record storage failure: {0}")]
    Storage(#[from] io::Error),
}

pub type Result<T, E = RecordError> = std::result::Result<T, E>;

impl UploadRecord {
    pub fn new(
        recording_id: &str,
        center_id: &str,
        uploader: &str,
        file_name: Option<String>,
        size_bytes: u64,
        now: DateTime<Utc>,
    ) -> Self {
        UploadRecord {
            recording_id: recording_id.to_owned(),
            center_id: center_id.to_owned(),
            uploader: uploader.to_owned(),
            file_name,
            size_bytes,
            state: RecordState::Received,
            nights: Vec::new(),
            transitions: vec![Transition {
                state: RecordState::Received,
                at: now,
            }],
            failure: None,
        }
    }

    fn illegal(&self, to: impl Into<String>) -> RecordError {
        RecordError::IllegalTransition {
            recording_id: self.recording_id.clone(),
            from: self.state.as_str(),
            to: to.into(),
        }
    }

    fn advance(&mut self, to: RecordState, now: DateTime<Utc>) -> Result<()> {
        if self.state.successor() != Some(to) {
            return Err(self.illegal(to.as_str()));
        }
        self.state = to;
        self.transitions.push(Transition { state: to, at: now });
        Ok(())
    }

    /// Returns whether anything changed.
    pub fn split_started(&mut self, now: DateTime<Utc>) -> Result<bool> {
        match self.state {
            RecordState::Received => self.advance(RecordState::Splitting, now).map(|()| true),
            RecordState::Failed => Err(self.illegal("splitting")),
            _ => Ok(false),
        }
    }

    pub fn split_complete(&mut self, nights: usize, now: DateTime<Utc>) -> Result<bool> {
        match self.state {
            RecordState::Splitting if nights > 0 => {
                self.advance(RecordState::Split, now)?;
                self.nights = (0..nights)
                    .map(|index| NightRecord {
                        index,
                        state: NightState::Processing,
                        epochs: None,
                        gray_epochs: None,
                        ready_at: None,
                    })
                    .collect();
                self.advance(RecordState::Processing, now)?;
                Ok(true)
            }
            RecordState::Processing | RecordState::Ready if self.nights.len() == nights => Ok(false),
            _ => Err(self.illegal(format!("split with {nights} nights"))),
        }
    }

    pub fn process_complete(
        &mut self,
        night: usize,
        epochs: usize,
        gray_epochs: usize,
        now: DateTime<Utc>,
    ) -> Result<bool> {
        if !matches!(self.state, RecordState::Processing | RecordState::Ready) || night >= self.nights.len() {
            return Err(self.illegal(format!("night {night} ready")));
        }
        let n = &mut self.nights[night];
        if n.state == NightState::Ready {
            return Ok(false);
        }
        n.state = NightState::Ready;
        n.epochs = Some(epochs);
        n.gray_epochs = Some(gray_epochs);
        n.ready_at = Some(now);
        if self.nights.iter().all(|n| n.state == NightState::Ready) {
            self.advance(RecordState::Ready, now)?;
        }
        Ok(true)
    }

    pub fn fail(&mut self, reason: &str, now: DateTime<Utc>) -> bool {
        if self.state == RecordState::Failed {
            return false;
        }
        self.state = RecordState::Failed;
        self.failure = Some(reason.to_owned());
        self.transitions.push(Transition {
            state: RecordState::Failed,
            at: now,
        });
        true
    }

    pub fn night_ready(&self, night: usize) -> bool {
        self.nights.get(night).is_some_and(|n| n.state == NightState::Ready)
    }
}

/// One JSON file per recording, cached in memory. Updates are serialized
/// and written through before they become visible.
#[derive(Debug)]
pub struct RecordStore {
    dir: PathBuf,
    records: Mutex<HashMap<String, UploadRecord>>,
}

impl RecordStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut records = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let rec: UploadRecord = serde_json::from_slice(&fs::read(&path)?)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                records.insert(rec.recording_id.clone(), rec);
            }
        }
        Ok(RecordStore {
            dir,
            records: Mutex::new(records),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn persist(&self, rec: &UploadRecord) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(rec).expect("record serializes");
        write_atomic(&self.dir.join(format!("{}.json", rec.recording_id)), &bytes)?;
        Ok(())
    }

    pub fn insert(&self, rec: UploadRecord) -> Result<()> {
        let mut records = self.records.lock().expect("records lock");
        if records.contains_key(&rec.recording_id) {
            return Err(RecordError::Duplicate(rec.recording_id));
        }
        self.persist(&rec)?;
        records.insert(rec.recording_id.clone(), rec);
        Ok(())
    }

    pub fn get(&self, recording_id: &str) -> Option<UploadRecord> {
        self.records.lock().expect("records lock").get(recording_id).cloned()
    }

    /// Applies `f` to a copy, persists it if `f` reports a change, then
    /// publishes it. The record is left untouched when `f` fails.
    pub fn update<T>(
        &self,
        recording_id: &str,
        f: impl FnOnce(&mut UploadRecord) -> Result<(T, bool)>,
    ) -> Result<(T, UploadRecord)> {
        let mut records = self.records.lock().expect("records lock");
        let current = records
            .get(recording_id)
            .ok_or_else(|| RecordError::UnknownRecording(recording_id.to_owned()))?;
        let mut next = current.clone();
        let (out, changed) = f(&mut next)?;
        if changed {
            self.persist(&next)?;
            records.insert(recording_id.to_owned(), next.clone());
        }
        Ok((out, next))
    }

    /// Records matching `filter`, oldest first.
    pub fn list(&self, filter: impl Fn(&UploadRecord) -> bool) -> Vec<UploadRecord> {
        let records = self.records.lock().expect("records lock");
        let mut out: Vec<UploadRecord> = records.values().filter(|r| filter(r)).cloned().collect();
        out.sort_by(|a, b| {
            (a.transitions[0].at, &a.recording_id).cmp(&(b.transitions[0].at, &b.recording_id))
        });
        out
    }
}
