//! Worker-to-front-end signals and the notifier seam they travel through.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStarted {
    pub recording_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitComplete {
    pub recording_id: String,
    pub nights: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessComplete {
    pub recording_id: String,
    pub night_index: usize,
    pub epochs: usize,
    pub gray_epochs: usize,
}

#[derive(Debug, Error)]
pub enum NotifyError {
    #[error("callback rejected: {0}")]
    Rejected(String),
    #[error("callback transport: {0}")]
    Transport(String),
}

/// Delivers worker progress to the front end.
pub trait Notifier: Send + Sync {
    fn split_started(&self, msg: &SplitStarted) -> Result<(), NotifyError>;
    fn split_complete(&self, msg: &SplitComplete) -> Result<(), NotifyError>;
    fn process_complete(&self, msg: &ProcessComplete) -> Result<(), NotifyError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    SplitStarted(SplitStarted),
    SplitComplete(SplitComplete),
    ProcessComplete(ProcessComplete),
}

/// Keeps every signal in memory; for tests and the offline CLI.
#[derive(Debug, Default)]
pub struct MemoryNotifier {
    events: Mutex<Vec<Event>>,
}

impl MemoryNotifier {
    pub fn events(&self) -> Vec<Event> {
        self.events.lock().expect("events lock").clone()
    }

    fn push(&self, e: Event) -> Result<(), NotifyError> {
        self.events.lock().expect("events lock").push(e);
        Ok(())
    }
}

impl Notifier for MemoryNotifier {
    fn split_started(&self, msg: &SplitStarted) -> Result<(), NotifyError> {
        self.push(Event::SplitStarted(msg.clone()))
    }

    fn split_complete(&self, msg: &SplitComplete) -> Result<(), NotifyError> {
        self.push(Event::SplitComplete(msg.clone()))
    }

    fn process_complete(&self, msg: &ProcessComplete) -> Result<(), NotifyError> {
        self.push(Event::ProcessComplete(msg.clone()))
    }
}
