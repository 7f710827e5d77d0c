//! Shared service state and the callback transitions it applies.

use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use somnoline_core::edf::DEFAULT_GAP_THRESHOLD_S;
use somnoline_pipeline::queue::DEFAULT_MAX_ATTEMPTS;
use somnoline_pipeline::{
    Clock, DurableQueue, JobKind, JobMessage, JobQueue, Notifier, NotifyError, ProcessComplete,
    Processor, ProcessorConfig, QueueConfig, QueueError, SplitComplete, SplitStarted, Splitter,
    Storage, Worker,
};

use crate::auth::{AuthError, SessionStore, UserDirectory};
use crate::records::{RecordError, RecordStore, UploadRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub storage_root: PathBuf,
    /// Defaults to `<storage_root>/queues/split.log`.
    #[serde(default)]
    pub split_queue: Option<PathBuf>,
    /// Defaults to `<storage_root>/queues/process.log`.
    #[serde(default)]
    pub process_queue: Option<PathBuf>,
    /// Defaults to `<storage_root>/records`.
    #[serde(default)]
    pub records_dir: Option<PathBuf>,
    pub internal_secret: String,
    pub users_file: PathBuf,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_max_attempts() -> u32 {
    DEFAULT_MAX_ATTEMPTS
}

impl ServiceConfig {
    pub fn new(storage_root: impl Into<PathBuf>, users_file: impl Into<PathBuf>, internal_secret: &str) -> Self {
        ServiceConfig {
            listen: default_listen(),
            storage_root: storage_root.into(),
            split_queue: None,
            process_queue: None,
            records_dir: None,
            internal_secret: internal_secret.to_owned(),
            users_file: users_file.into(),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn split_queue_path(&self) -> PathBuf {
        self.split_queue
            .clone()
            .unwrap_or_else(|| self.storage_root.join("queues/split.log"))
    }

    pub fn process_queue_path(&self) -> PathBuf {
        self.process_queue
            .clone()
            .unwrap_or_else(|| self.storage_root.join("queues/process.log"))
    }

    pub fn records_path(&self) -> PathBuf {
        self.records_dir
            .clone()
            .unwrap_or_else(|| self.storage_root.join("records"))
    }
}

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("internal secret must not be empty")]
    EmptySecret,
}

#[derive(Debug, Error)]
pub enum CallbackError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("night {night} of {recording_id} has no bundles on disk")]
    BundlesMissing { recording_id: String, night: usize },
}

pub struct Platform {
    pub storage: Storage,
    pub records: Arc<RecordStore>,
    pub users: UserDirectory,
    pub sessions: SessionStore,
    pub split_queue: Arc<dyn JobQueue>,
    pub process_queue: Arc<dyn JobQueue>,
    pub internal_secret: String,
    pub clock: Arc<dyn Clock>,
}

impl Platform {
    /// Opens records and queues from disk. A job that exhausts its attempts
    /// marks its recording failed.
    pub fn open(config: &ServiceConfig, clock: Arc<dyn Clock>) -> Result<Arc<Self>, PlatformError> {
        let users = UserDirectory::load(&config.users_file)?;
        Self::with_users(config, users, clock)
    }

    pub fn with_users(
        config: &ServiceConfig,
        users: UserDirectory,
        clock: Arc<dyn Clock>,
    ) -> Result<Arc<Self>, PlatformError> {
        if config.internal_secret.is_empty() {
            return Err(PlatformError::EmptySecret);
        }
        let records = Arc::new(RecordStore::open(config.records_path())?);
        let queue_config = QueueConfig {
            max_attempts: config.max_attempts,
            sync: true,
        };
        let open = |path: PathBuf| -> Result<Arc<DurableQueue>, PlatformError> {
            let q = DurableQueue::open(path, queue_config, clock.clone())?;
            let (records, clock) = (records.clone(), clock.clone());
            q.set_dead_letter_hook(move |msg| fail_from_dead_letter(&records, clock.as_ref(), msg));
            Ok(Arc::new(q))
        };
        let split_queue = open(config.split_queue_path())?;
        let process_queue = open(config.process_queue_path())?;
        Ok(Arc::new(Platform {
            storage: Storage::new(&config.storage_root),
            records,
            users,
            sessions: SessionStore::new(clock.clone()),
            split_queue,
            process_queue,
            internal_secret: config.internal_secret.clone(),
            clock,
        }))
    }

    pub fn queue(&self, kind: JobKind) -> &Arc<dyn JobQueue> {
        match kind {
            JobKind::Split => &self.split_queue,
            JobKind::Process => &self.process_queue,
        }
    }

    pub fn split_started(&self, msg: &SplitStarted) -> Result<(bool, UploadRecord), CallbackError> {
        let now = self.clock.now();
        let (changed, rec) = self
            .records
            .update(&msg.recording_id, |r| r.split_started(now).map(|c| (c, c)))?;
        Ok((changed, rec))
    }

    pub fn split_complete(&self, msg: &SplitComplete) -> Result<(bool, UploadRecord), CallbackError> {
        let now = self.clock.now();
        let (changed, rec) = self
            .records
            .update(&msg.recording_id, |r| r.split_complete(msg.nights, now).map(|c| (c, c)))?;
        Ok((changed, rec))
    }

    /// A night only becomes ready once both of its bundles exist.
    pub fn process_complete(&self, msg: &ProcessComplete) -> Result<(bool, UploadRecord), CallbackError> {
        if !self.storage.has_bundles(&msg.recording_id, msg.night_index) {
            if self.records.get(&msg.recording_id).is_none() {
                return Err(RecordError::UnknownRecording(msg.recording_id.clone()).into());
            }
            return Err(CallbackError::BundlesMissing {
                recording_id: msg.recording_id.clone(),
                night: msg.night_index,
            });
        }
        let now = self.clock.now();
        let (changed, rec) = self.records.update(&msg.recording_id, |r| {
            r.process_complete(msg.night_index, msg.epochs, msg.gray_epochs, now)
                .map(|c| (c, c))
        })?;
        Ok((changed, rec))
    }

    /// Runs one splitter and one processor thread against this platform's
    /// queues, reporting through [`LocalNotifier`].
    pub fn spawn_workers(
        self: &Arc<Self>,
        processor: ProcessorConfig,
        stop: Arc<AtomicBool>,
    ) -> Vec<JoinHandle<()>> {
        let notifier: Arc<dyn Notifier> = Arc::new(LocalNotifier(self.clone()));
        let splitter = Worker::new(
            self.split_queue.clone(),
            Arc::new(Splitter {
                storage: self.storage.clone(),
                process_queue: self.process_queue.clone(),
                notifier: notifier.clone(),
                clock: self.clock.clone(),
                gap_threshold_s: DEFAULT_GAP_THRESHOLD_S,
                faults: Arc::new(somnoline_pipeline::NoFaults),
            }),
        );
        let processor = Worker::new(
            self.process_queue.clone(),
            Arc::new(Processor {
                storage: self.storage.clone(),
                notifier,
                config: processor,
                faults: Arc::new(somnoline_pipeline::NoFaults),
            }),
        );
        [splitter, processor]
            .into_iter()
            .map(|w| {
                let stop = stop.clone();
                std::thread::spawn(move || {
                    w.run(&stop);
                })
            })
            .collect()
    }
}

fn fail_from_dead_letter(records: &RecordStore, clock: &dyn Clock, msg: &JobMessage) {
    let reason = match msg.night_index {
        Some(n) => format!("{} job for night {n} failed {} times", msg.kind, msg.attempt),
        None => format!("{} job failed {} times", msg.kind, msg.attempt),
    };
    let now = clock.now();
    if let Err(e) = records.update(&msg.recording_id, |r| Ok(((), r.fail(&reason, now)))) {
        tracing::warn!(job_id = %msg.job_id, error = %e, "dead letter for unknown recording");
    }
}

/// Applies worker signals directly when workers share the service process.
pub struct LocalNotifier(pub Arc<Platform>);

fn rejected(e: CallbackError) -> NotifyError {
    NotifyError::Rejected(e.to_string())
}

impl Notifier for LocalNotifier {
    fn split_started(&self, msg: &SplitStarted) -> Result<(), NotifyError> {
        self.0.split_started(msg).map(drop).map_err(rejected)
    }

    fn split_complete(&self, msg: &SplitComplete) -> Result<(), NotifyError> {
        self.0.split_complete(msg).map(drop).map_err(rejected)
    }

    fn process_complete(&self, msg: &ProcessComplete) -> Result<(), NotifyError> {
        self.0.process_complete(msg).map(drop).map_err(rejected)
    }
}
