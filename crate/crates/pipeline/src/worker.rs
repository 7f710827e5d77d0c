//! Splitter and processor job handlers and the polling loop that drives them.

use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use chrono::Duration;
use somnoline_core::edf::{self, EdfError, NightManifest};
use somnoline_core::gray::{self, GrayError};
use somnoline_core::scoring::{self, ScorerSpec, ScoringError};
use somnoline_core::staging::{self, StagingError};
use thiserror::Error;

use crate::bundle::{write_bundle, BundleEntry};
use crate::callback::{Notifier, NotifyError, ProcessComplete, SplitComplete, SplitStarted};
use crate::clock::Clock;
use crate::message::{JobKind, JobMessage};
use crate::queue::{JobQueue, QueueError, DEFAULT_LEASE_S};
use crate::storage::{BundleKind, Storage};

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("job {job_id}: {reason}")]
    InvalidJob { job_id: String, reason: String },
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Gray(#[from] GrayError),
    #[error(transparent)]
    Staging(#[from] StagingError),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Notify(#[from] NotifyError),
    /// Injected failure standing in for the worker process dying.
    #[error("crashed at {0:?}")]
    Crashed(FaultPoint),
}

/// Places where a worker can be made to die.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultPoint {
    SplitLoaded,
    NightWritten(usize),
    SplitNotified,
    ProcessEnqueued(usize),
    Scored,
    ScoringBundleWritten,
    MlBundleWritten,
    ProcessNotified,
    BeforeAck,
}

pub trait FaultInjector: Send + Sync {
    /// `true` makes the worker die at `point` while handling `job`.
    fn should_crash(&self, job: &JobMessage, point: FaultPoint) -> bool;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoFaults;

impl FaultInjector for NoFaults {
    fn should_crash(&self, _: &JobMessage, _: FaultPoint) -> bool {
        false
    }
}

fn checkpoint(faults: &dyn FaultInjector, job: &JobMessage, point: FaultPoint) -> Result<(), WorkerError> {
    if faults.should_crash(job, point) {
        Err(WorkerError::Crashed(point))
    } else {
        Ok(())
    }
}

pub trait JobHandler: Send + Sync {
    fn kind(&self) -> JobKind;
    fn handle(&self, job: &JobMessage) -> Result<(), WorkerError>;
}

/// Reads an uploaded recording, cuts it into nights and stores each one.
/// Returns the storage references of the nights in order.
pub fn split_recording(
    storage: &Storage,
    recording_id: &str,
    recording_ref: &str,
    gap_threshold_s: f64,
) -> Result<Vec<String>, WorkerError> {
    split_with(storage, recording_id, recording_ref, gap_threshold_s, &|_| Ok(()))
}

fn split_with(
    storage: &Storage,
    recording_id: &str,
    recording_ref: &str,
    gap_threshold_s: f64,
    after: &dyn Fn(Option<usize>) -> Result<(), WorkerError>,
) -> Result<Vec<String>, WorkerError> {
    let rec = edf::read_file(storage.resolve(recording_ref))?;
    let manifest_path = storage.resolve(&Storage::manifest_ref(recording_id));
    let manifest = match fs::read_to_string(&manifest_path) {
        Ok(text) => Some(NightManifest::from_json(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    after(None)?;
    let ranges = edf::detect_night_boundaries(&rec, gap_threshold_s, manifest.as_ref())?;
    let nights = edf::split_nights(&rec, &ranges)?;
    drop(rec);
    let mut refs = Vec::with_capacity(nights.len());
    for (n, night) in nights.iter().enumerate() {
        let reference = Storage::night_ref(recording_id, n);
        storage.write_atomic(&reference, &edf::write_recording(night)?)?;
        after(Some(n))?;
        refs.push(reference);
    }
    Ok(refs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessorConfig {
    pub scorer: ScorerSpec,
    pub gray_threshold: f64,
    pub epoch_length_s: f64,
}

impl ProcessorConfig {
    pub fn baseline(channel_label: &str) -> Self {
        ProcessorConfig {
            scorer: ScorerSpec::Baseline {
                channel_label: channel_label.to_string(),
                coefficients: Default::default(),
            },
            gray_threshold: gray::DEFAULT_THRESHOLD,
            epoch_length_s: staging::DEFAULT_EPOCH_LENGTH_S,
        }
    }

    /// A precomputed source that is a directory holds one
    /// `<recording_id>/night-<n>.csv` per night.
    fn scorer_for(&self, recording_id: &str, night: usize) -> ScorerSpec {
        match &self.scorer {
            ScorerSpec::Precomputed { source } if source.is_dir() => ScorerSpec::Precomputed {
                source: source
                    .join(recording_id)
                    .join(format!("night-{night}.csv")),
            },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NightSummary {
    pub epochs: usize,
    pub gray_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ProcessStep {
    Scored,
    ScoringBundle,
    MlBundle,
}

/// Scores one stored night and writes its scoring and ML bundles.
pub fn process_night(
    storage: &Storage,
    config: &ProcessorConfig,
    recording_id: &str,
    night_ref: &str,
    night: usize,
) -> Result<NightSummary, WorkerError> {
    process_with(storage, config, recording_id, night_ref, night, &|_| Ok(()))
}

fn process_with(
    storage: &Storage,
    config: &ProcessorConfig,
    recording_id: &str,
    night_ref: &str,
    night: usize,
    after: &dyn Fn(ProcessStep) -> Result<(), WorkerError>,
) -> Result<NightSummary, WorkerError> {
    let night_path = storage.resolve(night_ref);
    let rec = edf::read_file(&night_path)?;
    let h = scoring::score(
        &rec,
        &config.scorer_for(recording_id, night),
        config.epoch_length_s,
    )?;
    after(ProcessStep::Scored)?;
    let mask = gray::tag_gray(&h, config.gray_threshold)?;
    let hyp = staging::hypnodensity_to_hypnogram(&h, rec.header.start_datetime);
    drop(rec);
    let star = gray::apply_mask(&hyp, &mask)?;
    let labels = staging::encode_scoring_labels(&star);

    let edf_name = format!("night-{night}.edf");
    let mut labels_csv = Vec::new();
    staging::write_labels_csv(&labels, &mut labels_csv)?;
    write_bundle(
        storage,
        &Storage::bundle_ref(recording_id, night, BundleKind::Scoring),
        &[
            BundleEntry::file(&edf_name, night_path.clone()),
            BundleEntry::bytes("hypnogram.csv", labels_csv),
        ],
    )?;
    after(ProcessStep::ScoringBundle)?;

    let mut density_csv = Vec::new();
    staging::write_hypnodensity_csv(&h, &mut density_csv)?;
    let mut mask_csv = Vec::new();
    gray::write_mask_csv(&mask, &mut mask_csv)?;
    write_bundle(
        storage,
        &Storage::bundle_ref(recording_id, night, BundleKind::Ml),
        &[
            BundleEntry::file(&edf_name, night_path),
            BundleEntry::bytes("hypnodensity.csv", density_csv),
            BundleEntry::bytes("gray_mask.csv", mask_csv),
        ],
    )?;
    after(ProcessStep::MlBundle)?;
    Ok(NightSummary {
        epochs: h.len(),
        gray_epochs: mask.gray_count(),
    })
}

fn expect_kind(job: &JobMessage, kind: JobKind) -> Result<(), WorkerError> {
    if job.kind == kind {
        Ok(())
    } else {
        Err(WorkerError::InvalidJob {
            job_id: job.job_id.clone(),
            reason: format!("expected a {kind} job, got {}", job.kind),
        })
    }
}

pub struct Splitter {
    pub storage: Storage,
    pub process_queue: Arc<dyn JobQueue>,
    pub notifier: Arc<dyn Notifier>,
    pub clock: Arc<dyn Clock>,
    pub gap_threshold_s: f64,
    pub faults: Arc<dyn FaultInjector>,
}

impl JobHandler for Splitter {
    fn kind(&self) -> JobKind {
        JobKind::Split
    }

    /// Nights are stored and announced before their process jobs are queued,
    /// so the front end knows about every night a processor can report on.
    fn handle(&self, job: &JobMessage) -> Result<(), WorkerError> {
        expect_kind(job, JobKind::Split)?;
        let rid = &job.recording_id;
        self.notifier.split_started(&SplitStarted {
            recording_id: rid.clone(),
        })?;
        let faults = self.faults.as_ref();
        let refs = split_with(
            &self.storage,
            rid,
            &job.recording_ref,
            self.gap_threshold_s,
            &|step| match step {
                None => checkpoint(faults, job, FaultPoint::SplitLoaded),
                Some(n) => checkpoint(faults, job, FaultPoint::NightWritten(n)),
            },
        )?;
        self.notifier.split_complete(&SplitComplete {
            recording_id: rid.clone(),
            nights: refs.len(),
        })?;
        checkpoint(faults, job, FaultPoint::SplitNotified)?;
        for (n, reference) in refs.iter().enumerate() {
            self.process_queue
                .enqueue(JobMessage::process(rid, reference, n, self.clock.now()))?;
            checkpoint(faults, job, FaultPoint::ProcessEnqueued(n))?;
        }
        Ok(())
    }
}

pub struct Processor {
    pub storage: Storage,
    pub notifier: Arc<dyn Notifier>,
    pub config: ProcessorConfig,
    pub faults: Arc<dyn FaultInjector>,
}

impl JobHandler for Processor {
    fn kind(&self) -> JobKind {
        JobKind::Process
    }

    fn handle(&self, job: &JobMessage) -> Result<(), WorkerError> {
        expect_kind(job, JobKind::Process)?;
        let night = job.night_index.ok_or_else(|| WorkerError::InvalidJob {
            job_id: job.job_id.clone(),
            reason: "missing night_index".into(),
        })?;
        let faults = self.faults.as_ref();
        let summary = process_with(
            &self.storage,
            &self.config,
            &job.recording_id,
            &job.recording_ref,
            night,
            &|step| {
                let point = match step {
                    ProcessStep::Scored => FaultPoint::Scored,
                    ProcessStep::ScoringBundle => FaultPoint::ScoringBundleWritten,
                    ProcessStep::MlBundle => FaultPoint::MlBundleWritten,
                };
                checkpoint(faults, job, point)
            },
        )?;
        self.notifier.process_complete(&ProcessComplete {
            recording_id: job.recording_id.clone(),
            night_index: night,
            epochs: summary.epochs,
            gray_epochs: summary.gray_epochs,
        })?;
        checkpoint(faults, job, FaultPoint::ProcessNotified)
    }
}

/// What one polling step did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Idle,
    Acked(String),
    Nacked { job_id: String, error: String },
    /// The worker died holding the lease; nothing was reported to the queue.
    Crashed(String),
}

pub struct Worker {
    pub queue: Arc<dyn JobQueue>,
    pub handler: Arc<dyn JobHandler>,
    pub lease: Duration,
    pub idle_wait: std::time::Duration,
    pub faults: Arc<dyn FaultInjector>,
}

impl Worker {
    pub fn new(queue: Arc<dyn JobQueue>, handler: Arc<dyn JobHandler>) -> Self {
        Worker {
            queue,
            handler,
            lease: Duration::seconds(DEFAULT_LEASE_S),
            idle_wait: std::time::Duration::from_millis(200),
            faults: Arc::new(NoFaults),
        }
    }

    /// Takes at most one job and handles it.
    pub fn step(&self) -> Result<Step, QueueError> {
        let Some(job) = self.queue.dequeue(self.lease)? else {
            return Ok(Step::Idle);
        };
        let outcome = self
            .handler
            .handle(&job)
            .and_then(|()| checkpoint(self.faults.as_ref(), &job, FaultPoint::BeforeAck));
        match outcome {
            Ok(()) => {
                self.queue.ack(&job.job_id)?;
                tracing::info!(job_id = %job.job_id, "job done");
                Ok(Step::Acked(job.job_id))
            }
            Err(WorkerError::Crashed(point)) => {
                tracing::warn!(job_id = %job.job_id, ?point, "worker crashed");
                Ok(Step::Crashed(job.job_id))
            }
            Err(e) => {
                tracing::warn!(job_id = %job.job_id, attempt = job.attempt, error = %e, "job failed");
                self.queue.nack(&job.job_id)?;
                Ok(Step::Nacked {
                    job_id: job.job_id,
                    error: e.to_string(),
                })
            }
        }
    }

    /// Polls until `stop` is set. Queue errors are logged and retried; a
    /// simulated crash ends the loop as a real crash would.
    pub fn run(&self, stop: &AtomicBool) -> Step {
        while !stop.load(Ordering::Relaxed) {
            match self.step() {
                Ok(Step::Idle) => std::thread::sleep(self.idle_wait),
                Ok(crash @ Step::Crashed(_)) => return crash,
                Ok(_) => {}
                Err(e) => {
                    tracing::warn!(error = %e, "queue unavailable");
                    std::thread::sleep(self.idle_wait);
                }
            }
        }
        Step::Idle
    }
}
