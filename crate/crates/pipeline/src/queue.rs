//! At-least-once job queue with a file-backed transition log.
//!
//! Every state change is appended to the log as a length-prefixed JSON record
//! (`u32` little-endian length, then the JSON bytes) and flushed before the
//! call returns. Opening a queue replays the log, drops a torn final record
//! and rewrites the log as a compact snapshot.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::message::JobMessage;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_LEASE_S: i64 = 600;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("queue storage failure: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("job {0} is not in flight")]
    UnknownJob(String),
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("queue log {path} is corrupt at byte {offset}")]
    CorruptLog { path: PathBuf, offset: u64 },
    #[error("queue transport: {0}")]
    Transport(String),
}

pub type Result<T, E = QueueError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueueStats {
    pub pending: usize,
    pub in_flight: usize,
    pub dead_letter: usize,
    pub acked: usize,
}

/// The delivery contract shared by the local durable queue and remote clients.
pub trait JobQueue: Send + Sync {
    /// Durably records `msg` as pending. Re-enqueueing a known `job_id` is a no-op.
    fn enqueue(&self, msg: JobMessage) -> Result<()>;
    /// Leases the oldest pending job for `lease`.
    fn dequeue(&self, lease: Duration) -> Result<Option<JobMessage>>;
    fn ack(&self, job_id: &str) -> Result<()>;
    /// Gives the job back for another attempt, or dead-letters it at the cap.
    fn nack(&self, job_id: &str) -> Result<()>;
    fn stats(&self) -> Result<QueueStats>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueConfig {
    pub max_attempts: u32,
    /// Flush log appends to the device before acknowledging.
    pub sync: bool,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            sync: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogRecord {
    Enqueued {
        msg: JobMessage,
    },
    Leased {
        job_id: String,
        deadline: DateTime<Utc>,
    },
    Acked {
        job_id: String,
    },
    /// Back to pending with the attempt already incremented.
    Requeued {
        msg: JobMessage,
    },
    DeadLettered {
        msg: JobMessage,
    },
}

#[derive(Debug, Default)]
struct State {
    pending: VecDeque<JobMessage>,
    in_flight: HashMap<String, (JobMessage, DateTime<Utc>)>,
    dead_letter: Vec<JobMessage>,
    acked: HashSet<String>,
}

impl State {
    fn knows(&self, job_id: &str) -> bool {
        self.acked.contains(job_id)
            || self.in_flight.contains_key(job_id)
            || self.pending.iter().any(|m| m.job_id == job_id)
            || self.dead_letter.iter().any(|m| m.job_id == job_id)
    }

    fn apply(&mut self, record: LogRecord) {
        match record {
            LogRecord::Enqueued { msg } => {
                if !self.knows(&msg.job_id) {
                    self.pending.push_back(msg);
                }
            }
            LogRecord::Leased { job_id, deadline } => {
                if let Some(pos) = self.pending.iter().position(|m| m.job_id == job_id) {
                    let msg = self.pending.remove(pos).expect("position is valid");
                    self.in_flight.insert(job_id, (msg, deadline));
                }
            }
            LogRecord::Acked { job_id } => {
                self.in_flight.remove(&job_id);
                self.acked.insert(job_id);
            }
            LogRecord::Requeued { msg } => {
                self.in_flight.remove(&msg.job_id);
                self.pending.push_back(msg);
            }
            LogRecord::DeadLettered { msg } => {
                self.in_flight.remove(&msg.job_id);
                self.pending.retain(|m| m.job_id != msg.job_id);
                self.dead_letter.push(msg);
            }
        }
    }

    /// Records that reproduce this state from an empty log.
    fn snapshot(&self) -> Vec<LogRecord> {
        let mut acked: Vec<&String> = self.acked.iter().collect();
        acked.sort();
        let mut out: Vec<LogRecord> = acked
            .into_iter()
            .map(|id| LogRecord::Acked { job_id: id.clone() })
            .collect();
        out.extend(
            self.dead_letter
                .iter()
                .map(|m| LogRecord::DeadLettered { msg: m.clone() }),
        );
        let mut leased: Vec<&(JobMessage, DateTime<Utc>)> = self.in_flight.values().collect();
        leased.sort_by(|a, b| a.0.job_id.cmp(&b.0.job_id));
        for (msg, deadline) in leased {
            out.push(LogRecord::Enqueued { msg: msg.clone() });
            out.push(LogRecord::Leased {
                job_id: msg.job_id.clone(),
                deadline: *deadline,
            });
        }
        out.extend(
            self.pending
                .iter()
                .map(|m| LogRecord::Enqueued { msg: m.clone() }),
        );
        out
    }
}

type DeadLetterHook = Arc<dyn Fn(&JobMessage) + Send + Sync>;

struct Inner {
    state: State,
    log: BufWriter<File>,
}

/// In-process queue persisted to one append-only log file.
pub struct DurableQueue {
    path: PathBuf,
    config: QueueConfig,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
    on_dead_letter: Mutex<Option<DeadLetterHook>>,
}

impl std::fmt::Debug for DurableQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DurableQueue")
            .field("path", &self.path)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl DurableQueue {
    /// Opens or creates the queue stored at `path`.
    pub fn open(path: impl AsRef<Path>, config: QueueConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut state = State::default();
        if path.exists() {
            for record in read_log(&path)? {
                state.apply(record);
            }
        }
        compact(&path, &state.snapshot(), config.sync)?;
        let log = OpenOptions::new().append(true).open(&path)?;
        Ok(DurableQueue {
            path,
            config,
            clock,
            inner: Mutex::new(Inner {
                state,
                log: BufWriter::new(log),
            }),
            on_dead_letter: Mutex::new(None),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn config(&self) -> QueueConfig {
        self.config
    }

    /// Called once for every job that lands in the dead-letter list.
    pub fn set_dead_letter_hook(&self, hook: impl Fn(&JobMessage) + Send + Sync + 'static) {
        *self.on_dead_letter.lock().expect("hook lock") = Some(Arc::new(hook));
    }

    pub fn dead_letters(&self) -> Vec<JobMessage> {
        self.lock().state.dead_letter.clone()
    }

    pub fn pending(&self) -> Vec<JobMessage> {
        self.lock().state.pending.iter().cloned().collect()
    }

    pub fn is_acked(&self, job_id: &str) -> bool {
        self.lock().state.acked.contains(job_id)
    }

    /// Moves expired leases back to pending (or to dead letter).
    pub fn reap_expired(&self) -> Result<()> {
        let dead = {
            let mut inner = self.lock();
            self.reap_locked(&mut inner)?
        };
        self.notify_dead(&dead);
        Ok(())
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn append(&self, inner: &mut Inner, record: LogRecord) -> Result<()> {
        write_record(&mut inner.log, &record)?;
        inner.log.flush()?;
        if self.config.sync {
            inner.log.get_ref().sync_data()?;
        }
        inner.state.apply(record);
        Ok(())
    }

    fn reap_locked(&self, inner: &mut Inner) -> Result<Vec<JobMessage>> {
        let now = self.clock.now();
        let mut expired: Vec<JobMessage> = inner
            .state
            .in_flight
            .values()
            .filter(|(_, deadline)| *deadline <= now)
            .map(|(m, _)| m.clone())
            .collect();
        expired.sort_by(|a, b| {
            (a.enqueued_at, &a.job_id).cmp(&(b.enqueued_at, &b.job_id))
        });
        let mut dead = Vec::new();
        for msg in expired {
            if let Some(d) = self.retry_locked(inner, msg)? {
                dead.push(d);
            }
        }
        Ok(dead)
    }

    /// Requeues with the next attempt number or dead-letters past the cap.
    fn retry_locked(&self, inner: &mut Inner, mut msg: JobMessage) -> Result<Option<JobMessage>> {
        msg.attempt += 1;
        if msg.attempt > self.config.max_attempts {
            msg.attempt = self.config.max_attempts;
            self.append(inner, LogRecord::DeadLettered { msg: msg.clone() })?;
            tracing::warn!(job_id = %msg.job_id, "job dead-lettered");
            Ok(Some(msg))
        } else {
            self.append(inner, LogRecord::Requeued { msg })?;
            Ok(None)
        }
    }

    fn notify_dead(&self, dead: &[JobMessage]) {
        if dead.is_empty() {
            return;
        }
        let hook = self.on_dead_letter.lock().expect("hook lock").clone();
        if let Some(hook) = hook {
            for msg in dead {
                hook(msg);
            }
        }
    }
}

impl JobQueue for DurableQueue {
    fn enqueue(&self, msg: JobMessage) -> Result<()> {
        msg.validate(self.config.max_attempts)
            .map_err(QueueError::InvalidMessage)?;
        let mut inner = self.lock();
        if inner.state.knows(&msg.job_id) {
            return Ok(());
        }
        self.append(&mut inner, LogRecord::Enqueued { msg })
    }

    fn dequeue(&self, lease: Duration) -> Result<Option<JobMessage>> {
        let (job, dead) = {
            let mut inner = self.lock();
            let dead = self.reap_locked(&mut inner)?;
            let job = match inner.state.pending.front().cloned() {
                Some(msg) => {
                    let deadline = self.clock.now() + lease;
                    self.append(
                        &mut inner,
                        LogRecord::Leased {
                            job_id: msg.job_id.clone(),
                            deadline,
                        },
                    )?;
                    Some(msg)
                }
                None => None,
            };
            (job, dead)
        };
        self.notify_dead(&dead);
        Ok(job)
    }

    fn ack(&self, job_id: &str) -> Result<()> {
        let mut inner = self.lock();
        if !inner.state.in_flight.contains_key(job_id) {
            return Err(QueueError::UnknownJob(job_id.to_string()));
        }
        self.append(
            &mut inner,
            LogRecord::Acked {
                job_id: job_id.to_string(),
            },
        )
    }

    fn nack(&self, job_id: &str) -> Result<()> {
        let dead = {
            let mut inner = self.lock();
            let Some((msg, _)) = inner.state.in_flight.get(job_id).cloned() else {
                return Err(QueueError::UnknownJob(job_id.to_string()));
            };
            self.retry_locked(&mut inner, msg)?
        };
        self.notify_dead(dead.as_slice());
        Ok(())
    }

    fn stats(&self) -> Result<QueueStats> {
        let dead = {
            let mut inner = self.lock();
            self.reap_locked(&mut inner)?
        };
        self.notify_dead(&dead);
        let inner = self.lock();
        Ok(QueueStats {
            pending: inner.state.pending.len(),
            in_flight: inner.state.in_flight.len(),
            dead_letter: inner.state.dead_letter.len(),
            acked: inner.state.acked.len(),
        })
    }
}

fn write_record(w: &mut impl Write, record: &LogRecord) -> io::Result<()> {
    let json = serde_json::to_vec(record).map_err(io::Error::other)?;
    let len = u32::try_from(json.len()).map_err(io::Error::other)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)
}

/// Reads records up to the first incomplete one. A record that is complete
/// but does not decode is corruption, not a torn write.
fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut records = Vec::new();
    let mut offset = 0usize;
    while offset + 4 <= bytes.len() {
        let len = u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes")) as usize;
        let Some(body) = bytes.get(offset + 4..offset + 4 + len) else {
            break;
        };
        let is_last = offset + 4 + len == bytes.len();
        match serde_json::from_slice(body) {
            Ok(r) => records.push(r),
            Err(_) if is_last => break,
            Err(_) => {
                return Err(QueueError::CorruptLog {
                    path: path.to_path_buf(),
                    offset: offset as u64,
                })
            }
        }
        offset += 4 + len;
    }
    if offset != bytes.len() {
        tracing::warn!(path = %path.display(), dropped = bytes.len() - offset, "ignoring torn log tail");
    }
    Ok(records)
}

fn compact(path: &Path, records: &[LogRecord], sync: bool) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        for r in records {
            write_record(&mut w, r)?;
        }
        w.flush()?;
    }
    if sync {
        tmp.as_file().sync_all()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
