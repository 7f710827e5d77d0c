//! Blocking HTTP clients used by workers that run outside the service.

use std::time::Duration as StdDuration;

use chrono::Duration;
use serde::de::DeserializeOwned;
use serde::Serialize;

use somnoline_pipeline::{
    JobKind, JobMessage, JobQueue, Notifier, NotifyError, ProcessComplete, QueueError, QueueStats,
    SplitComplete, SplitStarted,
};

use crate::api::{DequeueRequest, ErrorBody, JobRef, INTERNAL_SECRET_HEADER};

#[derive(Clone)]
struct Internal {
    agent: ureq::Agent,
    base: String,
    secret: String,
}

enum CallError {
    /// The service answered with an error status.
    Status(u16, ErrorBody),
    Transport(String),
}

impl Internal {
    fn new(base_url: &str, secret: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(StdDuration::from_secs(60)))
            .build()
            .into();
        Internal {
            agent,
            base: base_url.trim_end_matches('/').to_owned(),
            secret: secret.to_owned(),
        }
    }

    fn call<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<Option<T>, CallError> {
        let url = format!("{}{path}", self.base);
        let sent = match body {
            Some(b) => self
                .agent
                .post(&url)
                .header(INTERNAL_SECRET_HEADER, &self.secret)
                .send_json(b),
            None => self.agent.get(&url).header(INTERNAL_SECRET_HEADER, &self.secret).call(),
        };
        let mut resp = sent.map_err(|e| CallError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 204 {
            return Ok(None);
        }
        if resp.status().is_success() {
            return resp
                .body_mut()
                .read_json::<T>()
                .map(Some)
                .map_err(|e| CallError::Transport(e.to_string()));
        }
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: "http".into(),
            message: format!("status {status}: {text}"),
        });
        Err(CallError::Status(status, body))
    }
}

/// [`JobQueue`] backed by the service's internal queue endpoints.
#[derive(Clone)]
pub struct HttpQueue {
    inner: Internal,
    name: &'static str,
}

impl HttpQueue {
    pub fn new(base_url: &str, secret: &str, kind: JobKind) -> Self {
        HttpQueue {
            inner: Internal::new(base_url, secret),
            name: match kind {
                JobKind::Split => "split",
                JobKind::Process => "process",
            },
        }
    }

    fn call<B: Serialize, T: DeserializeOwned>(&self, op: &str, body: Option<&B>) -> Result<Option<T>, QueueError> {
        let path = format!("/internal/queues/{}/{op}", self.name);
        self.inner.call(&path, body).map_err(|e| match e {
            CallError::Status(_, b) if b.error == "unknown_job" => QueueError::UnknownJob(b.message),
            CallError::Status(_, b) if b.error == "invalid_message" => QueueError::InvalidMessage(b.message),
            CallError::Status(status, b) => QueueError::Transport(format!("{status} {}: {}", b.error, b.message)),
            CallError::Transport(t) => QueueError::Transport(t),
        })
    }
}

impl JobQueue for HttpQueue {
    fn enqueue(&self, msg: JobMessage) -> Result<(), QueueError> {
        self.call::<_, serde_json::Value>("enqueue", Some(&msg)).map(drop)
    }

    fn dequeue(&self, lease: Duration) -> Result<Option<JobMessage>, QueueError> {
        self.call(
            "dequeue",
            Some(&DequeueRequest {
                lease_s: lease.num_seconds().max(1),
            }),
        )
    }

    fn ack(&self, job_id: &str) -> Result<(), QueueError> {
        let body = JobRef { job_id: job_id.to_owned() };
        self.call::<_, serde_json::Value>("ack", Some(&body)).map(drop)
    }

    fn nack(&self, job_id: &str) -> Result<(), QueueError> {
        let body = JobRef { job_id: job_id.to_owned() };
        self.call::<_, serde_json::Value>("nack", Some(&body)).map(drop)
    }

    fn stats(&self) -> Result<QueueStats, QueueError> {
        self.call::<(), QueueStats>("stats", None)?
            .ok_or_else(|| QueueError::Transport("empty stats response".into()))
    }
}

/// [`Notifier`] that posts worker signals to the service's callback endpoints.
#[derive(Clone)]
pub struct HttpNotifier {
    inner: Internal,
}

impl HttpNotifier {
    pub fn new(base_url: &str, secret: &str) -> Self {
        HttpNotifier {
            inner: Internal::new(base_url, secret),
        }
    }

    fn post<B: Serialize>(&self, path: &str, body: &B) -> Result<(), NotifyError> {
        match self.inner.call::<_, serde_json::Value>(path, Some(body)) {
            Ok(_) => Ok(()),
            Err(CallError::Status(status, b)) if (400..500).contains(&status) => {
                Err(NotifyError::Rejected(format!("{}: {}", b.error, b.message)))
            }
            Err(CallError::Status(status, b)) => Err(NotifyError::Transport(format!("{status}: {}", b.message))),
            Err(CallError::Transport(t)) => Err(NotifyError::Transport(t)),
        }
    }
}

impl Notifier for HttpNotifier {
    fn split_started(&self, msg: &SplitStarted) -> Result<(), NotifyError> {
        self.post("/internal/split-started", msg)
    }

    fn split_complete(&self, msg: &SplitComplete) -> Result<(), NotifyError> {
        self.post("/internal/split-complete", msg)
    }

    fn process_complete(&self, msg: &ProcessComplete) -> Result<(), NotifyError> {
        self.post("/internal/process-complete", msg)
    }
}
