//! Seeded crash injection and a restart loop for exercising recovery.
//!
//! [`drain_with_restarts`] plays the role of a supervisor: whenever a worker
//! dies mid-job it throws away every in-memory object, lets the lease run
//! out and starts fresh workers on queues reopened from their logs.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::Duration;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::callback::Notifier;
use crate::clock::ManualClock;
use crate::message::JobMessage;
use crate::queue::{DurableQueue, JobQueue, QueueConfig, QueueError, QueueStats};
use crate::storage::Storage;
use crate::worker::{FaultInjector, FaultPoint, Processor, ProcessorConfig, Splitter, Step, Worker};

/// Checkpoints every delivery passes through at least this many times.
const MIN_CHECKPOINTS: usize = 5;

/// Kills chosen deliveries at a random checkpoint until `budget` crashes
/// have happened. A job is crashed at most `per_job` times, so with
/// `per_job` below the attempt cap a crash alone never dead-letters it.
pub struct SeededCrashes {
    budget: usize,
    per_job: u32,
    rng: Mutex<StdRng>,
    state: Mutex<CrashState>,
}

#[derive(Default)]
struct CrashState {
    spent: usize,
    per_job: HashMap<String, u32>,
    /// (job_id, attempt) -> (checkpoints passed, checkpoint to die at)
    deliveries: HashMap<(String, u32), (usize, Option<usize>)>,
    points: Vec<FaultPoint>,
}

impl SeededCrashes {
    pub fn new(seed: u64, budget: usize, per_job: u32) -> Self {
        SeededCrashes {
            budget,
            per_job,
            rng: Mutex::new(StdRng::seed_from_u64(seed)),
            state: Mutex::new(CrashState::default()),
        }
    }

    pub fn spent(&self) -> usize {
        self.state.lock().expect("crash state").spent
    }

    /// Where each crash happened, in order.
    pub fn points(&self) -> Vec<FaultPoint> {
        self.state.lock().expect("crash state").points.clone()
    }
}

impl FaultInjector for SeededCrashes {
    fn should_crash(&self, job: &JobMessage, point: FaultPoint) -> bool {
        let mut s = self.state.lock().expect("crash state");
        let key = (job.job_id.clone(), job.attempt);
        if !s.deliveries.contains_key(&key) {
            let eligible =
                s.spent < self.budget && s.per_job.get(&job.job_id).copied().unwrap_or(0) < self.per_job;
            let target = eligible.then(|| self.rng.lock().expect("rng").random_range(0..MIN_CHECKPOINTS));
            s.deliveries.insert(key.clone(), (0, target));
        }
        let entry = s.deliveries.get_mut(&key).expect("inserted above");
        let seen = entry.0;
        entry.0 += 1;
        if entry.1 != Some(seen) {
            return false;
        }
        s.spent += 1;
        *s.per_job.entry(job.job_id.clone()).or_default() += 1;
        s.points.push(point);
        true
    }
}

/// Where the queues and artifacts live and how jobs are processed.
#[derive(Debug, Clone)]
pub struct RestartSetup {
    pub queue_dir: PathBuf,
    pub queue: QueueConfig,
    pub storage: Storage,
    pub processor: ProcessorConfig,
    pub gap_threshold_s: f64,
}

#[derive(Debug, Clone)]
pub struct DrainReport {
    pub split: QueueStats,
    pub process: QueueStats,
    pub dead_letters: Vec<JobMessage>,
    pub restarts: usize,
}

/// Enqueues `initial` split jobs and runs one splitter and one processor
/// until both queues are empty, restarting everything after each crash.
pub fn drain_with_restarts(
    setup: &RestartSetup,
    clock: Arc<ManualClock>,
    notifier: Arc<dyn Notifier>,
    faults: Arc<dyn FaultInjector>,
    initial: Vec<JobMessage>,
) -> Result<DrainReport, QueueError> {
    let past_lease = Duration::seconds(crate::queue::DEFAULT_LEASE_S + 1);
    let open = |name: &str| -> Result<Arc<DurableQueue>, QueueError> {
        DurableQueue::open(setup.queue_dir.join(name), setup.queue, clock.clone()).map(Arc::new)
    };
    {
        let split = open("split.log")?;
        for job in initial {
            split.enqueue(job)?;
        }
    }
    let mut restarts = 0;
    'life: loop {
        let split = open("split.log")?;
        let process = open("process.log")?;
        let mut splitter = Worker::new(
            split.clone(),
            Arc::new(Splitter {
                storage: setup.storage.clone(),
                process_queue: process.clone(),
                notifier: notifier.clone(),
                clock: clock.clone(),
                gap_threshold_s: setup.gap_threshold_s,
                faults: faults.clone(),
            }),
        );
        splitter.faults = faults.clone();
        let mut processor = Worker::new(
            process.clone(),
            Arc::new(Processor {
                storage: setup.storage.clone(),
                notifier: notifier.clone(),
                config: setup.processor.clone(),
                faults: faults.clone(),
            }),
        );
        processor.faults = faults.clone();
        loop {
            let a = splitter.step()?;
            let b = processor.step()?;
            if matches!(a, Step::Crashed(_)) || matches!(b, Step::Crashed(_)) {
                restarts += 1;
                clock.advance(past_lease);
                continue 'life;
            }
            if a == Step::Idle && b == Step::Idle {
                let (s, p) = (split.stats()?, process.stats()?);
                if s.pending + s.in_flight + p.pending + p.in_flight == 0 {
                    let mut dead_letters = split.dead_letters();
                    dead_letters.extend(process.dead_letters());
                    return Ok(DrainReport {
                        split: s,
                        process: p,
                        dead_letters,
                        restarts,
                    });
                }
                clock.advance(past_lease);
            }
        }
    }
}
