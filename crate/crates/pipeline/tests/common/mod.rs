#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use somnoline_core::edf::synth::{SynthRecording, SynthSignal};
use somnoline_pipeline::{
    Clock, DurableQueue, FaultInjector, JobMessage, JobQueue, ManualClock, Notifier, Processor,
    ProcessorConfig, QueueConfig, Splitter, Storage, Worker,
};

pub fn manual_clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 3, 4, 8, 0, 0).unwrap()))
}

/// Three 3-minute nights of a 100 Hz, 2 Hz sine EEG channel.
pub fn small_three_nights() -> SynthRecording {
    SynthRecording {
        nights: vec![6, 6, 6],
        signals: vec![
            SynthSignal::sine("EEG C4-M1", 3000, 2.0, 80.0),
            SynthSignal::noise("EMG chin", 300, 10.0, 3),
        ],
        ..SynthRecording::three_nights()
    }
}

/// Stores an upload the way the service does and returns its split job.
pub fn stage_upload(storage: &Storage, rid: &str, bytes: &[u8], clock: &dyn Clock) -> JobMessage {
    let reference = Storage::upload_ref(rid);
    storage.write_atomic(&reference, bytes).unwrap();
    JobMessage::split(rid, &reference, clock.now())
}

pub struct Queues {
    pub split: Arc<DurableQueue>,
    pub process: Arc<DurableQueue>,
}

pub fn open_queues(root: &Path, clock: &Arc<ManualClock>) -> Queues {
    let config = QueueConfig { max_attempts: 3, sync: false };
    Queues {
        split: Arc::new(DurableQueue::open(root.join("queues/split.log"), config, clock.clone()).unwrap()),
        process: Arc::new(DurableQueue::open(root.join("queues/process.log"), config, clock.clone()).unwrap()),
    }
}

pub fn workers(
    storage: &Storage,
    queues: &Queues,
    notifier: Arc<dyn Notifier>,
    clock: Arc<ManualClock>,
    faults: Arc<dyn FaultInjector>,
) -> (Worker, Worker) {
    let splitter = Splitter {
        storage: storage.clone(),
        process_queue: queues.process.clone() as Arc<dyn JobQueue>,
        notifier: notifier.clone(),
        clock,
        gap_threshold_s: 3600.0,
        faults: faults.clone(),
    };
    let processor = Processor {
        storage: storage.clone(),
        notifier,
        config: ProcessorConfig::baseline("EEG C4-M1"),
        faults: faults.clone(),
    };
    let mut split = Worker::new(queues.split.clone(), Arc::new(splitter));
    split.faults = faults.clone();
    let mut process = Worker::new(queues.process.clone(), Arc::new(processor));
    process.faults = faults;
    (split, process)
}
