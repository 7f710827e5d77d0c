mod common;

use std::sync::Arc;

use common::*;
use somnoline_core::edf::write_recording;
use somnoline_core::gray::{certainty, DEFAULT_THRESHOLD};
use somnoline_core::scoring::ScorerSpec;
use somnoline_core::staging::{read_hypnodensity_csv, read_labels_csv, write_hypnodensity_csv, Hypnodensity};
use somnoline_pipeline::bundle::read_bundle;
use somnoline_pipeline::callback::Event;
use somnoline_pipeline::{
    BundleKind, JobKind, JobQueue, MemoryNotifier, NoFaults, Processor, ProcessorConfig, Step,
    Storage, Worker,
};

#[test]
fn splitter_enqueues_one_process_job_per_night() {
    let dir = tempfile::tempdir().unwrap();
    let storage = Storage::new(dir.path().join("store"));
    let clock = manual_clock();
    let queues = open_queues(dir.path(), &clock);
    let notifier = Arc::new(MemoryNotifier::default());
    let (split, _) = workers(&storage, &queues, notifier.clone(), clock.clone(), Arc::new(NoFaults));

    let bytes = write_recording(&small_three_nights().build()).unwrap();
    queues.split.enqueue(stage_upload(&storage, "r1", &bytes, clock.as_ref())).unwrap();
    assert_eq!(split.step().unwrap(), Step::Acked("split-r1".into()));

    let pending = queues.process.pending();
    assert_eq!(pending.len(), 3);
    for (n, job) in pending.iter().enumerate() {
        assert_eq!(job.kind, JobKind::Process);
        assert_eq!(job.night_index, Some(n));
        assert_eq!(job.recording_ref, Storage::night_ref("r1", n));
        assert!(storage.resolve(&job.recording_ref).is_file());
    }
    let events = notifier.events();
    assert!(matches!(&events[0], Event::SplitStarted(s) if s.recording_id == "r1"));
    assert!(matches!(&events[1], Event::SplitComplete(s) if s.nights == 3));
}

#[test]
fn corrupt_upload_is_dead_lettered_and_worker_continues() {
    let dir = tempfile::tempdir().unwrap();
    let storage = Storage::new(dir.path().join("store"));
    let clock = manual_clock();
    let queues = open_queues(dir.path(), &clock);
    let notifier = Arc::new(MemoryNotifier::default());
    let (split, _) = workers(&storage, &queues, notifier, clock.clone(), Arc::new(NoFaults));

    queues.split.enqueue(stage_upload(&storage, "bad", b"not an edf file", clock.as_ref())).unwrap();
    let good = write_recording(&small_three_nights().build()).unwrap();
    queues.split.enqueue(stage_upload(&storage, "good", &good, clock.as_ref())).unwrap();

    let mut steps = Vec::new();
    loop {
        match split.step().unwrap() {
            Step::Idle => break,
            s => steps.push(s),
        }
    }
    let nacks = steps.iter().filter(|s| matches!(s, Step::Nacked { .. })).count();
    assert_eq!(nacks, 3);
    assert!(steps.contains(&Step::Acked("split-good".into())));
    let dead = queues.split.dead_letters();
    assert_eq!(dead.len(), 1);
    assert_eq!(dead[0].job_id, "split-bad");
    assert_eq!(queues.process.pending().len(), 3);
}

fn processor_worker(storage: &Storage, config: ProcessorConfig, queue: Arc<dyn JobQueue>) -> (Worker, Arc<MemoryNotifier>) {
    let notifier = Arc::new(MemoryNotifier::default());
    let processor = Processor {
        storage: storage.clone(),
        notifier: notifier.clone(),
        config,
        faults: Arc::new(NoFaults),
    };
    (Worker::new(queue, Arc::new(processor)), notifier)
}

fn stage_night(storage: &Storage, rid: &str) {
    let night = small_three_nights();
    let one = somnoline_core::edf::synth::SynthRecording { nights: vec![night.nights[0]], ..night };
    storage
        .write_atomic(&Storage::night_ref(rid, 0), &write_recording(&one.build()).unwrap())
        .unwrap();
}

fn bundle(storage: &Storage, rid: &str, kind: BundleKind) -> Vec<(String, Vec<u8>)> {
    read_bundle(std::fs::File::open(storage.bundle_path(rid, 0, kind)).unwrap()).unwrap()
}

#[test]
fn precomputed_night_gets_both_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let storage = Storage::new(dir.path().join("store"));
    let clock = manual_clock();
    let queues = open_queues(dir.path(), &clock);
    stage_night(&storage, "r1");

    let rows = vec![
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.2; 5],
        [0.1, 0.1, 0.7, 0.05, 0.05],
        [0.0, 0.0, 0.27, 0.73, 0.0],
        [0.5, 0.3, 0.2, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ];
    let h = Hypnodensity::new(30.0, rows).unwrap();
    let source = dir.path().join("hypnodensity");
    std::fs::create_dir_all(source.join("r1")).unwrap();
    write_hypnodensity_csv(&h, std::fs::File::create(source.join("r1/night-0.csv")).unwrap()).unwrap();

    let config = ProcessorConfig {
        scorer: ScorerSpec::Precomputed { source },
        ..ProcessorConfig::baseline("unused")
    };
    let (worker, notifier) = processor_worker(&storage, config, queues.process.clone());
    queues
        .process
        .enqueue(somnoline_pipeline::JobMessage::process("r1", &Storage::night_ref("r1", 0), 0, chrono::Utc::now()))
        .unwrap();
    assert!(matches!(worker.step().unwrap(), Step::Acked(_)));
    assert!(storage.has_bundles("r1", 0));

    let expected_gray = certainty(&h).values().iter().filter(|&&c| c < DEFAULT_THRESHOLD).count();
    assert_eq!(expected_gray, 3);

    let scoring = bundle(&storage, "r1", BundleKind::Scoring);
    let names: Vec<&str> = scoring.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["night-0.edf", "hypnogram.csv"]);
    let labels = read_labels_csv(scoring[1].1.as_slice()).unwrap();
    let gray: Vec<bool> = labels.iter().map(|e| e.is_gray()).collect();
    assert_eq!(gray, [false, true, true, false, true, false]);

    let ml = bundle(&storage, "r1", BundleKind::Ml);
    let names: Vec<&str> = ml.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["night-0.edf", "hypnodensity.csv", "gray_mask.csv"]);
    assert_eq!(read_hypnodensity_csv(ml[1].1.as_slice(), 30.0).unwrap(), h);
    assert_eq!(ml[0].1, std::fs::read(storage.resolve(&Storage::night_ref("r1", 0))).unwrap());

    assert!(matches!(
        &notifier.events()[0],
        somnoline_pipeline::callback::Event::ProcessComplete(p) if p.gray_epochs == 3 && p.epochs == 6
    ));
}

#[test]
fn one_hot_night_has_no_uncertain_labels() {
    let dir = tempfile::tempdir().unwrap();
    let storage = Storage::new(dir.path().join("store"));
    let clock = manual_clock();
    let queues = open_queues(dir.path(), &clock);
    stage_night(&storage, "r1");
    let h = Hypnodensity::new(30.0, vec![[0.0, 0.0, 1.0, 0.0, 0.0]; 6]).unwrap();
    let source = dir.path().join("h.csv");
    write_hypnodensity_csv(&h, std::fs::File::create(&source).unwrap()).unwrap();
    let config = ProcessorConfig {
        scorer: ScorerSpec::Precomputed { source },
        ..ProcessorConfig::baseline("unused")
    };
    let (worker, _) = processor_worker(&storage, config, queues.process.clone());
    queues
        .process
        .enqueue(somnoline_pipeline::JobMessage::process("r1", &Storage::night_ref("r1", 0), 0, chrono::Utc::now()))
        .unwrap();
    assert!(matches!(worker.step().unwrap(), Step::Acked(_)));
    let scoring = bundle(&storage, "r1", BundleKind::Scoring);
    let text = String::from_utf8(scoring[1].1.clone()).unwrap();
    assert!(!text.contains("uncertain"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn missing_channel_is_dead_lettered() {
    let dir = tempfile::tempdir().unwrap();
    let storage = Storage::new(dir.path().join("store"));
    let clock = manual_clock();
    let queues = open_queues(dir.path(), &clock);
    stage_night(&storage, "r1");
    let (worker, _) = processor_worker(&storage, ProcessorConfig::baseline("EEG O2-M1"), queues.process.clone());
    queues
        .process
        .enqueue(somnoline_pipeline::JobMessage::process("r1", &Storage::night_ref("r1", 0), 0, chrono::Utc::now()))
        .unwrap();
    for _ in 0..3 {
        let step = worker.step().unwrap();
        assert!(matches!(&step, Step::Nacked { error, .. } if error.contains("EEG O2-M1")), "{step:?}");
    }
    assert_eq!(worker.step().unwrap(), Step::Idle);
    assert_eq!(queues.process.dead_letters().len(), 1);
    assert!(!storage.has_bundles("r1", 0));
}
