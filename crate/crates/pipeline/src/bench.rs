//! Wall-clock timing of the splitter and processor on synthetic recordings.
//!
//! For every requested size `s` (in Mo, scaled by `unit_bytes`) a balanced
//! three-night file of about `s` is generated; the splitter is timed on the
//! whole file and the processor on one night of about `s / 3`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use somnoline_core::agreement::summarize;
use somnoline_core::edf::{self, synth::SynthRecording, DEFAULT_GAP_THRESHOLD_S};

use crate::storage::Storage;
use crate::worker::{process_night, split_recording, ProcessorConfig, WorkerError};

/// Bytes in one Mo at full scale.
pub const MO: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes_mo: Vec<f64>,
    pub trials: usize,
    /// Bytes that stand for one Mo; [`MO`] reproduces real sizes.
    pub unit_bytes: u64,
    pub work_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Splitter,
    Processor,
}

/// One report line: stage, file size, mean and sd of the wall time in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub stage: Stage,
    pub size_mo: f64,
    pub mean_min: f64,
    pub sd_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub trials: usize,
    pub unit_bytes: u64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: [&'static str; 4] = ["stage", "size_mo", "mean_min", "sd_min"];

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.serialize((r.stage, r.size_mo, r.mean_min, r.sd_min))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<10} {:>10} {:>14}\n",
            "stage", "size (Mo)", "minutes"
        );
        for r in &self.rows {
            let stage = match r.stage {
                Stage::Splitter => "splitter",
                Stage::Processor => "processor",
            };
            let _ = writeln!(
                out,
                "{stage:<10} {:>10.0} {:>7.4}±{:.4}",
                r.size_mo, r.mean_min, r.sd_min
            );
        }
        out
    }
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport, WorkerError> {
    if config.trials == 0 || config.sizes_mo.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "bench needs at least one trial and positive sizes",
        )
        .into());
    }
    let storage = Storage::new(&config.work_dir);
    let processor = ProcessorConfig::baseline("EEG C4-M1");
    let mut split_rows = Vec::new();
    let mut process_rows = Vec::new();
    for (i, &size) in config.sizes_mo.iter().enumerate() {
        let target = (size * config.unit_bytes as f64).round() as usize;
        let rid = format!("bench-{i}");
        let upload = Storage::upload_ref(&rid);
        std::fs::create_dir_all(storage.resolve("uploads"))?;
        edf::write_file(
            &SynthRecording::three_nights_of_size(target).build(),
            storage.resolve(&upload),
        )?;

        let mut split_minutes = Vec::with_capacity(config.trials);
        let mut process_minutes = Vec::with_capacity(config.trials);
        for _ in 0..config.trials {
            let t = Instant::now();
            let nights = split_recording(&storage, &rid, &upload, DEFAULT_GAP_THRESHOLD_S)?;
            split_minutes.push(t.elapsed().as_secs_f64() / 60.0);

            let t = Instant::now();
            process_night(&storage, &processor, &rid, &nights[0], 0)?;
            process_minutes.push(t.elapsed().as_secs_f64() / 60.0);
        }
        split_rows.push(row(Stage::Splitter, size, &split_minutes));
        process_rows.push(row(Stage::Processor, size / 3.0, &process_minutes));
        std::fs::remove_dir_all(storage.resolve(&format!("nights/{rid}"))).ok();
        std::fs::remove_dir_all(storage.resolve(&format!("bundles/{rid}"))).ok();
        std::fs::remove_file(storage.resolve(&upload)).ok();
    }
    split_rows.extend(process_rows);
    Ok(BenchReport {
        trials: config.trials,
        unit_bytes: config.unit_bytes,
        rows: split_rows,
    })
}

fn row(stage: Stage, size_mo: f64, minutes: &[f64]) -> BenchRow {
    let s = summarize(minutes).expect("at least one trial");
    BenchRow {
        stage,
        size_mo,
        mean_min: s.mean,
        sd_min: s.sd,
    }
}
