//! Synthetic scoring studies for exercising the agreement report end to end.
//!
//! Each recording gets a hidden reference hypnogram (a sticky Markov chain),
//! a certainty trace with a fraction of low-certainty epochs, and ratings that
//! follow the reference more often on clear epochs than on gray ones.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::report::{AssignmentLayout, PsgScorings};
use crate::gray::{tag_series, write_mask_csv, CertaintySeries, GrayMask, DEFAULT_THRESHOLD};
use crate::staging::{write_hypnogram_csv, Hypnogram, SleepStage, DEFAULT_EPOCH_LENGTH_S};

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub epochs: usize,
    pub consensus_raters: usize,
    pub gray_fraction: f64,
    /// Chance that a rater follows the reference on a clear epoch.
    pub clear_accuracy: f64,
    /// Same, on a gray epoch.
    pub gray_accuracy: f64,
    pub seed: u64,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            epochs: 600,
            consensus_raters: 10,
            gray_fraction: 0.2,
            clear_accuracy: 0.92,
            gray_accuracy: 0.6,
            seed: 1,
        }
    }
}

pub fn synthetic_study(layout: &AssignmentLayout, spec: &StudySpec) -> Vec<PsgScorings> {
    let mut rng = StdRng::seed_from_u64(spec.seed);
    layout
        .rows
        .iter()
        .map(|(psg_id, cells)| {
            let reference = markov_stages(&mut rng, spec.epochs);
            let certainty: Vec<f64> = (0..spec.epochs)
                .map(|_| {
                    if rng.random_bool(spec.gray_fraction) {
                        rng.random_range(0.3..DEFAULT_THRESHOLD)
                    } else {
                        rng.random_range(DEFAULT_THRESHOLD..1.0)
                    }
                })
                .collect();
            let mask = tag_series(
                &CertaintySeries::new(certainty).expect("values in [0, 1]"),
                DEFAULT_THRESHOLD,
            )
            .expect("threshold in range");
            let rate = |rng: &mut StdRng| rater(rng, &reference, &mask, spec);
            let consensus = (0..spec.consensus_raters).map(|_| rate(&mut rng)).collect();
            let technologists: BTreeMap<String, Hypnogram> = layout
                .technologists
                .iter()
                .zip(cells)
                .filter(|(_, c)| c.is_some())
                .map(|(t, _)| (t.clone(), rate(&mut rng)))
                .collect();
            PsgScorings {
                psg_id: psg_id.clone(),
                consensus,
                technologists,
                gray_mask: Some(mask),
            }
        })
        .collect()
}

/// Lays a study out as `ratings/<psg>/consensus/rNN.csv`,
/// `ratings/<psg>/<technologist>.csv` and `masks/<psg>.csv` under `root`.
pub fn write_study(root: &Path, study: &[PsgScorings]) -> io::Result<()> {
    let to_io = |e: crate::staging::StagingError| io::Error::other(e.to_string());
    for s in study {
        let dir = root.join("ratings").join(&s.psg_id);
        fs::create_dir_all(dir.join("consensus"))?;
        for (i, h) in s.consensus.iter().enumerate() {
            let path = dir.join("consensus").join(format!("r{:02}.csv", i + 1));
            write_hypnogram_csv(h, File::create(path)?).map_err(to_io)?;
        }
        for (tech, h) in &s.technologists {
            write_hypnogram_csv(h, File::create(dir.join(format!("{tech}.csv")))?)
                .map_err(to_io)?;
        }
        if let Some(mask) = &s.gray_mask {
            fs::create_dir_all(root.join("masks"))?;
            let path = root.join("masks").join(format!("{}.csv", s.psg_id));
            write_mask_csv(mask, File::create(path)?)
                .map_err(|e| io::Error::other(e.to_string()))?;
        }
    }
    Ok(())
}

fn markov_stages(rng: &mut StdRng, epochs: usize) -> Vec<SleepStage> {
    let mut stage = SleepStage::W;
    (0..epochs)
        .map(|_| {
            if rng.random_bool(0.1) {
                stage = SleepStage::ALL[rng.random_range(0..SleepStage::COUNT)];
            }
            stage
        })
        .collect()
}

fn rater(
    rng: &mut StdRng,
    reference: &[SleepStage],
    mask: &GrayMask,
    spec: &StudySpec,
) -> Hypnogram {
    let stages = reference
        .iter()
        .zip(&mask.flags)
        .map(|(&s, &gray)| {
            let p = if gray {
                spec.gray_accuracy
            } else {
                spec.clear_accuracy
            };
            if rng.random_bool(p) {
                s
            } else {
                SleepStage::ALL[rng.random_range(0..SleepStage::COUNT)]
            }
        })
        .collect();
    Hypnogram::new(
        DEFAULT_EPOCH_LENGTH_S,
        chrono::NaiveDateTime::default(),
        stages,
    )
    .expect("non-empty study")
}
