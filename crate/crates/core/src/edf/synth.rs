//! Deterministic synthetic recordings for tests, fixtures and benchmarks.

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::{tal, DataRecord, DecimalField, EdfHeader, EdfRecording, SignalHeader, HEADER_BLOCK};

const PHYS_RANGE_UV: f64 = 500.0;
const ANNOTATION_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Waveform {
    Sine { freq_hz: f64, amplitude_uv: f64 },
    Noise { amplitude_uv: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSignal {
    pub label: String,
    pub samples_per_record: usize,
    pub waveform: Waveform,
}

impl SynthSignal {
    pub fn sine(label: &str, samples_per_record: usize, freq_hz: f64, amplitude_uv: f64) -> Self {
        SynthSignal {
            label: label.into(),
            samples_per_record,
            waveform: Waveform::Sine {
                freq_hz,
                amplitude_uv,
            },
        }
    }

    pub fn noise(label: &str, samples_per_record: usize, amplitude_uv: f64, seed: u64) -> Self {
        SynthSignal {
            label: label.into(),
            samples_per_record,
            waveform: Waveform::Noise { amplitude_uv, seed },
        }
    }
}

/// Layout of a synthetic recording made of one or more nights.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecording {
    pub start: NaiveDateTime,
    pub record_duration_s: u32,
    /// Records in each night.
    pub nights: Vec<usize>,
    /// Silence between the end of one night and the start of the next.
    pub night_gap_s: u64,
    pub signals: Vec<SynthSignal>,
    /// EDF+D with a time-keeping annotation signal; otherwise plain continuous EDF.
    pub discontinuous: bool,
}

impl SynthRecording {
    /// Three 8-hour nights separated by 16 hours, one 256 Hz EEG channel.
    pub fn three_nights() -> Self {
        SynthRecording {
            start: default_start(),
            record_duration_s: 30,
            nights: vec![960; 3],
            night_gap_s: 16 * 3600,
            signals: vec![SynthSignal::sine("EEG C4-M1", 30 * 256, 2.0, 80.0)],
            discontinuous: true,
        }
    }

    /// Three equal nights whose serialized size is close to `target_bytes`.
    pub fn three_nights_of_size(target_bytes: usize) -> Self {
        let mut s = Self::three_nights();
        s.signals = psg_montage(256);
        let record_bytes = s.record_bytes();
        let header = HEADER_BLOCK * (2 + s.signals.len());
        let per_night = (target_bytes.saturating_sub(header) / record_bytes / 3).max(1);
        s.nights = vec![per_night; 3];
        s
    }

    pub fn record_bytes(&self) -> usize {
        let annotation = if self.discontinuous {
            ANNOTATION_SAMPLES
        } else {
            0
        };
        2 * (annotation
            + self
                .signals
                .iter()
                .map(|s| s.samples_per_record)
                .sum::<usize>())
    }

    /// Onset in seconds of every record, night gaps included.
    pub fn onsets(&self) -> Vec<u64> {
        let d = u64::from(self.record_duration_s);
        let mut out = Vec::new();
        let mut t = 0;
        for (i, &n) in self.nights.iter().enumerate() {
            if i > 0 && self.discontinuous {
                t += self.night_gap_s;
            }
            for _ in 0..n {
                out.push(t);
                t += d;
            }
        }
        out
    }

    pub fn build(&self) -> EdfRecording {
        let mut signals: Vec<SignalHeader> = self
            .signals
            .iter()
            .map(|s| SignalHeader {
                label: s.label.clone(),
                transducer: "AgAgCl electrode".into(),
                physical_dim: "uV".into(),
                phys_min: DecimalField::from_f64(-PHYS_RANGE_UV).expect("fits"),
                phys_max: DecimalField::from_f64(PHYS_RANGE_UV).expect("fits"),
                dig_min: -32768,
                dig_max: 32767,
                prefiltering: "HP:0.3Hz LP:35Hz".into(),
                samples_per_record: s.samples_per_record,
                reserved: String::new(),
            })
            .collect();
        if self.discontinuous {
            signals.push(SignalHeader::annotation(ANNOTATION_SAMPLES));
        }

        let mut noise_state: Vec<StdRng> = self
            .signals
            .iter()
            .map(|s| match s.waveform {
                Waveform::Noise { seed, .. } => StdRng::seed_from_u64(seed),
                Waveform::Sine { .. } => StdRng::seed_from_u64(0),
            })
            .collect();
        let record_duration = f64::from(self.record_duration_s);
        let records = self
            .onsets()
            .into_iter()
            .map(|onset| {
                let mut data: Vec<Vec<i16>> = self
                    .signals
                    .iter()
                    .zip(&signals)
                    .zip(noise_state.iter_mut())
                    .map(|((s, header), state)| {
                        let rate = s.samples_per_record as f64 / record_duration;
                        (0..s.samples_per_record)
                            .map(|k| {
                                let t = onset as f64 + k as f64 / rate;
                                let v = match s.waveform {
                                    Waveform::Sine {
                                        freq_hz,
                                        amplitude_uv,
                                    } => amplitude_uv * (std::f64::consts::TAU * freq_hz * t).sin(),
                                    Waveform::Noise { amplitude_uv, .. } => {
                                        amplitude_uv * state.random_range(-1.0..1.0)
                                    }
                                };
                                header.to_digital(v)
                            })
                            .collect()
                    })
                    .collect();
                if self.discontinuous {
                    let bytes = tal::encode_tals(&[tal::Tal::timekeeping(&format!("+{onset}"))]);
                    data.push(tal::bytes_to_samples(&bytes, ANNOTATION_SAMPLES).expect("fits"));
                }
                DataRecord { signals: data }
            })
            .collect::<Vec<_>>();

        let months = [
            "JAN", "FEB", "MAR", "APR", "MAY", "JUN", "JUL", "AUG", "SEP", "OCT", "NOV", "DEC",
        ];
        EdfRecording {
            header: EdfHeader {
                version: "0".into(),
                patient_id: "X X X X".into(),
                recording_id: format!(
                    "Startdate {:02}-{}-{} X X synthetic",
                    self.start.day(),
                    months[self.start.month0() as usize],
                    self.start.year()
                ),
                start_datetime: self.start,
                header_bytes: HEADER_BLOCK * (1 + signals.len()),
                reserved: if self.discontinuous { "EDF+D" } else { "" }.into(),
                record_count: records.len() as i64,
                record_duration_s: DecimalField::from_f64(record_duration).expect("fits"),
                signal_count: signals.len(),
            },
            signals,
            records,
        }
    }
}

/// A small PSG-like montage sampled at `rate_hz`.
pub fn psg_montage(rate_hz: usize) -> Vec<SynthSignal> {
    let n = rate_hz * 30;
    vec![
        SynthSignal::sine("EEG C4-M1", n, 2.0, 80.0),
        SynthSignal::sine("EEG F4-M1", n, 10.0, 30.0),
        SynthSignal::noise("EOG E1-M2", n, 40.0, 7),
        SynthSignal::noise("EMG Chin", n, 15.0, 11),
    ]
}

pub fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 3, 4)
        .and_then(|d| d.and_hms_opt(22, 0, 0))
        .expect("valid date")
}
