use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::archive::{Dataset, DatasetMetadata, DatasetRecord, Split};
use crate::error::{Error, Result};
use crate::gcc::{admissible_max_lag, gcc_tdoa};
use crate::io::load_audio_source;
use crate::room::{simulate_rir, Constellation, ImpulseResponse, RoomSpec};
use crate::rtf::extract_rtf;
use crate::synth::{make_white_source, synthesize_pair, SourceSignal};

use super::config::ScenarioConfig;
use super::{linspace, mix_seed, sha256_json, SOURCE_NOTE};

const AZIMUTH_STREAM: u64 = 0xA21;

/// Where each sample sits and how it is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePlan {
    pub azimuth: f64,
    pub split: Split,
    pub labelled: bool,
}

/// Labelled samples on a uniform grid, then uniformly drawn unlabelled
/// training samples, then uniformly drawn test samples.
pub fn sample_plan(cfg: &ScenarioConfig) -> Vec<SamplePlan> {
    let [lo, hi] = cfg.constellation.azimuth_range;
    let s = &cfg.samples;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.run.seed, AZIMUTH_STREAM));
    let mut plan: Vec<SamplePlan> = linspace(lo, hi, s.labelled)
        .into_iter()
        .map(|azimuth| SamplePlan {
            azimuth,
            split: Split::Train,
            labelled: true,
        })
        .collect();
    for _ in s.labelled..s.train {
        plan.push(SamplePlan {
            azimuth: rng.random_range(lo..=hi),
            split: Split::Train,
            labelled: false,
        });
    }
    for _ in 0..s.test {
        plan.push(SamplePlan {
            azimuth: rng.random_range(lo..=hi),
            split: Split::Test,
            labelled: false,
        });
    }
    plan
}

/// Impulse responses for every planned sample; independent of SNR.
#[derive(Debug, Clone)]
pub struct Scene {
    pub room: RoomSpec,
    pub constellation: Constellation,
    pub plan: Vec<SamplePlan>,
    pub rirs: Vec<(ImpulseResponse, ImpulseResponse)>,
}

pub fn build_scene(cfg: &ScenarioConfig, room: &RoomSpec, plan: Vec<SamplePlan>) -> Result<Scene> {
    let cons = cfg.constellation();
    cons.validate_in(room)?;
    let mic2 = cons.mic2_rotated();
    let rirs = plan
        .par_iter()
        .map(|p| {
            let run = || -> Result<_> {
                let src = cons.azimuth_to_position(room, p.azimuth)?;
                Ok((simulate_rir(room, &src, &cons.mic1)?, simulate_rir(room, &src, &mic2)?))
            };
            run().map_err(|e| e.at_azimuth(p.azimuth))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        room: room.clone(),
        constellation: cons,
        plan,
        rirs,
    })
}

/// Segment of `audio` of the configured duration at an offset drawn from `seed`.
fn audio_segment(audio: &SourceSignal, duration_s: f64, seed: u64) -> Result<SourceSignal> {
    let n = (duration_s * audio.sample_rate).round() as usize;
    if audio.len() < n {
        return Err(Error::SignalTooShort {
            len: audio.len(),
            needed: n,
        });
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..=audio.len() - n);
    Ok(SourceSignal {
        samples: audio.samples[start..start + n].to_vec(),
        ..audio.clone()
    })
}

/// Synthesizes the microphone signals of every sample and extracts features.
pub fn render_dataset(cfg: &ScenarioConfig, scene: &Scene) -> Result<Dataset> {
    let fs = scene.room.sample_rate;
    let audio = match &cfg.signal.source_wav {
        Some(path) => {
            let audio = load_audio_source(path)?;
            if (audio.sample_rate - fs).abs() > 1e-9 {
                return Err(Error::SampleRateMismatch(audio.sample_rate, fs));
            }
            Some(audio)
        }
        None => None,
    };
    let welch = cfg.features.welch();
    let band = cfg.features.band().bins(fs, welch.fft_size)?;
    let max_lag = cfg
        .gcc
        .max_lag
        .unwrap_or_else(|| admissible_max_lag(scene.constellation.mic_spacing(), scene.room.speed_of_sound, fs) + 2);
    let records = scene
        .plan
        .par_iter()
        .zip(&scene.rirs)
        .enumerate()
        .map(|(i, (p, (h1, h2)))| {
            let run = || -> Result<DatasetRecord> {
                let sample_seed = mix_seed(cfg.run.seed, i as u64);
                let source = match &audio {
                    Some(a) => audio_segment(a, cfg.samples.source_duration, mix_seed(sample_seed, 1))?,
                    None => make_white_source(cfg.samples.source_duration, fs, mix_seed(sample_seed, 1))?,
                };
                let snr = match p.split {
                    Split::Train => cfg.signal.train_snr_db,
                    Split::Test => cfg.signal.test_snr_db,
                };
                let pair = synthesize_pair(&source, h1, h2, snr, mix_seed(sample_seed, 2))?;
                let rtf = extract_rtf(&pair, &welch, &cfg.features.band())?;
                let tdoa = gcc_tdoa(&pair, max_lag, cfg.gcc.weighting).ok();
                Ok(DatasetRecord {
                    split: p.split,
                    azimuth: p.azimuth,
                    labelled: p.labelled,
                    tdoa,
                    rtf,
                })
            };
            run().map_err(|e| e.at_azimuth(p.azimuth))
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata = DatasetMetadata {
        room_hash: sha256_json(&scene.room),
        t60: cfg.room.t60,
        train_snr_db: cfg.signal.train_snr_db,
        test_snr_db: cfg.signal.test_snr_db,
        seed: cfg.run.seed,
        rotation: scene.constellation.rotation,
        sample_rate: fs,
        fft_size: welch.fft_size,
        band,
        source: match &cfg.signal.source_wav {
            Some(path) => format!("segments of {}", path.display()),
            None => SOURCE_NOTE.to_string(),
        },
        config: serde_json::to_value(cfg).expect("serializable config"),
    };
    Dataset::new(metadata, records)
}

/// Plans, simulates and renders the scenario described by `cfg`.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let room = cfg.room_spec()?;
    let scene = build_scene(cfg, &room, sample_plan(cfg))?;
    render_dataset(cfg, &scene)
}
