//! WAV and raw binary I/O for sources, microphone pairs and impulse responses.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::room::ImpulseResponse;
use crate::synth::{MicrophonePair, SourceKind, SourceSignal};

/// Sample rates accepted when ingesting audio.
pub const SUPPORTED_RATES: std::ops::RangeInclusive<u32> = 8_000..=192_000;

/// Reads a mono WAV and rescales it to unit RMS.
pub fn load_audio_source(path: &Path) -> Result<SourceSignal> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "expected a single-channel file, found {} channels",
            spec.channels
        )));
    }
    if !SUPPORTED_RATES.contains(&spec.sample_rate) {
        return Err(Error::Format(format!(
            "unsupported sample rate {} Hz",
            spec.sample_rate
        )));
    }
    let samples = read_samples(reader)?;
    let energy: f64 = samples.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let scale = (samples.len() as f64 / energy).sqrt();
    Ok(SourceSignal {
        samples: samples.iter().map(|v| v * scale).collect(),
        sample_rate: spec.sample_rate as f64,
        kind: SourceKind::ExternalAudio,
    })
}

fn read_samples<R: Read>(reader: WavReader<R>) -> Result<Vec<f64>> {
    let spec = reader.spec();
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().map(|s| Ok(s? as f64)).collect(),
        (SampleFormat::Int, bits @ 8..=32) => {
            let full = (1i64 << (bits - 1)) as f64;
            reader.into_samples::<i32>().map(|s| Ok(s? as f64 / full)).collect()
        }
        (format, bits) => Err(Error::Format(format!("unsupported encoding {format:?} {bits}-bit"))),
    }
}

fn float_spec(channels: u16, sample_rate: f64) -> Result<WavSpec> {
    if !(sample_rate >= 1.0 && sample_rate.fract() == 0.0 && sample_rate <= u32::MAX as f64) {
        return Err(Error::Format(format!(
            "WAV needs an integer sample rate, got {sample_rate}"
        )));
    }
    Ok(WavSpec {
        channels,
        sample_rate: sample_rate as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    })
}

fn write_interleaved(path: &Path, spec: WavSpec, frames: impl Iterator<Item = f64>) -> Result<()> {
    let mut writer = WavWriter::create(path, spec)?;
    for v in frames {
        writer.write_sample(v as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Mono 32-bit float WAV.
pub fn write_source_wav(path: &Path, source: &SourceSignal) -> Result<()> {
    write_interleaved(path, float_spec(1, source.sample_rate)?, source.samples.iter().copied())
}

pub fn write_rir_wav(path: &Path, rir: &ImpulseResponse) -> Result<()> {
    write_interleaved(path, float_spec(1, rir.sample_rate)?, rir.taps.iter().copied())
}

/// Stereo 32-bit float WAV, mic 1 on the left.
pub fn write_pair_wav(path: &Path, pair: &MicrophonePair) -> Result<()> {
    let frames = pair.x.iter().zip(&pair.y).flat_map(|(&a, &b)| [a, b]);
    write_interleaved(path, float_spec(2, pair.sample_rate)?, frames)
}

pub fn read_pair_wav(path: &Path) -> Result<MicrophonePair> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 2 {
        return Err(Error::Format(format!("expected two channels, found {}", spec.channels)));
    }
    let samples = read_samples(reader)?;
    let x = samples.iter().step_by(2).copied().collect();
    let y = samples.iter().skip(1).step_by(2).copied().collect();
    MicrophonePair::new(x, y, spec.sample_rate as f64)
}

/// Little-endian `f64 sample_rate`, `u64 length`, then `length` f64 taps.
pub fn write_rir_binary(path: &Path, rir: &ImpulseResponse) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&rir.sample_rate.to_le_bytes())?;
    w.write_all(&(rir.taps.len() as u64).to_le_bytes())?;
    for t in &rir.taps {
        w.write_all(&t.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rir_binary(path: &Path) -> Result<ImpulseResponse> {
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let sample_rate = f64::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let len = u64::from_le_bytes(word) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(Error::Format(format!(
            "header announces {len} taps but {} bytes follow",
            bytes.len()
        )));
    }
    let taps = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(ImpulseResponse { taps, sample_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_white_source;

    #[test]
    fn wav_source_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for i in 0..1000 {
            w.write_sample(((i as f64 * 0.1).sin() * 3000.0) as i16).unwrap();
        }
        w.finalize().unwrap();
        let s = load_audio_source(&path).unwrap();
        assert_eq!(s.samples.len(), 1000);
        assert_eq!(s.sample_rate, 16000.0);
        let rms = (s.energy() / 1000.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-6);
    }

    #[test]
    fn silence_and_stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let silent = dir.path().join("z.wav");
        write_source_wav(
            &silent,
            &SourceSignal {
                samples: vec![0.0; 100],
                sample_rate: 16000.0,
                kind: SourceKind::ExternalAudio,
            },
        )
        .unwrap();
        assert!(matches!(load_audio_source(&silent), Err(Error::ZeroEnergy)));
        let stereo = dir.path().join("p.wav");
        let pair = MicrophonePair::new(vec![0.5; 10], vec![-0.25; 10], 16000.0).unwrap();
        write_pair_wav(&stereo, &pair).unwrap();
        assert!(matches!(load_audio_source(&stereo), Err(Error::Format(_))));
        assert_eq!(read_pair_wav(&stereo).unwrap(), pair);
        assert!(load_audio_source(&dir.path().join("missing.wav")).is_err());
    }

    #[test]
    fn float_wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let src = make_white_source(0.1, 16000.0, 3).unwrap();
        write_source_wav(&path, &src).unwrap();
        let back = load_audio_source(&path).unwrap();
        let scale = (src.samples.len() as f64 / src.energy()).sqrt();
        for (a, b) in src.samples.iter().zip(&back.samples) {
            assert!((a * scale - b).abs() < 1e-6 * scale.max(1.0) * 4.0);
        }
    }

    #[test]
    fn rir_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.bin");
        let rir = ImpulseResponse {
            taps: vec![0.0, 1.0, -0.5, 1e-300],
            sample_rate: 16000.0,
        };
        write_rir_binary(&path, &rir).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 32);
        assert_eq!(read_rir_binary(&path).unwrap(), rir);
        std::fs::write(&path, [0u8; 20]).unwrap();
        assert!(read_rir_binary(&path).is_err());
        write_rir_wav(&dir.path().join("h.wav"), &rir).unwrap();
    }
}
