//! Two-microphone signal synthesis: `x = a1 * s + u1`, `y = a2 * s + u2`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::room::ImpulseResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    WhiteNoise,
    ExternalAudio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub kind: SourceKind,
}

impl SourceSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn scaled(&self, factor: f64) -> SourceSignal {
        SourceSignal {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            ..self.clone()
        }
    }
}

/// Signals captured at the two microphones.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrophonePair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sample_rate: f64,
}

impl MicrophonePair {
    pub fn new(x: Vec<f64>, y: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: y.len(),
            });
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "microphone signals contain non-finite samples".into(),
            ));
        }
        Ok(MicrophonePair { x, y, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Unit-variance white Gaussian source of `round(duration_s · fs)` samples.
pub fn make_white_source(duration_s: f64, sample_rate: f64, seed: u64) -> Result<SourceSignal> {
    if !(duration_s > 0.0) || !(sample_rate > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration and sample rate must be positive (got {duration_s} s at {sample_rate} Hz)"
        )));
    }
    let n = (duration_s * sample_rate).round() as usize;
    Ok(SourceSignal {
        samples: gaussian_sequence(n, &mut ChaCha8Rng::seed_from_u64(seed)),
        sample_rate,
        kind: SourceKind::WhiteNoise,
    })
}

fn gaussian_sequence(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Below this kernel length direct convolution beats the FFT route.
const DIRECT_CONV_MAX_TAPS: usize = 64;

/// Linear convolution of `signal` with `kernel`, truncated to `signal.len()`.
///
/// Long kernels go through frequency-domain overlap-add.
pub fn convolve_truncated(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    if signal.is_empty() || kernel.is_empty() {
        return vec![0.0; signal.len()];
    }
    if kernel.len() <= DIRECT_CONV_MAX_TAPS {
        return convolve_direct(signal, kernel);
    }
    overlap_add(signal, kernel)
}

pub(crate) fn convolve_direct(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let k_hi = kernel.len().min(i + 1);
        *o = (0..k_hi).map(|k| kernel[k] * signal[i - k]).sum();
    }
    out
}

fn overlap_add(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let m = kernel.len();
    let fft_len = (2 * m).next_power_of_two().max(1024);
    let block = fft_len - m + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);

    let mut kernel_spec: Vec<Complex64> = kernel.iter().map(|&k| Complex64::new(k, 0.0)).collect();
    kernel_spec.resize(fft_len, Complex64::new(0.0, 0.0));
    fwd.process(&mut kernel_spec);

    let scale = 1.0 / fft_len as f64;
    let mut out = vec![0.0; n];
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
    let mut start = 0;
    while start < n {
        let end = (start + block).min(n);
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for (b, &s) in buf.iter_mut().zip(&signal[start..end]) {
            b.re = s;
        }
        fwd.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&kernel_spec) {
            *b *= k;
        }
        inv.process(&mut buf);
        for (i, b) in buf.iter().enumerate() {
            let idx = start + i;
            if idx >= n {
                break;
            }
            out[idx] += b.re * scale;
        }
        start = end;
    }
    out
}

/// Convolves the source with both responses and adds white Gaussian noise
/// so that each channel's reverberant-signal SNR equals `snr_db` exactly.
///
/// `snr_db = +inf` disables the noise. Both noise channels come from one
/// ChaCha stream seeded with `noise_seed`.
pub fn synthesize_pair(
    source: &SourceSignal,
    a1: &ImpulseResponse,
    a2: &ImpulseResponse,
    snr_db: f64,
    noise_seed: u64,
) -> Result<MicrophonePair> {
    for rate in [a1.sample_rate, a2.sample_rate] {
        if (rate - source.sample_rate).abs() > 1e-9 {
            return Err(Error::SampleRateMismatch(source.sample_rate, rate));
        }
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::InvalidParameter(format!(
            "SNR must be finite or +inf, got {snr_db}"
        )));
    }
    if source.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("source contains non-finite samples".into()));
    }
    if source.energy() == 0.0 {
        return Err(Error::ZeroEnergy);
    }

    let mut x = convolve_truncated(&source.samples, &a1.taps);
    let mut y = convolve_truncated(&source.samples, &a2.taps);

    if snr_db.is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let u1 = gaussian_sequence(x.len(), &mut rng);
        let u2 = gaussian_sequence(y.len(), &mut rng);
        add_scaled_noise(&mut x, &u1, snr_db);
        add_scaled_noise(&mut y, &u2, snr_db);
    }
    MicrophonePair::new(x, y, source.sample_rate)
}

fn add_scaled_noise(clean: &mut [f64], noise: &[f64], snr_db: f64) {
    let clean_power: f64 = clean.iter().map(|v| v * v).sum();
    let noise_power: f64 = noise.iter().map(|v| v * v).sum();
    if noise_power == 0.0 {
        return;
    }
    let gain = (clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt();
    for (c, n) in clean.iter_mut().zip(noise) {
        *c += gain * n;
    }
}
