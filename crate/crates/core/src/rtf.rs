//! Relative transfer function features estimated from Welch spectra.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::MicrophonePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Auto,
    Cross,
}

/// Segment-averaged spectrum on the full `fft_size`-point grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub values: Vec<Complex64>,
    pub kind: SpectrumKind,
    pub window_length: usize,
    pub overlap: f64,
    pub num_segments: usize,
}

impl SpectralEstimate {
    pub fn fft_size(&self) -> usize {
        self.values.len()
    }
}

/// Welch analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchParams {
    /// Segment length in seconds.
    pub window_s: f64,
    /// Fractional overlap between consecutive segments, in `[0, 1)`.
    pub overlap: f64,
    /// Transform size; segments shorter than this are zero-padded.
    pub fft_size: usize,
}

impl Default for WelchParams {
    fn default() -> Self {
        WelchParams {
            window_s: 0.128,
            overlap: 0.75,
            fft_size: 2048,
        }
    }
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Welch auto-spectrum of `x` and cross-spectrum `E[Y X*]` of `y` with `x`.
///
/// Both are scaled as densities (`1 / (fs Σ w²)`), which cancels in the RTF.
pub fn welch_spectra(pair: &MicrophonePair, params: &WelchParams) -> Result<(SpectralEstimate, SpectralEstimate)> {
    let WelchParams {
        window_s,
        overlap,
        fft_size,
    } = *params;
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidParameter(format!(
            "overlap must lie in [0, 1), got {overlap}"
        )));
    }
    let win_len = (window_s * pair.sample_rate).round() as usize;
    if win_len == 0 || win_len > fft_size {
        return Err(Error::InvalidParameter(format!(
            "window of {win_len} samples must be between 1 and the transform size {fft_size}"
        )));
    }
    if pair.len() < win_len {
        return Err(Error::SignalTooShort {
            len: pair.len(),
            needed: win_len,
        });
    }
    let hop = (((1.0 - overlap) * win_len as f64).round() as usize).max(1);
    let window = hann(win_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);

    let zero = Complex64::new(0.0, 0.0);
    let mut sxx = vec![zero; fft_size];
    let mut syx = vec![zero; fft_size];
    let mut xbuf = vec![zero; fft_size];
    let mut ybuf = vec![zero; fft_size];
    let mut segments = 0usize;
    let mut start = 0usize;
    while start + win_len <= pair.len() {
        for i in 0..fft_size {
            if i < win_len {
                xbuf[i] = Complex64::new(window[i] * pair.x[start + i], 0.0);
                ybuf[i] = Complex64::new(window[i] * pair.y[start + i], 0.0);
            } else {
                xbuf[i] = zero;
                ybuf[i] = zero;
            }
        }
        fft.process(&mut xbuf);
        fft.process(&mut ybuf);
        for k in 0..fft_size {
            sxx[k].re += xbuf[k].norm_sqr();
            syx[k] += ybuf[k] * xbuf[k].conj();
        }
        segments += 1;
        start += hop;
    }

    let scale = 1.0 / (segments as f64 * pair.sample_rate * window.iter().map(|w| w * w).sum::<f64>());
    for v in sxx.iter_mut().chain(syx.iter_mut()) {
        *v *= scale;
    }
    let make = |values, kind| SpectralEstimate {
        values,
        kind,
        window_length: win_len,
        overlap,
        num_segments: segments,
    };
    Ok((make(sxx, SpectrumKind::Auto), make(syx, SpectrumKind::Cross)))
}

/// Frequency band retained in the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    /// First retained bin (1 excludes DC).
    pub min_bin: usize,
    /// Highest retained frequency in Hz.
    pub max_hz: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        BandConfig {
            min_bin: 1,
            max_hz: 4000.0,
        }
    }
}

impl BandConfig {
    /// Bins `min_bin ..= bin nearest max_hz`, capped at Nyquist.
    pub fn bins(&self, sample_rate: f64, fft_size: usize) -> Result<Vec<usize>> {
        let top = ((self.max_hz * fft_size as f64 / sample_rate).round() as usize).min(fft_size / 2);
        if self.min_bin > top {
            return Err(Error::InvalidParameter(format!(
                "empty band: first bin {} above last bin {top}",
                self.min_bin
            )));
        }
        Ok((self.min_bin..=top).collect())
    }
}

/// Relative floor on the auto-spectrum inside the band.
pub const DEFAULT_PSD_FLOOR: f64 = 1e-12;

/// Complex RTF values on a band of transform bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RtfVector {
    pub values: Vec<Complex64>,
    pub band: Vec<usize>,
    pub fft_size: usize,
}

impl RtfVector {
    pub fn new(values: Vec<Complex64>, band: Vec<usize>, fft_size: usize) -> Result<Self> {
        if values.len() != band.len() {
            return Err(Error::DimensionMismatch {
                expected: band.len(),
                actual: values.len(),
            });
        }
        if band.windows(2).any(|w| w[0] >= w[1]) || band.last().is_some_and(|&b| b > fft_size / 2) {
            return Err(Error::InvalidParameter(
                "band bins must be strictly increasing and within [0, D/2]".into(),
            ));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidParameter("RTF contains non-finite values".into()));
        }
        Ok(RtfVector { values, band, fft_size })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_band(&self, other: &RtfVector) -> bool {
        self.fft_size == other.fft_size && self.band == other.band
    }

    /// `[re0, im0, re1, im1, ...]`.
    pub fn to_real_interleaved(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| [v.re, v.im]).collect()
    }
}

/// Element-wise `Syx / Sxx` on `band`, with the default degenerate-bin floor.
pub fn estimate_rtf(sxx: &SpectralEstimate, syx: &SpectralEstimate, band: &[usize]) -> Result<RtfVector> {
    estimate_rtf_with_floor(sxx, syx, band, DEFAULT_PSD_FLOOR)
}

/// As [`estimate_rtf`]; bins whose auto-spectrum falls below
/// `rel_floor × band mean` are reported as degenerate.
pub fn estimate_rtf_with_floor(
    sxx: &SpectralEstimate,
    syx: &SpectralEstimate,
    band: &[usize],
    rel_floor: f64,
) -> Result<RtfVector> {
    let d = sxx.fft_size();
    if syx.fft_size() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: syx.fft_size(),
        });
    }
    if band.is_empty() {
        return Err(Error::Empty("frequency band"));
    }
    if let Some(&bad) = band.iter().find(|&&b| b >= d) {
        return Err(Error::InvalidParameter(format!(
            "band bin {bad} outside transform of size {d}"
        )));
    }
    let mean = band.iter().map(|&k| sxx.values[k].re).sum::<f64>() / band.len() as f64;
    let floor = rel_floor * mean;
    let degenerate: Vec<usize> = band
        .iter()
        .copied()
        .filter(|&k| !(sxx.values[k].re > floor) || sxx.values[k].re <= 0.0)
        .collect();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateBins { bins: degenerate });
    }
    let values = band.iter().map(|&k| syx.values[k] / sxx.values[k].re).collect();
    RtfVector::new(values, band.to_vec(), d)
}

/// Euclidean norm of the complex difference.
pub fn rtf_distance(a: &RtfVector, b: &RtfVector) -> Result<f64> {
    Ok(squared_distance(a, b)?.sqrt())
}

pub fn squared_distance(a: &RtfVector, b: &RtfVector) -> Result<f64> {
    if !a.same_band(b) {
        return Err(Error::BandMismatch);
    }
    Ok(a.values.iter().zip(&b.values).map(|(u, v)| (u - v).norm_sqr()).sum())
}

/// Full pipeline for one microphone pair.
pub fn extract_rtf(pair: &MicrophonePair, params: &WelchParams, band: &BandConfig) -> Result<RtfVector> {
    let (sxx, syx) = welch_spectra(pair, params)?;
    let bins = band.bins(pair.sample_rate, params.fft_size)?;
    estimate_rtf(&sxx, &syx, &bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_white_source;
    use std::f64::consts::PI;

    const FS: f64 = 16_000.0;

    fn pair(x: Vec<f64>, y: Vec<f64>) -> MicrophonePair {
        MicrophonePair::new(x, y, FS).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn white_noise_psd_is_flat() {
        // overlapping Hann segments are correlated; 30 s keeps the worst of
        // ~1000 bins inside the band
        let s = make_white_source(30.0, FS, 4).unwrap();
        let p = pair(s.samples.clone(), s.samples);
        let (sxx, _) = welch_spectra(&p, &WelchParams::default()).unwrap();
        assert!(sxx.num_segments >= 90);
        let bins = 1..1024;
        let mean = bins.clone().map(|k| sxx.values[k].re).sum::<f64>() / 1023.0;
        for k in bins {
            let dev = (sxx.values[k].re / mean - 1.0).abs();
            assert!(dev < 0.2, "bin {k} deviates {dev}");
        }
    }

    #[test]
    fn sinusoid_peaks_at_its_bin() {
        let k0 = 100;
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * PI * k0 as f64 * n as f64 / 2048.0).sin())
            .collect();
        let (sxx, _) = welch_spectra(&pair(x.clone(), x), &WelchParams::default()).unwrap();
        let argmax = (0..=1024)
            .max_by(|&a, &b| sxx.values[a].re.total_cmp(&sxx.values[b].re))
            .unwrap();
        assert_eq!(argmax, k0);
    }

    #[test]
    fn identical_channels_give_unit_rtf() {
        let s = make_white_source(1.0, FS, 2).unwrap();
        let p = pair(s.samples.clone(), s.samples);
        let (sxx, syx) = welch_spectra(&p, &WelchParams::default()).unwrap();
        assert_eq!(sxx.values, syx.values);
        let band = BandConfig::default().bins(FS, 2048).unwrap();
        let h = estimate_rtf(&sxx, &syx, &band).unwrap();
        assert!(h.values.iter().all(|v| *v == c(1.0, 0.0)));
        assert_eq!(h.band.first(), Some(&1));
        assert_eq!(h.band.last(), Some(&512));
    }

    /// Periodic flat-magnitude multisine (DC included): the Hann leakage
    /// terms cancel when segment starts cover all four hop residues equally.
    #[test]
    fn pure_delay_gives_linear_phase() {
        let d = 2048;
        let mut spectrum = vec![c(0.0, 0.0); d];
        let mut phase = 0.3f64;
        for k in 1..d / 2 {
            phase = (phase * 7.13 + 1.7).rem_euclid(2.0 * PI);
            spectrum[k] = Complex64::from_polar(1.0, phase);
            spectrum[d - k] = spectrum[k].conj();
        }
        spectrum[0] = c(1.0, 0.0);
        spectrum[d / 2] = c(1.0, 0.0);
        let mut period = spectrum.clone();
        FftPlanner::<f64>::new().plan_fft_inverse(d).process(&mut period);
        let period: Vec<f64> = period.iter().map(|v| v.re / d as f64).collect();

        let n0 = 5usize;
        let len = 2048 + 512 * 27;
        let x: Vec<f64> = (0..len).map(|n| period[n % d]).collect();
        let y: Vec<f64> = (0..len).map(|n| period[(n + d - n0) % d]).collect();
        let (sxx, syx) = welch_spectra(&pair(x, y), &WelchParams::default()).unwrap();
        assert_eq!(sxx.num_segments % 4, 0);
        let band: Vec<usize> = (1..=512).collect();
        let h = estimate_rtf(&sxx, &syx, &band).unwrap();
        for (v, &k) in h.values.iter().zip(&h.band) {
            let expected = -2.0 * PI * (k * n0) as f64 / d as f64;
            let err = (v.arg() - expected + PI).rem_euclid(2.0 * PI) - PI;
            assert!(err.abs() < 1e-6, "bin {k}: phase error {err}");
        }
    }

    #[test]
    fn conjugate_symmetric_on_full_grid() {
        let s = make_white_source(0.5, FS, 8).unwrap();
        let y: Vec<f64> = s
            .samples
            .iter()
            .enumerate()
            .map(|(i, v)| v * 0.5 + (i as f64).sin())
            .collect();
        let (sxx, syx) = welch_spectra(&pair(s.samples.clone(), y), &WelchParams::default()).unwrap();
        for k in 1..1024 {
            let h = syx.values[k] / sxx.values[k].re;
            let mirror = syx.values[2048 - k] / sxx.values[2048 - k].re;
            assert!((h - mirror.conj()).norm() <= 1e-9 * (1.0 + h.norm()));
        }
    }

    #[test]
    fn degenerate_bins_reported() {
        let mut sxx = SpectralEstimate {
            values: vec![c(1.0, 0.0); 16],
            kind: SpectrumKind::Auto,
            window_length: 16,
            overlap: 0.5,
            num_segments: 1,
        };
        sxx.values[3] = c(0.0, 0.0);
        sxx.values[5] = c(1e-20, 0.0);
        let syx = SpectralEstimate {
            kind: SpectrumKind::Cross,
            ..sxx.clone()
        };
        match estimate_rtf(&sxx, &syx, &[1, 2, 3, 4, 5]) {
            Err(Error::DegenerateBins { bins }) => assert_eq!(bins, vec![3, 5]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_signal_rejected() {
        let p = pair(vec![0.1; 1000], vec![0.1; 1000]);
        assert!(matches!(
            welch_spectra(&p, &WelchParams::default()),
            Err(Error::SignalTooShort { .. })
        ));
        let bad = WelchParams {
            overlap: 1.0,
            ..WelchParams::default()
        };
        assert!(welch_spectra(&pair(vec![0.1; 4000], vec![0.1; 4000]), &bad).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = RtfVector::new(vec![c(1.0, 0.0)], vec![3], 16).unwrap();
        let b = RtfVector::new(vec![c(-1.0, 0.0)], vec![3], 16).unwrap();
        assert_eq!(rtf_distance(&a, &b).unwrap(), 2.0);
        assert_eq!(rtf_distance(&b, &a).unwrap(), 2.0);
        assert_eq!(rtf_distance(&a, &a).unwrap(), 0.0);
        let other = RtfVector::new(vec![c(1.0, 0.0)], vec![4], 16).unwrap();
        assert!(matches!(rtf_distance(&a, &other), Err(Error::BandMismatch)));
    }

    #[test]
    fn interleaved_view_preserves_distance() {
        let a = RtfVector::new(vec![c(1.0, 2.0), c(-0.5, 0.25)], vec![1, 2], 8).unwrap();
        let b = RtfVector::new(vec![c(0.0, 1.0), c(0.5, -1.0)], vec![1, 2], 8).unwrap();
        let ra = a.to_real_interleaved();
        let rb = b.to_real_interleaved();
        let real: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!((real - rtf_distance(&a, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn band_validation() {
        assert!(RtfVector::new(vec![c(1.0, 0.0); 2], vec![2, 1], 8).is_err());
        assert!(RtfVector::new(vec![c(1.0, 0.0)], vec![5], 8).is_err());
        assert!(BandConfig {
            min_bin: 600,
            max_hz: 4000.0
        }
        .bins(FS, 2048)
        .is_err());
    }
}
