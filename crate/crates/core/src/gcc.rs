//! Generalized cross-correlation TDOA estimation and near-field conversion
//! of a TDOA to an azimuth on the source circle.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::median;
use crate::room::Constellation;
use crate::synth::MicrophonePair;

/// Minimum ratio of the correlation peak to the median magnitude.
pub const MIN_PEAK_RATIO: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    None,
    Phat,
}

/// Cross-correlation over lags `-max_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFunction {
    pub values: Vec<f64>,
    pub max_lag: usize,
    pub sample_rate: f64,
}

impl CorrelationFunction {
    pub fn at(&self, lag: isize) -> f64 {
        self.values[(lag + self.max_lag as isize) as usize]
    }

    /// Fractional lag of the highest value, parabolically refined.
    pub fn peak(&self) -> Result<f64> {
        let (idx, &top) = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .ok_or(Error::Empty("correlation"))?;
        let mut mags: Vec<f64> = self.values.iter().map(|v| v.abs()).collect();
        let med = median(&mut mags);
        let ratio = top / med;
        if !(top > 0.0) || ratio.is_nan() || ratio < MIN_PEAK_RATIO {
            return Err(Error::NoPeak { ratio });
        }
        let mut lag = idx as f64 - self.max_lag as f64;
        if idx > 0 && idx + 1 < self.values.len() {
            let (a, b, c) = (self.values[idx - 1], top, self.values[idx + 1]);
            let denom = a - 2.0 * b + c;
            if denom < 0.0 {
                lag += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            }
        }
        Ok(lag)
    }
}

/// Correlation `r(τ) = Σ_n x(n) y(n + τ)`, so `y(n) = x(n − 5)` peaks at +5.
pub fn cross_correlation(pair: &MicrophonePair, max_lag: usize, weighting: Weighting) -> Result<CorrelationFunction> {
    let len = pair.x.len();
    if len == 0 || max_lag >= len {
        return Err(Error::SignalTooShort {
            len,
            needed: max_lag + 1,
        });
    }
    let nfft = (len + max_lag).next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(nfft);
    let inverse = planner.plan_fft_inverse(nfft);
    let spectrum = |s: &[f64]| {
        let mut buf: Vec<Complex64> = s.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(nfft, Complex64::new(0.0, 0.0));
        forward.process(&mut buf);
        buf
    };
    let xs = spectrum(&pair.x);
    let ys = spectrum(&pair.y);
    let mut cross: Vec<Complex64> = xs.iter().zip(&ys).map(|(x, y)| x.conj() * y).collect();
    if weighting == Weighting::Phat {
        let peak = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let floor = peak * 1e-12;
        for c in cross.iter_mut() {
            let m = c.norm();
            *c = if m > floor { *c / m } else { Complex64::new(0.0, 0.0) };
        }
    }
    inverse.process(&mut cross);
    let scale = 1.0 / nfft as f64;
    let values = (-(max_lag as isize)..=max_lag as isize)
        .map(|lag| cross[lag.rem_euclid(nfft as isize) as usize].re * scale)
        .collect();
    Ok(CorrelationFunction {
        values,
        max_lag,
        sample_rate: pair.sample_rate,
    })
}

/// TDOA in seconds; positive when `y` lags `x`.
pub fn gcc_tdoa(pair: &MicrophonePair, max_lag: usize, weighting: Weighting) -> Result<f64> {
    let corr = cross_correlation(pair, max_lag, weighting)?;
    Ok(corr.peak()? / pair.sample_rate)
}

/// Smallest lag window covering every physical delay of the array.
pub fn admissible_max_lag(mic_spacing: f64, speed_of_sound: f64, sample_rate: f64) -> usize {
    (sample_rate * mic_spacing / speed_of_sound).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AzimuthEstimate {
    /// Degrees in `[0, 180]`, measured from the mic1→mic2 axis.
    pub azimuth: f64,
    /// The TDOA fell outside the admissible interval and was clamped.
    pub clamped: bool,
}

/// Inverts `c τ = |s − m2| − |s − m1|` for a source on the circle of radius
/// `source_radius` around mic1, with mic2 at distance `mic_spacing` on the
/// zero-azimuth axis.
pub fn tdoa_to_azimuth(
    tdoa: f64,
    mic_spacing: f64,
    source_radius: f64,
    speed_of_sound: f64,
) -> Result<AzimuthEstimate> {
    for (name, v) in [
        ("mic spacing", mic_spacing),
        ("source radius", source_radius),
        ("speed of sound", speed_of_sound),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    if !tdoa.is_finite() {
        return Err(Error::InvalidParameter(format!("tdoa must be finite, got {tdoa}")));
    }
    let (r, s) = (source_radius, mic_spacing);
    let lo = (r - s).abs() - r;
    let hi = s;
    let diff = tdoa * speed_of_sound;
    let clamped = diff < lo || diff > hi;
    if clamped {
        log::warn!("tdoa {tdoa} s outside the admissible range; clamping");
    }
    let r2 = r + diff.clamp(lo, hi);
    let cos = ((r * r + s * s - r2 * r2) / (2.0 * r * s)).clamp(-1.0, 1.0);
    Ok(AzimuthEstimate {
        azimuth: cos.acos().to_degrees(),
        clamped,
    })
}

/// Azimuth relative to the constellation's zero direction. When mic2 is off
/// the zero axis both mirror solutions are considered and the one inside
/// (or nearest) the azimuth range is returned.
pub fn constellation_azimuth(cons: &Constellation, tdoa: f64, speed_of_sound: f64) -> Result<AzimuthEstimate> {
    let est = tdoa_to_azimuth(tdoa, cons.mic_spacing(), cons.source_radius, speed_of_sound)?;
    let axis = (cons.mic2.y - cons.mic1.y)
        .atan2(cons.mic2.x - cons.mic1.x)
        .to_degrees();
    if axis == 0.0 {
        return Ok(est);
    }
    let [lo, hi] = cons.azimuth_range;
    let outside = |a: f64| {
        let a = wrap_degrees(a, lo);
        if a > hi {
            a - hi
        } else {
            0.0
        }
    };
    let candidates = [axis + est.azimuth, axis - est.azimuth];
    let best = candidates
        .iter()
        .copied()
        .min_by(|a, b| outside(*a).total_cmp(&outside(*b)))
        .unwrap_or(candidates[0]);
    Ok(AzimuthEstimate {
        azimuth: wrap_degrees(best, lo),
        clamped: est.clamped,
    })
}

fn wrap_degrees(a: f64, base: f64) -> f64 {
    base + (a - base).rem_euclid(360.0)
}
