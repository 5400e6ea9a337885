//! Shoebox room acoustics via the image-source method.
//!
//! Image sources are enumerated per axis: for an axis of length `L` and a
//! source coordinate `s`, the images sit at `(1 - 2q)·s + 2nL` with
//! `q ∈ {0, 1}` and integer `n`. The image reflects `|n - q|` times off the
//! wall at 0 and `|n|` times off the wall at `L`. Each arrival contributes
//! `(∏ β) / (4π r)` at delay `r / c`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cartesian position in meters, origin at a room corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point { x, y, z }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Point {
    fn from(c: [f64; 3]) -> Self {
        Point::new(c[0], c[1], c[2])
    }
}

/// How fractional arrival delays are placed on the sample grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayInterpolation {
    /// Hann-windowed sinc spanning `2 * half_width` taps.
    Sinc { half_width: usize },
    /// All energy on the nearest sample.
    Nearest,
}

impl Default for DelayInterpolation {
    fn default() -> Self {
        DelayInterpolation::Sinc { half_width: 32 }
    }
}

/// Sabine constant `24 ln(10)`; `T60 = 24 ln(10) V / (c S α)`.
const SABINE: f64 = 55.262_042_231_857_1;

/// Shoebox room plus simulator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Length, width, height in meters.
    pub dimensions: [f64; 3],
    /// Amplitude reflection factors for walls `x=0, x=Lx, y=0, y=Ly, z=0, z=Lz`.
    pub reflection: [f64; 6],
    pub speed_of_sound: f64,
    pub sample_rate: f64,
    /// Output length in samples.
    pub rir_length: usize,
    /// Optional cap on the total reflection order of image sources.
    pub max_image_order: Option<u32>,
    #[serde(default)]
    pub interpolation: DelayInterpolation,
}

impl RoomSpec {
    /// Room with uniform wall reflection realizing `t60` seconds under the
    /// default [`T60Mapping`]. The RIR length defaults to `ceil(t60 · fs)`.
    pub fn from_t60(dimensions: [f64; 3], t60: f64, sample_rate: f64, speed_of_sound: f64) -> Result<Self> {
        Self::from_t60_with(dimensions, t60, sample_rate, speed_of_sound, T60Mapping::default())
    }

    pub fn from_t60_with(
        dimensions: [f64; 3],
        t60: f64,
        sample_rate: f64,
        speed_of_sound: f64,
        mapping: T60Mapping,
    ) -> Result<Self> {
        let beta = reflection_for_t60(dimensions, t60, sample_rate, speed_of_sound, mapping)?;
        let spec = RoomSpec {
            dimensions,
            reflection: [beta; 6],
            speed_of_sound,
            sample_rate,
            rir_length: (t60 * sample_rate).ceil() as usize,
            max_image_order: None,
            interpolation: DelayInterpolation::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Anechoic room (all reflection factors zero).
    pub fn anechoic(dimensions: [f64; 3], sample_rate: f64, speed_of_sound: f64, rir_length: usize) -> Result<Self> {
        let spec = RoomSpec {
            dimensions,
            reflection: [0.0; 6],
            speed_of_sound,
            sample_rate,
            rir_length,
            max_image_order: None,
            interpolation: DelayInterpolation::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [lx, ly, lz] = self.dimensions;
        2.0 * (lx * ly + ly * lz + lx * lz)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Geometry(format!(
                "room dimensions must be positive, got {:?}",
                self.dimensions
            )));
        }
        if self.reflection.iter().any(|&b| !(0.0..=1.0).contains(&b)) {
            return Err(Error::InvalidParameter(format!(
                "reflection coefficients must lie in [0, 1], got {:?}",
                self.reflection
            )));
        }
        if !(self.sample_rate > 0.0) || !(self.speed_of_sound > 0.0) {
            return Err(Error::InvalidParameter(
                "sample rate and speed of sound must be positive".into(),
            ));
        }
        if self.rir_length == 0 {
            return Err(Error::InvalidParameter("RIR length must be at least one sample".into()));
        }
        if let DelayInterpolation::Sinc { half_width: 0 } = self.interpolation {
            return Err(Error::InvalidParameter("sinc half-width must be positive".into()));
        }
        Ok(())
    }

    /// Whether `p` lies strictly inside the room.
    pub fn contains(&self, p: &Point) -> bool {
        p.coords()
            .iter()
            .zip(self.dimensions.iter())
            .all(|(&c, &l)| c > 0.0 && c < l)
    }

    fn require_inside(&self, p: &Point, what: &str) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "{what} at ({:.4}, {:.4}, {:.4}) is not strictly inside a {:?} m room",
                p.x, p.y, p.z, self.dimensions
            )))
        }
    }
}

/// How a target reverberation time becomes a wall reflection factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T60Mapping {
    /// Closed-form inversion of Sabine's formula, uniform absorption.
    Sabine,
    /// Bisection on the uniform reflection factor until the Schroeder decay
    /// of reference responses in the same room matches the target.
    #[default]
    Calibrated,
}

/// Uniform amplitude reflection factor for a target `t60`.
pub fn reflection_for_t60(
    dimensions: [f64; 3],
    t60: f64,
    sample_rate: f64,
    speed_of_sound: f64,
    mapping: T60Mapping,
) -> Result<f64> {
    match mapping {
        T60Mapping::Sabine => sabine_reflection(dimensions, t60, speed_of_sound),
        T60Mapping::Calibrated => calibrated_reflection(dimensions, t60, sample_rate, speed_of_sound),
    }
}

/// Uniform amplitude reflection factor realizing `t60` under Sabine's formula.
pub fn sabine_reflection(dimensions: [f64; 3], t60: f64, speed_of_sound: f64) -> Result<f64> {
    if !(t60 > 0.0) {
        return Err(Error::InvalidParameter(format!("T60 must be positive, got {t60}")));
    }
    let [lx, ly, lz] = dimensions;
    let volume = lx * ly * lz;
    let surface = 2.0 * (lx * ly + ly * lz + lx * lz);
    let alpha = SABINE * volume / (speed_of_sound * surface * t60);
    if alpha > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "T60 of {t60} s is unreachable in this room (absorption {alpha:.3} > 1)"
        )));
    }
    Ok((1.0 - alpha).sqrt())
}

/// Reference source/receiver placements, as fractions of the room size.
const CALIBRATION_PAIRS: [([f64; 3], [f64; 3]); 2] = [
    ([0.35, 0.45, 0.4], [0.65, 0.6, 0.5]),
    ([0.25, 0.7, 0.6], [0.7, 0.35, 0.3]),
];

fn calibrated_reflection(dimensions: [f64; 3], t60: f64, sample_rate: f64, speed_of_sound: f64) -> Result<f64> {
    if !(t60 > 0.0) || !(sample_rate > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "T60 and sample rate must be positive, got {t60} s at {sample_rate} Hz"
        )));
    }
    let mut room = RoomSpec {
        dimensions,
        reflection: [0.0; 6],
        speed_of_sound,
        sample_rate,
        rir_length: (2.0 * t60 * sample_rate).ceil() as usize,
        max_image_order: None,
        interpolation: DelayInterpolation::Nearest,
    };
    room.validate()?;
    let pairs: Vec<(Point, Point)> = CALIBRATION_PAIRS
        .iter()
        .map(|(s, m)| {
            (
                Point::new(s[0] * dimensions[0], s[1] * dimensions[1], s[2] * dimensions[2]),
                Point::new(m[0] * dimensions[0], m[1] * dimensions[1], m[2] * dimensions[2]),
            )
        })
        .collect();

    let mut too_long = |beta: f64| -> Result<bool> {
        room.reflection = [beta; 6];
        let mut total = 0.0;
        for (s, m) in &pairs {
            match schroeder_decay(&simulate_rir(&room, s, m)?.taps, sample_rate) {
                Decay::Measured(t) => total += t,
                Decay::TooLong => return Ok(true),
                Decay::TooSteep => return Ok(false),
            }
        }
        Ok(total / pairs.len() as f64 > t60)
    };

    let (mut lo, mut hi) = (0.0f64, 0.999f64);
    if !too_long(hi)? {
        return Err(Error::InvalidParameter(format!(
            "T60 of {t60} s exceeds what the simulator reaches in this room"
        )));
    }
    while hi - lo > 1e-5 {
        let mid = 0.5 * (lo + hi);
        if too_long(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    if beta < 1e-3 {
        return Err(Error::InvalidParameter(format!(
            "T60 of {t60} s is shorter than the direct-path decay in this room"
        )));
    }
    Ok(beta)
}

enum Decay {
    Measured(f64),
    /// -25 dB not reached inside the usable part of the window.
    TooLong,
    /// Decay happens within a couple of samples.
    TooSteep,
}

/// Fraction of the window after which a -25 dB crossing is treated as a
/// truncation artifact.
const USABLE_WINDOW: f64 = 0.9;

fn schroeder_decay(taps: &[f64], sample_rate: f64) -> Decay {
    let mut edc: Vec<f64> = taps.iter().map(|t| t * t).collect();
    for i in (0..edc.len().saturating_sub(1)).rev() {
        edc[i] += edc[i + 1];
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if total <= 0.0 {
        return Decay::TooSteep;
    }
    let usable = (USABLE_WINDOW * edc.len() as f64) as usize;
    let (mut n, mut st, mut sd, mut stt, mut std) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &e) in edc.iter().enumerate().take(usable) {
        let db = 10.0 * (e / total).log10();
        if db < -25.0 {
            if n < 2.0 {
                return Decay::TooSteep;
            }
            let slope = (n * std - st * sd) / (n * stt - st * st);
            return if slope < 0.0 {
                Decay::Measured(-60.0 / slope)
            } else {
                Decay::TooSteep
            };
        }
        if db <= -5.0 {
            let t = i as f64 / sample_rate;
            n += 1.0;
            st += t;
            sd += db;
            stt += t * t;
            std += t * db;
        }
    }
    Decay::TooLong
}

/// Reverberation time from the Schroeder backward-integrated energy decay,
/// extrapolated from a least-squares line over the -5 to -25 dB range.
/// Returns `None` when the decay is too short to fit or does not reach
/// -25 dB within the first 90% of the response.
pub fn schroeder_t60(taps: &[f64], sample_rate: f64) -> Option<f64> {
    match schroeder_decay(taps, sample_rate) {
        Decay::Measured(t) => Some(t),
        _ => None,
    }
}

/// Sampled impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate: f64,
}

impl ImpulseResponse {
    /// Unit impulse (identity channel).
    pub fn identity(sample_rate: f64) -> Self {
        ImpulseResponse {
            taps: vec![1.0],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }
}

/// One image source: position relative to the receiver and its gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub offset: [f64; 3],
    pub gain: f64,
    pub order: u32,
}

impl ImageSource {
    pub fn distance(&self) -> f64 {
        let [x, y, z] = self.offset;
        (x * x + y * y + z * z).sqrt()
    }
}

struct AxisImage {
    offset: f64,
    gain: f64,
    order: u32,
}

fn axis_images(src: f64, mic: f64, len: f64, lo_wall: f64, hi_wall: f64, reach: f64) -> Vec<AxisImage> {
    let n_max = (reach / (2.0 * len)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for n in -n_max..=n_max {
        for q in 0..=1i64 {
            let offset = (1 - 2 * q) as f64 * src + 2.0 * n as f64 * len - mic;
            if offset.abs() > reach {
                continue;
            }
            let lo = (n - q).unsigned_abs() as u32;
            let hi = n.unsigned_abs() as u32;
            out.push(AxisImage {
                offset,
                gain: lo_wall.powi(lo as i32) * hi_wall.powi(hi as i32),
                order: lo + hi,
            });
        }
    }
    out
}

/// Enumerates every image source whose arrival can affect the output window,
/// honoring the optional order cap. Images with zero gain are skipped.
pub fn image_sources(room: &RoomSpec, source: &Point, mic: &Point) -> Vec<ImageSource> {
    let margin = match room.interpolation {
        DelayInterpolation::Sinc { half_width } => half_width as f64,
        DelayInterpolation::Nearest => 1.0,
    };
    let reach = (room.rir_length as f64 + margin) * room.speed_of_sound / room.sample_rate;
    let [lx, ly, lz] = room.dimensions;
    let b = room.reflection;
    let xs = axis_images(source.x, mic.x, lx, b[0], b[1], reach);
    let ys = axis_images(source.y, mic.y, ly, b[2], b[3], reach);
    let zs = axis_images(source.z, mic.z, lz, b[4], b[5], reach);
    let reach2 = reach * reach;
    let cap = room.max_image_order.unwrap_or(u32::MAX);

    let mut out = Vec::new();
    for ix in &xs {
        let dx2 = ix.offset * ix.offset;
        for iy in &ys {
            let dxy2 = dx2 + iy.offset * iy.offset;
            if dxy2 > reach2 {
                continue;
            }
            for iz in &zs {
                let order = ix.order + iy.order + iz.order;
                if order > cap || dxy2 + iz.offset * iz.offset > reach2 {
                    continue;
                }
                let gain = ix.gain * iy.gain * iz.gain;
                if gain == 0.0 {
                    continue;
                }
                out.push(ImageSource {
                    offset: [ix.offset, iy.offset, iz.offset],
                    gain,
                    order,
                });
            }
        }
    }
    out
}

/// Image-method impulse response from `source` to `mic`.
pub fn simulate_rir(room: &RoomSpec, source: &Point, mic: &Point) -> Result<ImpulseResponse> {
    room.validate()?;
    room.require_inside(source, "source")?;
    room.require_inside(mic, "microphone")?;
    if source.distance(mic) < 1e-9 {
        return Err(Error::Geometry("source and microphone coincide".into()));
    }

    let len = room.rir_length;
    let mut taps = vec![0.0; len];
    let samples_per_meter = room.sample_rate / room.speed_of_sound;

    for img in image_sources(room, source, mic) {
        let dist = img.distance();
        let amp = img.gain / (4.0 * PI * dist);
        let delay = dist * samples_per_meter;
        match room.interpolation {
            DelayInterpolation::Nearest => {
                let k = delay.round() as usize;
                if k < len {
                    taps[k] += amp;
                }
            }
            DelayInterpolation::Sinc { half_width } => add_windowed_sinc(&mut taps, delay, amp, half_width),
        }
    }

    debug_assert!(taps.iter().all(|t| t.is_finite()));
    Ok(ImpulseResponse {
        taps,
        sample_rate: room.sample_rate,
    })
}

/// Adds `amp · w(k - t) · sinc(k - t)` for taps within `half_width` of `t`.
///
/// `sin(π(k - t)) = (-1)^(k+1) sin(πt)` for integer `k`, and the Hann window
/// phase advances by a fixed step, so only a handful of trig calls are made
/// per arrival.
fn add_windowed_sinc(taps: &mut [f64], t: f64, amp: f64, half_width: usize) {
    let hw = half_width as f64;
    let first = (t - hw).floor() as i64 + 1;
    let last = (t + hw).ceil() as i64 - 1;
    let lo = first.max(0);
    let hi = last.min(taps.len() as i64 - 1);
    if lo > hi {
        return;
    }
    let sin_pt = (PI * t).sin();
    let near_integer = (t - t.round()).abs() < 1e-12;

    let step = PI / hw;
    let (step_sin, step_cos) = step.sin_cos();
    let x0 = lo as f64 - t;
    let (mut ws, mut wc) = (PI * x0 / hw).sin_cos();

    for k in lo..=hi {
        let x = k as f64 - t;
        let sinc = if near_integer {
            if k == t.round() as i64 {
                1.0
            } else {
                0.0
            }
        } else {
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            sign * sin_pt / (PI * x)
        };
        let window = 0.5 * (1.0 + wc);
        taps[k as usize] += amp * window * sinc;
        let next_c = wc * step_cos - ws * step_sin;
        ws = ws * step_cos + wc * step_sin;
        wc = next_c;
    }
}

/// Two-microphone array with sources on a circle around the first microphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    pub mic1: Point,
    /// Second microphone before rotation.
    pub mic2: Point,
    pub source_radius: f64,
    /// Azimuth range in degrees, `[low, high]`.
    pub azimuth_range: [f64; 2],
    /// Rotation of the array and source arc about mic1, degrees in `[0, 360)`.
    pub rotation: f64,
}

impl Constellation {
    pub fn validate(&self) -> Result<()> {
        if self.mic1.distance(&self.mic2) < 1e-9 {
            return Err(Error::Geometry("microphones coincide".into()));
        }
        if !(self.azimuth_range[0] < self.azimuth_range[1]) {
            return Err(Error::InvalidParameter(format!(
                "azimuth range must satisfy low < high, got {:?}",
                self.azimuth_range
            )));
        }
        if !(0.0..360.0).contains(&self.rotation) {
            return Err(Error::InvalidParameter(format!(
                "rotation must lie in [0, 360), got {}",
                self.rotation
            )));
        }
        if !(self.source_radius > 0.0) {
            return Err(Error::InvalidParameter("source radius must be positive".into()));
        }
        Ok(())
    }

    /// Checks that microphones and every source on the arc lie inside `room`.
    pub fn validate_in(&self, room: &RoomSpec) -> Result<()> {
        self.validate()?;
        room.require_inside(&self.mic1, "microphone 1")?;
        room.require_inside(&self.mic2_rotated(), "microphone 2")?;
        let [lo, hi] = self.azimuth_range;
        let steps = 360;
        for i in 0..=steps {
            let az = lo + (hi - lo) * i as f64 / steps as f64;
            self.azimuth_to_position(room, az).map_err(|e| e.at_azimuth(az))?;
        }
        Ok(())
    }

    pub fn with_rotation(&self, rotation: f64) -> Self {
        Constellation {
            rotation: rotation.rem_euclid(360.0),
            ..self.clone()
        }
    }

    /// Second microphone after rotating about mic1 in the horizontal plane.
    pub fn mic2_rotated(&self) -> Point {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let dx = self.mic2.x - self.mic1.x;
        let dy = self.mic2.y - self.mic1.y;
        Point::new(
            self.mic1.x + c * dx - s * dy,
            self.mic1.y + s * dx + c * dy,
            self.mic2.z,
        )
    }

    pub fn mic_spacing(&self) -> f64 {
        self.mic1.distance(&self.mic2)
    }

    /// Source position at `azimuth_deg` (0° along +x, counter-clockwise),
    /// offset by the rotation, at mic1's height.
    pub fn azimuth_to_position(&self, room: &RoomSpec, azimuth_deg: f64) -> Result<Point> {
        let [lo, hi] = self.azimuth_range;
        if azimuth_deg < lo - 1e-9 || azimuth_deg > hi + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "azimuth {azimuth_deg} outside range [{lo}, {hi}]"
            )));
        }
        let p = self.position_unchecked(azimuth_deg);
        room.require_inside(&p, "source")?;
        Ok(p)
    }

    pub(crate) fn position_unchecked(&self, azimuth_deg: f64) -> Point {
        let (s, c) = (azimuth_deg + self.rotation).to_radians().sin_cos();
        Point::new(
            self.mic1.x + self.source_radius * c,
            self.mic1.y + self.source_radius * s,
            self.mic1.z,
        )
    }

    /// Exact time difference of arrival, mic2 relative to mic1, in seconds.
    pub fn geometric_tdoa(&self, source: &Point, speed_of_sound: f64) -> f64 {
        (source.distance(&self.mic2_rotated()) - source.distance(&self.mic1)) / speed_of_sound
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROOM: [f64; 3] = [6.0, 6.2, 3.0];

    fn reference_constellation() -> Constellation {
        Constellation {
            mic1: Point::new(3.0, 3.0, 1.0),
            mic2: Point::new(3.2, 3.0, 1.0),
            source_radius: 2.0,
            azimuth_range: [0.0, 180.0],
            rotation: 0.0,
        }
    }

    fn anechoic_nearest(len: usize) -> RoomSpec {
        let mut room = RoomSpec::anechoic(ROOM, 16_000.0, 343.0, len).unwrap();
        room.interpolation = DelayInterpolation::Nearest;
        room
    }

    #[test]
    fn free_field_single_tap() {
        let room = anechoic_nearest(512);
        let src = Point::new(1.0, 2.0, 1.5);
        let mic = Point::new(3.0, 3.0, 1.0);
        let r = src.distance(&mic);
        let rir = simulate_rir(&room, &src, &mic).unwrap();
        let k = (16_000.0 * r / 343.0).round() as usize;
        let nonzero: Vec<usize> = (0..rir.len()).filter(|&i| rir.taps[i] != 0.0).collect();
        assert_eq!(nonzero, vec![k]);
        assert!((rir.taps[k] - 1.0 / (4.0 * PI * r)).abs() < 1e-15);
    }

    #[test]
    fn first_order_images_are_seven() {
        let mut room = RoomSpec::from_t60(ROOM, 0.3, 16_000.0, 343.0).unwrap();
        room.max_image_order = Some(1);
        let src = Point::new(1.1, 2.0, 1.4);
        let mic = Point::new(3.0, 3.0, 1.0);
        let images = image_sources(&room, &src, &mic);
        assert_eq!(images.len(), 7);
        let mut positions: Vec<[i64; 3]> = images
            .iter()
            .map(|i| i.offset.map(|c| (c * 1e6).round() as i64))
            .collect();
        positions.sort();
        positions.dedup();
        assert_eq!(positions.len(), 7);
        assert_eq!(images.iter().filter(|i| i.order == 0).count(), 1);

        room.interpolation = DelayInterpolation::Nearest;
        let rir = simulate_rir(&room, &src, &mic).unwrap();
        let events = rir.taps.iter().filter(|&&t| t != 0.0).count();
        assert_eq!(events, 7);
    }

    #[test]
    fn direct_path_is_reciprocal() {
        let room = RoomSpec::anechoic(ROOM, 16_000.0, 343.0, 400).unwrap();
        let a = Point::new(1.3, 2.1, 1.2);
        let b = Point::new(4.0, 4.4, 1.7);
        let ab = simulate_rir(&room, &a, &b).unwrap();
        let ba = simulate_rir(&room, &b, &a).unwrap();
        for (x, y) in ab.taps.iter().zip(&ba.taps) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn windowed_sinc_lands_integer_delays_exactly() {
        let mut taps = vec![0.0; 64];
        add_windowed_sinc(&mut taps, 20.0, 2.0, 8);
        assert_eq!(taps[20], 2.0);
        assert!(taps.iter().enumerate().all(|(i, &t)| i == 20 || t == 0.0));
    }

    #[test]
    fn windowed_sinc_matches_direct_evaluation() {
        let mut taps = vec![0.0; 64];
        let t = 20.37;
        add_windowed_sinc(&mut taps, t, 1.0, 8);
        for (k, &v) in taps.iter().enumerate() {
            let x = k as f64 - t;
            let expected = if x.abs() < 8.0 {
                0.5 * (1.0 + (PI * x / 8.0).cos()) * (PI * x).sin() / (PI * x)
            } else {
                0.0
            };
            assert!((v - expected).abs() < 1e-12, "tap {k}: {v} vs {expected}");
        }
    }

    #[test]
    fn outside_positions_rejected() {
        let room = RoomSpec::from_t60(ROOM, 0.3, 16_000.0, 343.0).unwrap();
        let inside = Point::new(3.0, 3.0, 1.0);
        let outside = Point::new(7.0, 3.0, 1.0);
        assert!(matches!(
            simulate_rir(&room, &outside, &inside),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            simulate_rir(&room, &inside, &Point::new(3.0, 3.0, 0.0)),
            Err(Error::Geometry(_))
        ));
        assert!(simulate_rir(&room, &inside, &inside).is_err());
    }

    #[test]
    fn zero_length_rejected() {
        let mut room = RoomSpec::from_t60(ROOM, 0.3, 16_000.0, 343.0).unwrap();
        room.rir_length = 0;
        let err = simulate_rir(&room, &Point::new(1.0, 1.0, 1.0), &Point::new(2.0, 2.0, 1.0));
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn unreachable_t60_rejected() {
        assert!(RoomSpec::from_t60_with(ROOM, 0.01, 16_000.0, 343.0, T60Mapping::Sabine).is_err());
        assert!(RoomSpec::from_t60(ROOM, 0.001, 16_000.0, 343.0).is_err());
        assert!(RoomSpec::from_t60(ROOM, -1.0, 16_000.0, 343.0).is_err());
    }

    #[test]
    fn azimuth_conventions() {
        let room = RoomSpec::from_t60(ROOM, 0.3, 16_000.0, 343.0).unwrap();
        let cons = reference_constellation();
        let p0 = cons.azimuth_to_position(&room, 0.0).unwrap();
        assert!(p0.distance(&Point::new(5.0, 3.0, 1.0)) < 1e-12);
        let p90 = cons.azimuth_to_position(&room, 90.0).unwrap();
        assert!(p90.distance(&Point::new(3.0, 5.0, 1.0)) < 1e-12);

        let rotated = cons.with_rotation(30.0);
        let a = rotated.azimuth_to_position(&room, 10.0).unwrap();
        let b = cons.azimuth_to_position(&room, 40.0).unwrap();
        assert!(a.distance(&b) < 1e-12);
        assert!(cons.azimuth_to_position(&room, 190.0).is_err());
    }

    #[test]
    fn tdoa_examples() {
        let room = RoomSpec::from_t60(ROOM, 0.3, 16_000.0, 343.0).unwrap();
        let cons = reference_constellation();
        // equidistant: on the perpendicular bisector x = 3.1
        let mid = Point::new(3.1, 4.5, 1.0);
        assert!(cons.geometric_tdoa(&mid, 343.0).abs() < 1e-15);
        // collinear beyond mic1 (on the far side from mic2)
        let endfire = Point::new(1.5, 3.0, 1.0);
        assert!((cons.geometric_tdoa(&endfire, 343.0) - 0.2 / 343.0).abs() < 1e-15);

        // hand geometry at 45 deg: source = (3 + √2, 3 + √2, 1)
        let s = cons.azimuth_to_position(&room, 45.0).unwrap();
        let r2 = 2f64.sqrt();
        let d1 = 2.0;
        let d2 = ((r2 - 0.2).powi(2) + 2.0).sqrt();
        let expected = (d2 - d1) / 343.0;
        assert!((cons.geometric_tdoa(&s, 343.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn rotation_moves_second_mic() {
        let cons = reference_constellation().with_rotation(90.0);
        let m2 = cons.mic2_rotated();
        assert!(m2.distance(&Point::new(3.0, 3.2, 1.0)) < 1e-12);
        assert!(reference_constellation().with_rotation(-30.0).rotation > 0.0);
    }

    #[test]
    fn constellation_validation() {
        let room = RoomSpec::from_t60(ROOM, 0.3, 16_000.0, 343.0).unwrap();
        let mut cons = reference_constellation();
        assert!(cons.validate_in(&room).is_ok());
        cons.source_radius = 3.5;
        assert!(cons.validate_in(&room).is_err());
        let mut cons = reference_constellation();
        cons.mic2 = cons.mic1;
        assert!(cons.validate().is_err());
        let mut cons = reference_constellation();
        cons.azimuth_range = [60.0, 10.0];
        assert!(cons.validate().is_err());
    }
}
