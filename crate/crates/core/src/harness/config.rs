use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dds::NystromOptions;
use crate::error::{Error, Result};
use crate::gcc::Weighting;
use crate::mrl::{FitOptions, RegularizationParams, DEFAULT_CADENCE, DEFAULT_GAMMA_GRID};
use crate::room::{Constellation, DelayInterpolation, Point, RoomSpec, T60Mapping};
use crate::rtf::{BandConfig, WelchParams};

use super::sha256_json;

/// Everything needed to regenerate a scenario bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub room: RoomConfig,
    pub constellation: ConstellationConfig,
    pub samples: SampleConfig,
    pub signal: SignalConfig,
    pub features: FeatureConfig,
    pub kernel: KernelSettings,
    pub mrl: MrlSettings,
    pub dds: DdsSettings,
    pub gcc: GccSettings,
    pub run: RunSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomConfig {
    pub dimensions: [f64; 3],
    pub speed_of_sound: f64,
    pub sample_rate: f64,
    /// Seconds.
    pub t60: f64,
    pub t60_mapping: T60Mapping,
    pub interpolation: DelayInterpolation,
    pub max_image_order: Option<u32>,
    /// Samples; defaults to `ceil(t60 · fs)`.
    pub rir_length: Option<usize>,
}

impl Default for RoomConfig {
    fn default() -> Self {
        RoomConfig {
            dimensions: [6.0, 6.2, 3.0],
            speed_of_sound: 343.0,
            sample_rate: 16000.0,
            t60: 0.3,
            t60_mapping: T60Mapping::default(),
            interpolation: DelayInterpolation::default(),
            max_image_order: None,
            rir_length: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstellationConfig {
    pub mic1: [f64; 3],
    pub mic2: [f64; 3],
    pub source_radius: f64,
    pub azimuth_range: [f64; 2],
    pub rotation: f64,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        ConstellationConfig {
            mic1: [3.0, 3.0, 1.0],
            mic2: [3.2, 3.0, 1.0],
            source_radius: 2.0,
            azimuth_range: [10.0, 60.0],
            rotation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Training samples, labelled included.
    pub train: usize,
    /// Labelled samples, placed on a uniform grid over the range.
    pub labelled: usize,
    pub test: usize,
    /// Source duration in seconds.
    pub source_duration: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            train: 100,
            labelled: 6,
            test: 30,
            source_duration: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub train_snr_db: f64,
    pub test_snr_db: f64,
    /// Mono WAV to cut source segments from instead of white noise. Each
    /// sample takes a segment at a seeded offset; the rate must match the room.
    pub source_wav: Option<PathBuf>,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            train_snr_db: 20.0,
            test_snr_db: 20.0,
            source_wav: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub window_s: f64,
    pub overlap: f64,
    pub fft_size: usize,
    pub min_bin: usize,
    pub max_hz: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let w = WelchParams::default();
        let b = BandConfig::default();
        FeatureConfig {
            window_s: w.window_s,
            overlap: w.overlap,
            fft_size: w.fft_size,
            min_bin: b.min_bin,
            max_hz: b.max_hz,
        }
    }
}

impl FeatureConfig {
    pub fn welch(&self) -> WelchParams {
        WelchParams {
            window_s: self.window_s,
            overlap: self.overlap,
            fft_size: self.fft_size,
        }
    }

    pub fn band(&self) -> BandConfig {
        BandConfig {
            min_bin: self.min_bin,
            max_hz: self.max_hz,
        }
    }
}

/// Kernel scales. Unset scales follow the median heuristic: the median
/// squared distance to the `num_neighbors`-th neighbor in the training set.
/// An unset `epsilon_gamma` is the median diffusion distance from the
/// unlabelled training samples to their nearest labelled one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSettings {
    pub num_neighbors: usize,
    /// Candidate neighbor counts tried by the labelled leave-one-out search;
    /// empty keeps `num_neighbors`. Candidates giving a disconnected graph
    /// are skipped.
    pub neighbor_grid: Vec<usize>,
    pub epsilon_k: Option<f64>,
    pub epsilon_w: Option<f64>,
    /// Defaults to `epsilon_w`.
    pub epsilon_b: Option<f64>,
    pub epsilon_gamma: Option<f64>,
}

impl Default for KernelSettings {
    fn default() -> Self {
        KernelSettings {
            num_neighbors: 10,
            neighbor_grid: vec![5, 7, 10],
            epsilon_k: None,
            epsilon_w: None,
            epsilon_b: None,
            epsilon_gamma: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSelection {
    Fixed,
    /// Leave-one-out over the labelled samples on the grid.
    CrossValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrlSettings {
    pub gamma_k: f64,
    pub gamma_m: f64,
    pub selection: GammaSelection,
    pub grid: Vec<f64>,
    pub center_labels: bool,
    /// Queries between refits in the sequential protocol.
    pub cadence: usize,
    /// Re-estimate kernel scales at each refit instead of freezing them.
    pub reestimate_scales: bool,
}

impl Default for MrlSettings {
    fn default() -> Self {
        let p = RegularizationParams::default();
        MrlSettings {
            gamma_k: p.gamma_k,
            gamma_m: p.gamma_m,
            selection: GammaSelection::CrossValidation,
            grid: DEFAULT_GAMMA_GRID.to_vec(),
            center_labels: true,
            cadence: DEFAULT_CADENCE,
            reestimate_scales: false,
        }
    }
}

impl MrlSettings {
    pub fn params(&self) -> RegularizationParams {
        RegularizationParams {
            gamma_k: self.gamma_k,
            gamma_m: self.gamma_m,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            center_labels: self.center_labels,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdsSettings {
    pub dimension: usize,
    pub nystrom: NystromOptions,
}

impl Default for DdsSettings {
    fn default() -> Self {
        DdsSettings {
            dimension: 1,
            nystrom: NystromOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GccSettings {
    pub weighting: Weighting,
    /// Samples; defaults to the admissible lag of the array plus two.
    pub max_lag: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mrl,
    Dds,
    Gcc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mrl, Method::Dds, Method::Gcc];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mrl => "mrl",
            Method::Dds => "dds",
            Method::Gcc => "gcc",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mrl" => Ok(Method::Mrl),
            "dds" => Ok(Method::Dds),
            "gcc" => Ok(Method::Gcc),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Concurrent sweep cells; 0 uses every available core.
    pub parallelism: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            seed: 1,
            methods: Method::ALL.to_vec(),
            parallelism: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_json(self)
    }

    /// N = 400, T = 120, 3 s sources.
    pub fn full_scale(mut self) -> Self {
        self.samples.train = 400;
        self.samples.test = 120;
        self.samples.source_duration = 3.0;
        self
    }

    /// Full-circle-half protocol: 0°–180° with 19 labelled samples.
    pub fn wide_range(mut self) -> Self {
        self.constellation.azimuth_range = [0.0, 180.0];
        self.samples.labelled = 19;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.samples;
        if s.labelled == 0 || s.train == 0 {
            return Err(Error::Config("train and labelled counts must be at least 1".into()));
        }
        if s.labelled > s.train {
            return Err(Error::Config(format!(
                "labelled count {} exceeds training count {}",
                s.labelled, s.train
            )));
        }
        if !(s.source_duration > 0.0) {
            return Err(Error::Config("source duration must be positive".into()));
        }
        if s.source_duration < self.features.window_s {
            return Err(Error::Config("source shorter than one analysis window".into()));
        }
        if self.kernel.num_neighbors == 0 {
            return Err(Error::Config("num_neighbors must be at least 1".into()));
        }
        if self.run.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.mrl.cadence == 0 {
            return Err(Error::Config("cadence must be at least 1".into()));
        }
        if self.dds.dimension == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        self.params_check()?;
        self.constellation().validate()?;
        Ok(())
    }

    fn params_check(&self) -> Result<()> {
        self.mrl.params().validate()?;
        if self.mrl.selection == GammaSelection::CrossValidation && self.mrl.grid.is_empty() {
            return Err(Error::Config("empty regularization grid".into()));
        }
        Ok(())
    }

    pub fn constellation(&self) -> Constellation {
        let c = &self.constellation;
        Constellation {
            mic1: Point::from(c.mic1),
            mic2: Point::from(c.mic2),
            source_radius: c.source_radius,
            azimuth_range: c.azimuth_range,
            rotation: c.rotation.rem_euclid(360.0),
        }
    }

    /// Resolves the reflection factor for the configured T60.
    pub fn room_spec(&self) -> Result<RoomSpec> {
        let r = &self.room;
        let mut spec = RoomSpec::from_t60_with(r.dimensions, r.t60, r.sample_rate, r.speed_of_sound, r.t60_mapping)?;
        spec.interpolation = r.interpolation;
        spec.max_image_order = r.max_image_order;
        if let Some(len) = r.rir_length {
            spec.rir_length = len;
        }
        spec.validate()?;
        Ok(spec)
    }
}
