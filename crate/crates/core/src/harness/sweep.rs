use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{Method, ScenarioConfig};
use super::evaluate::evaluate_dataset;
use super::mix_seed;
use super::scenario::{build_scene, render_dataset, sample_plan};

const ROTATION_STREAM: u64 = 0x5EED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Reverberation time in seconds.
    T60,
    /// Test SNR in dB; the training SNR stays at its configured value.
    Snr,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t60" => Ok(SweepAxis::T60),
            "snr" => Ok(SweepAxis::Snr),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    pub rotation: f64,
    pub seed: u64,
    pub dataset_hash: Option<String>,
    pub rmse: BTreeMap<Method, f64>,
    pub failed: BTreeMap<Method, String>,
    /// Set when the whole cell failed (e.g. during generation).
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub method: Method,
    /// Mean over the cells where the method succeeded.
    pub mean_rmse: Option<f64>,
    pub cells: usize,
    pub failed_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub rotations: Vec<f64>,
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
    pub seconds: f64,
}

impl SweepReport {
    pub fn mean_rmse(&self, value: f64, method: Method) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.value == value && r.method == method)
            .and_then(|r| r.mean_rmse)
    }

    /// `value,method,mean_rmse,cells,failed_cells`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,method,mean_rmse,cells,failed_cells\n");
        for r in &self.rows {
            let mean = r.mean_rmse.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{mean},{},{}\n",
                r.value,
                r.method.name(),
                r.cells,
                r.failed_cells
            ));
        }
        out
    }

    /// Whitespace-separated columns `value rmse_<method>...`; `NaN` marks gaps.
    pub fn to_gnuplot(&self) -> String {
        let methods = &self.config.run.methods;
        let mut out = format!("# {:?} sweep, rotation-averaged RMSE (deg)\n# value", self.axis);
        for m in methods {
            out.push_str(&format!(" {}", m.name()));
        }
        out.push('\n');
        for &v in &self.values {
            out.push_str(&v.to_string());
            for &m in methods {
                let cell = self
                    .mean_rmse(v, m)
                    .map(|x| x.to_string())
                    .unwrap_or_else(|| "NaN".into());
                out.push_str(&format!(" {cell}"));
            }
            out.push('\n');
        }
        out
    }

    /// Summary JSON without timings, for determinism comparisons.
    pub fn numbers(&self) -> serde_json::Value {
        serde_json::json!({ "cells": self.cells, "rows": self.rows, "rotations": self.rotations })
    }
}

/// Rotation angles in `[0, 360)` drawn from the run seed.
pub fn draw_rotations(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, ROTATION_STREAM));
    (0..count).map(|_| rng.random_range(0.0..360.0)).collect()
}

/// For every axis value and rotation: regenerate the data, run all methods,
/// record RMSE. Failing cells are kept in the report but excluded from the
/// averages. Rotation `r` uses the same seed for every axis value.
pub fn run_sweep(base: &ScenarioConfig, axis: SweepAxis, values: &[f64], rotations: usize) -> Result<SweepReport> {
    base.validate()?;
    if values.is_empty() || rotations == 0 {
        return Err(Error::Config(
            "a sweep needs at least one value and one rotation".into(),
        ));
    }
    for &v in values {
        let ok = match axis {
            SweepAxis::T60 => v > 0.0 && v.is_finite(),
            SweepAxis::Snr => !v.is_nan() && v != f64::NEG_INFINITY,
        };
        if !ok {
            return Err(Error::Config(format!("invalid {axis:?} value {v}")));
        }
    }
    let start = Instant::now();
    let angles = draw_rotations(base.run.seed, rotations);

    // rooms depend only on the axis value; calibrate each once
    let rooms: Vec<_> = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            if axis == SweepAxis::T60 {
                cfg.room.t60 = v;
            }
            cfg.room_spec().map_err(|e| e.to_string())
        })
        .collect();

    let job = |(r, &rotation): (usize, &f64)| -> Vec<SweepCell> {
        let seed = mix_seed(base.run.seed, r as u64);
        let mut cells = Vec::with_capacity(values.len());
        let mut shared_scene = None;
        for (vi, &value) in values.iter().enumerate() {
            let mut cfg = base.clone();
            cfg.constellation.rotation = rotation;
            cfg.run.seed = seed;
            match axis {
                SweepAxis::T60 => cfg.room.t60 = value,
                SweepAxis::Snr => cfg.signal.test_snr_db = value,
            }
            let mut cell = SweepCell {
                value,
                rotation,
                seed,
                dataset_hash: None,
                rmse: BTreeMap::new(),
                failed: BTreeMap::new(),
                error: None,
            };
            let outcome = (|| -> Result<_> {
                let room = rooms[vi].clone().map_err(Error::Config)?;
                let scene = match (axis, &shared_scene) {
                    (SweepAxis::Snr, Some(scene)) => scene,
                    _ => {
                        let scene = build_scene(&cfg, &room, sample_plan(&cfg))?;
                        shared_scene = Some(scene);
                        shared_scene.as_ref().expect("just set")
                    }
                };
                let ds = render_dataset(&cfg, scene)?;
                evaluate_dataset(&cfg, &ds)
            })();
            match outcome {
                Ok(report) => {
                    cell.dataset_hash = Some(report.dataset_hash.clone());
                    cell.rmse = report.methods.iter().map(|(m, r)| (*m, r.rmse)).collect();
                    cell.failed = report.failed;
                }
                Err(e) => {
                    log::warn!("sweep cell value={value} rotation={rotation:.2} failed: {e}");
                    cell.error = Some(e.to_string());
                }
            }
            cells.push(cell);
        }
        cells
    };

    let per_rotation: Vec<Vec<SweepCell>> = if base.run.parallelism == 1 {
        angles.iter().enumerate().map(job).collect()
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if base.run.parallelism > 0 {
            builder = builder.num_threads(base.run.parallelism);
        }
        let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| angles.par_iter().enumerate().map(job).collect())
    };

    // value-major order
    let mut cells = Vec::with_capacity(values.len() * rotations);
    for vi in 0..values.len() {
        for rot in &per_rotation {
            cells.push(rot[vi].clone());
        }
    }

    let mut rows = Vec::new();
    for &value in values {
        for &method in &base.run.methods {
            let here: Vec<&SweepCell> = cells.iter().filter(|c| c.value == value).collect();
            let ok: Vec<f64> = here.iter().filter_map(|c| c.rmse.get(&method).copied()).collect();
            rows.push(SweepRow {
                value,
                method,
                mean_rmse: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                cells: ok.len(),
                failed_cells: here.len() - ok.len(),
            });
        }
    }

    Ok(SweepReport {
        axis,
        values: values.to_vec(),
        rotations: angles,
        config: base.clone(),
        config_hash: base.hash(),
        cells,
        rows,
        seconds: start.elapsed().as_secs_f64(),
    })
}
