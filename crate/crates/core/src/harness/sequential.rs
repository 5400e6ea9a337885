use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Split;
use crate::error::{Error, Result};
use crate::graph::{adjacency_from_distances, build_laplacian, gram_from_distances, DistanceMatrix, KernelConfig};
use crate::mrl::{adapt, fit_with, FitOptions, MrlModel, RegularizationParams, TrainingSet};

use super::config::{GammaSelection, ScenarioConfig};
use super::evaluate::{choose_params, select_kernel};
use super::scenario::{build_scene, render_dataset, sample_plan, SamplePlan};
use super::{evaluate_rmse, mix_seed};

const CYCLE_STREAM: u64 = 0xC7C1E;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialReport {
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub cycles: usize,
    pub batch: usize,
    /// RMSE of each cycle's batch, localized before adapting on it.
    pub rmse: Vec<f64>,
    /// Training-set size used to localize each batch.
    pub training_sizes: Vec<usize>,
    pub kernel: KernelConfig,
    /// Regularization used to localize each batch.
    pub params: Vec<RegularizationParams>,
    /// Set when adaptation failed and the series is partial.
    pub error: Option<String>,
}

impl SequentialReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,training_size,rmse\n");
        for (i, (r, n)) in self.rmse.iter().zip(&self.training_sizes).enumerate() {
            out.push_str(&format!("{},{n},{r}\n", i + 1));
        }
        out
    }

    pub fn to_gnuplot(&self) -> String {
        let mut out = String::from("# cycle rmse_deg\n");
        for (i, r) in self.rmse.iter().enumerate() {
            out.push_str(&format!("{} {r}\n", i + 1));
        }
        out
    }
}

/// Starts from the configured training set (labelled grid plus any
/// unlabelled pool), then per cycle localizes `batch` fresh samples, records
/// their RMSE and adapts on them as unlabelled data. With cross-validated
/// regularization the weights are re-selected on every enlarged graph.
pub fn run_sequential(cfg: &ScenarioConfig, cycles: usize, batch: usize) -> Result<SequentialReport> {
    cfg.validate()?;
    if cycles == 0 || batch == 0 {
        return Err(Error::Config("cycles and batch must be at least 1".into()));
    }
    let room = cfg.room_spec()?;
    let mut initial_cfg = cfg.clone();
    initial_cfg.samples.test = 0;
    let initial = render_dataset(
        &initial_cfg,
        &build_scene(&initial_cfg, &room, sample_plan(&initial_cfg))?,
    )?;
    let mut train = initial.training_set()?;

    let dist = DistanceMatrix::from_samples(&train.samples)?;
    let mut kernel = select_kernel(cfg, &train, &dist)?;
    let options = cfg.mrl.fit_options();
    let (mut model, mut params) = refit(cfg, &train, &dist, &kernel, &options)?;

    let [lo, hi] = cfg.constellation.azimuth_range;
    let mut report = SequentialReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        cycles,
        batch,
        rmse: Vec::with_capacity(cycles),
        training_sizes: Vec::with_capacity(cycles),
        kernel,
        params: Vec::with_capacity(cycles),
        error: None,
    };
    for cycle in 0..cycles {
        let mut batch_cfg = cfg.clone();
        batch_cfg.run.seed = mix_seed(cfg.run.seed, CYCLE_STREAM + cycle as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(batch_cfg.run.seed);
        let plan: Vec<SamplePlan> = (0..batch)
            .map(|_| SamplePlan {
                azimuth: rng.random_range(lo..=hi),
                split: Split::Test,
                labelled: false,
            })
            .collect();
        let ds = render_dataset(&batch_cfg, &build_scene(&batch_cfg, &room, plan)?)?;
        let fresh: Vec<_> = ds.records.iter().map(|r| r.rtf.clone()).collect();
        let truths: Vec<f64> = ds.records.iter().map(|r| r.azimuth).collect();
        let predictions = fresh.iter().map(|h| model.predict(h)).collect::<Result<Vec<_>>>()?;
        report.rmse.push(evaluate_rmse(&predictions, &truths)?);
        report.training_sizes.push(train.len());
        report.params.push(params);
        if cycle + 1 == cycles {
            break;
        }
        let step = || -> Result<_> {
            let enlarged = train.with_unlabelled(&fresh)?;
            let dist = DistanceMatrix::from_samples(&enlarged.samples)?;
            let kernel = if cfg.mrl.reestimate_scales {
                select_kernel(cfg, &enlarged, &dist)?
            } else {
                kernel
            };
            if cfg.mrl.selection == GammaSelection::Fixed {
                let (m, t) = adapt(&model, &train, &fresh, &params, &kernel, &options)?;
                return Ok((m, t, params, kernel));
            }
            let (m, p) = refit(cfg, &enlarged, &dist, &kernel, &options)?;
            Ok((m, enlarged, p, kernel))
        };
        match step() {
            Ok((m, t, p, k)) => {
                model = m;
                train = t;
                params = p;
                kernel = k;
            }
            Err(e) => {
                log::warn!("adaptation failed after cycle {}: {e}", cycle + 1);
                report.error = Some(e.to_string());
                break;
            }
        }
    }
    report.kernel = kernel;
    Ok(report)
}

/// Builds K and L over `train`, selects the regularization and fits.
fn refit(
    cfg: &ScenarioConfig,
    train: &TrainingSet,
    dist: &DistanceMatrix,
    kernel: &KernelConfig,
    options: &FitOptions,
) -> Result<(MrlModel, RegularizationParams)> {
    let gram = gram_from_distances(dist, kernel.epsilon_k)?;
    let graph = adjacency_from_distances(dist, kernel.epsilon_w, kernel.num_neighbors)?;
    if !graph.is_connected() {
        return Err(Error::Disconnected {
            components: graph.components,
        });
    }
    let laplacian = build_laplacian(&graph);
    let (params, _) = choose_params(cfg, train, &gram, &laplacian)?;
    Ok((fit_with(train, &gram, &laplacian, &params, options)?, params))
}
