use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::archive::{Dataset, Split};
use crate::dds::{dds_predict, fit_dds_from_distances, DdsModel};
use crate::error::{Error, Result};
use crate::gcc::constellation_azimuth;
use crate::graph::{adjacency_from_distances, build_laplacian, gram_from_distances, DistanceMatrix, KernelConfig};
use crate::mrl::{fit_with, select_regularization, MrlModel, RegularizationParams, TrainingSet};

use super::config::{GammaSelection, KernelSettings, Method, ScenarioConfig};
use super::evaluate_rmse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub rmse: f64,
    pub predictions: Vec<f64>,
    /// `prediction − truth` per test sample.
    pub errors: Vec<f64>,
    /// Test samples the method could not handle (replaced by the range midpoint).
    pub failures: usize,
    pub seconds: f64,
    /// Method-specific resolved settings.
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub dataset_hash: String,
    pub source: String,
    pub truths: Vec<f64>,
    pub methods: BTreeMap<Method, MethodReport>,
    /// Methods that failed outright, with the reason.
    pub failed: BTreeMap<Method, String>,
}

impl EvaluationReport {
    /// Recomputes every RMSE from the stored per-sample errors.
    pub fn verify(&self) -> Result<()> {
        for (m, r) in &self.methods {
            let zeros = vec![0.0; r.errors.len()];
            let rmse = evaluate_rmse(&r.errors, &zeros)?;
            let direct = evaluate_rmse(&r.predictions, &self.truths)?;
            if (rmse - r.rmse).abs() > 1e-9 * r.rmse.max(1.0) || (direct - r.rmse).abs() > 1e-9 * r.rmse.max(1.0) {
                return Err(Error::Format(format!(
                    "{} RMSE {} disagrees with stored errors ({rmse})",
                    m.name(),
                    r.rmse
                )));
            }
        }
        Ok(())
    }

    pub fn rmse(&self, method: Method) -> Option<f64> {
        self.methods.get(&method).map(|r| r.rmse)
    }

    /// JSON without the per-sample vectors.
    pub fn summary(&self) -> serde_json::Value {
        let methods: BTreeMap<&str, serde_json::Value> = self
            .methods
            .iter()
            .map(|(m, r)| {
                (
                    m.name(),
                    serde_json::json!({
                        "rmse": r.rmse,
                        "failures": r.failures,
                        "seconds": r.seconds,
                        "details": r.details,
                    }),
                )
            })
            .collect();
        serde_json::json!({
            "config_hash": self.config_hash,
            "dataset_hash": self.dataset_hash,
            "source": self.source,
            "test_samples": self.truths.len(),
            "methods": methods,
            "failed": self.failed.iter().map(|(m, e)| (m.name(), e)).collect::<BTreeMap<_, _>>(),
            "config": self.config,
        })
    }
}

/// Kernel scales from the settings, falling back to the median heuristic.
/// `epsilon_gamma` stays 0 when unset so the DDS fit estimates it.
pub fn resolve_kernel(settings: &KernelSettings, dist: &DistanceMatrix) -> Result<KernelConfig> {
    let k = settings.num_neighbors.min(dist.len().saturating_sub(1)).max(1);
    let median = || dist.median_knn_scale(k);
    let epsilon_w = match settings.epsilon_w {
        Some(e) => e,
        None => median()?,
    };
    let epsilon_k = match settings.epsilon_k {
        Some(e) => e,
        None => median()?,
    };
    Ok(KernelConfig {
        epsilon_k,
        epsilon_w,
        epsilon_b: settings.epsilon_b.unwrap_or(epsilon_w),
        epsilon_gamma: settings.epsilon_gamma.unwrap_or(0.0),
        num_neighbors: k,
    })
}

/// Kernel settings for `train`. With a neighbor grid and cross-validated
/// regularization, every candidate count with a connected graph is scored by
/// the labelled leave-one-out error and the best one kept; otherwise this is
/// [`resolve_kernel`].
pub fn select_kernel(cfg: &ScenarioConfig, train: &TrainingSet, dist: &DistanceMatrix) -> Result<KernelConfig> {
    let grid = &cfg.kernel.neighbor_grid;
    if grid.is_empty() || cfg.mrl.selection == GammaSelection::Fixed || train.labelled() < 2 {
        return resolve_kernel(&cfg.kernel, dist);
    }
    let mut best: Option<(f64, KernelConfig)> = None;
    for &k in grid {
        if k == 0 || k >= dist.len() {
            continue;
        }
        let settings = KernelSettings {
            num_neighbors: k,
            ..cfg.kernel.clone()
        };
        let kernel = resolve_kernel(&settings, dist)?;
        let graph = adjacency_from_distances(dist, kernel.epsilon_w, k)?;
        if !graph.is_connected() {
            continue;
        }
        let gram = gram_from_distances(dist, kernel.epsilon_k)?;
        let laplacian = build_laplacian(&graph);
        let Ok(r) = select_regularization(train, &gram, &laplacian, &cfg.mrl.grid, &cfg.mrl.fit_options()) else {
            continue;
        };
        if best.is_none_or(|(cv, _)| r.cv_rmse < cv) {
            best = Some((r.cv_rmse, kernel));
        }
    }
    match best {
        Some((_, kernel)) => Ok(kernel),
        None => resolve_kernel(&cfg.kernel, dist),
    }
}

/// Fits every configured method on the training rows and scores the test rows.
pub fn evaluate_dataset(cfg: &ScenarioConfig, dataset: &Dataset) -> Result<EvaluationReport> {
    let train = dataset.training_set()?;
    let tests: Vec<_> = dataset.test().collect();
    if tests.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let truths: Vec<f64> = tests.iter().map(|r| r.azimuth).collect();
    let dist = DistanceMatrix::from_samples(&train.samples)?;
    let kernel = select_kernel(cfg, &train, &dist)?;

    let mut methods = BTreeMap::new();
    let mut failed = BTreeMap::new();
    for &method in &cfg.run.methods {
        let start = Instant::now();
        let outcome = match method {
            Method::Mrl => run_mrl(cfg, &train, &dist, &kernel, &tests),
            Method::Dds => run_dds(cfg, &train, &dist, &kernel, &tests),
            Method::Gcc => run_gcc(cfg, dataset, &tests),
        };
        match outcome {
            Ok((predictions, failures, details)) => {
                let rmse = evaluate_rmse(&predictions, &truths)?;
                let errors = predictions.iter().zip(&truths).map(|(p, t)| p - t).collect();
                methods.insert(
                    method,
                    MethodReport {
                        rmse,
                        predictions,
                        errors,
                        failures,
                        seconds: start.elapsed().as_secs_f64(),
                        details,
                    },
                );
            }
            Err(e) => {
                log::warn!("{} failed: {e}", method.name());
                failed.insert(method, e.to_string());
            }
        }
    }
    Ok(EvaluationReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        dataset_hash: dataset.hash()?,
        source: dataset.metadata.source.clone(),
        truths,
        methods,
        failed,
    })
}

type Outcome = Result<(Vec<f64>, usize, serde_json::Value)>;

/// Regularization weights per the settings (cross validation or fixed).
pub(crate) fn choose_params(
    cfg: &ScenarioConfig,
    train: &TrainingSet,
    gram: &crate::graph::GramMatrix,
    laplacian: &crate::graph::GraphLaplacian,
) -> Result<(RegularizationParams, Option<f64>)> {
    match cfg.mrl.selection {
        GammaSelection::CrossValidation if train.labelled() >= 2 => {
            let r = select_regularization(train, gram, laplacian, &cfg.mrl.grid, &cfg.mrl.fit_options())?;
            Ok((r.params, Some(r.cv_rmse)))
        }
        _ => Ok((cfg.mrl.params(), None)),
    }
}

fn fit_mrl(
    cfg: &ScenarioConfig,
    train: &TrainingSet,
    dist: &DistanceMatrix,
    kernel: &KernelConfig,
) -> Result<(MrlModel, Option<f64>)> {
    let gram = gram_from_distances(dist, kernel.epsilon_k)?;
    let graph = adjacency_from_distances(dist, kernel.epsilon_w, kernel.num_neighbors)?;
    if !graph.is_connected() {
        return Err(Error::Disconnected {
            components: graph.components,
        });
    }
    let laplacian = build_laplacian(&graph);
    let (params, cv_rmse) = choose_params(cfg, train, &gram, &laplacian)?;
    Ok((
        fit_with(train, &gram, &laplacian, &params, &cfg.mrl.fit_options())?,
        cv_rmse,
    ))
}

fn fit_dds_model(
    cfg: &ScenarioConfig,
    train: &TrainingSet,
    dist: &DistanceMatrix,
    kernel: &KernelConfig,
) -> Result<DdsModel> {
    let mut nystrom = cfg.dds.nystrom;
    // the extension uses the same neighbourhood as the graph unless told otherwise
    nystrom.neighbors = nystrom.neighbors.or(Some(kernel.num_neighbors));
    fit_dds_from_distances(train, dist, kernel, cfg.dds.dimension, nystrom)
}

/// An MRL model trained as [`evaluate_dataset`] would, plus the dataset rows it
/// was trained on.
#[derive(Debug, Clone)]
pub struct TrainedMrl {
    pub model: MrlModel,
    pub kernel: KernelConfig,
    pub cv_rmse: Option<f64>,
    pub indices: Vec<usize>,
}

pub fn train_mrl(cfg: &ScenarioConfig, dataset: &Dataset) -> Result<TrainedMrl> {
    let train = dataset.training_set()?;
    let dist = DistanceMatrix::from_samples(&train.samples)?;
    let kernel = select_kernel(cfg, &train, &dist)?;
    let (model, cv_rmse) = fit_mrl(cfg, &train, &dist, &kernel)?;
    Ok(TrainedMrl {
        model,
        kernel,
        cv_rmse,
        indices: train_indices(dataset),
    })
}

/// The DDS model of [`evaluate_dataset`], for inspecting its embedding.
pub fn train_dds(cfg: &ScenarioConfig, dataset: &Dataset) -> Result<DdsModel> {
    let train = dataset.training_set()?;
    let dist = DistanceMatrix::from_samples(&train.samples)?;
    let kernel = select_kernel(cfg, &train, &dist)?;
    fit_dds_model(cfg, &train, &dist, &kernel)
}

/// Record indices of the training rows, in training-set order.
pub fn train_indices(dataset: &Dataset) -> Vec<usize> {
    dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Train)
        .map(|(i, _)| i)
        .collect()
}

fn run_mrl(
    cfg: &ScenarioConfig,
    train: &TrainingSet,
    dist: &DistanceMatrix,
    kernel: &KernelConfig,
    tests: &[&crate::archive::DatasetRecord],
) -> Outcome {
    let (model, cv_rmse) = fit_mrl(cfg, train, dist, kernel)?;
    let params = model.params;
    let predictions = tests
        .iter()
        .map(|r| model.predict(&r.rtf))
        .collect::<Result<Vec<_>>>()?;
    let details = serde_json::json!({
        "epsilon_k": kernel.epsilon_k,
        "epsilon_w": kernel.epsilon_w,
        "num_neighbors": kernel.num_neighbors,
        "gamma_k": params.gamma_k,
        "gamma_m": params.gamma_m,
        "cv_rmse": cv_rmse,
        "label_offset": model.label_offset,
        "condition": model.diagnostics.condition,
    });
    Ok((predictions, 0, details))
}

fn run_dds(
    cfg: &ScenarioConfig,
    train: &TrainingSet,
    dist: &DistanceMatrix,
    kernel: &KernelConfig,
    tests: &[&crate::archive::DatasetRecord],
) -> Outcome {
    let model = fit_dds_model(cfg, train, dist, kernel)?;
    let [lo, hi] = cfg.constellation.azimuth_range;
    let mut failures = 0;
    let mut predictions = Vec::with_capacity(tests.len());
    for r in tests {
        match dds_predict(&model, &r.rtf) {
            Ok(p) => predictions.push(p),
            Err(Error::NoAffinity) => {
                failures += 1;
                predictions.push(0.5 * (lo + hi));
            }
            Err(e) => return Err(e),
        }
    }
    let details = serde_json::json!({
        "epsilon_b": model.epsilon_b,
        "epsilon_gamma": model.epsilon_gamma,
        "dimension": model.embedding.dimension(),
        "eigenvalues": model.embedding.eigenvalues,
    });
    Ok((predictions, failures, details))
}

fn run_gcc(cfg: &ScenarioConfig, dataset: &Dataset, tests: &[&crate::archive::DatasetRecord]) -> Outcome {
    let cons = cfg.constellation();
    let c = cfg.room.speed_of_sound;
    let [lo, hi] = cfg.constellation.azimuth_range;
    let mut failures = 0;
    let mut clamped = 0;
    let mut predictions = Vec::with_capacity(tests.len());
    for r in tests {
        match r.tdoa {
            Some(tdoa) => {
                let est = constellation_azimuth(&cons, tdoa, c)?;
                clamped += est.clamped as usize;
                predictions.push(est.azimuth);
            }
            None => {
                failures += 1;
                predictions.push(0.5 * (lo + hi));
            }
        }
    }
    let details = serde_json::json!({
        "weighting": cfg.gcc.weighting,
        "clamped": clamped,
        "sample_rate": dataset.metadata.sample_rate,
    });
    Ok((predictions, failures, details))
}

/// One line per test sample and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub index: usize,
    pub method: Method,
    pub truth: f64,
    pub prediction: f64,
    pub error: f64,
}

pub fn predictions_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("index,method,truth,prediction,error\n");
    for (m, r) in &report.methods {
        for (i, (p, t)) in r.predictions.iter().zip(&report.truths).enumerate() {
            out.push_str(&format!("{i},{},{t},{p},{}\n", m.name(), p - t));
        }
    }
    out
}

pub fn read_predictions_csv(text: &str) -> Result<Vec<PredictionRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "index,method,truth,prediction,error" => {}
        _ => return Err(Error::Format("missing predictions header".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let bad = || Error::Format(format!("malformed predictions line {}: {line:?}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            Ok(PredictionRow {
                index: f[0].trim().parse().map_err(|_| bad())?,
                method: f[1].parse()?,
                truth: num(f[2])?,
                prediction: num(f[3])?,
                error: num(f[4])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generate_dataset;

    #[test]
    fn small_scenario_end_to_end() {
        let mut cfg = ScenarioConfig::default();
        cfg.room.t60 = 0.15;
        cfg.samples.train = 30;
        cfg.samples.labelled = 6;
        cfg.samples.test = 6;
        cfg.samples.source_duration = 0.5;
        cfg.kernel.num_neighbors = 6;
        let ds = generate_dataset(&cfg).unwrap();
        let report = evaluate_dataset(&cfg, &ds).unwrap();
        report.verify().unwrap();
        assert!(report.failed.is_empty(), "{:?}", report.failed);
        assert_eq!(report.methods.len(), 3);
        for r in report.methods.values() {
            assert!(r.rmse.is_finite());
            assert_eq!(r.predictions.len(), 6);
        }
        let rows = read_predictions_csv(&predictions_csv(&report)).unwrap();
        assert_eq!(rows.len(), 18);
        let gcc: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == Method::Gcc)
            .map(|r| r.error)
            .collect();
        let zeros = vec![0.0; gcc.len()];
        let rmse = evaluate_rmse(&gcc, &zeros).unwrap();
        assert!((rmse - report.rmse(Method::Gcc).unwrap()).abs() < 1e-9);

        // method isolation
        let mut only = cfg.clone();
        only.run.methods = vec![Method::Dds];
        let alone = evaluate_dataset(&only, &ds).unwrap();
        assert_eq!(
            alone.methods[&Method::Dds].predictions,
            report.methods[&Method::Dds].predictions
        );
    }

    #[test]
    fn tampered_report_fails_verification() {
        let mut methods = BTreeMap::new();
        methods.insert(
            Method::Gcc,
            MethodReport {
                rmse: 1.0,
                predictions: vec![3.0],
                errors: vec![2.0],
                failures: 0,
                seconds: 0.0,
                details: serde_json::Value::Null,
            },
        );
        let report = EvaluationReport {
            config: ScenarioConfig::default(),
            config_hash: String::new(),
            dataset_hash: String::new(),
            source: String::new(),
            truths: vec![1.0],
            methods,
            failed: BTreeMap::new(),
        };
        assert!(report.verify().is_err());
        assert!(read_predictions_csv("nope\n").is_err());
        assert!(read_predictions_csv("index,method,truth,prediction,error\n1,abc,1,2,1\n").is_err());
    }
}
