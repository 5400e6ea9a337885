//! Manifold-regularized least squares in the RKHS of a Gaussian kernel.
//!
//! With `f(h) = Σ a_i k(h̄_i, h)` the regularized objective
//!
//! ```text
//! (1/l) ‖q − J K a‖² + γ_k aᵀ K a + γ_M aᵀ K L K a
//! ```
//!
//! is minimized by the solution of `[J K + l γ_k I + l γ_M L K] a = q`,
//! where `J` selects the `l` labelled samples (stored first) and `q` holds
//! their positions followed by zeros.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    adjacency_from_distances, build_laplacian, gaussian, gram_from_distances, DistanceMatrix, GramMatrix,
    GraphLaplacian, KernelConfig,
};
use crate::rtf::{squared_distance, RtfVector};

/// Samples with the labelled ones first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub samples: Vec<RtfVector>,
    /// Positions of `samples[..labels.len()]`.
    pub labels: Vec<f64>,
}

impl TrainingSet {
    pub fn new(samples: Vec<RtfVector>, labels: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one labelled sample is required".into(),
            ));
        }
        if labels.len() > samples.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                actual: labels.len(),
            });
        }
        if labels.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("labels must be finite".into()));
        }
        if samples.iter().any(|s| !s.same_band(&samples[0])) {
            return Err(Error::BandMismatch);
        }
        Ok(TrainingSet { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labelled(&self) -> usize {
        self.labels.len()
    }

    pub fn unlabelled(&self) -> usize {
        self.samples.len() - self.labels.len()
    }

    /// Same set with `extra` appended as unlabelled samples.
    pub fn with_unlabelled(&self, extra: &[RtfVector]) -> Result<TrainingSet> {
        if extra.iter().any(|s| !s.same_band(&self.samples[0])) {
            return Err(Error::BandMismatch);
        }
        let mut samples = self.samples.clone();
        samples.extend_from_slice(extra);
        Ok(TrainingSet {
            samples,
            labels: self.labels.clone(),
        })
    }

    /// `q = [p̄_1 − c, …, p̄_l − c, 0, …, 0]`.
    fn target(&self, offset: f64) -> DVector<f64> {
        let mut q = DVector::zeros(self.len());
        for (i, p) in self.labels.iter().enumerate() {
            q[i] = p - offset;
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    /// Weight of the RKHS norm; must be positive.
    pub gamma_k: f64,
    /// Weight of the intrinsic (graph) smoothness term.
    pub gamma_m: f64,
}

impl Default for RegularizationParams {
    fn default() -> Self {
        RegularizationParams {
            gamma_k: 1e-4,
            gamma_m: 1e-2,
        }
    }
}

impl RegularizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_k > 0.0 && self.gamma_k.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma_k must be positive, got {}",
                self.gamma_k
            )));
        }
        if !(self.gamma_m >= 0.0 && self.gamma_m.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma_M must be non-negative, got {}",
                self.gamma_m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Subtract the labelled mean before solving and add it back on predict.
    pub center_labels: bool,
    /// Condition estimate above which the fit is rejected.
    pub max_condition: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            center_labels: true,
            max_condition: 1e12,
        }
    }
}

impl FitOptions {
    pub fn uncentered() -> Self {
        FitOptions {
            center_labels: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `‖A a − q‖ / ‖q‖` (absolute when `q = 0`).
    pub relative_residual: f64,
    /// 1-norm condition estimate of the system matrix.
    pub condition: f64,
}

/// Fitted interpolation weights plus what prediction needs.
#[derive(Debug, Clone, PartialEq)]
pub struct MrlModel {
    pub weights: DVector<f64>,
    pub samples: Vec<RtfVector>,
    pub epsilon_k: f64,
    pub params: RegularizationParams,
    /// Added to every prediction; the labelled mean when centering is on.
    pub label_offset: f64,
    pub diagnostics: FitDiagnostics,
}

/// Residual tolerance of the fitted system, relative to `‖q‖`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Solves for the interpolation weights with default options (centered labels).
pub fn fit(
    train: &TrainingSet,
    gram: &GramMatrix,
    laplacian: &GraphLaplacian,
    params: &RegularizationParams,
) -> Result<MrlModel> {
    fit_with(train, gram, laplacian, params, &FitOptions::default())
}

pub fn fit_with(
    train: &TrainingSet,
    gram: &GramMatrix,
    laplacian: &GraphLaplacian,
    params: &RegularizationParams,
    options: &FitOptions,
) -> Result<MrlModel> {
    params.validate()?;
    let n = train.len();
    for size in [gram.len(), laplacian.len()] {
        if size != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: size,
            });
        }
    }
    let l = train.labelled();
    let offset = if options.center_labels {
        train.labels.iter().sum::<f64>() / l as f64
    } else {
        0.0
    };
    let mask: Vec<bool> = (0..n).map(|i| i < l).collect();
    let (weights, diagnostics) = solve_masked(gram, laplacian, &mask, &train.target(offset), params, options)?;

    Ok(MrlModel {
        weights,
        samples: train.samples.clone(),
        epsilon_k: gram.epsilon,
        params: *params,
        label_offset: offset,
        diagnostics,
    })
}

/// Solves the system with `J = diag(mask)`; `q` must be zero off the mask.
fn solve_masked(
    gram: &GramMatrix,
    laplacian: &GraphLaplacian,
    mask: &[bool],
    q: &DVector<f64>,
    params: &RegularizationParams,
    options: &FitOptions,
) -> Result<(DVector<f64>, FitDiagnostics)> {
    let system = masked_system(gram, laplacian, mask, params);
    let lu = system.clone().lu();
    let condition = condition_estimate(&system, &lu);
    if !condition.is_finite() || condition > options.max_condition {
        return Err(Error::IllConditioned { condition });
    }
    let mut weights = lu.solve(q).ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
    })?;
    // one step of iterative refinement
    let residual = q - &system * &weights;
    if let Some(correction) = lu.solve(&residual) {
        weights += correction;
    }

    let q_norm = q.norm();
    let residual = (&system * &weights - q).norm();
    let relative_residual = if q_norm > 0.0 { residual / q_norm } else { residual };
    if !(relative_residual <= RESIDUAL_TOLERANCE) || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::IllConditioned { condition });
    }
    Ok((
        weights,
        FitDiagnostics {
            relative_residual,
            condition,
        },
    ))
}

fn masked_system(
    gram: &GramMatrix,
    laplacian: &GraphLaplacian,
    mask: &[bool],
    params: &RegularizationParams,
) -> DMatrix<f64> {
    let n = gram.len();
    let l = mask.iter().filter(|&&m| m).count() as f64;
    let mut a = laplacian.mul_dense(&gram.entries) * (l * params.gamma_m);
    for i in (0..n).filter(|&i| mask[i]) {
        let mut row = a.row_mut(i);
        row += gram.entries.row(i);
    }
    for i in 0..n {
        a[(i, i)] += l * params.gamma_k;
    }
    a
}

/// `J K + l γ_k I + l γ_M L K`.
pub fn system_matrix(
    labelled: usize,
    gram: &GramMatrix,
    laplacian: &GraphLaplacian,
    params: &RegularizationParams,
) -> DMatrix<f64> {
    let mask: Vec<bool> = (0..gram.len()).map(|i| i < labelled).collect();
    masked_system(gram, laplacian, &mask, params)
}

/// Hager's estimate of `‖A‖₁ ‖A⁻¹‖₁` reusing the LU factors.
fn condition_estimate(a: &DMatrix<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let n = a.nrows();
    let norm_a = (0..n).map(|j| a.column(j).abs().sum()).fold(0.0, f64::max);
    let lu_t = a.transpose().lu();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut estimate = 0.0;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else {
            return f64::INFINITY;
        };
        let y_norm = y.abs().sum();
        if y_norm <= estimate {
            break;
        }
        estimate = y_norm;
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = lu_t.solve(&xi) else {
            return f64::INFINITY;
        };
        let (j, zmax) =
            z.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &v)| {
                    if v.abs() > acc.1 {
                        (i, v.abs())
                    } else {
                        acc
                    }
                },
            );
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[j] = 1.0;
    }
    norm_a * estimate
}

impl MrlModel {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ a_i k(h̄_i, h)` plus the label offset.
    pub fn predict(&self, h: &RtfVector) -> Result<f64> {
        let mut acc = 0.0;
        for (a, s) in self.weights.iter().zip(&self.samples) {
            acc += a * gaussian(squared_distance(s, h)?, self.epsilon_k);
        }
        Ok(acc + self.label_offset)
    }
}

pub fn predict(model: &MrlModel, h: &RtfVector) -> Result<f64> {
    model.predict(h)
}

/// The three terms of the objective, evaluated with raw labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub data_fit: f64,
    pub rkhs: f64,
    pub intrinsic: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.data_fit + self.rkhs + self.intrinsic
    }
}

pub fn objective_terms(
    train: &TrainingSet,
    gram: &GramMatrix,
    laplacian: &GraphLaplacian,
    params: &RegularizationParams,
    weights: &DVector<f64>,
) -> Result<ObjectiveTerms> {
    let n = train.len();
    if weights.len() != n || gram.len() != n || laplacian.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: weights.len(),
        });
    }
    let l = train.labelled();
    let f = &gram.entries * weights;
    let data_fit = train
        .labels
        .iter()
        .enumerate()
        .map(|(i, p)| (p - f[i]).powi(2))
        .sum::<f64>()
        / l as f64;
    Ok(ObjectiveTerms {
        data_fit,
        rkhs: params.gamma_k * weights.dot(&f),
        intrinsic: params.gamma_m * laplacian.quadratic_form(&f),
    })
}

/// `(1/l)(q − JKa)ᵀ(q − JKa) + γ_k aᵀKa + γ_M aᵀKLKa`.
pub fn objective_value(
    train: &TrainingSet,
    gram: &GramMatrix,
    laplacian: &GraphLaplacian,
    params: &RegularizationParams,
    weights: &DVector<f64>,
) -> Result<f64> {
    Ok(objective_terms(train, gram, laplacian, params, weights)?.total())
}

/// Gram matrix, Laplacian and fitted model over `train`.
pub fn fit_from_samples(
    train: &TrainingSet,
    kernel: &KernelConfig,
    params: &RegularizationParams,
    options: &FitOptions,
) -> Result<MrlModel> {
    let dist = DistanceMatrix::from_samples(&train.samples)?;
    fit_from_distances(train, &dist, kernel, params, options)
}

pub fn fit_from_distances(
    train: &TrainingSet,
    dist: &DistanceMatrix,
    kernel: &KernelConfig,
    params: &RegularizationParams,
    options: &FitOptions,
) -> Result<MrlModel> {
    let gram = gram_from_distances(dist, kernel.epsilon_k)?;
    let graph = adjacency_from_distances(dist, kernel.epsilon_w, kernel.num_neighbors)?;
    if !graph.is_connected() {
        return Err(Error::Disconnected {
            components: graph.components,
        });
    }
    fit_with(train, &gram, &build_laplacian(&graph), params, options)
}

/// Appends `new_unlabelled`, rebuilds K, W and L from scratch and refits.
/// With no new samples the model is returned unchanged.
pub fn adapt(
    model: &MrlModel,
    train: &TrainingSet,
    new_unlabelled: &[RtfVector],
    params: &RegularizationParams,
    kernel: &KernelConfig,
    options: &FitOptions,
) -> Result<(MrlModel, TrainingSet)> {
    if new_unlabelled.is_empty() {
        return Ok((model.clone(), train.clone()));
    }
    let enlarged = train.with_unlabelled(new_unlabelled)?;
    let refit = fit_from_samples(&enlarged, kernel, params, options)?;
    Ok((refit, enlarged))
}

/// Default search grid for both regularization weights.
pub const DEFAULT_GAMMA_GRID: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// Outcome of a hyperparameter search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub params: RegularizationParams,
    /// Leave-one-out RMSE over the labelled samples.
    pub cv_rmse: f64,
}

/// Picks `(γ_k, γ_M)` by leave-one-out cross validation over the labelled
/// samples: each held-out sample keeps its place in the graph but loses its
/// label. Candidates whose systems are ill-conditioned are skipped.
pub fn select_regularization(
    train: &TrainingSet,
    gram: &GramMatrix,
    laplacian: &GraphLaplacian,
    grid: &[f64],
    options: &FitOptions,
) -> Result<GridSearchResult> {
    let n = train.len();
    let l = train.labelled();
    if l < 2 {
        return Err(Error::InvalidParameter(
            "cross validation needs at least two labelled samples".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::Empty("regularization grid"));
    }
    let mut best: Option<GridSearchResult> = None;
    for &gamma_k in grid {
        'candidate: for &gamma_m in grid {
            let params = RegularizationParams { gamma_k, gamma_m };
            params.validate()?;
            let mut sq = 0.0;
            for held in 0..l {
                let mask: Vec<bool> = (0..n).map(|i| i < l && i != held).collect();
                let kept = train.labels.iter().enumerate().filter(|&(i, _)| i != held);
                let offset = if options.center_labels {
                    kept.clone().map(|(_, p)| p).sum::<f64>() / (l - 1) as f64
                } else {
                    0.0
                };
                let mut q = DVector::zeros(n);
                for (i, p) in kept {
                    q[i] = p - offset;
                }
                let Ok((weights, _)) = solve_masked(gram, laplacian, &mask, &q, &params, options) else {
                    continue 'candidate;
                };
                let estimate = gram.entries.row(held).dot(&weights.transpose()) + offset;
                sq += (estimate - train.labels[held]).powi(2);
            }
            let cv_rmse = (sq / l as f64).sqrt();
            if best.is_none_or(|b| cv_rmse < b.cv_rmse) {
                best = Some(GridSearchResult { params, cv_rmse });
            }
        }
    }
    best.ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
    })
}

/// Localize-then-adapt loop: every query is answered with the current model
/// and queued; once `cadence` queries are pending they join the training
/// set as unlabelled data and the model is refit.
#[derive(Debug, Clone)]
pub struct OnlineMrl {
    pub model: MrlModel,
    pub train: TrainingSet,
    pub params: RegularizationParams,
    pub kernel: KernelConfig,
    pub options: FitOptions,
    pub cadence: usize,
    pending: Vec<RtfVector>,
}

/// Default number of queries between refits.
pub const DEFAULT_CADENCE: usize = 30;

impl OnlineMrl {
    pub fn new(
        train: TrainingSet,
        kernel: KernelConfig,
        params: RegularizationParams,
        options: FitOptions,
        cadence: usize,
    ) -> Result<Self> {
        if cadence == 0 {
            return Err(Error::InvalidParameter("adaptation cadence must be at least 1".into()));
        }
        let model = fit_from_samples(&train, &kernel, &params, &options)?;
        Ok(OnlineMrl {
            model,
            train,
            params,
            kernel,
            options,
            cadence,
            pending: Vec::new(),
        })
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn localize(&mut self, h: &RtfVector) -> Result<f64> {
        let estimate = self.model.predict(h)?;
        self.pending.push(h.clone());
        if self.pending.len() >= self.cadence {
            self.flush()?;
        }
        Ok(estimate)
    }

    /// Adapts on whatever is pending.
    pub fn flush(&mut self) -> Result<()> {
        let batch = std::mem::take(&mut self.pending);
        let (model, train) = adapt(
            &self.model,
            &self.train,
            &batch,
            &self.params,
            &self.kernel,
            &self.options,
        )?;
        self.model = model;
        self.train = train;
        Ok(())
    }
}
