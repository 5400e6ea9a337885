//! Diffusion-distance search: diffusion-maps embedding of the training set,
//! Nyström extension of queries, and a softmax over diffusion distances to
//! the labelled samples.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    adjacency_from_distances, build_transition, gaussian, median, DistanceMatrix, KernelConfig, TransitionMatrix,
};
use crate::mrl::TrainingSet;
use crate::rtf::{squared_distance, RtfVector};

/// Eigenvalues below this magnitude cannot be inverted in the extension.
pub const MIN_EIGENVALUE: f64 = 1e-12;

/// Tolerance for treating an eigenvalue as the trivial one.
const UNIT_EIGENVALUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionEmbedding {
    /// Row `i` is `[λ_1 φ_1(i), …, λ_d φ_d(i)]`.
    pub coordinates: DMatrix<f64>,
    /// `λ_1 ≥ … ≥ λ_d`, the trivial `λ_0 = 1` excluded.
    pub eigenvalues: Vec<f64>,
    /// `φ_1 … φ_d` as columns.
    pub basis: DMatrix<f64>,
    pub stationary: DVector<f64>,
}

impl DiffusionEmbedding {
    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn len(&self) -> usize {
        self.coordinates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.nrows() == 0
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.coordinates.row(i).transpose()
    }
}

/// Keeps the `d` leading non-trivial right eigenvectors of `P`.
pub fn fit_embedding(train: &TrainingSet, transition: &TransitionMatrix, d: usize) -> Result<DiffusionEmbedding> {
    let n = transition.len();
    if n != train.len() {
        return Err(Error::DimensionMismatch {
            expected: train.len(),
            actual: n,
        });
    }
    if d == 0 || d >= n {
        return Err(Error::InvalidParameter(format!(
            "embedding dimension must be in 1..{n}, got {d}"
        )));
    }
    let spectrum = transition.spectrum();
    let unit = spectrum
        .eigenvalues
        .iter()
        .filter(|&&l| l > 1.0 - UNIT_EIGENVALUE_TOL)
        .count();
    if unit > 1 {
        return Err(Error::Disconnected { components: unit });
    }
    let eigenvalues: Vec<f64> = spectrum.eigenvalues[1..=d].to_vec();
    let basis = spectrum.right_vectors.columns(1, d).into_owned();
    let mut coordinates = basis.clone();
    for (j, mut col) in coordinates.column_iter_mut().enumerate() {
        col *= eigenvalues[j];
    }
    Ok(DiffusionEmbedding {
        coordinates,
        eigenvalues,
        basis,
        stationary: transition.stationary.clone(),
    })
}

/// What to do when a query has no affinity to any training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarQuery {
    #[default]
    Error,
    /// Embed at the origin.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NystromOptions {
    /// Restrict the affinity vector to this many nearest training samples.
    pub neighbors: Option<usize>,
    pub far_query: FarQuery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdsModel {
    pub embedding: DiffusionEmbedding,
    pub samples: Vec<RtfVector>,
    pub labels: Vec<f64>,
    pub epsilon_b: f64,
    pub epsilon_gamma: f64,
    pub nystrom: NystromOptions,
}

impl DdsModel {
    pub fn new(
        train: &TrainingSet,
        embedding: DiffusionEmbedding,
        epsilon_b: f64,
        epsilon_gamma: f64,
        nystrom: NystromOptions,
    ) -> Result<Self> {
        if embedding.len() != train.len() {
            return Err(Error::DimensionMismatch {
                expected: train.len(),
                actual: embedding.len(),
            });
        }
        for (name, eps) in [("epsilon_b", epsilon_b), ("epsilon_gamma", epsilon_gamma)] {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {eps}")));
            }
        }
        Ok(DdsModel {
            embedding,
            samples: train.samples.clone(),
            labels: train.labels.clone(),
            epsilon_b,
            epsilon_gamma,
            nystrom,
        })
    }

    pub fn labelled(&self) -> usize {
        self.labels.len()
    }

    pub fn with_epsilon_gamma(mut self, epsilon_gamma: f64) -> Result<Self> {
        if !(epsilon_gamma > 0.0 && epsilon_gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon_gamma must be positive, got {epsilon_gamma}"
            )));
        }
        self.epsilon_gamma = epsilon_gamma;
        Ok(self)
    }

    /// Normalized affinity of `h` to the training samples. Samples at
    /// distance exactly zero are skipped, matching the zero diagonal of W.
    pub fn affinity(&self, h: &RtfVector) -> Result<Option<DVector<f64>>> {
        let n = self.samples.len();
        let mut d2 = Vec::with_capacity(n);
        for s in &self.samples {
            d2.push(squared_distance(s, h)?);
        }
        let mut b = DVector::zeros(n);
        let allowed: Vec<usize> = match self.nystrom.neighbors {
            Some(k) => {
                let mut order: Vec<usize> = (0..n).filter(|&i| d2[i] > 0.0).collect();
                order.sort_by(|&a, &c| d2[a].total_cmp(&d2[c]).then(a.cmp(&c)));
                order.truncate(k);
                order
            }
            None => (0..n).filter(|&i| d2[i] > 0.0).collect(),
        };
        for i in allowed {
            b[i] = gaussian(d2[i], self.epsilon_b);
        }
        let total = b.sum();
        if !(total > 0.0) {
            return Ok(None);
        }
        Ok(Some(b / total))
    }
}

/// Embeds a query as `bᵀφ_j = λ_j φ*_j`, i.e. in the same eigenvalue-scaled
/// coordinates as the training samples.
pub fn nystrom_extend(model: &DdsModel, h: &RtfVector) -> Result<DVector<f64>> {
    let emb = &model.embedding;
    if let Some(j) = emb.eigenvalues.iter().position(|l| l.abs() < MIN_EIGENVALUE) {
        return Err(Error::VanishingEigenvalue {
            component: j + 1,
            value: emb.eigenvalues[j],
        });
    }
    let Some(b) = model.affinity(h)? else {
        return match model.nystrom.far_query {
            FarQuery::Error => Err(Error::NoAffinity),
            FarQuery::Zero => Ok(DVector::zeros(emb.dimension())),
        };
    };
    let phi_star = DVector::from_iterator(
        emb.dimension(),
        (0..emb.dimension()).map(|j| b.dot(&emb.basis.column(j)) / emb.eigenvalues[j]),
    );
    Ok(phi_star.component_mul(&DVector::from_vec(emb.eigenvalues.clone())))
}

pub fn diffusion_distance(e1: &DVector<f64>, e2: &DVector<f64>) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::DimensionMismatch {
            expected: e1.len(),
            actual: e2.len(),
        });
    }
    Ok((e1 - e2).norm())
}

/// Softmax weights `exp(−D_i/ε_γ)` over the labelled samples, normalized.
pub fn label_weights(model: &DdsModel, embedded: &DVector<f64>) -> Result<Vec<f64>> {
    let mut dist = Vec::with_capacity(model.labelled());
    for i in 0..model.labelled() {
        dist.push(diffusion_distance(&model.embedding.point(i), embedded)?);
    }
    // shift by the minimum so the nearest label always carries weight
    let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = dist.iter().map(|d| (-(d - dmin) / model.epsilon_gamma).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weighted sum of labelled positions.
pub fn dds_predict(model: &DdsModel, h: &RtfVector) -> Result<f64> {
    let embedded = nystrom_extend(model, h)?;
    let weights = label_weights(model, &embedded)?;
    Ok(weights.iter().zip(&model.labels).map(|(w, p)| w * p).sum())
}

/// Median over the probes of the diffusion distance to the nearest labelled
/// sample, ignoring exact zeros.
pub fn median_label_distance(model: &DdsModel, probes: &[RtfVector]) -> Result<f64> {
    let mut dist = Vec::with_capacity(probes.len());
    for h in probes {
        let e = nystrom_extend(model, h)?;
        let mut nearest = f64::INFINITY;
        for i in 0..model.labelled() {
            let d = diffusion_distance(&model.embedding.point(i), &e)?;
            if d > 0.0 {
                nearest = nearest.min(d);
            }
        }
        if nearest.is_finite() {
            dist.push(nearest);
        }
    }
    if dist.is_empty() {
        return Err(Error::Empty("probe distances"));
    }
    Ok(median(&mut dist))
}

/// Embedding plus model over `train`. When `kernel.epsilon_gamma` is not
/// positive it is set to the median distance from the unlabelled training
/// samples (or all samples, if none are unlabelled) to their nearest label.
pub fn fit_dds(train: &TrainingSet, kernel: &KernelConfig, d: usize, nystrom: NystromOptions) -> Result<DdsModel> {
    let dist = DistanceMatrix::from_samples(&train.samples)?;
    fit_dds_from_distances(train, &dist, kernel, d, nystrom)
}

pub fn fit_dds_from_distances(
    train: &TrainingSet,
    dist: &DistanceMatrix,
    kernel: &KernelConfig,
    d: usize,
    nystrom: NystromOptions,
) -> Result<DdsModel> {
    let graph = adjacency_from_distances(dist, kernel.epsilon_w, kernel.num_neighbors)?;
    if !graph.is_connected() {
        return Err(Error::Disconnected {
            components: graph.components,
        });
    }
    let embedding = fit_embedding(train, &build_transition(&graph)?, d)?;
    let provisional = if kernel.epsilon_gamma > 0.0 {
        kernel.epsilon_gamma
    } else {
        1.0
    };
    let model = DdsModel::new(train, embedding, kernel.epsilon_b, provisional, nystrom)?;
    if kernel.epsilon_gamma > 0.0 {
        return Ok(model);
    }
    let probes = if train.unlabelled() > 0 {
        &train.samples[train.labelled()..]
    } else {
        &train.samples[..]
    };
    let eps = median_label_distance(&model, probes)?;
    model.with_epsilon_gamma(eps)
}

/// CSV rows `index,azimuth,coord_1,…,coord_d`; azimuth empty when unlabelled.
pub fn embedding_csv(embedding: &DiffusionEmbedding, labels: &[f64]) -> String {
    let mut out = String::from("index,azimuth");
    for j in 1..=embedding.dimension() {
        out.push_str(&format!(",coordinate_{j}"));
    }
    out.push('\n');
    for i in 0..embedding.len() {
        out.push_str(&i.to_string());
        out.push(',');
        if let Some(p) = labels.get(i) {
            out.push_str(&p.to_string());
        }
        for v in embedding.coordinates.row(i).iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
