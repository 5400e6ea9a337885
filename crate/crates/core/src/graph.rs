//! Kernel and graph machinery shared by the MRL and DDS localizers.
//!
//! Every kernel in here is Gaussian in the squared Euclidean distance between
//! RTF vectors. Scales are carried in squared-distance units and always enter
//! as `exp(-d² / (2ε))`; callers that want a bare `exp(-d² / ε)` pass `ε / 2`.

use std::collections::VecDeque;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rtf::{squared_distance, RtfVector};

/// `exp(-‖h1 - h2‖² / (2ε))`.
pub fn gaussian_kernel(h1: &RtfVector, h2: &RtfVector, epsilon: f64) -> Result<f64> {
    check_scale(epsilon)?;
    Ok(gaussian(squared_distance(h1, h2)?, epsilon))
}

#[inline]
pub(crate) fn gaussian(dist2: f64, epsilon: f64) -> f64 {
    (-dist2 / (2.0 * epsilon)).exp()
}

fn check_scale(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "kernel scale must be positive, got {epsilon}"
        )))
    }
}

/// Dense matrix of pairwise squared distances between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(pub DMatrix<f64>);

impl DistanceMatrix {
    pub fn from_samples(samples: &[RtfVector]) -> Result<Self> {
        if let Some(first) = samples.first() {
            if samples.iter().any(|s| !s.same_band(first)) {
                return Err(Error::BandMismatch);
            }
        }
        let n = samples.len();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = squared_distance(&samples[i], &samples[j])?;
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        Ok(DistanceMatrix(d))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    /// Indices of the `k` nearest other samples to `i`, closest first; ties
    /// broken by index.
    pub fn nearest(&self, i: usize, k: usize) -> Vec<usize> {
        let mut others: Vec<usize> = (0..self.len()).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| self.0[(i, a)].total_cmp(&self.0[(i, b)]).then(a.cmp(&b)));
        others.truncate(k);
        others
    }

    /// Median over samples of the squared distance to the `k`-th nearest
    /// neighbor.
    pub fn median_knn_scale(&self, k: usize) -> Result<f64> {
        let n = self.len();
        if k == 0 || k >= n {
            return Err(Error::InvalidParameter(format!(
                "neighbor count must satisfy 1 <= k < N = {n}, got {k}"
            )));
        }
        let mut kth: Vec<f64> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| self.0[(i, j)]).collect();
                row.select_nth_unstable_by(k - 1, f64::total_cmp);
                row[k - 1]
            })
            .collect();
        let scale = median(&mut kth);
        if scale > 0.0 {
            Ok(scale)
        } else {
            Err(Error::InvalidParameter(
                "median neighbor distance is zero; samples are degenerate".into(),
            ))
        }
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Kernel scales and neighborhood size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Reproducing kernel scale.
    pub epsilon_k: f64,
    /// Adjacency kernel scale.
    pub epsilon_w: f64,
    /// Nyström affinity scale.
    pub epsilon_b: f64,
    /// Scale for the DDS softmax over diffusion distances (distance units).
    pub epsilon_gamma: f64,
    pub num_neighbors: usize,
}

impl KernelConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        for eps in [self.epsilon_k, self.epsilon_w, self.epsilon_b, self.epsilon_gamma] {
            check_scale(eps)?;
        }
        if self.num_neighbors == 0 || self.num_neighbors >= n {
            return Err(Error::InvalidParameter(format!(
                "num_neighbors must satisfy 1 <= k < N = {n}, got {}",
                self.num_neighbors
            )));
        }
        Ok(())
    }
}

/// Dense Gram matrix of the reproducing kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub epsilon: f64,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }
}

pub fn build_gram(samples: &[RtfVector], epsilon_k: f64) -> Result<GramMatrix> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter("Gram matrix needs at least two samples".into()));
    }
    gram_from_distances(&DistanceMatrix::from_samples(samples)?, epsilon_k)
}

pub fn gram_from_distances(dist: &DistanceMatrix, epsilon_k: f64) -> Result<GramMatrix> {
    check_scale(epsilon_k)?;
    Ok(GramMatrix {
        entries: dist.0.map(|d2| gaussian(d2, epsilon_k)),
        epsilon: epsilon_k,
    })
}

/// Sparse symmetric k-NN affinity graph with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    /// Per-row `(column, weight)` pairs sorted by column.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub degree: Vec<f64>,
    /// Number of connected components.
    pub components: usize,
}

impl AdjacencyGraph {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_connected(&self) -> bool {
        self.components == 1
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map_or(0.0, |pos| self.rows[i][pos].1)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut w = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                w[(i, j)] = v;
            }
        }
        w
    }

    /// Builds from explicit symmetric weights (used by tests and tools).
    pub fn from_dense(w: &DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: w.ncols(),
            });
        }
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                let v = w[(i, j)];
                if v < 0.0 || (v - w[(j, i)]).abs() > 1e-12 * v.abs().max(1.0) {
                    return Err(Error::InvalidParameter(
                        "weights must be symmetric and non-negative".into(),
                    ));
                }
                if i != j && v > 0.0 {
                    rows[i].push((j, v));
                }
            }
        }
        Ok(Self::from_rows(rows))
    }

    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let degree = rows.iter().map(|r| r.iter().map(|&(_, v)| v).sum()).collect();
        let components = count_components(&rows);
        AdjacencyGraph {
            rows,
            degree,
            components,
        }
    }

    /// `(row, col, value)` triplets, one per line.
    pub fn to_triplets(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out.push_str(&format!("{i} {j} {v:.17e}\n"));
            }
        }
        out
    }
}

fn count_components(rows: &[Vec<(usize, f64)>]) -> usize {
    let n = rows.len();
    let mut seen = vec![false; n];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &rows[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    components
}

/// Gaussian weights on the symmetrized k-NN edge set: `(i, j)` is an edge if
/// either is among the other's `num_neighbors` nearest.
///
/// A disconnected result is returned (and logged); downstream builders
/// reject it.
pub fn build_adjacency(samples: &[RtfVector], epsilon_w: f64, num_neighbors: usize) -> Result<AdjacencyGraph> {
    adjacency_from_distances(&DistanceMatrix::from_samples(samples)?, epsilon_w, num_neighbors)
}

pub fn adjacency_from_distances(dist: &DistanceMatrix, epsilon_w: f64, num_neighbors: usize) -> Result<AdjacencyGraph> {
    check_scale(epsilon_w)?;
    let n = dist.len();
    if num_neighbors == 0 || num_neighbors >= n {
        return Err(Error::InvalidParameter(format!(
            "num_neighbors must satisfy 1 <= k < N = {n}, got {num_neighbors}"
        )));
    }
    let mut edge = vec![vec![false; n]; n];
    for i in 0..n {
        for j in dist.nearest(i, num_neighbors) {
            edge[i][j] = true;
            edge[j][i] = true;
        }
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| edge[i][j])
                .map(|j| (j, gaussian(dist.0[(i, j)], epsilon_w)))
                .collect()
        })
        .collect();
    let graph = AdjacencyGraph::from_rows(rows);
    if !graph.is_connected() {
        warn!("adjacency graph has {} connected components", graph.components);
    }
    Ok(graph)
}

/// `L = D - W`, stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLaplacian {
    pub degree: Vec<f64>,
    pub off_diagonal: Vec<Vec<(usize, f64)>>,
}

pub fn build_laplacian(graph: &AdjacencyGraph) -> GraphLaplacian {
    GraphLaplacian {
        degree: graph.degree.clone(),
        off_diagonal: graph.rows.clone(),
    }
}

impl GraphLaplacian {
    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            l[(i, i)] = self.degree[i];
            for &(j, w) in &self.off_diagonal[i] {
                l[(i, j)] -= w;
            }
        }
        l
    }

    pub fn mul_vec(&self, f: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            (0..self.len())
                .map(|i| self.degree[i] * f[i] - self.off_diagonal[i].iter().map(|&(j, w)| w * f[j]).sum::<f64>()),
        )
    }

    /// `L · M` for a dense `M`.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.len();
        let mut out = DMatrix::zeros(n, m.ncols());
        for i in 0..n {
            let mut row = m.row(i) * self.degree[i];
            for &(j, w) in &self.off_diagonal[i] {
                row -= m.row(j) * w;
            }
            out.set_row(i, &row);
        }
        out
    }

    /// `fᵀ L f`.
    pub fn quadratic_form(&self, f: &DVector<f64>) -> f64 {
        f.dot(&self.mul_vec(f))
    }
}

/// Row-stochastic `P = D⁻¹W` with its stationary distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub matrix: DMatrix<f64>,
    /// Leading left eigenvector, `degree / Σ degree`.
    pub stationary: DVector<f64>,
    degree: DVector<f64>,
    weights: DMatrix<f64>,
}

pub fn build_transition(graph: &AdjacencyGraph) -> Result<TransitionMatrix> {
    if let Some(i) = graph.degree.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::ZeroDegree(i));
    }
    let weights = graph.to_dense();
    let degree = DVector::from_vec(graph.degree.clone());
    let mut matrix = weights.clone();
    for (i, mut row) in matrix.row_iter_mut().enumerate() {
        row /= degree[i];
    }
    let stationary = &degree / degree.sum();
    Ok(TransitionMatrix {
        matrix,
        stationary,
        degree,
        weights,
    })
}

/// Eigen-pairs of a transition matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Right eigenvectors as columns, normalized so that
    /// `Σ_r φ0(r) ψ(r)² = 1`; the first column is the constant vector.
    pub right_vectors: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn degree(&self) -> &DVector<f64> {
        &self.degree
    }

    /// Spectral decomposition through the symmetric conjugate
    /// `S = D^{1/2} P D^{-1/2} = D^{-1/2} W D^{-1/2}`.
    ///
    /// Each non-trivial vector is sign-fixed so its largest-magnitude entry
    /// is positive.
    pub fn spectrum(&self) -> TransitionSpectrum {
        let n = self.len();
        let inv_sqrt = self.degree.map(|d| 1.0 / d.sqrt());
        let mut s = self.weights.clone();
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
        s = (&s + s.transpose()) * 0.5;
        let eig = SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let volume = self.degree.sum();
        let mut right = DMatrix::zeros(n, n);
        let mut eigenvalues = Vec::with_capacity(n);
        for (col, &idx) in order.iter().enumerate() {
            eigenvalues.push(eig.eigenvalues[idx]);
            let mut v = eig.eigenvectors.column(idx).component_mul(&inv_sqrt) * volume.sqrt();
            if col == 0 {
                // constant up to sign and rounding; pin it exactly
                v.fill(1.0);
            } else {
                let pivot = v
                    .iter()
                    .copied()
                    .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                    .unwrap_or(0.0);
                if pivot < 0.0 {
                    v.neg_mut();
                }
            }
            right.set_column(col, &v);
        }
        TransitionSpectrum {
            eigenvalues,
            right_vectors: right,
        }
    }
}

/// Relative Frobenius error of the rank-`rank` eigen-reconstruction of `K`.
pub fn mercer_reconstruction_check(gram: &GramMatrix, rank: usize) -> Result<f64> {
    let n = gram.len();
    if rank > n {
        return Err(Error::InvalidParameter(format!("rank {rank} exceeds N = {n}")));
    }
    let eig = SymmetricEigen::new(gram.entries.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut approx = DMatrix::zeros(n, n);
    for &idx in order.iter().take(rank) {
        let v = eig.eigenvectors.column(idx);
        approx += v * v.transpose() * eig.eigenvalues[idx];
    }
    Ok((&gram.entries - approx).norm() / gram.entries.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex64;

    pub(crate) fn points_1d(xs: &[f64]) -> Vec<RtfVector> {
        xs.iter()
            .map(|&x| RtfVector::new(vec![Complex64::new(x, 0.0)], vec![1], 4).unwrap())
            .collect()
    }

    #[test]
    fn kernel_examples() {
        let p = points_1d(&[0.0, 2.0]);
        assert_eq!(gaussian_kernel(&p[0], &p[0], 0.3).unwrap(), 1.0);
        // ‖h1-h2‖² = 4 = 2ε with ε = 2
        let v = gaussian_kernel(&p[0], &p[1], 2.0).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(v, gaussian_kernel(&p[1], &p[0], 2.0).unwrap());
        assert!(gaussian_kernel(&p[0], &p[1], 0.0).is_err());
    }

    #[test]
    fn locality_contract() {
        let eps = 0.7;
        let far = (20.0 * eps as f64).sqrt();
        let near = (0.02 * eps as f64).sqrt();
        let p = points_1d(&[0.0, far, near]);
        assert!(gaussian_kernel(&p[0], &p[1], eps).unwrap() < 5e-5);
        assert!(gaussian_kernel(&p[0], &p[2], eps).unwrap() > 0.99);
    }

    #[test]
    fn gram_examples() {
        let same = points_1d(&[1.0, 1.0, 1.0]);
        let k = build_gram(&same, 0.5).unwrap();
        assert!(k.entries.iter().all(|&v| v == 1.0));

        let p = points_1d(&[0.0, 1.0, 2.0]);
        let k = build_gram(&p, 0.5).unwrap();
        assert!((k.entries[(0, 2)] - (-4f64).exp()).abs() < 1e-15);
        assert!((0..3).all(|i| k.entries[(i, i)] == 1.0));
        assert_eq!(k.entries, k.entries.transpose());
        assert!(build_gram(&p[..1], 0.5).is_err());
    }

    #[test]
    fn adjacency_or_rule() {
        let p = points_1d(&[0.0, 1.0, 10.0]);
        let g = build_adjacency(&p, 1.0, 1).unwrap();
        assert!(g.weight(0, 1) > 0.0);
        assert!(g.weight(1, 2) > 0.0, "kept because 2's nearest is 1");
        assert_eq!(g.weight(0, 2), 0.0);
        assert!(g.is_connected());
    }

    #[test]
    fn full_neighborhood_equals_affinity() {
        let p = points_1d(&[0.0, 0.4, 1.3, 2.0, 2.2]);
        let g = build_adjacency(&p, 0.8, 4).unwrap();
        let k = build_gram(&p, 0.8).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { 0.0 } else { k.entries[(i, j)] };
                assert_eq!(g.weight(i, j), expected);
            }
        }
        assert!(build_adjacency(&p, 0.8, 5).is_err());
    }

    #[test]
    fn disconnected_graph_flagged() {
        let p = points_1d(&[0.0, 0.1, 10.0, 10.1]);
        let g = build_adjacency(&p, 1.0, 1).unwrap();
        assert_eq!(g.components, 2);
        // zero-weight edges still count as structure; zero degree is what P rejects
        let isolated = AdjacencyGraph::from_dense(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(matches!(build_transition(&isolated), Err(Error::ZeroDegree(0))));
    }

    #[test]
    fn two_node_laplacian_and_transition() {
        let w = 0.3;
        let g = AdjacencyGraph::from_dense(&DMatrix::from_row_slice(2, 2, &[0.0, w, w, 0.0])).unwrap();
        let l = build_laplacian(&g).to_dense();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[w, -w, -w, w]));
        let eig = SymmetricEigen::new(l.clone());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-15 && (ev[1] - 2.0 * w).abs() < 1e-15);

        let p = build_transition(&g).unwrap();
        assert_eq!(p.matrix, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(p.stationary.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn transition_spectrum_structure() {
        let p = points_1d(&[0.0, 0.3, 0.7, 1.6, 2.0, 2.1, 3.3]);
        let g = build_adjacency(&p, 0.5, 2).unwrap();
        let t = build_transition(&g).unwrap();
        for row in t.matrix.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let spec = t.spectrum();
        assert!((spec.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!(spec.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for j in 0..t.len() {
            let psi = spec.right_vectors.column(j);
            let residual = &t.matrix * psi - psi * spec.eigenvalues[j];
            assert!(residual.norm() < 1e-10, "component {j}");
            let weighted: f64 = (0..t.len()).map(|r| t.stationary[r] * psi[r] * psi[r]).sum();
            assert!((weighted - 1.0).abs() < 1e-10);
        }
        // φ0 is a left eigenvector with eigenvalue 1
        let left = t.matrix.transpose() * &t.stationary;
        assert!((left - &t.stationary).norm() < 1e-14);
    }

    #[test]
    fn mercer_examples() {
        let p = points_1d(&[0.0, 0.5, 1.1, 1.7, 3.0]);
        let k = build_gram(&p, 0.4).unwrap();
        assert!(mercer_reconstruction_check(&k, 5).unwrap() <= 1e-8);
        assert!((mercer_reconstruction_check(&k, 0).unwrap() - 1.0).abs() < 1e-15);
        assert!(mercer_reconstruction_check(&k, 6).is_err());
    }

    #[test]
    fn median_scale() {
        let p = points_1d(&[0.0, 1.0, 3.0, 6.0]);
        let d = DistanceMatrix::from_samples(&p).unwrap();
        // nearest squared distances: 1, 1, 4, 9
        assert_eq!(d.median_knn_scale(1).unwrap(), 2.5);
        assert!(d.median_knn_scale(4).is_err());
    }

    #[test]
    fn triplets_round_trip_weights() {
        let p = points_1d(&[0.0, 1.0, 2.5]);
        let g = build_adjacency(&p, 1.0, 1).unwrap();
        let text = g.to_triplets();
        let parsed: Vec<(usize, usize, f64)> = text
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split_whitespace().collect();
                (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
            })
            .collect();
        assert_eq!(parsed.len(), 4);
        for (i, j, v) in parsed {
            assert_eq!(g.weight(i, j), v);
        }
    }
}
