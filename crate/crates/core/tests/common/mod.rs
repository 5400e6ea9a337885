//! Brute-force reference computations shared by the integration tests and the
//! acceptance suite. Everything here is written against dense matrices and
//! plain loops, independently of the library code paths it checks.

#![allow(dead_code)]

use mrloc::dds::fit_embedding;
use mrloc::graph::{build_gram, build_laplacian, build_transition, mercer_reconstruction_check, AdjacencyGraph};
use mrloc::mrl::{fit_with, FitOptions, RegularizationParams, TrainingSet};
use mrloc::rtf::RtfVector;
use mrloc::Complex64;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_samples(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<RtfVector> {
    let band: Vec<usize> = (1..=dim).collect();
    (0..n)
        .map(|_| {
            let values = (0..dim)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            RtfVector::new(values, band.clone(), 2 * dim + 2).unwrap()
        })
        .collect()
}

pub fn squared_distance(a: &RtfVector, b: &RtfVector) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm_sqr()).sum()
}

pub fn dense_gram(samples: &[RtfVector], epsilon: f64) -> DMatrix<f64> {
    let n = samples.len();
    DMatrix::from_fn(n, n, |i, j| {
        (-squared_distance(&samples[i], &samples[j]) / (2.0 * epsilon)).exp()
    })
}

/// Symmetric non-negative weights with zero diagonal; each pair is an edge
/// with probability `density`, and a random spanning path keeps it connected.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                let v = rng.random_range(0.05..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for pair in order.windows(2) {
        if w[(pair[0], pair[1])] == 0.0 {
            let v = rng.random_range(0.05..1.0);
            w[(pair[0], pair[1])] = v;
            w[(pair[1], pair[0])] = v;
        }
    }
    w
}

pub fn dense_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut l = -w.clone();
    for i in 0..n {
        l[(i, i)] = w.row(i).sum();
    }
    l
}

/// `(1/l) Σ_labelled (p_i − (Ka)_i)² + γ_k aᵀKa + γ_M (Ka)ᵀL(Ka)`.
pub fn objective(
    k: &DMatrix<f64>,
    lap: &DMatrix<f64>,
    labels: &[f64],
    gamma_k: f64,
    gamma_m: f64,
    a: &DVector<f64>,
) -> f64 {
    let f = k * a;
    let fit: f64 = labels.iter().enumerate().map(|(i, p)| (p - f[i]).powi(2)).sum::<f64>() / labels.len() as f64;
    fit + gamma_k * a.dot(&f) + gamma_m * f.dot(&(lap * &f))
}

/// Minimizer of a quadratic known only through evaluations: the Hessian and
/// linear term are recovered by polarization, then solved directly.
pub fn quadratic_minimizer(n: usize, eval: impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    let e = |i: usize| {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    };
    let c = eval(&DVector::zeros(n));
    let single: Vec<f64> = (0..n).map(|i| eval(&e(i))).collect();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                (eval(&(e(i) * 2.0)) - 2.0 * single[i] + c) / 2.0
            } else {
                (eval(&(e(i) + e(j))) - single[i] - single[j] + c) / 2.0
            };
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    // f(a) = aᵀHa − 2gᵀa + c
    let g = DVector::from_fn(n, |i, _| (h[(i, i)] + c - single[i]) / 2.0);
    h.lu().solve(&g).expect("positive definite quadratic")
}

pub struct MrlInstance {
    pub train: TrainingSet,
    pub gram: DMatrix<f64>,
    pub weights: DMatrix<f64>,
    pub epsilon: f64,
    pub params: RegularizationParams,
}

pub fn mrl_instance(seed: u64) -> MrlInstance {
    let mut r = rng(seed);
    let n = r.random_range(3..=10);
    let l = r.random_range(1..=n);
    let samples = random_samples(&mut r, n, 3);
    let labels: Vec<f64> = (0..l).map(|_| r.random_range(-2.0..2.0)).collect();
    let epsilon = r.random_range(0.05..0.3);
    let weights = random_weights(&mut r, n, 0.5);
    let params = RegularizationParams {
        gamma_k: 10f64.powf(r.random_range(-4.0..0.0)),
        gamma_m: 10f64.powf(r.random_range(-4.0..0.0)),
    };
    MrlInstance {
        gram: dense_gram(&samples, epsilon),
        train: TrainingSet::new(samples, labels).unwrap(),
        weights,
        epsilon,
        params,
    }
}

pub struct MrlOracleOutcome {
    pub relative_error: f64,
    pub beaten_by_random: usize,
}

/// Fitted weights against the brute-force minimizer, then against random
/// weight vectors scattered around it and across the unit cube.
pub fn mrl_oracle(seed: u64) -> MrlOracleOutcome {
    let inst = mrl_instance(seed);
    let n = inst.train.len();
    let lap = dense_laplacian(&inst.weights);
    let (gk, gm) = (inst.params.gamma_k, inst.params.gamma_m);
    let obj = |a: &DVector<f64>| objective(&inst.gram, &lap, &inst.train.labels, gk, gm, a);

    let gram = build_gram(&inst.train.samples, inst.epsilon).unwrap();
    let graph = AdjacencyGraph::from_dense(&inst.weights).unwrap();
    let model = fit_with(
        &inst.train,
        &gram,
        &build_laplacian(&graph),
        &inst.params,
        &FitOptions::uncentered(),
    )
    .unwrap();

    let reference = quadratic_minimizer(n, obj);
    let relative_error = (&model.weights - &reference).norm() / reference.norm().max(1e-300);

    let mut r = rng(seed ^ 0xBEEF);
    let best = obj(&model.weights);
    let scale = model.weights.amax().max(1.0);
    let beaten_by_random = (0..1000)
        .filter(|t| {
            let a = if t % 2 == 0 {
                let spread = 10f64.powf(r.random_range(-6.0..0.0)) * scale;
                &model.weights + DVector::from_fn(n, |_, _| r.random_range(-spread..spread))
            } else {
                DVector::from_fn(n, |_, _| r.random_range(-scale..scale))
            };
            obj(&a) < best
        })
        .count();
    MrlOracleOutcome {
        relative_error,
        beaten_by_random,
    }
}

pub struct RepresenterOutcome {
    pub rkhs_before: f64,
    pub rkhs_after: f64,
    pub data_fit_change: f64,
    pub intrinsic_change: f64,
}

/// Adds to the fitted function a component orthogonal to every kernel
/// section at the training points: `g = k(z, ·) − Σ c_i k(h_i, ·)` with
/// `K c = k_z`. It vanishes on the training set, so only the RKHS norm moves.
pub fn representer_check(seed: u64) -> RepresenterOutcome {
    let inst = mrl_instance(seed);
    let n = inst.train.len();
    let lap = dense_laplacian(&inst.weights);
    let gram = build_gram(&inst.train.samples, inst.epsilon).unwrap();
    let graph = AdjacencyGraph::from_dense(&inst.weights).unwrap();
    let model = fit_with(
        &inst.train,
        &gram,
        &build_laplacian(&graph),
        &inst.params,
        &FitOptions::uncentered(),
    )
    .unwrap();

    let mut r = rng(seed ^ 0xFACE);
    let z = random_samples(&mut r, 1, 3).remove(0);
    let mut centers = inst.train.samples.clone();
    centers.push(z);
    let k_ext = dense_gram(&centers, inst.epsilon);
    let k = k_ext.view((0, 0), (n, n)).into_owned();
    let k_z = k_ext.view((0, n), (n, 1)).column(0).into_owned();
    let c = k.clone().lu().solve(&k_z).unwrap();
    let beta = r.random_range(0.5..2.0);

    let mut extended = DVector::zeros(n + 1);
    extended.rows_mut(0, n).copy_from(&(&model.weights - &c * beta));
    extended[n] = beta;

    let terms = |values: &DVector<f64>| {
        let fit = inst
            .train
            .labels
            .iter()
            .enumerate()
            .map(|(i, p)| (p - values[i]).powi(2))
            .sum::<f64>()
            / inst.train.labelled() as f64;
        (fit, values.dot(&(&lap * values)))
    };
    let before_values = &k * &model.weights;
    let after_values = (&k_ext * &extended).rows(0, n).into_owned();
    let (fit0, int0) = terms(&before_values);
    let (fit1, int1) = terms(&after_values);
    RepresenterOutcome {
        rkhs_before: model.weights.dot(&before_values),
        rkhs_after: extended.dot(&(&k_ext * &extended)),
        data_fit_change: (fit1 - fit0).abs() / fit0.abs().max(1e-12),
        intrinsic_change: (int1 - int0).abs() / int0.abs().max(1e-12),
    }
}

/// Largest relative gap (absolute below 1e-6) between the full-rank embedding distance and the
/// stationary-weighted distance between rows of `P`.
pub fn diffusion_distance_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(3..=12);
    let w = random_weights(&mut r, n, 0.4);
    let degree: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let volume: f64 = degree.iter().sum();
    let p = DMatrix::from_fn(n, n, |i, j| w[(i, j)] / degree[i]);

    let graph = AdjacencyGraph::from_dense(&w).unwrap();
    let transition = build_transition(&graph).unwrap();
    let train = TrainingSet::new(random_samples(&mut r, n, 2), vec![0.0]).unwrap();
    let emb = fit_embedding(&train, &transition, n - 1).unwrap();

    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let reference: f64 = (0..n)
                .map(|c| (p[(i, c)] - p[(j, c)]).powi(2) / (degree[c] / volume))
                .sum::<f64>()
                .sqrt();
            let embedded = (emb.point(i) - emb.point(j)).norm();
            // leaves hanging off the same node share a row of P
            worst = worst.max((embedded - reference).abs() / reference.max(1e-6));
        }
    }
    worst
}

/// Relative gap between `fᵀLf` and `½ Σ_ij w_ij (f_i − f_j)²`.
pub fn laplacian_identity_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(2..=30);
    let density = r.random_range(0.1..0.9);
    let w = random_weights(&mut r, n, density);
    let f: DVector<f64> = DVector::from_fn(n, |_, _| r.random_range(-5.0..5.0));
    let mut pairwise = 0.0;
    for i in 0..n {
        for j in 0..n {
            pairwise += 0.5 * w[(i, j)] * (f[i] - f[j]).powi(2);
        }
    }
    let lap = build_laplacian(&AdjacencyGraph::from_dense(&w).unwrap());
    (lap.quadratic_form(&f) - pairwise).abs() / pairwise.abs().max(1e-300)
}

pub struct MercerOutcome {
    pub full_rank_error: f64,
    pub monotone: bool,
}

pub fn mercer_check(seed: u64) -> MercerOutcome {
    let mut r = rng(seed);
    let n = r.random_range(3..=20);
    let samples = random_samples(&mut r, n, 4);
    let gram = build_gram(&samples, r.random_range(0.05..2.0)).unwrap();
    let errors: Vec<f64> = (0..=n)
        .map(|k| mercer_reconstruction_check(&gram, k).unwrap())
        .collect();
    MercerOutcome {
        full_rank_error: errors[n],
        monotone: errors.windows(2).all(|w| w[1] <= w[0] + 1e-12),
    }
}
