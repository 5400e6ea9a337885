//! Experiment orchestration: scenario generation, evaluation of the three
//! localizers, parameter sweeps and the sequential adaptation protocol.

mod config;
mod evaluate;
mod scenario;
mod sequential;
mod sweep;

pub use config::{
    ConstellationConfig, DdsSettings, FeatureConfig, GammaSelection, GccSettings, KernelSettings, Method, MrlSettings,
    RoomConfig, RunSettings, SampleConfig, ScenarioConfig, SignalConfig,
};
pub use evaluate::{
    evaluate_dataset, predictions_csv, read_predictions_csv, resolve_kernel, select_kernel, train_dds, train_indices,
    train_mrl, EvaluationReport, MethodReport, PredictionRow, TrainedMrl,
};
pub use scenario::{build_scene, generate_dataset, render_dataset, sample_plan, SamplePlan, Scene};
pub use sequential::{run_sequential, SequentialReport};
pub use sweep::{draw_rotations, run_sweep, SweepAxis, SweepCell, SweepReport, SweepRow};

use serde::Serialize;

use crate::archive::sha256_hex;
use crate::error::{Error, Result};

/// Note recorded in every dataset: sources are white noise, not speech.
pub const SOURCE_NOTE: &str = "white Gaussian noise surrogate for speech";

/// Deterministic seed derivation (splitmix64 finalizer over both inputs).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn sha256_json<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))
}

/// `sqrt(mean((p − t)²))` in degrees.
pub fn evaluate_rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: predictions.len(),
        });
    }
    let sq: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sq / predictions.len() as f64).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Empty("rank correlation needs two points"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// `n` evenly spaced values over `[lo, hi]`; the midpoint when `n = 1`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(evaluate_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(evaluate_rmse(&[7.5], &[10.0]).unwrap(), 2.5);
        let v = evaluate_rmse(&[3.0, -4.0], &[0.0, 0.0]).unwrap();
        assert!((v - 5.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(evaluate_rmse(&[], &[]).is_err());
        assert!(evaluate_rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 25.0, 100.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn seeds_and_grid() {
        assert_eq!(mix_seed(1, 2), mix_seed(1, 2));
        assert_ne!(mix_seed(1, 2), mix_seed(2, 1));
        assert_eq!(linspace(10.0, 60.0, 6), vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
        assert_eq!(linspace(0.0, 10.0, 1), vec![5.0]);
    }
}
