mod common;

use common::*;

#[test]
fn mrl_weights_match_brute_force_minimizer() {
    for seed in 0..50 {
        let out = mrl_oracle(seed);
        assert!(
            out.relative_error < 1e-6,
            "seed {seed}: relative error {}",
            out.relative_error
        );
        assert_eq!(out.beaten_by_random, 0, "seed {seed}");
    }
}

#[test]
fn orthogonal_component_only_grows_rkhs_norm() {
    for seed in 100..120 {
        let out = representer_check(seed);
        assert!(out.rkhs_after > out.rkhs_before, "seed {seed}");
        assert!(out.data_fit_change < 1e-8, "seed {seed}: {}", out.data_fit_change);
        assert!(out.intrinsic_change < 1e-8, "seed {seed}: {}", out.intrinsic_change);
    }
}

#[test]
fn embedding_distance_equals_transition_row_distance() {
    for seed in 200..250 {
        let err = diffusion_distance_check(seed);
        assert!(err < 1e-8, "seed {seed}: {err}");
    }
}

#[test]
fn laplacian_quadratic_form_is_pairwise_sum() {
    for seed in 300..400 {
        let err = laplacian_identity_check(seed);
        assert!(err < 1e-10, "seed {seed}: {err}");
    }
}

#[test]
fn eigen_reconstruction_converges_monotonically() {
    for seed in 400..420 {
        let out = mercer_check(seed);
        assert!(out.full_rank_error <= 1e-8, "seed {seed}: {}", out.full_rank_error);
        assert!(out.monotone, "seed {seed}");
    }
}

#[test]
fn polarization_recovers_a_known_quadratic() {
    // f(a) = (a0 − 1)² + 2(a1 + 3)² + a0 a1
    let a = quadratic_minimizer(2, |v| (v[0] - 1.0).powi(2) + 2.0 * (v[1] + 3.0).powi(2) + v[0] * v[1]);
    // ∇f = 0: 2a0 − 2 + a1 = 0, 4a1 + 12 + a0 = 0
    assert!((a[0] - 20.0 / 7.0).abs() < 1e-12);
    assert!((a[1] + 26.0 / 7.0).abs() < 1e-12);
}
