use distrank_core::divergence::{self, DivergenceKind, Regime, DEFAULT_TOL};
use distrank_core::experiments::{aca_rank, linear_fit};
use distrank_core::families::FamilySpec;
use distrank_core::hmatrix::{Builder, HMatrix, Layout};
use distrank_core::partition::{Block, Domain, Parity, PartitionScheme, Region};
use distrank_core::separated::{
    build_constructive, multi_index_count, numerical_rank, singular_values, truncated_svd, uniform_grid,
    RankConvention, Truncation,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn e(p: f64, q: f64) -> f64 {
    divergence::eval(DivergenceKind::E, p, q).unwrap()
}

/// Independent direct formula, valid away from cancellation.
fn e_direct(p: f64, q: f64) -> f64 {
    p * (p / q).ln() - (p - q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn divergences_are_nonnegative(p in 0.0f64..50.0, q in 1e-9f64..50.0) {
        for kind in [DivergenceKind::E, DivergenceKind::EStar] {
            let v = divergence::eval(kind, p.max(1e-12), q).unwrap();
            prop_assert!(v >= 0.0);
        }
    }

    #[test]
    fn e_matches_direct_formula(p in 1e-3f64..50.0, q in 1e-3f64..50.0) {
        prop_assume!((p - q).abs() > 0.2 * q);
        let (a, b) = (e(p, q), e_direct(p, q));
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn duality_and_reflection(p in 1e-6f64..0.999_999, q in 1e-6f64..0.999_999) {
        let star = divergence::eval(DivergenceKind::EStar, p, q).unwrap();
        prop_assert_eq!(star, e(q, p));
        let refl = divergence::eval(DivergenceKind::EReflected, p, q).unwrap();
        prop_assert_eq!(refl, e(1.0 - p, 1.0 - q));
    }

    #[test]
    fn kl_splits_into_e_and_reflection(p in 0.0f64..=1.0, q in 1e-9f64..0.999_999_999) {
        let kl = divergence::eval(DivergenceKind::KL, p, q).unwrap();
        let parts = e(p, q) + divergence::eval(DivergenceKind::EReflected, p, q).unwrap();
        prop_assert!((kl - parts).abs() <= 1e-12 * kl.max(1.0), "{kl} vs {parts}");
    }

    #[test]
    fn threshold_roots_are_consistent(log_m in -8.0f64..2.0) {
        let m = 10f64.powf(log_m);
        let lower = divergence::solve_thresholds(Regime::Lower, m, DEFAULT_TOL).unwrap();
        // E(1||q_M) = M and, below the clamp, E(p_M||1) = M
        prop_assert!((e(1.0, lower.q_m) - m).abs() <= 1e-10 * m.max(1.0));
        if lower.p_m < 2.0 {
            prop_assert!((e(lower.p_m, 1.0) - m).abs() <= 1e-10 * m.max(1.0));
        }
        let upper = divergence::solve_thresholds(Regime::Upper, m, DEFAULT_TOL).unwrap();
        if upper.q_m < 2.0 {
            prop_assert!((e(1.0, upper.q_m) - m).abs() <= 1e-10 * m.max(1.0));
        }
        if upper.p_m > 0.0 {
            prop_assert!((e(upper.p_m, 1.0) - m).abs() <= 1e-10 * m.max(1.0));
        }
        for t in [lower, upper] {
            let r = t.divergence() / m;
            prop_assert!(r > 0.0 && r <= 6.0);
        }
    }

    #[test]
    fn every_interior_point_has_one_owner(
        level_max in 1i32..=8,
        quarter in any::<bool>(),
        u in 0.0f64..1.0,
        v in 0.0f64..1.0,
    ) {
        let domain = if quarter {
            Domain::QuarterPlane { extent: 8.0, level_max }
        } else {
            Domain::UnitSquare { level_max }
        };
        let s = PartitionScheme::build(domain).unwrap();
        let (p, q) = (u * s.extent(), v * s.extent());
        let h = s.cell_width();
        // skip points on cell boundaries, where ownership goes to the tie-break
        prop_assume!((p / h).fract() > 1e-9 && (q / h).fract() > 1e-9);
        prop_assert_eq!(s.count_containing(p, q), 1);
        match s.locate(p, q).unwrap() {
            Region::Block(b) => {
                prop_assert!(b.contains_closed(p, q));
                // even blocks lie above the diagonal, odd below
                match b.parity {
                    Parity::Even => prop_assert!(q > p),
                    Parity::Odd => prop_assert!(q < p),
                }
            }
            Region::Dense(c) => prop_assert!(c.contains_closed(p, q)),
        }
    }

    #[test]
    fn numerical_rank_is_monotone_in_eps(level in 1i32..4, index_seed in 0u64..64, n_exp in 0u32..11) {
        let index = index_seed % (1u64 << level);
        let block = Block::new(level, index);
        let n = (1u64 << n_exp) as f64;
        let p = uniform_grid(block.p_interval.lo, block.p_interval.hi, 48);
        let q = uniform_grid(block.q_interval.lo, block.q_interval.hi, 48);
        let m = DMatrix::from_fn(48, 48, |i, j| divergence::kernel(DivergenceKind::KL, n, p[i], q[j]));
        let mut previous = usize::MAX;
        for t in (2..=12).rev() {
            let eps = 10f64.powi(-t);
            let r = numerical_rank(&m, eps, RankConvention::RelativeToSigma1).unwrap();
            prop_assert!(r <= previous);
            previous = r;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constructive_blocks_are_accurate(
        level in 1i32..4,
        index_seed in 0u64..64,
        n_choice in 0usize..3,
        kind_choice in 0usize..3,
        eps_choice in 0usize..2,
    ) {
        let index = index_seed % (1u64 << level);
        let block = Block::new(level, index);
        let n = [1.0, 32.0, 1024.0][n_choice];
        let kind = [DivergenceKind::E, DivergenceKind::EStar, DivergenceKind::EReflected][kind_choice];
        let eps = [1e-6, 1e-9][eps_choice];
        let (approx, report) = build_constructive(&block, kind, n, eps, 40).unwrap();
        let err = approx.max_abs_error(|p, q| divergence::kernel(kind, n, p, q));
        prop_assert!(err <= 10.0 * eps, "error {err}");
        prop_assert!(approx.rank() <= report.raw_terms.max(1));
        prop_assert_eq!(report.raw_terms, multi_index_count(report.degree));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn matvec_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let spec = FamilySpec::poisson(200, 200.0);
        let h = HMatrix::compress(spec, 1e-8, Builder::Aca).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..h.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..h.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = h.matvec(&combo).unwrap();
        let (hx, hy) = (h.matvec(&x).unwrap(), h.matvec(&y).unwrap());
        let rhs: Vec<f64> = hx.iter().zip(&hy).map(|(u, v)| a * u + b * v).collect();
        let diff: f64 = lhs.iter().zip(&rhs).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-12 * norm.max(1e-300));
    }
}

#[test]
fn aca_rank_tracks_svd_rank_on_random_blocks() {
    let specs = [
        FamilySpec::binomial(512),
        FamilySpec::Poisson {
            k_max: 511,
            lambda_max: 512.0,
            lambda_grid: 512,
        },
        FamilySpec::ChiSquared {
            x_max: 512.0,
            x_grid: 512,
            k_max: 512,
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for draw in 0..20 {
        let spec = specs[draw % 3];
        let slots = Layout::new(spec).unwrap().block_slots();
        let slot = &slots[rng.random_range(0..slots.len())];
        let block = spec.exact_block(slot.rows.clone(), slot.cols.clone());
        let sv = singular_values(&block);
        for eps in [1e-6, 1e-9] {
            let svd = distrank_core::separated::rank_from_singular_values(&sv, eps, RankConvention::RelativeToSigma1);
            let aca = aca_rank(&spec, slot, eps, RankConvention::RelativeToSigma1).unwrap();
            assert!(
                (svd..=svd + 2).contains(&aca),
                "{} block ({}, {}) eps {eps}: svd {svd} aca {aca}",
                spec.name(),
                slot.block.level,
                slot.block.index
            );
        }
    }
}

#[test]
fn rank_grows_linearly_in_digits() {
    let block = Block::new(1, 1);
    let p = uniform_grid(block.p_interval.lo, block.p_interval.hi, 128);
    let q = uniform_grid(block.q_interval.lo, block.q_interval.hi, 128);
    let m = DMatrix::from_fn(128, 128, |i, j| divergence::kernel(DivergenceKind::KL, 1024.0, p[i], q[j]));
    let sv = singular_values(&m);
    let t: Vec<f64> = (3..=12).map(f64::from).collect();
    let r: Vec<f64> = (3..=12)
        .map(|k| distrank_core::separated::rank_from_singular_values(&sv, 10f64.powi(-k), RankConvention::RelativeToSigma1) as f64)
        .collect();
    let (slope, _, r2) = linear_fit(&t, &r);
    assert!(slope > 0.0 && r2 >= 0.9, "slope {slope} r2 {r2} ranks {r:?}");
}

#[test]
fn svd_rank_is_self_consistent() {
    let p = uniform_grid(1.0, 2.0, 128);
    let q = uniform_grid(0.0, 1.0, 128);
    let m = DMatrix::from_fn(128, 128, |i, j| divergence::kernel(DivergenceKind::E, 1.0, p[i], q[j]));
    let eps = 1e-9;
    let r = numerical_rank(&m, eps, RankConvention::RelativeToSigma1).unwrap();
    let sigma1 = singular_values(&m)[0];
    let spectral = |k: usize| {
        let t = truncated_svd(&m, Truncation { absolute: 0.0, relative: 0.0 });
        let keep = DMatrix::from_fn(128, 128, |i, j| (0..k).map(|c| t.u[(i, c)] * t.v[(j, c)]).sum::<f64>());
        singular_values(&(&m - keep))[0]
    };
    assert!(spectral(r) <= eps * sigma1 * (1.0 + 1e-6));
    assert!(spectral(r - 1) > eps * sigma1);
}

#[test]
fn ownership_is_exhaustive_for_small_dims() {
    for size in [4usize, 17, 64, 100, 255] {
        for spec in [
            FamilySpec::binomial(size),
            FamilySpec::poisson(size, size as f64),
            FamilySpec::chi_squared(size as f64, size),
        ] {
            let h = HMatrix::compress(spec, 1e-6, Builder::Aca).unwrap();
            let counts = h.ownership_counts();
            assert!(counts.iter().all(|&c| c == 1), "{} size {size}", spec.name());
        }
    }
}

#[test]
fn small_matrices_match_dense_for_every_family() {
    for spec in [
        FamilySpec::binomial(40),
        FamilySpec::poisson(50, 48.0),
        FamilySpec::chi_squared(60.0, 33),
    ] {
        let dense = spec.exact_block(0..spec.rows(), 0..spec.cols());
        for builder in [Builder::Aca, Builder::Constructive] {
            for eps in [1e-4, 1e-7, 1e-10] {
                let h = HMatrix::compress(spec, eps, builder).unwrap();
                let err = (h.to_dense() - &dense).amax();
                assert!(err <= 10.0 * eps, "{} {builder:?} eps {eps}: {err}", spec.name());
            }
        }
    }
}

#[test]
fn storage_shrinks_as_eps_grows() {
    for spec in [FamilySpec::binomial(300), FamilySpec::poisson(300, 300.0)] {
        for builder in [Builder::Aca, Builder::Constructive] {
            let stored: Vec<usize> = [1e-10, 1e-8, 1e-6, 1e-3, 0.5]
                .iter()
                .map(|&eps| HMatrix::compress(spec, eps, builder).unwrap().stored_entries())
                .collect();
            assert!(stored.windows(2).all(|w| w[1] <= w[0]), "{} {builder:?}: {stored:?}", spec.name());
        }
    }
}

#[test]
fn coarse_eps_keeps_ranks_tiny() {
    for spec in [
        FamilySpec::binomial(256),
        FamilySpec::poisson(255, 256.0),
        FamilySpec::chi_squared(256.0, 256),
    ] {
        let h = HMatrix::compress(spec, 0.5, Builder::Aca).unwrap();
        assert!(h.max_rank() <= 2);
        assert!(h.storage_report().ratio < 0.5);
    }
}

#[test]
fn sampled_verification_matches_bounds() {
    let h = HMatrix::compress(FamilySpec::binomial(1024), 1e-9, Builder::Aca).unwrap();
    let r = h.verify(100_000, 9).unwrap();
    assert!(r.max_abs_error <= 1e-7);
    let h = HMatrix::compress(FamilySpec::poisson(511, 512.0), 1e-6, Builder::Constructive).unwrap();
    let r = h.verify(20_000, 9).unwrap();
    assert!(r.rms_error <= r.max_abs_error && r.max_abs_error <= 1e-5);
}

#[test]
fn entries_stay_finite_for_large_binomial() {
    let spec = FamilySpec::binomial(1 << 14);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20_000 {
        let (i, j) = (rng.random_range(0..spec.rows()), rng.random_range(0..spec.cols()));
        let v = spec.entry_exact(i, j).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }
}

#[test]
fn stirling_within_one_percent_for_large_size_parameter() {
    let b = FamilySpec::binomial(2048);
    for k in (200..=1848).step_by(41) {
        let p = k as f64 / 2048.0;
        assert!(2048.0 * p * (1.0 - p) >= 100.0);
        for j in (0..2048).step_by(97) {
            let exact = b.entry_exact(k, j).unwrap();
            if exact > 1e-290 {
                let s = b.entry_stirling(k, j).unwrap();
                assert!((s - exact).abs() <= 0.01 * exact);
            }
        }
    }
}
