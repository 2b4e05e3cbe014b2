//! Property-based invariants backed by independent oracles.

use deli_core::cp::CpDecomposition;
use deli_core::linalg::{coherence, khatri_rao};
use deli_core::oracle::{cp_oracle, NoiseSpec};
use deli_core::pipeline::{nonadaptive_deli, truth_mu0, DeliConfig, SamplingVariant};
use deli_core::synth::generate_synthetic_shaped;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn arb_cp(max_n: usize, max_r: usize) -> impl Strategy<Value = CpDecomposition> {
    (2usize..=4, 2usize..=max_n, 1usize..=max_r, any::<u64>()).prop_map(|(d, n, r, seed)| {
        generate_synthetic_shaped(&vec![n; d], r, 0.7, seed).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entry_matches_materialization(dec in arb_cp(6, 3)) {
        let dense = dec.materialize().unwrap();
        for idx in dense.indices() {
            let a = dec.entry(&idx).unwrap();
            let b = dense.get(&idx).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn inner_product_matches_dense(a in arb_cp(5, 3), b_seed in any::<u64>()) {
        let shape = a.shape();
        let b = generate_synthetic_shaped(&shape, 2, 0.0, b_seed).unwrap();
        let lazy = a.inner(&b).unwrap();
        let da = a.materialize().unwrap();
        let db = b.materialize().unwrap();
        let dense: f64 = da.values().iter().zip(db.values()).map(|(x, y)| x * y).sum();
        let scale = da.frobenius_norm() * db.frobenius_norm();
        prop_assert!((lazy - dense).abs() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn coherence_invariant_under_column_operations(seed in any::<u64>(), n in 8usize..20) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::<f64>::from_shape_fn((n, 3), |_| StandardNormal.sample(&mut rng));
        // Well-conditioned invertible mixer: random + dominant diagonal.
        let mut t = Array2::<f64>::from_shape_fn((3, 3), |_| StandardNormal.sample(&mut rng));
        for i in 0..3 {
            t[[i, i]] += 4.0;
        }
        let mixed = m.dot(&t);
        let a = coherence(m.view()).unwrap();
        let b = coherence(mixed.view()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "coherence changed {a} -> {b}");
    }

    #[test]
    fn rel_error_unchanged_by_canonicalization(t in arb_cp(5, 3), e_seed in any::<u64>()) {
        let shape = t.shape();
        let e = generate_synthetic_shaped(&shape, t.rank(), 0.3, e_seed).unwrap();
        let raw = CpDecomposition::rel_error(&t, &e).unwrap();
        let canon = CpDecomposition::rel_error(
            &t.clone().canonicalize(),
            &e.clone().canonicalize(),
        ).unwrap();
        prop_assert!((raw - canon).abs() <= 1e-9 * raw.max(1.0));
    }
}

#[test]
fn khatri_rao_coherence_bound_over_200_pairs() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut violations = 0;
    for seed in 0..200u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::<f64>::from_shape_fn((12, 3), |_| StandardNormal.sample(&mut rng));
        let b = Array2::<f64>::from_shape_fn((10, 3), |_| StandardNormal.sample(&mut rng));
        let kr = khatri_rao(a.view(), b.view()).unwrap();
        let bound = coherence(a.view()).unwrap() * coherence(b.view()).unwrap() * 3.0;
        if coherence(kr.view()).unwrap() > bound + 1e-9 {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

/// The mean nonadaptive ledger total over 50 seeds tracks the closed-form
/// expectation `s*m*n1*n2*p_dense + sum_k m*n1*n2*n_k*p_k` within 10%.
#[test]
fn nonadaptive_expected_sample_count() {
    let (n, d, r, s, m) = (30usize, 4usize, 3usize, 2usize, 1usize);
    let truth = generate_synthetic_shaped(&vec![n; d], r, 0.0, 1234).unwrap();
    let mu0 = truth_mu0(&truth).unwrap();
    let (c0, c3) = (2.0, 2.0);
    let p_dense = (c0 * mu0 * r as f64 * ((2 * n) as f64).ln().powi(2) / n as f64).min(1.0);
    let p_sparse = (c3 * mu0 * mu0 * (r * r) as f64 * (n as f64).ln() / (n * n) as f64).min(1.0);
    let expected = (s * m) as f64 * (n * n) as f64 * p_dense
        + (d - 2) as f64 * m as f64 * (n * n * n) as f64 * p_sparse;

    let mut totals = Vec::new();
    for seed in 0..50u64 {
        let oracle = cp_oracle(truth.clone(), NoiseSpec::noise_free(0)).unwrap();
        let mut cfg = DeliConfig::new(r, mu0, 9000 + seed);
        cfg.variant = SamplingVariant::Nonadaptive;
        cfg.s = s;
        cfg.m = m;
        // Theory formulas only: no budget caps.
        cfg.gamma = None;
        cfg.delta_oversample = None;
        let report = nonadaptive_deli(&oracle, &cfg).unwrap();
        totals.push(report.ledger.total as f64);
    }
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let ratio = mean / expected;
    assert!(
        (0.9..=1.1).contains(&ratio),
        "mean {mean} vs expected {expected} (ratio {ratio})"
    );
}

/// Ledger totals never exceed the sum of per-phase counts and phases cover
/// the union.
#[test]
fn ledger_total_equals_union_of_phases() {
    let truth = generate_synthetic_shaped(&[12, 12, 12], 2, 0.0, 7).unwrap();
    let mu0 = truth_mu0(&truth).unwrap();
    let oracle = cp_oracle(truth, NoiseSpec::noise_free(0)).unwrap();
    let report = deli_core::pipeline::adaptive_deli(&oracle, &DeliConfig::new(2, mu0, 8)).unwrap();
    let phase_sum: usize = report.ledger.per_phase.values().sum();
    assert_eq!(report.ledger.total, phase_sum); // pipeline phases are disjoint by construction
    assert!(report.ledger.total > 0);
}

#[test]
fn factor_match_zero_on_scale_product_one_equivalents() {
    for seed in 0..20u64 {
        let dec = generate_synthetic_shaped(&[6, 5, 4], 3, 0.5, 100 + seed).unwrap();
        let perm = [1usize, 2, 0];
        let scales = [[5.0, -0.2, -1.0], [0.5, 0.4, 5.0], [-2.0, 0.5, -1.0]];
        let factors: Vec<Array2<f64>> = (0..3)
            .map(|k| {
                let mut g = Array2::zeros(dec.factor(k).dim());
                for (dst, &src) in perm.iter().enumerate() {
                    let col = dec.factor(k).column(src).to_owned() * scales[dst][k];
                    g.column_mut(dst).assign(&col);
                }
                g
            })
            .collect();
        let weights = Array1::from_iter(perm.iter().map(|&src| dec.weights()[src]));
        let other = CpDecomposition::new(factors, weights).unwrap();
        let e = deli_core::cp::factor_match_error(&dec, &other).unwrap();
        assert!(e <= 1e-12, "seed {seed}: {e}");
    }
}
