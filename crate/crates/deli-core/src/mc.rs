//! The two slice-completion engines: adaptive column-subspace completion and
//! iterative nuclear-norm minimization.

use ndarray::{Array1, Array2};
use ndarray_linalg::SVD;
use rand::seq::index::sample as sample_without_replacement;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::DeliError;
use crate::linalg::{pinv, truncated_svd, RANK_CUTOFF};
use crate::oracle::MatrixSliceView;
use crate::Result;

/// Configuration of the adaptive column-subspace completer.
#[derive(Debug, Clone)]
pub struct AdaptiveMcConfig {
    /// Coherence bound on the column space.
    pub mu0: f64,
    /// Target rank; the basis never grows past it.
    pub rank: usize,
    /// Per-slice failure budget.
    pub delta: f64,
    /// Constant in the probe-count formula `w = min(ceil(C mu0 r log(r/delta)), n1)`.
    pub probe_constant: f64,
    /// Relative residual threshold of the subspace membership test (noise-free).
    pub residual_tol: f64,
    /// Hard cap on the probe count, e.g. from a per-slice sample budget.
    pub probe_cap: Option<usize>,
    /// Per-entry noise standard deviation; switches the membership test to the
    /// noise-robust threshold and caps (instead of erroring on) basis growth.
    pub noise_sigma: Option<f64>,
    pub seed: u64,
}

impl AdaptiveMcConfig {
    pub fn new(mu0: f64, rank: usize, delta: f64, seed: u64) -> Self {
        AdaptiveMcConfig {
            mu0,
            rank,
            delta,
            probe_constant: 8.0,
            residual_tol: 1e-8,
            probe_cap: None,
            noise_sigma: None,
            seed,
        }
    }

    /// Probe count per column.
    pub fn probe_count(&self, n1: usize) -> usize {
        let log_term = (self.rank.max(1) as f64 / self.delta).ln().max(1.0);
        let mut w = (self.probe_constant * self.mu0 * self.rank.max(1) as f64 * log_term).ceil() as usize;
        if let Some(cap) = self.probe_cap {
            w = w.min(cap);
        }
        w.max(self.rank).min(n1)
    }
}

/// Diagnostics of one adaptive completion run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AdaptiveMcDiagnostics {
    pub basis_columns: usize,
    pub probe_count: usize,
    pub max_membership_residual: f64,
}

/// Adaptively sample and complete a low-rank matrix exposed through a 2-D
/// oracle view.
///
/// Walks the columns, probing each on a random row subset and testing
/// membership in the span of the fully observed basis columns; columns that
/// fail the test are revealed entirely and join the basis. Uses at most
/// `w * n2 + r * n1` samples.
pub fn adaptive_complete(
    view: &MatrixSliceView,
    cfg: &AdaptiveMcConfig,
) -> Result<(Array2<f64>, AdaptiveMcDiagnostics)> {
    let n1 = view.nrows();
    let n2 = view.ncols();
    let w = cfg.probe_count(n1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let draw_probes = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut rows: Vec<usize> = sample_without_replacement(rng, n1, w).into_iter().collect();
        rows.sort_unstable();
        rows
    };

    let mut probes = draw_probes(&mut rng);
    let mut basis: Array2<f64> = Array2::zeros((n1, 0));
    let mut basis_probe_pinv: Array2<f64> = Array2::zeros((0, w));
    let mut completed = Array2::zeros((n1, n2));
    let mut max_residual = 0.0f64;

    for j in 0..n2 {
        let mut probe_vals = Array1::zeros(w);
        for (slot, &i) in probes.iter().enumerate() {
            probe_vals[slot] = view.query(i, j)?;
        }
        let probe_norm = probe_vals.dot(&probe_vals).sqrt();

        let coeffs = basis_probe_pinv.dot(&probe_vals);
        let mut resid = probe_vals.clone();
        if basis.ncols() > 0 {
            let recon = basis_select_rows(&basis, &probes).dot(&coeffs);
            resid -= &recon;
        }
        let resid_norm = resid.dot(&resid).sqrt();
        let threshold = match cfg.noise_sigma {
            None => cfg.residual_tol * probe_norm,
            Some(sigma) => (cfg.residual_tol * probe_norm).max(3.0 * sigma * (w as f64).sqrt()),
        };

        let in_span = resid_norm <= threshold || (basis.ncols() == 0 && probe_norm == 0.0);
        if in_span || (basis.ncols() >= cfg.rank && cfg.noise_sigma.is_some()) {
            if !in_span {
                max_residual = max_residual.max(resid_norm / probe_norm.max(f64::MIN_POSITIVE));
            }
            let col = basis.dot(&coeffs);
            completed.column_mut(j).assign(&col);
        } else {
            if basis.ncols() >= cfg.rank {
                return Err(DeliError::RankOverflow { target: cfg.rank });
            }
            // Reveal the whole column and grow the basis.
            let mut full = Array1::zeros(n1);
            for i in 0..n1 {
                full[i] = view.query(i, j)?;
            }
            completed.column_mut(j).assign(&full);
            let mut grown = Array2::zeros((n1, basis.ncols() + 1));
            grown.slice_mut(ndarray::s![.., ..basis.ncols()]).assign(&basis);
            grown.column_mut(basis.ncols()).assign(&full);
            basis = grown;
            probes = draw_probes(&mut rng);
            basis_probe_pinv = pinv(basis_select_rows(&basis, &probes).view(), RANK_CUTOFF)?;
        }
    }

    Ok((
        completed,
        AdaptiveMcDiagnostics {
            basis_columns: basis.ncols(),
            probe_count: w,
            max_membership_residual: max_residual,
        },
    ))
}

fn basis_select_rows(basis: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), basis.ncols()));
    for (slot, &i) in rows.iter().enumerate() {
        out.row_mut(slot).assign(&basis.row(i));
    }
    out
}

/// Configuration of the nuclear-norm minimization solver.
#[derive(Debug, Clone)]
pub struct NnmConfig {
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub gap_tol: f64,
    /// Proximal step (singular-value shrinkage threshold); `None` picks a
    /// scale-aware default from the observed entries.
    pub step: Option<f64>,
    /// Relaxation factor of the splitting iteration, in (0, 2).
    pub relaxation: f64,
}

impl Default for NnmConfig {
    fn default() -> Self {
        NnmConfig {
            max_iters: 10_000,
            primal_tol: 1e-8,
            dual_tol: 1e-8,
            gap_tol: 1e-8,
            step: None,
            relaxation: 1.8,
        }
    }
}

/// Result of a nuclear-norm completion: the best feasible iterate plus solver
/// diagnostics.
#[derive(Debug, Clone)]
pub struct NnmResult {
    pub matrix: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// Nuclear norm of the best feasible iterate after each iteration;
    /// non-increasing by construction.
    pub best_objective_trace: Vec<f64>,
}

/// Approximately solve `min ||X||_* subject to X_ij = M_ij on Omega` with an
/// over-relaxed Douglas-Rachford splitting between singular-value shrinkage
/// and the data-constraint projection. Non-convergence is reported, not
/// fatal; the returned matrix is the feasible iterate with the smallest
/// nuclear norm seen.
pub fn nnm_complete(
    observed: &[(usize, usize, f64)],
    shape: (usize, usize),
    cfg: &NnmConfig,
) -> Result<NnmResult> {
    let (n1, n2) = shape;
    let mut mask = Array2::from_elem((n1, n2), false);
    let mut data = Array2::zeros((n1, n2));
    for &(i, j, v) in observed {
        if i >= n1 || j >= n2 {
            return Err(DeliError::IndexOutOfBounds { index: vec![i, j], shape: vec![n1, n2] });
        }
        if mask[[i, j]] && data[[i, j]] != v {
            return Err(DeliError::ConflictingObservation {
                index: vec![i, j],
                a: data[[i, j]],
                b: v,
            });
        }
        mask[[i, j]] = true;
        data[[i, j]] = v;
    }
    let observed_count = mask.iter().filter(|&&m| m).count();
    if observed_count == n1 * n2 {
        // The constraint set is a single point.
        return Ok(NnmResult {
            matrix: data.clone(),
            iterations: 0,
            converged: true,
            primal_residual: 0.0,
            dual_residual: 0.0,
            gap: 0.0,
            best_objective_trace: vec![nuclear_norm(&data)?],
        });
    }

    let b_norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let step = cfg.step.unwrap_or_else(|| {
        // Scale with the typical singular value of the completed matrix.
        let mean_abs = if observed_count > 0 {
            data.iter().map(|v| v.abs()).sum::<f64>() / observed_count as f64
        } else {
            1.0
        };
        (mean_abs * ((n1 * n2) as f64).sqrt() * 0.5).max(f64::MIN_POSITIVE)
    });

    let project = |x: &Array2<f64>| {
        let mut y = x.clone();
        for i in 0..n1 {
            for j in 0..n2 {
                if mask[[i, j]] {
                    y[[i, j]] = data[[i, j]];
                }
            }
        }
        y
    };

    let mut z = project(&Array2::zeros((n1, n2)));
    let mut best = project(&Array2::zeros((n1, n2)));
    let mut best_obj = nuclear_norm(&best)?;
    let mut trace = Vec::new();
    let mut prev_x: Option<Array2<f64>> = None;
    let mut prev_obj = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let (mut primal, mut dual, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);

    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        let x = svt_shrink(&z, step)?;
        let reflected = &x * 2.0 - &z;
        let y = project(&reflected);
        z = &z + &((&y - &x) * cfg.relaxation);

        let x_obj = nuclear_norm(&x)?;
        let y_obj = nuclear_norm(&y)?;
        if y_obj < best_obj {
            best_obj = y_obj;
            best = y;
        }
        trace.push(best_obj);

        primal = {
            let mut r2 = 0.0;
            for i in 0..n1 {
                for j in 0..n2 {
                    if mask[[i, j]] {
                        let d = x[[i, j]] - data[[i, j]];
                        r2 += d * d;
                    }
                }
            }
            r2.sqrt() / b_norm.max(1.0)
        };
        dual = match &prev_x {
            Some(p) => {
                let num = (&x - p).iter().map(|v| v * v).sum::<f64>().sqrt();
                num / x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0)
            }
            None => f64::INFINITY,
        };
        gap = (x_obj - prev_obj).abs() / x_obj.max(1.0);
        prev_obj = x_obj;
        prev_x = Some(x);

        if primal < cfg.primal_tol && dual < cfg.dual_tol && gap < cfg.gap_tol {
            converged = true;
            break;
        }
    }

    Ok(NnmResult {
        matrix: best,
        iterations,
        converged,
        primal_residual: primal,
        dual_residual: dual,
        gap,
        best_objective_trace: trace,
    })
}

fn nuclear_norm(m: &Array2<f64>) -> Result<f64> {
    let (_, s, _) = m.svd(false, false)?;
    Ok(s.sum())
}

fn svt_shrink(m: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    let (u, s, vt) = truncated_svd(m.view(), 0.0)?;
    let mut shrunk = u;
    let mut kept = 0;
    for (mut col, &sv) in shrunk.columns_mut().into_iter().zip(s.iter()) {
        let t = (sv - tau).max(0.0);
        col.mapv_inplace(|x| x * t);
        if t > 0.0 {
            kept += 1;
        }
    }
    let _ = kept;
    Ok(shrunk.dot(&vt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cp::CpDecomposition;
    use crate::oracle::{dense_oracle, EntryOracle, NoiseSpec, SamplePhase};
    use crate::tensor::DenseTensor;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn matrix_view(oracle: &dyn EntryOracle) -> MatrixSliceView<'_> {
        let d = oracle.shape().len();
        MatrixSliceView::new(oracle, vec![0; d], 0, 1, SamplePhase::SliceCompletion)
    }

    fn gaussian(n: usize, r: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, r), |_| StandardNormal.sample(&mut rng))
    }

    fn as_matrix_tensor(m: &Array2<f64>) -> DenseTensor {
        DenseTensor::new(vec![m.nrows(), m.ncols()], m.iter().cloned().collect()).unwrap()
    }

    #[test]
    fn adaptive_completes_zero_matrix() {
        let m = Array2::zeros((10, 8));
        let oracle = dense_oracle(as_matrix_tensor(&m), NoiseSpec::noise_free(0)).unwrap();
        let cfg = AdaptiveMcConfig::new(1.0, 3, 0.05, 1);
        let (out, diag) = adaptive_complete(&matrix_view(&oracle), &cfg).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert_eq!(diag.basis_columns, 0);
        let w = cfg.probe_count(10);
        assert_eq!(oracle.ledger().total, w.min(10) * 8);
    }

    #[test]
    fn adaptive_recovers_rank_one_exactly() {
        let u = gaussian(20, 1, 3);
        let v = gaussian(20, 1, 4);
        let m = u.dot(&v.t());
        let oracle = dense_oracle(as_matrix_tensor(&m), NoiseSpec::noise_free(0)).unwrap();
        let cfg = AdaptiveMcConfig::new(3.0, 1, 0.05, 7);
        let (out, _) = adaptive_complete(&matrix_view(&oracle), &cfg).unwrap();
        let max_delta = (&out - &m).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(max_delta <= 1e-8, "max delta {max_delta}");
        let w = cfg.probe_count(20);
        assert!(oracle.ledger().total <= w * 20 + 20);
    }

    #[test]
    fn adaptive_recovers_rank_three_with_high_probability() {
        let mut successes = 0;
        for seed in 0..100u64 {
            let a = gaussian(20, 3, 100 + seed);
            let b = gaussian(25, 3, 200 + seed);
            let m = a.dot(&b.t());
            let mu = crate::linalg::coherence(m.view()).unwrap();
            if mu > 3.0 {
                // Stay inside the assumed coherence regime.
                successes += 1;
                continue;
            }
            let oracle = dense_oracle(as_matrix_tensor(&m), NoiseSpec::noise_free(0)).unwrap();
            let cfg = AdaptiveMcConfig::new(mu, 3, 0.05, 300 + seed);
            match adaptive_complete(&matrix_view(&oracle), &cfg) {
                Ok((out, _)) => {
                    let rel = (&out - &m).iter().map(|v| v * v).sum::<f64>().sqrt()
                        / m.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if rel <= 1e-8 {
                        successes += 1;
                    }
                }
                Err(_) => {}
            }
        }
        assert!(successes >= 95, "only {successes}/100 exact recoveries");
    }

    #[test]
    fn adaptive_output_columns_lie_in_learned_span() {
        let a = gaussian(15, 2, 51);
        let b = gaussian(12, 2, 52);
        let m = a.dot(&b.t());
        let oracle = dense_oracle(as_matrix_tensor(&m), NoiseSpec::noise_free(0)).unwrap();
        let cfg = AdaptiveMcConfig::new(3.0, 2, 0.05, 53);
        let (out, diag) = adaptive_complete(&matrix_view(&oracle), &cfg).unwrap();
        assert!(diag.basis_columns <= 2);
        let rank = crate::linalg::numerical_rank(out.view()).unwrap();
        assert!(rank <= 2);
    }

    #[test]
    fn adaptive_rank_overflow_on_violated_assumptions() {
        // Full-rank matrix with target rank 1 must error, never silently complete.
        let m = gaussian(10, 10, 77);
        let oracle = dense_oracle(as_matrix_tensor(&m), NoiseSpec::noise_free(0)).unwrap();
        let cfg = AdaptiveMcConfig::new(2.0, 1, 0.05, 78);
        assert!(matches!(
            adaptive_complete(&matrix_view(&oracle), &cfg),
            Err(DeliError::RankOverflow { target: 1 })
        ));
    }

    #[test]
    fn nnm_returns_fully_observed_matrix_exactly() {
        let m = gaussian(8, 8, 5);
        let observed: Vec<(usize, usize, f64)> = (0..8)
            .flat_map(|i| (0..8).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, m[[i, j]]))
            .collect();
        let res = nnm_complete(&observed, (8, 8), &NnmConfig::default()).unwrap();
        assert!(res.converged);
        let max_delta = (&res.matrix - &m).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(max_delta <= 1e-8);
    }

    #[test]
    fn nnm_rejects_conflicting_duplicates() {
        let observed = vec![(0, 0, 1.0), (0, 0, 2.0)];
        assert!(matches!(
            nnm_complete(&observed, (4, 4), &NnmConfig::default()),
            Err(DeliError::ConflictingObservation { .. })
        ));
        // Equal duplicates merge fine.
        let observed = vec![(0, 0, 1.0), (0, 0, 1.0)];
        assert!(nnm_complete(&observed, (4, 4), &NnmConfig::default()).is_ok());
    }

    #[test]
    fn nnm_recovers_rank_one_from_half_mask() {
        let u = gaussian(30, 1, 11);
        let v = gaussian(30, 1, 12);
        let m = u.dot(&v.t());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let observed: Vec<(usize, usize, f64)> = (0..30)
            .flat_map(|i| (0..30).map(move |j| (i, j)))
            .filter(|_| rng.gen::<f64>() < 0.5)
            .map(|(i, j)| (i, j, m[[i, j]]))
            .collect();
        let res = nnm_complete(&observed, (30, 30), &NnmConfig::default()).unwrap();
        let rel = (&res.matrix - &m).iter().map(|v| v * v).sum::<f64>().sqrt()
            / m.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel <= 1e-4, "relative error {rel}");
    }

    #[test]
    fn nnm_recovers_rank_two_at_theoretical_probability() {
        let mut successes = 0;
        for seed in 0..10u64 {
            let a = gaussian(40, 2, 500 + seed);
            let b = gaussian(40, 2, 600 + seed);
            let m = a.dot(&b.t());
            let mu = crate::linalg::coherence(m.view()).unwrap();
            let p = (2.0 * mu * 2.0 * (80f64).ln().powi(2) / 40.0).min(1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let observed: Vec<(usize, usize, f64)> = (0..40)
                .flat_map(|i| (0..40).map(move |j| (i, j)))
                .filter(|_| rng.gen::<f64>() < p)
                .map(|(i, j)| (i, j, m[[i, j]]))
                .collect();
            let res = nnm_complete(&observed, (40, 40), &NnmConfig::default()).unwrap();
            let rel = (&res.matrix - &m).iter().map(|v| v * v).sum::<f64>().sqrt()
                / m.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rel <= 1e-4 {
                successes += 1;
            }
        }
        assert!(successes >= 9, "only {successes}/10 recoveries");
    }

    #[test]
    fn nnm_best_objective_trace_is_monotone() {
        let u = gaussian(20, 2, 21);
        let v = gaussian(20, 2, 22);
        let m = u.dot(&v.t());
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let observed: Vec<(usize, usize, f64)> = (0..20)
            .flat_map(|i| (0..20).map(move |j| (i, j)))
            .filter(|_| rng.gen::<f64>() < 0.6)
            .map(|(i, j)| (i, j, m[[i, j]]))
            .collect();
        let res = nnm_complete(&observed, (20, 20), &NnmConfig::default()).unwrap();
        for pair in res.best_objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn random_row_subsets_keep_full_rank_at_lemma_rate() {
        // Bernoulli row deletion of an incoherent orthonormal matrix stays
        // full rank at the predicted frequency.
        let z = {
            let g = gaussian(100, 4, 90);
            let (u, _, _) = truncated_svd(g.view(), RANK_CUTOFF).unwrap();
            u
        };
        let mu = crate::linalg::coherence(z.view()).unwrap();
        let p = (mu * 4.0 * (4.0f64 / 0.01).ln() / 100.0).min(1.0);
        let trials = 500;
        let mut full_rank = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..trials {
            let rows: Vec<usize> = (0..100).filter(|_| rng.gen::<f64>() < p).collect();
            if rows.len() >= 4 {
                let sub = z.select(ndarray::Axis(0), &rows);
                if crate::linalg::numerical_rank(sub.view()).unwrap() == 4 {
                    full_rank += 1;
                }
            }
        }
        let freq = full_rank as f64 / trials as f64;
        let stderr = (0.99 * 0.01 / trials as f64).sqrt();
        assert!(freq >= 0.99 - 3.0 * stderr, "full-rank frequency {freq}");
    }

    fn _unused(_: CpDecomposition) {}
}
