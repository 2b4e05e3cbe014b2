//! End-to-end completion pipelines: dense slice completion, factor-pair
//! recovery by simultaneous diagonalization, censored least squares per
//! remaining mode, and the final per-column rescale — with adaptive and
//! nonadaptive sampling variants and the subtensor retry logic.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::cls::{censored_least_squares, select_pivot_rows, CensoredLsConfig};
use crate::cp::CpDecomposition;
use crate::error::DeliError;
use crate::jennrich::{jennrich, JennrichConfig, JennrichResult};
use crate::mc::{adaptive_complete, nnm_complete, AdaptiveMcConfig, NnmConfig};
use crate::oracle::{EntryOracle, MatrixSliceView, SampleLedger, SamplePhase};
use crate::sampling::{draw_bernoulli_region, draw_slice_set, draw_z_sets, explicit_slice_set, SampleLabel, SampleSet};
use crate::tensor::DenseTensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingVariant {
    Adaptive,
    Nonadaptive,
}

/// Pipeline configuration; `new` fills the defaults.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DeliConfig {
    pub variant: SamplingVariant,
    /// Dense slices per subtensor round.
    pub s: usize,
    /// Subtensor retry count.
    pub m: usize,
    pub rank: usize,
    /// Coherence bound driving probe counts and sampling probabilities.
    pub mu0: f64,
    /// Per-slice failure budget.
    pub delta: f64,
    /// Constant of the dense-region probability formula.
    pub c0: f64,
    /// Constant of the sparse-region probability formula.
    pub c3: f64,
    pub seed: u64,
    /// Per-slice sample budget as a fraction of n1*n2; caps probes
    /// (adaptive) or the dense probability (nonadaptive).
    pub gamma: Option<f64>,
    /// Oversampling factor for the sparse regions: caps the per-slice
    /// expected censored-LS sample count at `delta_oversample * r`.
    pub delta_oversample: Option<f64>,
    /// Constant in the adaptive probe-count formula.
    pub probe_constant: f64,
    /// Relative column norm below which a solved factor column counts as
    /// zero (inactive for its subtensor) in noise-free runs.
    pub zero_tol: f64,
    /// Fixed dense-slice indices instead of random draws.
    pub explicit_slices: Option<Vec<usize>>,
}

impl DeliConfig {
    pub fn new(rank: usize, mu0: f64, seed: u64) -> Self {
        DeliConfig {
            variant: SamplingVariant::Adaptive,
            s: 2,
            m: 1,
            rank,
            mu0,
            delta: 0.05,
            c0: 2.0,
            c3: 2.0,
            seed,
            gamma: None,
            delta_oversample: Some(8.0),
            probe_constant: 8.0,
            zero_tol: 1e-8,
            explicit_slices: None,
        }
    }

    fn validate(&self, shape: &[usize]) -> Result<()> {
        if shape.len() < 3 {
            return Err(DeliError::ShapeMismatch(format!(
                "pipelines need order >= 3, got {}",
                shape.len()
            )));
        }
        if self.s < 2 {
            return Err(DeliError::SampleRange(format!("s = {} must be at least 2", self.s)));
        }
        if self.m < 1 {
            return Err(DeliError::SampleRange("m must be at least 1".into()));
        }
        if self.rank == 0 {
            return Err(DeliError::RankError("rank must be positive".into()));
        }
        Ok(())
    }
}

/// Retry count keeping the failure term `(d-2) r (1 - (1-z)^{d-3})^m` below
/// `delta` for an assumed per-entry zero fraction `z`.
pub fn recommended_m(d: usize, r: usize, z: f64, delta: f64) -> usize {
    if d <= 3 || z <= 0.0 {
        return 1;
    }
    let base = 1.0 - (1.0 - z).powi(d as i32 - 3);
    if base <= 0.0 || base >= 1.0 {
        return 1;
    }
    let m = ((delta / ((d - 2) as f64 * r as f64)).ln() / base.ln()).ceil();
    (m as usize).max(1)
}

/// Coherence bound taken from ground-truth factors (simulation privilege):
/// the max coherence over all factor matrices.
pub fn truth_mu0(dec: &CpDecomposition) -> Result<f64> {
    let mut mu = 1.0f64;
    for f in dec.factors() {
        mu = mu.max(crate::linalg::coherence(f.view())?);
    }
    Ok(mu)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Provenance {
    pub mode: usize,
    pub column: usize,
    /// Anchor tuple (coordinates over the other modes) that recovered this
    /// column; `None` when unrecovered.
    pub tuple: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct PipelineDiagnostics {
    pub jennrich_rounds: usize,
    pub recovered_components: usize,
    pub nnm_warnings: usize,
    /// Queried indices were a subset of the predrawn sample locations
    /// (nonadaptive runs only).
    pub audit_passed: Option<bool>,
    pub notes: Vec<String>,
}

/// Everything one pipeline run produces.
#[derive(Debug, Clone)]
pub struct CompletionReport {
    pub decomposition: CpDecomposition,
    pub ledger: SampleLedger,
    /// True only when every column of every factor was recovered.
    pub success: bool,
    pub provenance: Vec<Provenance>,
    pub diagnostics: PipelineDiagnostics,
}

impl CompletionReport {
    /// Write `report.json` plus the factor files into `dir`.
    pub fn save<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.decomposition.save_csv_dir(dir)?;
        let doc = serde_json::json!({
            "success": self.success,
            "ledger": self.ledger,
            "provenance": self.provenance,
            "diagnostics": self.diagnostics,
        });
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&doc).unwrap())?;
        Ok(())
    }
}

/// Run the variant selected in the config.
pub fn complete(oracle: &dyn EntryOracle, cfg: &DeliConfig) -> Result<CompletionReport> {
    match cfg.variant {
        SamplingVariant::Adaptive => adaptive_deli(oracle, cfg),
        SamplingVariant::Nonadaptive => nonadaptive_deli(oracle, cfg),
    }
}

/// Accumulate distinct unit column pairs across runs; near-duplicates
/// (|cos| >= 0.999 in both modes) merge, and more than `r` mutually distinct
/// pairs is an over-rank error.
pub fn merge_components(batches: &[JennrichResult], r: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut pool: Vec<(Array1<f64>, Array1<f64>)> = Vec::new();
    for batch in batches {
        for j in 0..batch.recovered {
            let a = batch.a1.column(j).to_owned();
            let b = batch.a2.column(j).to_owned();
            let duplicate = pool
                .iter()
                .any(|(pa, pb)| pa.dot(&a).abs() >= 0.999 && pb.dot(&b).abs() >= 0.999);
            if duplicate {
                continue;
            }
            if pool.len() == r {
                return Err(DeliError::OverRank { found: r + 1, target: r });
            }
            pool.push((a, b));
        }
    }
    let n1 = pool.first().map_or(0, |(a, _)| a.len());
    let n2 = pool.first().map_or(0, |(_, b)| b.len());
    let mut a1 = Array2::zeros((n1, pool.len()));
    let mut a2 = Array2::zeros((n2, pool.len()));
    for (j, (a, b)) in pool.iter().enumerate() {
        a1.column_mut(j).assign(a);
        a2.column_mut(j).assign(b);
    }
    Ok((a1, a2))
}

/// Stream-style seed derivation so every phase gets an independent stream.
fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut h = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(tag.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    h ^= h >> 31;
    h.wrapping_mul(0x94d0_49bb_1331_11eb)
}

fn other_modes(d: usize, k: usize) -> Vec<usize> {
    (2..d).filter(|&j| j != k).collect()
}

/// Adaptive pipeline: per anchor tuple, adaptively sample and complete `s`
/// dense slices, diagonalize, then recover each remaining mode on the pivot
/// fibers through its anchor tuples, rescaling the last mode per column.
pub fn adaptive_deli(oracle: &dyn EntryOracle, cfg: &DeliConfig) -> Result<CompletionReport> {
    let shape = oracle.shape().to_vec();
    cfg.validate(&shape)?;
    let d = shape.len();
    let (n1, n2, n3) = (shape[0], shape[1], shape[2]);
    let r = cfg.rank;
    let m = if d == 3 { 1 } else { cfg.m };
    let noise_sigma = oracle.noise_sigma();
    let jcfg = if noise_sigma.is_some() { JennrichConfig::noisy() } else { JennrichConfig::exact() };

    let mut notes = Vec::new();
    let z_sets = draw_z_sets(&shape, m, sub_seed(cfg.seed, 1))?;

    // Phase 1: slice completion and diagonalization per Z_3 anchor tuple.
    let mut batches: Vec<JennrichResult> = Vec::new();
    let mut a1 = Array2::zeros((n1, 0));
    let mut a2 = Array2::zeros((n2, 0));
    let mut rounds = 0;
    for (t, tuple) in z_sets[0].indices.iter().enumerate() {
        rounds += 1;
        let s_set = match &cfg.explicit_slices {
            Some(slices) => explicit_slice_set(n3, slices)?,
            None => draw_slice_set(n3, cfg.s, sub_seed(cfg.seed, 100 + t as u64))?,
        };
        let s = s_set.len();
        let mut stack = DenseTensor::zeros(vec![n1, n2, s])?;
        for (si, i3) in s_set.indices.iter().enumerate() {
            let mut template = vec![0usize; d];
            template[2] = i3[0];
            for (slot, &mode) in other_modes(d, 2).iter().enumerate() {
                template[mode] = tuple[slot];
            }
            let amc = AdaptiveMcConfig {
                mu0: cfg.mu0,
                rank: r,
                delta: cfg.delta,
                probe_constant: cfg.probe_constant,
                residual_tol: 1e-8,
                probe_cap: cfg.gamma.map(|g| (g * n1 as f64).floor() as usize),
                noise_sigma,
                seed: sub_seed(cfg.seed, 1000 + (t * 64 + si) as u64),
            };
            let view = MatrixSliceView::new(oracle, template, 0, 1, SamplePhase::SliceCompletion);
            let (mat, _) = adaptive_complete(&view, &amc)?;
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    stack.set(&[i1, i2, si], mat[[i1, i2]])?;
                }
            }
        }
        match jennrich(&stack, r, sub_seed(cfg.seed, 200 + t as u64), &jcfg) {
            Ok(res) => {
                batches.push(res);
                let merged = merge_components(&batches, r)?;
                a1 = merged.0;
                a2 = merged.1;
                if a1.ncols() == r {
                    break;
                }
            }
            Err(e) => notes.push(format!("diagonalization round {t} failed: {e}")),
        }
    }
    if a1.ncols() == 0 {
        return Err(DeliError::DegenerateSlices(
            "no components recovered in any diagonalization round".into(),
        ));
    }

    finish_with_censored_ls(
        oracle, cfg, &shape, &z_sets, a1, a2, rounds, 0, None,
        notes,
        CensoredObservations::PivotFibers,
    )
}

/// Where the censored-LS phase gets its observations from.
enum CensoredObservations<'a> {
    /// Query the oracle on pivot-row fibers (adaptive path).
    PivotFibers,
    /// Consume predrawn Bernoulli regions, one per (mode, tuple) pair
    /// (nonadaptive path).
    Regions(&'a [Vec<SampleSet>]),
}

/// Phases 2-4 shared by both variants: pivot selection, per-mode censored
/// least squares with per-column tuple retries, last-mode rescale, assembly.
#[allow(clippy::too_many_arguments)]
fn finish_with_censored_ls(
    oracle: &dyn EntryOracle,
    cfg: &DeliConfig,
    shape: &[usize],
    z_sets: &[SampleSet],
    a1: Array2<f64>,
    a2: Array2<f64>,
    rounds: usize,
    nnm_warnings: usize,
    audit: Option<&HashSet<Vec<usize>>>,
    mut notes: Vec<String>,
    obs_source: CensoredObservations<'_>,
) -> Result<CompletionReport> {
    let d = shape.len();
    let r = cfg.rank;
    let rp = a1.ncols();
    let noise_sigma = oracle.noise_sigma();
    let zero_tol = if noise_sigma.is_some() { 0.05 } else { cfg.zero_tol };

    let pivots = match obs_source {
        CensoredObservations::PivotFibers => Some(select_pivot_rows(&a1, &a2)?),
        CensoredObservations::Regions(_) => None,
    };
    let mut provenance = Vec::new();
    let mut scaled: Vec<Array2<f64>> = Vec::with_capacity(d - 2);
    let mut all_recovered = true;

    for k in 2..d {
        let nk = shape[k];
        let zk = &z_sets[k - 2];
        let others = other_modes(d, k);
        let mut cols: Vec<Option<(Array1<f64>, usize)>> = vec![None; rp];

        for (t, tuple) in zk.indices.iter().enumerate() {
            if cols.iter().all(|c| c.is_some()) {
                break;
            }
            // Gather this tuple's observations.
            let mut obs: Vec<(usize, usize, usize, f64)> = Vec::new();
            match &obs_source {
                CensoredObservations::PivotFibers => {
                    for piv in &pivots.as_ref().unwrap().indices {
                        for ik in 0..nk {
                            let mut idx = vec![0usize; d];
                            idx[0] = piv[0];
                            idx[1] = piv[1];
                            idx[k] = ik;
                            for (slot, &mode) in others.iter().enumerate() {
                                idx[mode] = tuple[slot];
                            }
                            let v = oracle.query(&idx, SamplePhase::CensoredLs)?;
                            obs.push((piv[0], piv[1], ik, v));
                        }
                    }
                }
                CensoredObservations::Regions(regions) => {
                    for idx in &regions[k - 2][t].indices {
                        let v = oracle.query(&idx.0, SamplePhase::CensoredLs)?;
                        obs.push((idx[0], idx[1], idx[k], v));
                    }
                }
            }
            let solved = censored_least_squares(&obs, &a1, &a2, nk, &CensoredLsConfig::default())?;
            if !solved.all_recovered() {
                let bad = solved
                    .status
                    .iter()
                    .filter(|&&s| s != crate::cls::RowStatus::Recovered)
                    .count();
                notes.push(format!(
                    "mode {k} tuple {t}: {bad}/{nk} slices had rank-deficient designs"
                ));
                continue;
            }
            let max_norm = solved
                .factor
                .columns()
                .into_iter()
                .map(|c| c.dot(&c).sqrt())
                .fold(0.0f64, f64::max);
            for l in 0..rp {
                if cols[l].is_some() {
                    continue;
                }
                let col = solved.factor.column(l).to_owned();
                let norm = col.dot(&col).sqrt();
                if norm <= zero_tol * max_norm.max(f64::MIN_POSITIVE) {
                    continue;
                }
                if k == d - 1 {
                    // Undo the scale the anchor tuple injected through the
                    // already-recovered middle modes.
                    let mut divisor = 1.0;
                    let mut usable = true;
                    for (slot, &mode) in others.iter().enumerate() {
                        let v = scaled[mode - 2][[tuple[slot], l]];
                        if v.abs() <= zero_tol * max_norm.max(f64::MIN_POSITIVE) {
                            usable = false;
                            break;
                        }
                        divisor *= v;
                    }
                    if !usable {
                        continue;
                    }
                    cols[l] = Some((col / divisor, t));
                } else {
                    cols[l] = Some((col, t));
                }
            }
        }

        let mut fk = Array2::zeros((nk, rp));
        for l in 0..rp {
            match &cols[l] {
                Some((col, t)) => {
                    fk.column_mut(l).assign(col);
                    provenance.push(Provenance {
                        mode: k,
                        column: l,
                        tuple: Some(zk.indices[*t].0.clone()),
                    });
                }
                None => {
                    all_recovered = false;
                    provenance.push(Provenance { mode: k, column: l, tuple: None });
                }
            }
        }
        scaled.push(fk);
    }

    let mut factors = vec![a1, a2];
    factors.extend(scaled);
    let decomposition = CpDecomposition::new(factors, Array1::from_elem(rp, 1.0))?.canonicalize();

    let audit_passed = audit.map(|pre| oracle.observed().iter().all(|(idx, _)| pre.contains(idx)));
    if rp < r {
        all_recovered = false;
        notes.push(format!("only {rp} of {r} components found by diagonalization"));
    }
    Ok(CompletionReport {
        decomposition,
        ledger: oracle.ledger(),
        success: all_recovered && audit_passed.unwrap_or(true),
        provenance,
        diagnostics: PipelineDiagnostics {
            jennrich_rounds: rounds,
            recovered_components: rp,
            nnm_warnings,
            audit_passed,
            notes,
        },
    })
}

/// Nonadaptive pipeline: draw every sample location up front, complete the
/// dense slices by nuclear-norm minimization, then run the same
/// diagonalization and censored-LS phases on the predrawn sparse regions.
pub fn nonadaptive_deli(oracle: &dyn EntryOracle, cfg: &DeliConfig) -> Result<CompletionReport> {
    let shape = oracle.shape().to_vec();
    cfg.validate(&shape)?;
    let d = shape.len();
    let (n1, n2, n3) = (shape[0], shape[1], shape[2]);
    let r = cfg.rank;
    let m = if d == 3 { 1 } else { cfg.m };
    let noise_sigma = oracle.noise_sigma();
    let jcfg = if noise_sigma.is_some() { JennrichConfig::noisy() } else { JennrichConfig::exact() };

    let p_dense = {
        let theory = cfg.c0 * cfg.mu0 * r as f64 * ((n1 + n2) as f64).ln().powi(2)
            / n1.min(n2) as f64;
        cfg.gamma.map_or(theory, |g| theory.min(g)).min(1.0)
    };
    let p_sparse = |nk: usize| {
        let theory =
            cfg.c3 * cfg.mu0 * cfg.mu0 * (r * r) as f64 * (nk as f64).ln() / (n1 * n2) as f64;
        cfg.delta_oversample
            .map_or(theory, |delta| theory.min(delta * r as f64 / (n1 * n2) as f64))
            .min(1.0)
    };

    // Draw everything before touching the oracle.
    let z_sets = draw_z_sets(&shape, m, sub_seed(cfg.seed, 1))?;
    let mut predrawn: HashSet<Vec<usize>> = HashSet::new();
    let rows: Vec<usize> = (0..n1).collect();
    let cols: Vec<usize> = (0..n2).collect();

    // Dense slice regions per Z_3 tuple.
    let mut slice_plans: Vec<(Vec<usize>, Vec<(usize, SampleSet)>)> = Vec::new();
    for (t, tuple) in z_sets[0].indices.iter().enumerate() {
        let s_set = match &cfg.explicit_slices {
            Some(slices) => explicit_slice_set(n3, slices)?,
            None => draw_slice_set(n3, cfg.s, sub_seed(cfg.seed, 100 + t as u64))?,
        };
        let mut per_slice = Vec::new();
        for (si, i3) in s_set.indices.iter().enumerate() {
            let region = draw_bernoulli_region(
                &[rows.clone(), cols.clone()],
                p_dense,
                sub_seed(cfg.seed, 3000 + (t * 64 + si) as u64),
                SampleLabel::OmegaM,
            );
            let mut template = vec![0usize; d];
            template[2] = i3[0];
            for (slot, &mode) in other_modes(d, 2).iter().enumerate() {
                template[mode] = tuple[slot];
            }
            for idx in &region.indices {
                let mut full = template.clone();
                full[0] = idx[0];
                full[1] = idx[1];
                predrawn.insert(full);
            }
            per_slice.push((i3[0], region));
        }
        slice_plans.push((tuple.0.clone(), per_slice));
    }

    // Sparse regions per mode and tuple, as full-order index sets.
    let mut sparse_regions: Vec<Vec<SampleSet>> = Vec::new();
    for k in 2..d {
        let nk = shape[k];
        let p = p_sparse(nk);
        let others = other_modes(d, k);
        let mut per_tuple = Vec::new();
        for (t, tuple) in z_sets[k - 2].indices.iter().enumerate() {
            let fibers: Vec<usize> = (0..nk).collect();
            let region = draw_bernoulli_region(
                &[rows.clone(), cols.clone(), fibers],
                p,
                sub_seed(cfg.seed, 4000 + (k * 1024 + t) as u64),
                SampleLabel::Omega(k),
            );
            // Lift (i1, i2, ik) into full-order indices.
            let lifted: Vec<crate::tensor::IndexTuple> = region
                .indices
                .iter()
                .map(|idx| {
                    let mut full = vec![0usize; d];
                    full[0] = idx[0];
                    full[1] = idx[1];
                    full[k] = idx[2];
                    for (slot, &mode) in others.iter().enumerate() {
                        full[mode] = tuple[slot];
                    }
                    crate::tensor::IndexTuple(full)
                })
                .collect();
            for idx in &lifted {
                predrawn.insert(idx.0.clone());
            }
            per_tuple.push(SampleSet { label: SampleLabel::Omega(k), indices: lifted });
        }
        sparse_regions.push(per_tuple);
    }

    // Phase 1: nuclear-norm slice completion + diagonalization per tuple.
    let mut notes = Vec::new();
    let mut nnm_warnings = 0;
    let mut batches: Vec<JennrichResult> = Vec::new();
    let mut a1 = Array2::zeros((n1, 0));
    let mut a2 = Array2::zeros((n2, 0));
    let mut rounds = 0;
    for (t, (tuple, per_slice)) in slice_plans.iter().enumerate() {
        rounds += 1;
        let s = per_slice.len();
        let mut stack = DenseTensor::zeros(vec![n1, n2, s])?;
        for (si, (i3, region)) in per_slice.iter().enumerate() {
            let mut template = vec![0usize; d];
            template[2] = *i3;
            for (slot, &mode) in other_modes(d, 2).iter().enumerate() {
                template[mode] = tuple[slot];
            }
            let mut observed = Vec::with_capacity(region.len());
            for idx in &region.indices {
                let mut full = template.clone();
                full[0] = idx[0];
                full[1] = idx[1];
                let v = oracle.query(&full, SamplePhase::SliceCompletion)?;
                observed.push((idx[0], idx[1], v));
            }
            let res = nnm_complete(&observed, (n1, n2), &NnmConfig::default())?;
            if !res.converged {
                nnm_warnings += 1;
                notes.push(format!(
                    "nuclear-norm solver did not converge on slice {i3} of round {t} \
                     (primal {:.2e}, dual {:.2e})",
                    res.primal_residual, res.dual_residual
                ));
            }
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    stack.set(&[i1, i2, si], res.matrix[[i1, i2]])?;
                }
            }
        }
        match jennrich(&stack, r, sub_seed(cfg.seed, 200 + t as u64), &jcfg) {
            Ok(res) => {
                batches.push(res);
                let merged = merge_components(&batches, r)?;
                a1 = merged.0;
                a2 = merged.1;
                if a1.ncols() == r {
                    break;
                }
            }
            Err(e) => notes.push(format!("diagonalization round {t} failed: {e}")),
        }
    }
    if a1.ncols() == 0 {
        return Err(DeliError::DegenerateSlices(
            "no components recovered in any diagonalization round".into(),
        ));
    }

    finish_with_censored_ls(
        oracle, cfg, &shape, &z_sets, a1, a2, rounds, nnm_warnings,
        Some(&predrawn),
        notes,
        CensoredObservations::Regions(&sparse_regions),
    )
}
