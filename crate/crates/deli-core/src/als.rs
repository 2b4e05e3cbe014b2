//! Masked alternating least squares over revealed entries: refinement of a
//! pipeline initialization, plus an SVD-of-unfoldings cold start.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Solve, SVD};

use crate::cp::CpDecomposition;
use crate::error::DeliError;
use crate::linalg::{lstsq, RANK_CUTOFF};
use crate::Result;

#[derive(Debug, Clone)]
pub struct AlsConfig {
    pub iterations: usize,
    /// Tikhonov term added to the per-row normal equations; 0 solves plain
    /// least squares through the pseudo-inverse.
    pub ridge: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig { iterations: 10, ridge: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct AlsResult {
    pub decomposition: CpDecomposition,
    /// Masked sum-of-squares residual before iterating and after each sweep.
    pub objective_trace: Vec<f64>,
    /// (mode, row) pairs that saw no observations and kept their
    /// initialization.
    pub frozen_rows: Vec<(usize, usize)>,
}

/// Refine `init` by cyclic per-mode least squares over the observed entries
/// only. Each factor row is solved against the rows of the other factors at
/// the observations touching it; rows with no observations are left at their
/// initial value.
pub fn masked_als(
    obs: &[(Vec<usize>, f64)],
    init: &CpDecomposition,
    cfg: &AlsConfig,
) -> Result<AlsResult> {
    let shape = init.shape();
    let d = shape.len();
    let r = init.rank();
    for (idx, _) in obs {
        if idx.len() != d || idx.iter().zip(&shape).any(|(&i, &n)| i >= n) {
            return Err(DeliError::IndexOutOfBounds { index: idx.clone(), shape: shape.clone() });
        }
    }

    // Absorb the weights into the last factor; iterate on raw factors.
    let mut factors: Vec<Array2<f64>> = init.factors().to_vec();
    for (l, &w) in init.weights().iter().enumerate() {
        let mut col = factors[d - 1].column_mut(l);
        col.mapv_inplace(|x| x * w);
    }

    // Observation rows grouped by coordinate, once per mode.
    let mut by_row: Vec<HashMap<usize, Vec<usize>>> = vec![HashMap::new(); d];
    for (t, (idx, _)) in obs.iter().enumerate() {
        for k in 0..d {
            by_row[k].entry(idx[k]).or_default().push(t);
        }
    }

    let objective = |factors: &[Array2<f64>]| -> f64 {
        obs.iter()
            .map(|(idx, v)| {
                let pred: f64 = (0..r)
                    .map(|l| (0..d).map(|k| factors[k][[idx[k], l]]).product::<f64>())
                    .sum();
                (pred - v) * (pred - v)
            })
            .sum()
    };

    let mut frozen = Vec::new();
    for k in 0..d {
        for i in 0..shape[k] {
            if !by_row[k].contains_key(&i) {
                frozen.push((k, i));
            }
        }
    }

    let mut trace = vec![objective(&factors)];
    for _ in 0..cfg.iterations {
        for k in 0..d {
            let mut updated = factors[k].clone();
            for (&i, rows) in &by_row[k] {
                let mut design = Array2::zeros((rows.len(), r));
                let mut rhs = Array1::zeros(rows.len());
                for (slot, &t) in rows.iter().enumerate() {
                    let (idx, v) = &obs[t];
                    for l in 0..r {
                        design[[slot, l]] = (0..d)
                            .filter(|&j| j != k)
                            .map(|j| factors[j][[idx[j], l]])
                            .product();
                    }
                    rhs[slot] = *v;
                }
                let sol = if cfg.ridge > 0.0 {
                    let mut normal = design.t().dot(&design);
                    for l in 0..r {
                        normal[[l, l]] += cfg.ridge;
                    }
                    match normal.solve(&design.t().dot(&rhs)) {
                        Ok(s) => s,
                        Err(_) => lstsq(design.view(), &rhs, RANK_CUTOFF)?,
                    }
                } else {
                    lstsq(design.view(), &rhs, RANK_CUTOFF)?
                };
                updated.row_mut(i).assign(&sol);
            }
            factors[k] = updated;
        }
        trace.push(objective(&factors));
    }

    let refined = CpDecomposition::new(factors, Array1::from_elem(r, 1.0))?.canonicalize();
    Ok(AlsResult { decomposition: refined, objective_trace: trace, frozen_rows: frozen })
}

/// Cold-start initialization: zero-fill the unobserved entries and take the
/// top-r left singular vectors of each mode unfolding as factors, unit
/// weights.
pub fn masked_svd_init(obs: &[(Vec<usize>, f64)], shape: &[usize], r: usize) -> Result<CpDecomposition> {
    let d = shape.len();
    for (idx, _) in obs {
        if idx.len() != d || idx.iter().zip(shape).any(|(&i, &n)| i >= n) {
            return Err(DeliError::IndexOutOfBounds { index: idx.clone(), shape: shape.to_vec() });
        }
    }
    let total: usize = shape.iter().product();
    let mut factors = Vec::with_capacity(d);
    for k in 0..d {
        let ncols = total / shape[k];
        if r > shape[k].min(ncols) {
            return Err(DeliError::RankError(format!(
                "rank {r} exceeds the mode-{k} unfolding dimensions {}x{ncols}",
                shape[k]
            )));
        }
        let mut unf = Array2::zeros((shape[k], ncols));
        for (idx, v) in obs {
            // Row-major flattening of all modes except k.
            let mut col = 0;
            for j in 0..d {
                if j != k {
                    col = col * shape[j] + idx[j];
                }
            }
            unf[[idx[k], col]] = *v;
        }
        let (u, _, _) = unf.svd(true, false)?;
        let u = u.ok_or_else(|| DeliError::Linalg("svd returned no left vectors".into()))?;
        factors.push(u.slice(ndarray::s![.., ..r]).to_owned());
    }
    CpDecomposition::new(factors, Array1::from_elem(r, 1.0))
}
