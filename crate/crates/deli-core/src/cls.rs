//! Slice-by-slice censored least squares: recover one factor matrix from
//! partial observations given the first two factors, plus pivoted row
//! selection for the minimal sampling pattern.

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use crate::error::DeliError;
use crate::linalg::{khatri_rao, numerical_rank, pinv, pivoted_rows, RANK_CUTOFF};
use crate::sampling::{SampleLabel, SampleSet};
use crate::tensor::IndexTuple;
use crate::Result;

/// Recovery status of one factor row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum RowStatus {
    Recovered,
    RankDeficient,
}

/// One recovered factor matrix with per-row solvability flags.
#[derive(Debug, Clone)]
pub struct CensoredLsResult {
    pub factor: Array2<f64>,
    pub status: Vec<RowStatus>,
    /// Distinct design matrices factored; rows sharing an observation pattern
    /// reuse one factorization.
    pub factorizations: usize,
}

impl CensoredLsResult {
    pub fn all_recovered(&self) -> bool {
        self.status.iter().all(|&s| s == RowStatus::Recovered)
    }
}

#[derive(Debug, Clone)]
pub struct CensoredLsConfig {
    /// Return the minimum-norm solution for rank-deficient systems instead of
    /// flagging the row.
    pub minimum_norm: bool,
}

impl Default for CensoredLsConfig {
    fn default() -> Self {
        CensoredLsConfig { minimum_norm: false }
    }
}

/// Select exactly `r` row-index pairs of the Khatri-Rao product of `a1` and
/// `a2` forming an invertible block, by greedy row pivoting.
pub fn select_pivot_rows(a1: &Array2<f64>, a2: &Array2<f64>) -> Result<SampleSet> {
    let r = a1.ncols();
    let kr = khatri_rao(a1.view(), a2.view())?;
    if numerical_rank(kr.view())? < r {
        return Err(DeliError::RankError(format!(
            "Khatri-Rao product has rank below {r}; cannot pick pivot rows"
        )));
    }
    let rows = pivoted_rows(kr.view(), r)?;
    let n2 = a2.nrows();
    Ok(SampleSet {
        label: SampleLabel::L,
        indices: rows.into_iter().map(|row| IndexTuple(vec![row / n2, row % n2])).collect(),
    })
}

/// Solve for the mode-3 factor of an order-3 block from observations
/// `(i1, i2, i3, value)` given the first two factors.
///
/// Per slice i3 the design rows are the rows of `a1 (kr) a2` at the observed
/// `(i1, i2)` pairs; full-rank designs are solved by truncated-SVD least
/// squares, deficient ones leave the row zero and flagged. Slices with the
/// same observation pattern share one factorization.
pub fn censored_least_squares(
    obs: &[(usize, usize, usize, f64)],
    a1: &Array2<f64>,
    a2: &Array2<f64>,
    n3: usize,
    cfg: &CensoredLsConfig,
) -> Result<CensoredLsResult> {
    let r = a1.ncols();
    if a2.ncols() != r {
        return Err(DeliError::ShapeMismatch(format!(
            "factor column counts differ: {r} vs {}",
            a2.ncols()
        )));
    }
    let (n1, n2) = (a1.nrows(), a2.nrows());

    let mut per_slice: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n3];
    for &(i1, i2, i3, v) in obs {
        if i1 >= n1 || i2 >= n2 || i3 >= n3 {
            return Err(DeliError::IndexOutOfBounds {
                index: vec![i1, i2, i3],
                shape: vec![n1, n2, n3],
            });
        }
        per_slice[i3].push((i1, i2, v));
    }
    for slice in &mut per_slice {
        slice.sort_unstable_by_key(|&(i1, i2, _)| (i1, i2));
        slice.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1 && a.2 == b.2);
    }

    // Cache the pseudo-inverse per observation pattern.
    let mut cache: HashMap<Vec<(usize, usize)>, (Array2<f64>, bool)> = HashMap::new();
    let mut factorizations = 0;
    let mut factor = Array2::zeros((n3, r));
    let mut status = Vec::with_capacity(n3);

    for i3 in 0..n3 {
        let pattern: Vec<(usize, usize)> = per_slice[i3].iter().map(|&(i1, i2, _)| (i1, i2)).collect();
        if pattern.is_empty() {
            status.push(RowStatus::RankDeficient);
            continue;
        }
        if !cache.contains_key(&pattern) {
            let mut design = Array2::zeros((pattern.len(), r));
            for (row, &(i1, i2)) in pattern.iter().enumerate() {
                for l in 0..r {
                    design[[row, l]] = a1[[i1, l]] * a2[[i2, l]];
                }
            }
            let full_rank = numerical_rank(design.view())? == r;
            let pi = pinv(design.view(), RANK_CUTOFF)?;
            factorizations += 1;
            cache.insert(pattern.clone(), (pi, full_rank));
        }
        let (pi, full_rank) = &cache[&pattern];
        if *full_rank || cfg.minimum_norm {
            let rhs = Array1::from_iter(per_slice[i3].iter().map(|&(_, _, v)| v));
            let row = pi.dot(&rhs);
            factor.row_mut(i3).assign(&row);
            status.push(if *full_rank { RowStatus::Recovered } else { RowStatus::RankDeficient });
        } else {
            status.push(RowStatus::RankDeficient);
        }
    }

    Ok(CensoredLsResult { factor, status, factorizations })
}
