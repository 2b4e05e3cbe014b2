//! CP decompositions: lazy entry evaluation, inner products and error metrics
//! that never materialize the tensor, canonicalization, and factor matching.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::DeliError;
use crate::tensor::{index_iter, DenseTensor};
use crate::Result;

/// Entry-count guard for [`CpDecomposition::materialize`].
pub const MATERIALIZE_LIMIT: u128 = 100_000_000;

/// A rank-r CP decomposition: d factor matrices of r columns each plus a
/// weight vector absorbing all rescaling.
#[derive(Debug, Clone)]
pub struct CpDecomposition {
    factors: Vec<Array2<f64>>,
    weights: Array1<f64>,
}

impl CpDecomposition {
    pub fn new(factors: Vec<Array2<f64>>, weights: Array1<f64>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(DeliError::ShapeMismatch(format!(
                "need at least 2 factor matrices, got {}",
                factors.len()
            )));
        }
        let r = weights.len();
        for (k, f) in factors.iter().enumerate() {
            if f.ncols() != r {
                return Err(DeliError::ShapeMismatch(format!(
                    "factor {} has {} columns, expected rank {}",
                    k,
                    f.ncols(),
                    r
                )));
            }
        }
        Ok(CpDecomposition { factors, weights })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &Array2<f64> {
        &self.factors[mode]
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    /// Evaluate a single entry: `sum_l w_l * prod_k A^(k)[i_k, l]`.
    pub fn entry(&self, idx: &[usize]) -> Result<f64> {
        let shape = self.shape();
        if idx.len() != shape.len() || idx.iter().zip(&shape).any(|(&i, &n)| i >= n) {
            return Err(DeliError::IndexOutOfBounds { index: idx.to_vec(), shape });
        }
        let mut acc = 0.0;
        for l in 0..self.rank() {
            let mut term = self.weights[l];
            for (k, &i) in idx.iter().enumerate() {
                term *= self.factors[k][[i, l]];
            }
            acc += term;
        }
        Ok(acc)
    }

    /// Expand into a dense tensor. Guarded at [`MATERIALIZE_LIMIT`] entries.
    pub fn materialize(&self) -> Result<DenseTensor> {
        let shape = self.shape();
        let entries: u128 = shape.iter().map(|&n| n as u128).product();
        if entries > MATERIALIZE_LIMIT {
            return Err(DeliError::CapacityExceeded { entries, limit: MATERIALIZE_LIMIT });
        }
        let mut values = Vec::with_capacity(entries as usize);
        for idx in index_iter(&shape) {
            values.push(self.entry(&idx)?);
        }
        DenseTensor::new(shape, values)
    }

    /// Frobenius inner product of the represented tensors, computed from the
    /// factors alone.
    pub fn inner(&self, other: &CpDecomposition) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(DeliError::ShapeMismatch(format!(
                "cp inner product shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut acc = 0.0;
        for l in 0..self.rank() {
            for lp in 0..other.rank() {
                let mut term = self.weights[l] * other.weights[lp];
                for k in 0..self.order() {
                    term *= self.factors[k].column(l).dot(&other.factors[k].column(lp));
                }
                acc += term;
            }
        }
        Ok(acc)
    }

    pub fn frobenius_norm(&self) -> Result<f64> {
        Ok(self.inner(self)?.max(0.0).sqrt())
    }

    /// Relative Frobenius error `||T - T_hat|| / ||T||` without materializing.
    pub fn rel_error(truth: &CpDecomposition, est: &CpDecomposition) -> Result<f64> {
        let tt = truth.inner(truth)?;
        if tt <= 0.0 {
            return Err(DeliError::DivisionByZero("relative error against a zero tensor".into()));
        }
        let te = truth.inner(est)?;
        let ee = est.inner(est)?;
        Ok(((tt - 2.0 * te + ee).max(0.0)).sqrt() / tt.sqrt())
    }

    /// Canonical form: unit l2-norm factor columns with magnitude and sign
    /// pushed into the weights, components sorted by non-increasing |weight|
    /// (ties broken lexicographically on the first factor column).
    pub fn canonicalize(mut self) -> Self {
        let r = self.rank();
        for l in 0..r {
            for f in &mut self.factors {
                let norm = f.column(l).dot(&f.column(l)).sqrt();
                if norm > 0.0 {
                    f.column_mut(l).mapv_inplace(|x| x / norm);
                    self.weights[l] *= norm;
                }
                // Pin the sign: largest-magnitude entry positive.
                let mut best = 0;
                let mut best_abs = -1.0;
                for (i, &v) in f.column(l).iter().enumerate() {
                    if v.abs() > best_abs {
                        best_abs = v.abs();
                        best = i;
                    }
                }
                if f[[best, l]] < 0.0 {
                    f.column_mut(l).mapv_inplace(|x| -x);
                    self.weights[l] = -self.weights[l];
                }
            }
        }
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| {
            let wa = self.weights[a].abs();
            let wb = self.weights[b].abs();
            wb.partial_cmp(&wa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| {
                    let ca = self.factors[0].column(a);
                    let cb = self.factors[0].column(b);
                    for (x, y) in ca.iter().zip(cb.iter()) {
                        match x.partial_cmp(y) {
                            Some(std::cmp::Ordering::Equal) | None => continue,
                            Some(ord) => return ord,
                        }
                    }
                    std::cmp::Ordering::Equal
                })
        });
        let factors = self
            .factors
            .iter()
            .map(|f| {
                let mut g = Array2::zeros(f.dim());
                for (dst, &src) in order.iter().enumerate() {
                    g.column_mut(dst).assign(&f.column(src));
                }
                g
            })
            .collect();
        let weights = Array1::from_iter(order.iter().map(|&src| self.weights[src]));
        CpDecomposition { factors, weights }
    }

    /// Save as one CSV per factor (`factor_1.csv` .. `factor_d.csv`, 1-based
    /// in the filenames) plus `weights.csv` in `dir`.
    pub fn save_csv_dir<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (k, f) in self.factors.iter().enumerate() {
            let mut w = BufWriter::new(std::fs::File::create(dir.join(format!("factor_{}.csv", k + 1)))?);
            for row in f.rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
        }
        let mut w = BufWriter::new(std::fs::File::create(dir.join("weights.csv"))?);
        for v in self.weights.iter() {
            writeln!(w, "{v:.17e}")?;
        }
        Ok(())
    }

    pub fn load_csv_dir<P: AsRef<Path>>(dir: P) -> Result<Self> {
        let dir = dir.as_ref();
        let weights = read_csv_matrix(&dir.join("weights.csv"))?;
        let r = weights.len();
        let weights = Array1::from_iter(weights.into_iter().map(|row| row[0]));
        let mut factors = Vec::new();
        for k in 1.. {
            let path = dir.join(format!("factor_{k}.csv"));
            if !path.exists() {
                break;
            }
            let rows = read_csv_matrix(&path)?;
            let n = rows.len();
            let mut f = Array2::zeros((n, r));
            for (i, row) in rows.iter().enumerate() {
                if row.len() != r {
                    return Err(DeliError::Parse {
                        line: i + 1,
                        message: format!("factor_{k}.csv row has {} fields, expected {r}", row.len()),
                    });
                }
                for (j, &v) in row.iter().enumerate() {
                    f[[i, j]] = v;
                }
            }
            factors.push(f);
        }
        CpDecomposition::new(factors, weights)
    }
}

fn read_csv_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|e| DeliError::Parse {
                    line: lineno + 1,
                    message: format!("bad value {t:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Factor matching error between two decompositions of equal rank and shape.
///
/// Both sides are canonicalized; columns are matched greedily by total
/// normalized correlation across modes. The reported value is the maximum
/// over matched components of the per-mode column distances (signs chosen
/// freely per mode) and the relative weight-magnitude mismatch. Zero exactly
/// when the decompositions agree up to permutation and per-term rescaling
/// with unit scale product. Greedy matching may overestimate relative to an
/// optimal assignment.
pub fn factor_match_error(truth: &CpDecomposition, est: &CpDecomposition) -> Result<f64> {
    if truth.rank() != est.rank() {
        return Err(DeliError::RankError(format!(
            "factor match rank mismatch: {} vs {}",
            truth.rank(),
            est.rank()
        )));
    }
    if truth.shape() != est.shape() {
        return Err(DeliError::ShapeMismatch(format!(
            "factor match shapes differ: {:?} vs {:?}",
            truth.shape(),
            est.shape()
        )));
    }
    let t = truth.clone().canonicalize();
    let e = est.clone().canonicalize();
    let r = t.rank();
    let d = t.order();
    if r == 0 {
        return Ok(0.0);
    }

    // Greedy maximal normalized correlation over all unmatched pairs.
    let mut score = Array2::zeros((r, r));
    for lt in 0..r {
        for le in 0..r {
            let mut s = 0.0;
            for k in 0..d {
                s += t.factors[k].column(lt).dot(&e.factors[k].column(le)).abs();
            }
            score[[lt, le]] = s;
        }
    }
    let mut used_t = vec![false; r];
    let mut used_e = vec![false; r];
    let mut pairs = Vec::with_capacity(r);
    for _ in 0..r {
        let mut best = (0, 0, -1.0);
        for lt in 0..r {
            if used_t[lt] {
                continue;
            }
            for le in 0..r {
                if used_e[le] {
                    continue;
                }
                if score[[lt, le]] > best.2 {
                    best = (lt, le, score[[lt, le]]);
                }
            }
        }
        used_t[best.0] = true;
        used_e[best.1] = true;
        pairs.push((best.0, best.1));
    }

    let mut worst = 0.0f64;
    for (lt, le) in pairs {
        for k in 0..d {
            let a = t.factors[k].column(lt);
            let b = e.factors[k].column(le);
            let mut dist_minus = 0.0;
            let mut dist_plus = 0.0;
            for (x, y) in a.iter().zip(b.iter()) {
                dist_minus += (x - y) * (x - y);
                dist_plus += (x + y) * (x + y);
            }
            worst = worst.max(dist_minus.min(dist_plus).sqrt());
        }
        let wt = t.weights[lt].abs();
        let we = e.weights[le].abs();
        let denom = wt.max(f64::MIN_POSITIVE);
        worst = worst.max((wt - we).abs() / denom);
    }
    Ok(worst)
}
