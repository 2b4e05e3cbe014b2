//! Shared dense linear-algebra helpers: Khatri-Rao products, coherence,
//! truncated-SVD pseudo-inverses, and a pivoted row selector.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::SVD;

use crate::error::DeliError;
use crate::Result;

/// Relative singular-value cutoff used for every numerical-rank decision.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Column-wise Kronecker product. Output row for `(i1, i2)` is `i1 * n2 + i2`.
pub fn khatri_rao(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n1, ra) = a.dim();
    let (n2, rb) = b.dim();
    if ra != rb {
        return Err(DeliError::ShapeMismatch(format!(
            "khatri-rao column counts differ: {ra} vs {rb}"
        )));
    }
    let mut out = Array2::zeros((n1 * n2, ra));
    for i1 in 0..n1 {
        for i2 in 0..n2 {
            for l in 0..ra {
                out[[i1 * n2 + i2, l]] = a[[i1, l]] * b[[i2, l]];
            }
        }
    }
    Ok(out)
}

/// Thin SVD split at the relative cutoff; returns (U, sigma, Vt) truncated to
/// the numerical rank.
pub fn truncated_svd(m: ArrayView2<f64>, cutoff: f64) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let (u, s, vt) = m.svd(true, true)?;
    let u = u.expect("svd with u requested");
    let vt = vt.expect("svd with vt requested");
    let smax = s.iter().cloned().fold(0.0f64, f64::max);
    let rank = if smax == 0.0 {
        0
    } else {
        s.iter().take_while(|&&sv| sv > cutoff * smax).count()
    };
    Ok((
        u.slice_axis(Axis(1), (0..rank).into()).to_owned(),
        s.slice_axis(Axis(0), (0..rank).into()).to_owned(),
        vt.slice_axis(Axis(0), (0..rank).into()).to_owned(),
    ))
}

/// Numerical rank at the shared cutoff.
pub fn numerical_rank(m: ArrayView2<f64>) -> Result<usize> {
    let (_, s, _) = m.svd(false, false)?;
    let smax = s.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&sv| sv > RANK_CUTOFF * smax).count())
}

/// Moore-Penrose pseudo-inverse via truncated SVD.
pub fn pinv(m: ArrayView2<f64>, cutoff: f64) -> Result<Array2<f64>> {
    let (u, s, vt) = truncated_svd(m, cutoff)?;
    let mut vs = vt.t().to_owned();
    for (mut col, &sv) in vs.columns_mut().into_iter().zip(s.iter()) {
        col.mapv_inplace(|x| x / sv);
    }
    Ok(vs.dot(&u.t()))
}

/// Least-squares solve `argmin ||M x - b||` through the truncated pseudo-inverse.
pub fn lstsq(m: ArrayView2<f64>, b: &Array1<f64>, cutoff: f64) -> Result<Array1<f64>> {
    Ok(pinv(m, cutoff)?.dot(b))
}

/// Coherence of the column space of `m`: `(n / r') * max_i ||proj e_i||^2`,
/// where `r'` is the numerical rank. Lies in `[1, n / r']`.
pub fn coherence(m: ArrayView2<f64>) -> Result<f64> {
    let n = m.nrows();
    let (u, s, _) = truncated_svd(m, RANK_CUTOFF)?;
    if s.is_empty() {
        return Err(DeliError::UndefinedCoherence);
    }
    let r = s.len();
    let max_row = u
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0f64, f64::max);
    Ok(n as f64 / r as f64 * max_row)
}

/// Greedy row selection equivalent to QR with column pivoting on `m^T`:
/// picks `r` rows of `m` that are linearly independent, largest residual
/// first. Errors if the numerical rank of `m` is below `r`.
pub fn pivoted_rows(m: ArrayView2<f64>, r: usize) -> Result<Vec<usize>> {
    let (nrows, ncols) = m.dim();
    if r > ncols || r > nrows {
        return Err(DeliError::RankError(format!(
            "cannot select {r} independent rows from a {nrows}x{ncols} matrix"
        )));
    }
    // Residual rows after projecting out the chosen directions.
    let mut resid = m.to_owned();
    let mut chosen = Vec::with_capacity(r);
    let scale = m
        .rows()
        .into_iter()
        .map(|row| row.dot(&row))
        .fold(0.0f64, f64::max)
        .sqrt();
    for _ in 0..r {
        let (best, best_norm2) = resid
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| (i, row.dot(&row)))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_norm2.sqrt() <= RANK_CUTOFF * scale {
            return Err(DeliError::RankError(format!(
                "matrix has fewer than {r} independent rows"
            )));
        }
        chosen.push(best);
        let q = resid.row(best).to_owned() / best_norm2.sqrt();
        let coeffs = resid.dot(&q);
        for (i, mut row) in resid.rows_mut().into_iter().enumerate() {
            let c = coeffs[i];
            row.zip_mut_with(&q, |x, &qv| *x -= c * qv);
        }
    }
    // Conditioning check on the selected block.
    let block = m.select(Axis(0), &chosen);
    let (_, s, _) = block.svd(false, false)?;
    let smax = s.iter().cloned().fold(0.0f64, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > RANK_CUTOFF * smax) {
        return Err(DeliError::RankError(format!(
            "selected {r}x{} row block is numerically singular",
            ncols
        )));
    }
    Ok(chosen)
}
