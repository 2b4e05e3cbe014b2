//! Simultaneous diagonalization of random slice combinations: recovers the
//! paired mode-1/mode-2 factor columns of an order-3 tensor.

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{Eig, Inverse};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::DeliError;
use crate::linalg::RANK_CUTOFF;
use crate::tensor::DenseTensor;
use crate::Result;

/// Tolerances of the eigen route; `exact` for noise-free data, `noisy`
/// loosens everything so noise-level pairing slack is not fatal.
#[derive(Debug, Clone, Copy)]
pub struct JennrichConfig {
    /// Accept a pairing when |lambda_a * lambda_b - 1| is below this.
    pub pairing_tol: f64,
    /// Relative imaginary part above which an eigenvalue is a conditioning error.
    pub imag_tol: f64,
    /// Relative residual of the second slice combination outside the first
    /// one's column/row spaces; above it the slices are declared degenerate.
    pub span_tol: f64,
}

impl JennrichConfig {
    pub fn exact() -> Self {
        JennrichConfig { pairing_tol: 1e-6, imag_tol: 1e-6, span_tol: 1e-6 }
    }

    pub fn noisy() -> Self {
        JennrichConfig { pairing_tol: 1e-2, imag_tol: 1e-2, span_tol: 0.2 }
    }
}

/// Paired mode-1/mode-2 columns recovered from one run.
#[derive(Debug, Clone)]
pub struct JennrichResult {
    /// n1 x r' unit columns.
    pub a1: Array2<f64>,
    /// n2 x r' unit columns, paired with `a1` columnwise.
    pub a2: Array2<f64>,
    pub eigenvalues_a: Vec<f64>,
    pub eigenvalues_b: Vec<f64>,
    /// |lambda_a * lambda_b - 1| per recovered column.
    pub pairing_residuals: Vec<f64>,
    /// Number of recovered components, possibly < r when some components are
    /// inactive in the given slices.
    pub recovered: usize,
}

/// Run the eigen route on an n1 x n2 x s slice stack with target rank `r`.
///
/// Forms two Gaussian slice combinations, compresses them onto the top
/// singular subspaces of the first, and reads the factor columns off the
/// eigenvectors of the two quotient operators, pairing by reciprocal
/// eigenvalues. Recovers only the components active in the given slices.
pub fn jennrich(x: &DenseTensor, r: usize, seed: u64, cfg: &JennrichConfig) -> Result<JennrichResult> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(DeliError::ShapeMismatch(format!(
            "expected an order-3 slice stack, got order {}",
            shape.len()
        )));
    }
    let (n1, n2, s) = (shape[0], shape[1], shape[2]);
    if s < 2 {
        return Err(DeliError::DegenerateSlices(format!(
            "need at least 2 slices, got {s}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u_weights: Vec<f64> = (0..s).map(|_| StandardNormal.sample(&mut rng)).collect();
    let v_weights: Vec<f64> = (0..s).map(|_| StandardNormal.sample(&mut rng)).collect();

    let mut xu = Array2::zeros((n1, n2));
    let mut xv = Array2::zeros((n1, n2));
    for i3 in 0..s {
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let t = x.get(&[i1, i2, i3])?;
                xu[[i1, i2]] += u_weights[i3] * t;
                xv[[i1, i2]] += v_weights[i3] * t;
            }
        }
    }

    let (u_full, sigma, vt_full) = crate::linalg::truncated_svd(xu.view(), RANK_CUTOFF)?;
    let rank_u = sigma.len();
    if rank_u < 1 {
        return Err(DeliError::DegenerateSlices(
            "first slice combination is numerically zero".into(),
        ));
    }
    let rp = rank_u.min(r);
    let u = u_full.slice_axis(Axis(1), ndarray::Slice::from(0..rp)).to_owned();
    let vt = vt_full.slice_axis(Axis(0), ndarray::Slice::from(0..rp)).to_owned();
    let v = vt.t().to_owned();

    // The second combination must live in the same column and row spaces;
    // otherwise the slices do not share a common CP structure of rank r'.
    let xv_norm = xv.iter().map(|a| a * a).sum::<f64>().sqrt();
    if xv_norm == 0.0 {
        return Err(DeliError::DegenerateSlices(
            "second slice combination is numerically zero".into(),
        ));
    }
    let col_resid = {
        let proj = u.dot(&u.t().dot(&xv));
        (&xv - &proj).iter().map(|a| a * a).sum::<f64>().sqrt() / xv_norm
    };
    let row_resid = {
        let proj = xv.dot(&v).dot(&v.t());
        (&xv - &proj).iter().map(|a| a * a).sum::<f64>().sqrt() / xv_norm
    };
    if col_resid > cfg.span_tol || row_resid > cfg.span_tol {
        return Err(DeliError::DegenerateSlices(format!(
            "slice combinations do not share rank-{rp} column/row spaces \
             (residuals {col_resid:.3e}, {row_resid:.3e})"
        )));
    }

    // Compressed pencil: Yu is diagonal by construction of the bases.
    let yu = Array2::from_diag(&Array1::from_iter(sigma.iter().take(rp).cloned()));
    let yu_inv = Array2::from_diag(&Array1::from_iter(sigma.iter().take(rp).map(|&s| 1.0 / s)));
    let yv = u.t().dot(&xv).dot(&v);
    let yv_inv = yv
        .inv()
        .map_err(|_| DeliError::DegenerateSlices("compressed second combination is singular".into()))?;

    let op_a = yu.dot(&yv_inv);
    let op_b = yu_inv.dot(&yv).t().to_owned();

    let (vals_a, vecs_a) = real_eig(&op_a, cfg.imag_tol)?;
    let (vals_b, vecs_b) = real_eig(&op_b, cfg.imag_tol)?;

    // Pair by reciprocal eigenvalues.
    let mut used = vec![false; rp];
    let mut a1 = Array2::zeros((n1, rp));
    let mut a2 = Array2::zeros((n2, rp));
    let mut eig_a = Vec::with_capacity(rp);
    let mut eig_b = Vec::with_capacity(rp);
    let mut residuals = Vec::with_capacity(rp);
    let mut unpaired = Vec::new();
    for ja in 0..rp {
        let mut best: Option<(usize, f64)> = None;
        for jb in 0..rp {
            if used[jb] {
                continue;
            }
            let resid = (vals_a[ja] * vals_b[jb] - 1.0).abs();
            if best.map_or(true, |(_, b)| resid < b) {
                best = Some((jb, resid));
            }
        }
        match best {
            Some((jb, resid)) if resid <= cfg.pairing_tol => {
                used[jb] = true;
                let col_a = normalize(u.dot(&vecs_a.column(ja).to_owned()))?;
                let col_b = normalize(v.dot(&vecs_b.column(jb).to_owned()))?;
                a1.column_mut(ja).assign(&col_a);
                a2.column_mut(ja).assign(&col_b);
                eig_a.push(vals_a[ja]);
                eig_b.push(vals_b[jb]);
                residuals.push(resid);
            }
            _ => unpaired.push(ja),
        }
    }
    if !unpaired.is_empty() {
        return Err(DeliError::PairingFailure { unpaired, tolerance: cfg.pairing_tol });
    }

    Ok(JennrichResult {
        a1,
        a2,
        eigenvalues_a: eig_a,
        eigenvalues_b: eig_b,
        pairing_residuals: residuals,
        recovered: rp,
    })
}

/// Eigendecomposition of a real matrix, demanding (numerically) real
/// eigenvalues; returns real eigenvectors as columns.
fn real_eig(m: &Array2<f64>, imag_tol: f64) -> Result<(Vec<f64>, Array2<f64>)> {
    let (vals, vecs) = m.eig()?;
    let n = vals.len();
    let mut out_vals = Vec::with_capacity(n);
    let mut out_vecs = Array2::zeros((n, n));
    for j in 0..n {
        let lam = vals[j];
        if lam.im.abs() > imag_tol * lam.norm().max(f64::MIN_POSITIVE) {
            return Err(DeliError::Conditioning { index: j, imag: lam.im });
        }
        out_vals.push(lam.re);
        for i in 0..n {
            out_vecs[[i, j]] = vecs[[i, j]].re;
        }
    }
    Ok((out_vals, out_vecs))
}

fn normalize(v: Array1<f64>) -> Result<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return Err(DeliError::DegenerateSlices("zero eigenvector after projection".into()));
    }
    Ok(v / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cp::CpDecomposition;

    fn gaussian(n: usize, r: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, r), |_| StandardNormal.sample(&mut rng))
    }

    fn stack(a1: &Array2<f64>, a2: &Array2<f64>, c: &Array2<f64>) -> DenseTensor {
        let dec = CpDecomposition::new(
            vec![a1.clone(), a2.clone(), c.clone()],
            Array1::from_elem(a1.ncols(), 1.0),
        )
        .unwrap();
        dec.materialize().unwrap()
    }

    /// Max over modes/columns of the sign-insensitive gap between matched
    /// unit columns; greedy matching on correlation.
    fn pair_error(
        t1: &Array2<f64>,
        t2: &Array2<f64>,
        e1: &Array2<f64>,
        e2: &Array2<f64>,
    ) -> f64 {
        let r = t1.ncols();
        assert_eq!(e1.ncols(), r);
        let unit = |m: &Array2<f64>| {
            let mut out = m.clone();
            for mut c in out.columns_mut() {
                let n = c.dot(&c).sqrt();
                c.mapv_inplace(|x| x / n);
            }
            out
        };
        let (t1, t2, e1, e2) = (unit(t1), unit(t2), unit(e1), unit(e2));
        let mut used = vec![false; r];
        let mut worst = 0.0f64;
        for l in 0..r {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..r {
                if used[j] {
                    continue;
                }
                let score = t1.column(l).dot(&e1.column(j)).abs()
                    + t2.column(l).dot(&e2.column(j)).abs();
                if best.map_or(true, |(_, b)| score > b) {
                    best = Some((j, score));
                }
            }
            let (j, _) = best.unwrap();
            used[j] = true;
            for (t, e) in [(&t1, &e1), (&t2, &e2)] {
                let diff = (&t.column(l) - &e.column(j)).mapv(|x| x * x).sum().sqrt();
                let sum = (&t.column(l) + &e.column(j)).mapv(|x| x * x).sum().sqrt();
                worst = worst.max(diff.min(sum));
            }
        }
        worst
    }

    #[test]
    fn rank_one_recovered_to_machine_precision() {
        let a = gaussian(3, 1, 1);
        let b = gaussian(3, 1, 2);
        // Mode-3 weights with no zeros.
        let c = Array2::from_shape_vec((2, 1), vec![1.3, -0.7]).unwrap();
        let x = stack(&a, &b, &c);
        let res = jennrich(&x, 1, 5, &JennrichConfig::exact()).unwrap();
        assert_eq!(res.recovered, 1);
        assert!(pair_error(&a, &b, &res.a1, &res.a2) <= 1e-10);
    }

    #[test]
    fn rank_three_random_recovery_rate() {
        let mut good = 0;
        for seed in 0..100u64 {
            let a = gaussian(10, 3, 1000 + seed);
            let b = gaussian(10, 3, 2000 + seed);
            let c = gaussian(3, 3, 3000 + seed);
            let x = stack(&a, &b, &c);
            if let Ok(res) = jennrich(&x, 3, 4000 + seed, &JennrichConfig::exact()) {
                if res.recovered == 3 && pair_error(&a, &b, &res.a1, &res.a2) <= 1e-8 {
                    good += 1;
                }
            }
        }
        assert!(good >= 99, "only {good}/100 exact recoveries");
    }

    #[test]
    fn reciprocal_eigenvalue_pairing_holds() {
        let a = gaussian(8, 3, 11);
        let b = gaussian(9, 3, 12);
        let c = gaussian(4, 3, 13);
        let x = stack(&a, &b, &c);
        let res = jennrich(&x, 3, 14, &JennrichConfig::exact()).unwrap();
        for (la, lb) in res.eigenvalues_a.iter().zip(&res.eigenvalues_b) {
            assert!((la * lb - 1.0).abs() <= 1e-8);
        }
        for r in &res.pairing_residuals {
            assert!(*r <= 1e-8);
        }
    }

    #[test]
    fn recovered_columns_lie_in_slice_column_space() {
        let a = gaussian(10, 3, 21);
        let b = gaussian(10, 3, 22);
        let c = gaussian(3, 3, 23);
        let x = stack(&a, &b, &c);
        let res = jennrich(&x, 3, 24, &JennrichConfig::exact()).unwrap();
        // a1 columns must lie in col(A1): project onto an orthonormal basis.
        let (q, _, _) = crate::linalg::truncated_svd(a.view(), RANK_CUTOFF).unwrap();
        for col in res.a1.columns() {
            let col = col.to_owned();
            let proj = q.dot(&q.t().dot(&col));
            let resid = (&col - &proj).dot(&(&col - &proj)).sqrt();
            assert!(resid <= 1e-8);
        }
    }

    #[test]
    fn identical_factor_columns_raise_classified_error() {
        let mut a = gaussian(6, 3, 31);
        let dup = a.column(0).to_owned();
        a.column_mut(1).assign(&dup);
        let b = gaussian(6, 3, 32);
        let c = gaussian(3, 3, 33);
        let x = stack(&a, &b, &c);
        let err = jennrich(&x, 3, 34, &JennrichConfig::exact()).unwrap_err();
        assert!(
            matches!(
                err,
                DeliError::DegenerateSlices(_)
                    | DeliError::PairingFailure { .. }
                    | DeliError::Conditioning { .. }
            ),
            "unexpected error {err:?}"
        );
    }

    #[test]
    fn inactive_component_yields_partial_recovery() {
        let a = gaussian(8, 3, 41);
        let b = gaussian(8, 3, 42);
        let mut c = gaussian(2, 3, 43);
        // Third component silent in both slices.
        c.column_mut(2).fill(0.0);
        let x = stack(&a, &b, &c);
        let res = jennrich(&x, 3, 44, &JennrichConfig::exact()).unwrap();
        assert_eq!(res.recovered, 2);
        let a_active = a.slice(ndarray::s![.., ..2]).to_owned();
        let b_active = b.slice(ndarray::s![.., ..2]).to_owned();
        assert!(pair_error(&a_active, &b_active, &res.a1, &res.a2) <= 1e-8);
    }

    #[test]
    fn seed_determinism_is_bitwise() {
        let a = gaussian(7, 2, 51);
        let b = gaussian(7, 2, 52);
        let c = gaussian(3, 2, 53);
        let x = stack(&a, &b, &c);
        let r1 = jennrich(&x, 2, 99, &JennrichConfig::exact()).unwrap();
        let r2 = jennrich(&x, 2, 99, &JennrichConfig::exact()).unwrap();
        assert_eq!(r1.a1, r2.a1);
        assert_eq!(r1.a2, r2.a2);
        assert_eq!(r1.eigenvalues_a, r2.eigenvalues_a);
    }

    #[test]
    fn single_slice_is_rejected() {
        let a = gaussian(4, 2, 61);
        let b = gaussian(4, 2, 62);
        let c = gaussian(1, 2, 63);
        let x = stack(&a, &b, &c);
        assert!(matches!(
            jennrich(&x, 2, 64, &JennrichConfig::exact()),
            Err(DeliError::DegenerateSlices(_))
        ));
    }
}
