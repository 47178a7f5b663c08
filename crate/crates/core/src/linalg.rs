//! Small dense Hermitian helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative eigenvalue cutoff used for pseudo-inverses and factorisations.
pub const REL_CUTOFF: f64 = 1e-12;

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `(A + A^H) / 2`.
pub fn symmetrize(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order.
pub fn hermitian_eigen(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("matrix is {}x{}", n, a.ncols())));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), CMat::zeros(0, 0)));
    }
    // real input keeps real eigenvectors, which real-valued sampling needs
    let (lams, vecs) = if a.iter().all(|z| z.im == 0.0) {
        let re = DMatrix::from_fn(n, n, |r, col| 0.5 * (a[(r, col)].re + a[(col, r)].re));
        let eig = re.symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors.map(c))
    } else {
        let eig = symmetrize(a).symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lams[j].total_cmp(&lams[i]));
    let values = order.iter().map(|&i| lams[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, col| vecs[(r, order[col])]);
    Ok((values, vectors))
}

/// Pseudo-inverse of a Hermitian PSD matrix, discarding eigenvalues below
/// `rel_cutoff * lambda_max`.
#[derive(Debug, Clone)]
pub struct HermitianPinv {
    pub pinv: CMat,
    /// Sum of logarithms of the retained eigenvalues.
    pub log_det: f64,
    pub rank: usize,
}

pub fn hermitian_pinv(a: &CMat, rel_cutoff: f64) -> Result<HermitianPinv> {
    let n = a.nrows();
    let (values, vectors) = hermitian_eigen(a)?;
    let lmax = values.first().copied().unwrap_or(0.0);
    let mut pinv = CMat::zeros(n, n);
    let mut log_det = 0.0;
    let mut rank = 0;
    if lmax > 0.0 {
        for (i, &lam) in values.iter().enumerate() {
            if lam > rel_cutoff * lmax && lam > 0.0 {
                let col = vectors.column(i);
                pinv += (&col * col.adjoint()).scale(1.0 / lam);
                log_det += lam.ln();
                rank += 1;
            }
        }
    }
    Ok(HermitianPinv {
        pinv: symmetrize(&pinv),
        log_det,
        rank,
    })
}

/// Generalised inverse `S^-1 pinv(S^-1 A S^-1) S^-1` with the diagonal
/// scaling `S = diag(sqrt(A_ii))`, so that the cutoff acts on correlations
/// rather than on raw magnitudes. `log_det` includes the scaling.
pub fn scaled_hermitian_pinv(a: &CMat, rel_cutoff: f64) -> Result<HermitianPinv> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("matrix is {}x{}", n, a.ncols())));
    }
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = a[(i, i)].re;
            if d > 0.0 && d.is_finite() {
                d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = CMat::from_fn(n, n, |r, col| a[(r, col)] / (scale[r] * scale[col]));
    let inner = hermitian_pinv(&scaled, rel_cutoff)?;
    let pinv = CMat::from_fn(n, n, |r, col| inner.pinv[(r, col)] / (scale[r] * scale[col]));
    let log_scale: f64 = (0..n)
        .filter(|&i| a[(i, i)].re > 0.0)
        .map(|i| 2.0 * scale[i].ln())
        .sum();
    Ok(HermitianPinv {
        pinv,
        log_det: inner.log_det + log_scale,
        rank: inner.rank,
    })
}

/// Factor `F` (n x r) with `F F^H = A` restricted to eigenvalues above the
/// relative cutoff.
pub fn hermitian_sqrt_factor(a: &CMat, rel_cutoff: f64) -> Result<CMat> {
    let n = a.nrows();
    let (values, vectors) = hermitian_eigen(a)?;
    let lmax = values.first().copied().unwrap_or(0.0);
    let kept: Vec<usize> = if lmax > 0.0 {
        (0..n)
            .filter(|&i| values[i] > rel_cutoff * lmax && values[i] > 0.0)
            .collect()
    } else {
        Vec::new()
    };
    Ok(CMat::from_fn(n, kept.len(), |r, col| {
        vectors[(r, kept[col])] * values[kept[col]].sqrt()
    }))
}

/// Minimum eigenvalue relative to the trace; used by PSD checks.
pub fn min_eig_over_trace(a: &CMat) -> Result<f64> {
    let (values, _) = hermitian_eigen(a)?;
    let tr: f64 = (0..a.nrows()).map(|i| a[(i, i)].re).sum();
    let min = values.last().copied().unwrap_or(0.0);
    Ok(if tr > 0.0 { min / tr } else { min })
}

/// `a^H M b`.
pub fn quad_form(a: &CVec, m: &CMat, b: &CVec) -> Complex64 {
    (a.adjoint() * m * b)[(0, 0)]
}
