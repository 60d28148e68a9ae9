//! Dense factorization primitives and the correlation-shrinkage step.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>` (column-major); the QR and SVD kernels are
//! nalgebra's Householder/bidiagonal routines, the LDL factorization is
//! local because it needs pivot clamping for covariance matrices that have
//! drifted slightly out of the PSD cone.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{invalid, Result, SketchError};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Max asymmetry accepted by [`ldl_factor`], relative to `1 + max|K|`.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Most negative pivot accepted by [`ldl_factor`], relative to `1 + trace(K)`.
pub const PSD_TOL: f64 = 1e-9;
/// Pivots below `PIVOT_CLAMP * trace(K)` are treated as exact zeros.
pub const PIVOT_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct QrFactors {
    pub q: Matrix,
    pub r: Matrix,
}

/// `K = L diag(d) Lᵀ` with `L` unit lower triangular and `d ≥ 0`.
#[derive(Debug, Clone)]
pub struct LdlFactors {
    pub l: Matrix,
    pub d: Vector,
}

impl LdlFactors {
    /// Upper-triangular `R = sqrt(D) Lᵀ`, so that `RᵀR = K`.
    pub fn triangular_factor(&self) -> Matrix {
        let mut r = self.l.transpose();
        for (i, mut row) in r.row_iter_mut().enumerate() {
            row *= self.d[i].max(0.0).sqrt();
        }
        r
    }
}

/// Thin SVD with singular values sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vector,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank_bound(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.sigma[j];
        }
        us * self.v.transpose()
    }
}

pub(crate) fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SketchError::NonFinite(what))
    }
}

/// Householder QR of a tall (or square) matrix.
pub fn qr_factor(a: &Matrix) -> Result<QrFactors> {
    if a.ncols() > a.nrows() {
        return Err(SketchError::DimensionMismatch(format!(
            "QR needs cols <= rows, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "QR input")?;
    Ok(thin_qr(a))
}

/// QR without the shape restriction: `Q` is `m × min(m, n)`, `R` is `min(m, n) × n`.
pub(crate) fn thin_qr(a: &Matrix) -> QrFactors {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        let k = m.min(n);
        return QrFactors {
            q: Matrix::identity(m, k),
            r: Matrix::zeros(k, n),
        };
    }
    let qr = a.clone().qr();
    let mut r = qr.r();
    // nalgebra leaves the strict lower triangle untouched by construction,
    // but zero it explicitly so the invariant is exact.
    for j in 0..r.ncols() {
        for i in (j + 1)..r.nrows() {
            r[(i, j)] = 0.0;
        }
    }
    QrFactors { q: qr.q(), r }
}

/// LDLᵀ of a symmetric positive semidefinite matrix with pivot clamping.
///
/// Pivots below `PIVOT_CLAMP * trace` are set to zero and the matching
/// column of `L` is zeroed below the diagonal.
pub fn ldl_factor(k: &Matrix) -> Result<LdlFactors> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(SketchError::DimensionMismatch(format!(
            "LDL needs a square matrix, got {}x{}",
            n,
            k.ncols()
        )));
    }
    ensure_finite(k, "LDL input")?;
    let scale = 1.0 + k.amax();
    let asym = (k - k.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(SketchError::NotSymmetric(asym));
    }

    let trace = k.trace();
    let clamp = PIVOT_CLAMP * trace.max(0.0);
    let mut l = Matrix::identity(n, n);
    let mut d = Vector::zeros(n);

    for j in 0..n {
        let mut pivot = k[(j, j)];
        for p in 0..j {
            pivot -= l[(j, p)] * l[(j, p)] * d[p];
        }
        if pivot < -PSD_TOL * (1.0 + trace.abs()) {
            return Err(SketchError::NotPositiveSemidefinite { index: j, pivot });
        }
        if pivot <= clamp {
            continue;
        }
        d[j] = pivot;
        for i in (j + 1)..n {
            // symmetrized read guards against last-bit asymmetry
            let mut v = 0.5 * (k[(i, j)] + k[(j, i)]);
            for p in 0..j {
                v -= l[(i, p)] * l[(j, p)] * d[p];
            }
            l[(i, j)] = v / pivot;
        }
    }
    Ok(LdlFactors { l, d })
}

/// SVD of the small core product `Rx · Ryᵀ`.
pub fn product_svd(rx: &Matrix, ry: &Matrix) -> Result<SvdFactors> {
    if rx.ncols() != ry.ncols() {
        return Err(SketchError::DimensionMismatch(format!(
            "core factors have inner dimensions {} and {}",
            rx.ncols(),
            ry.ncols()
        )));
    }
    ensure_finite(rx, "core factor Rx")?;
    ensure_finite(ry, "core factor Ry")?;
    Ok(dense_svd(&(rx * ry.transpose())))
}

pub(crate) fn dense_svd(m: &Matrix) -> SvdFactors {
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    if r == 0 {
        return SvdFactors {
            u: Matrix::zeros(rows, 0),
            sigma: Vector::zeros(0),
            v: Matrix::zeros(cols, 0),
        };
    }
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.expect("U requested");
    let v = svd.v_t.expect("Vᵀ requested").transpose();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    SvdFactors {
        u: u.select_columns(order.iter()),
        sigma: Vector::from_iterator(r, order.iter().map(|&i| svd.singular_values[i].max(0.0))),
        v: v.select_columns(order.iter()),
    }
}

/// Factors shared by the aligned pair and the shrinkage step.
struct PairFactors {
    qx: Matrix,
    qy: Matrix,
    svd: SvdFactors,
}

fn pair_factors(a: &Matrix, b: &Matrix) -> Result<PairFactors> {
    if a.ncols() != b.ncols() {
        return Err(SketchError::DimensionMismatch(format!(
            "paired buffers have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    ensure_finite(a, "left buffer")?;
    ensure_finite(b, "right buffer")?;
    let qa = thin_qr(a);
    let qb = thin_qr(b);
    let svd = dense_svd(&(&qa.r * qb.r.transpose()));
    Ok(PairFactors {
        qx: qa.q,
        qy: qb.q,
        svd,
    })
}

/// Scaled columns `Q U sqrt(w)` for the first `width` weights, zero-padded.
fn scaled_basis(q: &Matrix, u: &Matrix, weights: &[f64], width: usize) -> Matrix {
    let mut out = Matrix::zeros(q.nrows(), width);
    for (j, &w) in weights.iter().enumerate().take(width) {
        if w > 0.0 {
            let col = q * u.column(j) * w.sqrt();
            out.set_column(j, &col);
        }
    }
    out
}

/// Correlation shrinkage: shrink the product `A Bᵀ` by its `ell`-th singular
/// value and return `ell`-column factors of the result.
///
/// Output columns are ordered by singular value; trailing columns are zero
/// (at least the `ell`-th always is).
pub fn cs_shrink(a: &Matrix, b: &Matrix, ell: usize) -> Result<(Matrix, Matrix)> {
    if ell == 0 {
        return Err(invalid("ell", "sketch size must be positive"));
    }
    if ell > a.ncols() {
        return Err(invalid(
            "ell",
            format!("sketch size {} exceeds buffer width {}", ell, a.ncols()),
        ));
    }
    if ell > a.nrows().min(b.nrows()) {
        return Err(invalid(
            "ell",
            format!(
                "sketch size {} exceeds min(m_x, m_y) = {}",
                ell,
                a.nrows().min(b.nrows())
            ),
        ));
    }
    let f = pair_factors(a, b)?;
    let sigma = &f.svd.sigma;
    let delta = if sigma.len() >= ell { sigma[ell - 1] } else { 0.0 };
    let shrunk: Vec<f64> = sigma.iter().map(|s| (s - delta).max(0.0)).collect();
    Ok((
        scaled_basis(&f.qx, &f.svd.u, &shrunk, ell),
        scaled_basis(&f.qy, &f.svd.v, &shrunk, ell),
    ))
}

/// The aligned pair `(C, D) = (Qx U sqrt(Σ), Qy V sqrt(Σ))` of `(A, B)`.
///
/// `C Dᵀ = A Bᵀ` and `‖c_j‖‖d_j‖ = σ_j`, columns in descending order.
pub fn aligned_pair(a: &Matrix, b: &Matrix) -> Result<(Matrix, Matrix)> {
    let f = pair_factors(a, b)?;
    let sigma: Vec<f64> = f.svd.sigma.iter().copied().collect();
    let width = sigma.len();
    Ok((
        scaled_basis(&f.qx, &f.svd.u, &sigma, width),
        scaled_basis(&f.qy, &f.svd.v, &sigma, width),
    ))
}

/// Largest singular value of `A Bᵀ`, computed through the QR cores.
pub(crate) fn product_top_singular_value(a: &Matrix, b: &Matrix) -> f64 {
    if a.ncols() == 0 {
        return 0.0;
    }
    let qa = thin_qr(a);
    let qb = thin_qr(b);
    let core = &qa.r * qb.r.transpose();
    if core.is_empty() {
        return 0.0;
    }
    core.singular_values().max()
}
