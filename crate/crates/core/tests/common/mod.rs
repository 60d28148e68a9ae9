//! Test-only oracles that share no code with the library's factorizations.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Mat = DMatrix<f64>;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Thin SVD by one-sided (Hestenes) Jacobi rotations: `M = U diag(s) Vᵀ`,
/// `s` sorted non-increasing.
pub fn jacobi_svd(m: &Mat) -> (Mat, Vec<f64>, Mat) {
    let transposed = m.nrows() < m.ncols();
    let mut a = if transposed { m.transpose() } else { m.clone() };
    let n = a.ncols();
    let mut v = Mat::identity(n, n);
    for _ in 0..200 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let (xp, xq) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * xp - s * xq;
                        mat[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u = Mat::zeros(a.nrows(), n);
    let mut vv = Mat::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            u.set_column(k, &(a.column(j) / norms[j]));
        }
        vv.set_column(k, &v.column(j));
    }
    if transposed {
        (vv, s, u)
    } else {
        (u, s, vv)
    }
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.is_empty() {
        return vec![];
    }
    jacobi_svd(m).1
}

pub fn spectral(m: &Mat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// `σ_k` (1-based), zero past the rank.
pub fn sigma_k(m: &Mat, k: usize) -> f64 {
    singular_values(m).get(k - 1).copied().unwrap_or(0.0)
}

/// `M − σ_j u_j v_jᵀ` for the `j`-th (0-based) singular triple.
pub fn without_component(m: &Mat, j: usize) -> Mat {
    let (u, s, v) = jacobi_svd(m);
    let uj = DVector::from(u.column(j));
    let vj = DVector::from(v.column(j));
    m - uj * vj.transpose() * s[j]
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
