//! Exact sliding-window ground truth and the correlation-error metric.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::decomp::{Matrix, Vector};
use crate::error::{Result, SketchError};
use crate::sketch::ColumnPair;

pub const POWER_MAX_ITERS: usize = 1_000;
pub const POWER_REL_TOL: f64 = 1e-9;
const POWER_SEED: u64 = 0x05EE_D0F0_AC1E;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub corr_err: f64,
    pub spectral_err: f64,
    pub fro_x: f64,
    pub fro_y: f64,
    pub window_id: u64,
}

/// Buffer of the pairs with `t ∈ (now − N, now]`.
#[derive(Debug, Clone)]
pub struct WindowOracle {
    m_x: usize,
    m_y: usize,
    window: u64,
    pairs: VecDeque<ColumnPair>,
    sq_x: f64,
    sq_y: f64,
    evictions: u64,
    now: Option<u64>,
}

impl WindowOracle {
    pub fn new(m_x: usize, m_y: usize, window: u64) -> Result<Self> {
        if window == 0 {
            return Err(crate::error::invalid("window", "window size must be positive"));
        }
        Ok(WindowOracle {
            m_x,
            m_y,
            window,
            pairs: VecDeque::new(),
            sq_x: 0.0,
            sq_y: 0.0,
            evictions: 0,
            now: None,
        })
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m_x, self.m_y)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn now(&self) -> Option<u64> {
        self.now
    }

    pub fn pairs(&self) -> impl Iterator<Item = &ColumnPair> {
        self.pairs.iter()
    }

    pub fn fro_x(&self) -> f64 {
        self.sq_x.max(0.0).sqrt()
    }

    pub fn fro_y(&self) -> f64 {
        self.sq_y.max(0.0).sqrt()
    }

    pub fn push(&mut self, col: ColumnPair) -> Result<()> {
        if col.x.len() != self.m_x || col.y.len() != self.m_y {
            return Err(SketchError::DimensionMismatch(format!(
                "oracle expects ({}, {}), got ({}, {})",
                self.m_x,
                self.m_y,
                col.x.len(),
                col.y.len()
            )));
        }
        if let Some(last) = self.now {
            if col.t <= last {
                return Err(SketchError::NonMonotoneTimestamp { last, got: col.t });
            }
        }
        let now = col.t;
        self.now = Some(now);
        self.sq_x += col.x.norm_squared();
        self.sq_y += col.y.norm_squared();
        self.pairs.push_back(col);
        while let Some(head) = self.pairs.front() {
            if head.t + self.window > now {
                break;
            }
            let head = self.pairs.pop_front().expect("non-empty");
            self.sq_x -= head.x.norm_squared();
            self.sq_y -= head.y.norm_squared();
            self.evictions += 1;
        }
        // running differences drift; resynchronize once per window turnover
        if self.evictions >= self.window {
            self.evictions = 0;
            self.recompute_norms();
        }
        Ok(())
    }

    fn recompute_norms(&mut self) {
        self.sq_x = self.pairs.iter().map(|p| p.x.norm_squared()).sum();
        self.sq_y = self.pairs.iter().map(|p| p.y.norm_squared()).sum();
    }

    /// The window submatrices `X_W` and `Y_W`, oldest column first.
    pub fn window_matrices(&self) -> (Matrix, Matrix) {
        let n = self.pairs.len();
        let mut x = Matrix::zeros(self.m_x, n);
        let mut y = Matrix::zeros(self.m_y, n);
        for (j, p) in self.pairs.iter().enumerate() {
            x.set_column(j, &p.x);
            y.set_column(j, &p.y);
        }
        (x, y)
    }

    /// `X_W Y_Wᵀ`, recomputed from the buffer.
    pub fn exact_product(&self) -> Matrix {
        let (x, y) = self.window_matrices();
        x * y.transpose()
    }

    /// Correlation error of the sketch `(A, B)` against the current window.
    pub fn corr_err(&self, a: &Matrix, b: &Matrix) -> Result<ErrorReport> {
        if a.nrows() != self.m_x || b.nrows() != self.m_y || a.ncols() != b.ncols() {
            return Err(SketchError::DimensionMismatch(format!(
                "sketch shapes {:?} and {:?} do not match window dims ({}, {})",
                a.shape(),
                b.shape(),
                self.m_x,
                self.m_y
            )));
        }
        let diff = self.exact_product() - a * b.transpose();
        let spectral_err = spectral_norm(&diff);
        let (fro_x, fro_y) = (self.fro_x(), self.fro_y());
        let denom = fro_x * fro_y;
        let corr_err = if denom > 0.0 {
            spectral_err / denom
        } else if spectral_err == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Ok(ErrorReport {
            corr_err,
            spectral_err,
            fro_x,
            fro_y,
            window_id: self.now.unwrap_or(0),
        })
    }
}

/// Largest singular value by power iteration on `MᵀM`.
///
/// Deterministic: the start vector comes from a fixed seed.
pub fn spectral_norm(m: &Matrix) -> f64 {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.amax() == 0.0 {
        return 0.0;
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(POWER_SEED);
    let mut v = Vector::from_fn(cols, |_, _| rng.random_range(-1.0..1.0) + 1e-3);
    v.normalize_mut();
    let mut estimate = 0.0f64;
    for _ in 0..POWER_MAX_ITERS {
        let mv = m * &v;
        let next = mv.norm();
        if next == 0.0 {
            // start vector in the null space; perturb deterministically
            v = Vector::from_fn(cols, |_, _| rng.random_range(-1.0..1.0));
            v.normalize_mut();
            continue;
        }
        let mut w = m.tr_mul(&mv);
        let wn = w.norm();
        w /= wn;
        v = w;
        let converged = (next - estimate).abs() <= POWER_REL_TOL * next;
        estimate = next;
        if converged {
            break;
        }
    }
    // one more Rayleigh step with the final direction
    estimate.max((m * &v).norm())
}
