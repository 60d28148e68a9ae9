//! Snapshot-dumping co-occurring directions (DS-COD).
//!
//! A [`DsCodState`] keeps a residual buffer pair `(A, B)` of at most `2ℓ`
//! columns together with their Gram matrices. Whenever the top singular
//! value of the residual product reaches the dump threshold `θ`, the
//! corresponding aligned column pair is moved into a timestamped
//! [`Snapshot`] queue and its contribution is subtracted from the buffers.
//!
//! The running bound `ψ` avoids factorizations on most steps: adding a pair
//! `(x, y)` can raise `σ₁(A Bᵀ)` by at most `‖x‖‖y‖`, so the buffers only
//! need inspecting once `ψ ≥ θ`.

use std::collections::VecDeque;

use crate::decomp::{
    cs_shrink, ensure_finite, ldl_factor, product_svd, product_top_singular_value, Matrix,
    SvdFactors, Vector,
};
use crate::error::{invalid, Result, SketchError};

/// Singular values below `SIGMA_FLOOR_FACTOR * θ` are never dumped or removed.
pub const SIGMA_FLOOR_FACTOR: f64 = 1e-10;
/// Gram matrices are recomputed from the buffers after this many quick checks.
pub const COVARIANCE_REFRESH_INTERVAL: u64 = 64;
/// Relative slack for the dump-completeness debug assertion.
const DUMP_SLACK: f64 = 1e-6;

/// One column of each stream, arriving at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnPair {
    pub t: u64,
    pub x: Vector,
    pub y: Vector,
}

impl ColumnPair {
    pub fn new(t: u64, x: Vector, y: Vector) -> Self {
        ColumnPair { t, x, y }
    }

    pub fn from_slices(t: u64, x: &[f64], y: &[f64]) -> Self {
        ColumnPair::new(t, Vector::from_column_slice(x), Vector::from_column_slice(y))
    }

    /// An empty time instant.
    pub fn zero(t: u64, m_x: usize, m_y: usize) -> Self {
        ColumnPair::new(t, Vector::zeros(m_x), Vector::zeros(m_y))
    }

    pub fn norm_product(&self) -> f64 {
        self.x.norm() * self.y.norm()
    }

    pub fn is_zero(&self) -> bool {
        self.norm_product() == 0.0
    }
}

/// A dumped aligned column pair. `weight = ‖a‖‖b‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub a: Vector,
    pub b: Vector,
    pub t: u64,
    pub weight: f64,
    /// Dump threshold in force when the snapshot was taken.
    pub theta: f64,
}

/// Triangular factors of the buffers and the SVD of their core product.
///
/// `Rx`/`Ry` satisfy `RxᵀRx = AᵀA`, `RyᵀRy = BᵀB`, and
/// `Rx Ryᵀ = U diag(σ) Vᵀ`.
#[derive(Debug, Clone)]
pub struct CoreFactors {
    pub rx: Matrix,
    pub ry: Matrix,
    pub svd: SvdFactors,
}

#[derive(Debug, Clone)]
pub struct DsCodState {
    m_x: usize,
    m_y: usize,
    ell: usize,
    theta: f64,
    a: Matrix,
    b: Matrix,
    k_a: Matrix,
    k_b: Matrix,
    snapshots: VecDeque<Snapshot>,
    psi: f64,
    last_ts: Option<u64>,
    quick_checks: u64,
}

impl DsCodState {
    pub fn new(m_x: usize, m_y: usize, ell: usize, theta: f64) -> Result<Self> {
        if ell == 0 {
            return Err(invalid("ell", "sketch size must be positive"));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(invalid("theta", format!("threshold must be positive, got {theta}")));
        }
        if ell > m_x.min(m_y) {
            return Err(invalid(
                "ell",
                format!("sketch size {ell} exceeds min(m_x, m_y) = {}", m_x.min(m_y)),
            ));
        }
        Ok(DsCodState {
            m_x,
            m_y,
            ell,
            theta,
            a: Matrix::zeros(m_x, 0),
            b: Matrix::zeros(m_y, 0),
            k_a: Matrix::zeros(0, 0),
            k_b: Matrix::zeros(0, 0),
            snapshots: VecDeque::new(),
            psi: 0.0,
            last_ts: None,
            quick_checks: 0,
        })
    }

    /// State whose residual buffers are `a` and `b`, with exact Gram matrices.
    ///
    /// `ψ` is set to the sum of column norm products, which bounds `σ₁(A Bᵀ)`.
    pub fn from_buffers(a: Matrix, b: Matrix, ell: usize, theta: f64) -> Result<Self> {
        let mut st = DsCodState::new(a.nrows(), b.nrows(), ell, theta)?;
        if a.ncols() != b.ncols() {
            return Err(SketchError::DimensionMismatch(format!(
                "buffers have {} and {} columns",
                a.ncols(),
                b.ncols()
            )));
        }
        if a.ncols() >= 2 * ell {
            return Err(invalid(
                "buffers",
                format!("{} columns do not fit a buffer of width {}", a.ncols(), 2 * ell),
            ));
        }
        ensure_finite(&a, "buffer A")?;
        ensure_finite(&b, "buffer B")?;
        st.psi = (0..a.ncols())
            .map(|j| a.column(j).norm() * b.column(j).norm())
            .sum();
        st.a = a;
        st.b = b;
        st.refresh_covariance();
        Ok(st)
    }

    /// Empty state with the same dimensions, `ℓ` and `θ`.
    pub fn fresh(&self) -> Self {
        DsCodState::new(self.m_x, self.m_y, self.ell, self.theta).expect("validated on creation")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m_x, self.m_y)
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn set_theta(&mut self, theta: f64) {
        debug_assert!(theta > 0.0);
        self.theta = theta;
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn k_a(&self) -> &Matrix {
        &self.k_a
    }

    pub fn k_b(&self) -> &Matrix {
        &self.k_b
    }

    pub fn snapshots(&self) -> &VecDeque<Snapshot> {
        &self.snapshots
    }

    pub fn last_ts(&self) -> Option<u64> {
        self.last_ts
    }

    pub fn buffer_cols(&self) -> usize {
        self.a.ncols()
    }

    /// Residual columns plus snapshots.
    pub fn space_cols(&self) -> usize {
        self.a.ncols() + self.snapshots.len()
    }

    /// Snapshots that are still inside a window of length `window` at `now`.
    pub fn live_snapshots(&self, now: u64, window: u64) -> impl Iterator<Item = &Snapshot> {
        self.snapshots.iter().filter(move |s| s.t + window > now)
    }

    fn sigma_floor(&self) -> f64 {
        SIGMA_FLOOR_FACTOR * self.theta
    }

    fn check_column(&self, col: &ColumnPair) -> Result<()> {
        if col.x.len() != self.m_x || col.y.len() != self.m_y {
            return Err(SketchError::DimensionMismatch(format!(
                "expected column pair of sizes ({}, {}), got ({}, {})",
                self.m_x,
                self.m_y,
                col.x.len(),
                col.y.len()
            )));
        }
        if let Some(last) = self.last_ts {
            if col.t <= last {
                return Err(SketchError::NonMonotoneTimestamp { last, got: col.t });
            }
        }
        if !col.x.iter().chain(col.y.iter()).all(|v| v.is_finite()) {
            return Err(SketchError::NonFinite("column pair"));
        }
        Ok(())
    }

    /// Feed one column pair.
    ///
    /// A full buffer is compressed with correlation shrinkage and its leading
    /// columns are dumped while they clear `θ`. Otherwise the pair is
    /// appended, and a quick check runs once `ψ ≥ θ`. Zero pairs only advance
    /// the clock.
    pub fn update(&mut self, col: &ColumnPair) -> Result<()> {
        self.check_column(col)?;
        self.last_ts = Some(col.t);
        let w = col.norm_product();
        if w == 0.0 {
            return Ok(());
        }
        self.psi += w;
        if self.a.ncols() + 1 >= 2 * self.ell {
            self.shrink_and_dump(col)
        } else {
            self.append(col);
            if self.psi >= self.theta {
                self.quick_check(col.t)?;
            }
            Ok(())
        }
    }

    fn shrink_and_dump(&mut self, col: &ColumnPair) -> Result<()> {
        let c = self.a.ncols();
        let mut a = self.a.clone().insert_column(c, 0.0);
        let mut b = self.b.clone().insert_column(c, 0.0);
        a.set_column(c, &col.x);
        b.set_column(c, &col.y);
        let (mut a, mut b) = cs_shrink(&a, &b, self.ell)?;

        let floor = self.sigma_floor();
        while a.ncols() > 0 {
            let (ca, cb) = (a.column(0).clone_owned(), b.column(0).clone_owned());
            let weight = ca.norm() * cb.norm();
            if weight < self.theta || weight <= floor {
                break;
            }
            self.snapshots.push_back(Snapshot {
                a: ca,
                b: cb,
                t: col.t,
                weight,
                theta: self.theta,
            });
            a = a.remove_column(0);
            b = b.remove_column(0);
        }
        self.psi = if a.ncols() > 0 {
            a.column(0).norm() * b.column(0).norm()
        } else {
            0.0
        };
        self.a = a;
        self.b = b;
        self.refresh_covariance();
        Ok(())
    }

    /// Append a pair and extend the Gram matrices by the rank-one border.
    fn append(&mut self, col: &ColumnPair) {
        let c = self.a.ncols();
        let ax = self.a.tr_mul(&col.x);
        let by = self.b.tr_mul(&col.y);
        self.k_a = bordered(&self.k_a, &ax, col.x.norm_squared());
        self.k_b = bordered(&self.k_b, &by, col.y.norm_squared());
        let mut a = std::mem::replace(&mut self.a, Matrix::zeros(0, 0)).insert_column(c, 0.0);
        let mut b = std::mem::replace(&mut self.b, Matrix::zeros(0, 0)).insert_column(c, 0.0);
        a.set_column(c, &col.x);
        b.set_column(c, &col.y);
        self.a = a;
        self.b = b;
    }

    /// Recompute `K_A = AᵀA` and `K_B = BᵀB` from the buffers.
    pub fn refresh_covariance(&mut self) {
        self.k_a = self.a.tr_mul(&self.a);
        self.k_b = self.b.tr_mul(&self.b);
    }

    /// `Rx`, `Ry` from LDL factorizations of the Gram matrices, and the SVD
    /// of `Rx Ryᵀ`.
    pub fn core_factors(&self) -> Result<CoreFactors> {
        let rx = ldl_factor(&self.k_a)?.triangular_factor();
        let ry = ldl_factor(&self.k_b)?.triangular_factor();
        let svd = product_svd(&rx, &ry)?;
        Ok(CoreFactors { rx, ry, svd })
    }

    /// Inspect the residual product and dump every leading component whose
    /// singular value reaches `θ` (at most `ℓ` of them). Returns the number
    /// of snapshots taken.
    pub fn quick_check(&mut self, now: u64) -> Result<usize> {
        let factors = match self.core_factors() {
            Ok(f) => f,
            Err(_) => {
                self.refresh_covariance();
                self.core_factors().map_err(|e| {
                    SketchError::Numerical(format!(
                        "quick check failed after covariance refresh: {e}"
                    ))
                })?
            }
        };

        let limit = self.ell.min(factors.svd.sigma.len());
        let floor = self.sigma_floor();
        let mut next_psi = 0.0;
        let mut dumped = 0;
        let mut exhausted = true;
        for j in 0..limit {
            let sigma = factors.svd.sigma[j];
            next_psi = sigma;
            if sigma < self.theta || sigma <= floor {
                exhausted = false;
                break;
            }
            let (a, b) = self
                .extract_snapshot(&factors, j)
                .expect("sigma above floor");
            self.snapshots.push_back(Snapshot {
                weight: a.norm() * b.norm(),
                a,
                b,
                t: now,
                theta: self.theta,
            });
            self.remove_component(&factors, j)?;
            dumped += 1;
        }
        self.psi = next_psi;

        self.quick_checks += 1;
        if self.quick_checks.is_multiple_of(COVARIANCE_REFRESH_INTERVAL) {
            self.refresh_covariance();
        }

        if cfg!(debug_assertions) && !exhausted {
            let top = self.residual_top_singular_value();
            debug_assert!(
                top < self.theta * (1.0 + DUMP_SLACK),
                "residual top singular value {top} not below threshold {}",
                self.theta
            );
        }
        Ok(dumped)
    }

    /// Aligned columns `a_j = A Ryᵀ v_j / √σ_j`, `b_j = B Rxᵀ u_j / √σ_j`.
    ///
    /// `None` when `σ_j` is at or below the floor.
    pub fn extract_snapshot(&self, f: &CoreFactors, j: usize) -> Option<(Vector, Vector)> {
        let sigma = f.svd.sigma[j];
        if sigma <= self.sigma_floor() {
            return None;
        }
        let scale = sigma.sqrt().recip();
        let a = &self.a * (f.ry.tr_mul(&f.svd.v.column(j))) * scale;
        let b = &self.b * (f.rx.tr_mul(&f.svd.u.column(j))) * scale;
        Some((a, b))
    }

    /// Subtract the `j`-th aligned component from the buffers.
    ///
    /// With `P_A = Ryᵀ v uᵀ Rx / σ` and `P_B = Rxᵀ u vᵀ Ry / σ`:
    /// `A ← A − A P_A`, `B ← B − B P_B`, and the Gram matrices are updated
    /// in factored form, `K̄_A = G − P_Aᵀ G` with `G = AᵀĀ = K_A − K_A P_A`.
    pub fn remove_component(&mut self, f: &CoreFactors, j: usize) -> Result<()> {
        let sigma = f.svd.sigma[j];
        let floor = self.sigma_floor();
        if sigma <= floor {
            return Err(SketchError::BelowFloor { sigma, floor });
        }
        let inv = sigma.recip();
        // P_A = wa zaᵀ / σ, P_B = za waᵀ / σ
        let wa = f.ry.tr_mul(&f.svd.v.column(j));
        let za = f.rx.tr_mul(&f.svd.u.column(j));

        let a_wa = &self.a * &wa;
        self.a.ger(-inv, &a_wa, &za, 1.0);
        let b_za = &self.b * &za;
        self.b.ger(-inv, &b_za, &wa, 1.0);

        let mut g = self.k_a.clone();
        g.ger(-inv, &(&self.k_a * &wa), &za, 1.0);
        let wg = g.tr_mul(&wa);
        g.ger(-inv, &za, &wg, 1.0);
        self.k_a = symmetrized(g);

        let mut h = self.k_b.clone();
        h.ger(-inv, &(&self.k_b * &za), &wa, 1.0);
        let zh = h.tr_mul(&za);
        h.ger(-inv, &wa, &zh, 1.0);
        self.k_b = symmetrized(h);
        Ok(())
    }

    /// Drop snapshots that left the window `(now − window, now]`, and, when
    /// `max_len` is given, the oldest ones beyond that count.
    pub fn expire(&mut self, now: u64, window: u64, max_len: Option<usize>) {
        while let Some(head) = self.snapshots.front() {
            let expired = head.t + window <= now;
            let over = max_len.is_some_and(|m| self.snapshots.len() > m);
            if expired || over {
                self.snapshots.pop_front();
            } else {
                break;
            }
        }
    }

    /// `σ₁(A Bᵀ)` recomputed from the buffers through QR.
    pub fn residual_top_singular_value(&self) -> f64 {
        product_top_singular_value(&self.a, &self.b)
    }

    /// Larger of the two relative Gram-matrix drifts
    /// `‖K − MᵀM‖_max / (1 + ‖MᵀM‖_max)`.
    pub fn covariance_drift(&self) -> f64 {
        let drift = |k: &Matrix, m: &Matrix| {
            let exact = m.tr_mul(m);
            if exact.is_empty() {
                return k.amax();
            }
            (k - &exact).amax() / (1.0 + exact.amax())
        };
        drift(&self.k_a, &self.a).max(drift(&self.k_b, &self.b))
    }

    /// Stack the residual buffers and the live snapshots side by side.
    pub fn stacked(&self, now: u64, window: u64) -> (Matrix, Matrix) {
        let live: Vec<&Snapshot> = self.live_snapshots(now, window).collect();
        let c = self.a.ncols();
        let mut a = Matrix::zeros(self.m_x, c + live.len());
        let mut b = Matrix::zeros(self.m_y, c + live.len());
        a.columns_mut(0, c).copy_from(&self.a);
        b.columns_mut(0, c).copy_from(&self.b);
        for (i, s) in live.iter().enumerate() {
            a.set_column(c + i, &s.a);
            b.set_column(c + i, &s.b);
        }
        (a, b)
    }
}

fn bordered(k: &Matrix, border: &Vector, corner: f64) -> Matrix {
    let n = k.nrows();
    let mut out = Matrix::zeros(n + 1, n + 1);
    out.view_mut((0, 0), (n, n)).copy_from(k);
    for i in 0..n {
        out[(i, n)] = border[i];
        out[(n, i)] = border[i];
    }
    out[(n, n)] = corner;
    out
}

fn symmetrized(k: Matrix) -> Matrix {
    (&k + k.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::aligned_pair;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random(rng: &mut Xoshiro256PlusPlus, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn top_sv(m: &Matrix) -> f64 {
        if m.is_empty() {
            0.0
        } else {
            m.singular_values().max()
        }
    }

    /// Buffers whose product has exactly the given singular values, built
    /// from orthonormal columns so `A Bᵀ = Σ σ_j e_j e_jᵀ` in the leading block.
    fn prescribed(sigmas: &[f64], m: usize) -> (Matrix, Matrix) {
        let k = sigmas.len();
        let mut a = Matrix::zeros(m, k);
        let mut b = Matrix::zeros(m, k);
        for (j, s) in sigmas.iter().enumerate() {
            a[(j, j)] = s.sqrt();
            b[(j, j)] = s.sqrt();
        }
        // rotate both sides so nothing is axis aligned
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(99);
        let qa = random(&mut rng, m, m).qr().q();
        let qb = random(&mut rng, m, m).qr().q();
        (qa * a, qb * b)
    }

    #[test]
    fn init_validates() {
        let st = DsCodState::new(4, 4, 4, 10.0).unwrap();
        assert_eq!(st.psi(), 0.0);
        assert!(st.snapshots().is_empty());
        assert_eq!(st.buffer_cols(), 0);
        assert!(DsCodState::new(2, 2, 1, 1e-3).is_ok());
        assert!(DsCodState::new(2, 2, 0, 1.0).is_err());
        assert!(DsCodState::new(2, 2, 1, 0.0).is_err());
        assert!(DsCodState::new(2, 2, 3, 1.0).is_err());
    }

    #[test]
    fn update_below_threshold_only_buffers() {
        let mut st = DsCodState::new(3, 3, 2, 100.0).unwrap();
        st.update(&ColumnPair::from_slices(1, &[1.0, 1.0, 0.0], &[1.0, -1.0, 0.0]))
            .unwrap();
        assert!((st.psi() - 2.0).abs() < 1e-12);
        assert_eq!(st.buffer_cols(), 1);
        assert!(st.snapshots().is_empty());
    }

    #[test]
    fn update_rejects_bad_columns() {
        let mut st = DsCodState::new(3, 3, 2, 100.0).unwrap();
        st.update(&ColumnPair::from_slices(5, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]))
            .unwrap();
        assert!(matches!(
            st.update(&ColumnPair::from_slices(5, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0])),
            Err(SketchError::NonMonotoneTimestamp { last: 5, got: 5 })
        ));
        assert!(matches!(
            st.update(&ColumnPair::from_slices(6, &[1.0, 0.0], &[1.0, 0.0, 0.0])),
            Err(SketchError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn crossing_threshold_triggers_quick_check() {
        // ψ reaches 99 with a rank-one residual of weight 99, then one more
        // aligned pair of weight 2 pushes σ₁ to 101 ≥ θ.
        let mut st = DsCodState::new(3, 3, 2, 100.0).unwrap();
        let s = 99f64.sqrt();
        st.update(&ColumnPair::from_slices(1, &[s, 0.0, 0.0], &[s, 0.0, 0.0]))
            .unwrap();
        assert!((st.psi() - 99.0).abs() < 1e-9);
        assert!(st.snapshots().is_empty());
        let r = 2f64.sqrt();
        st.update(&ColumnPair::from_slices(2, &[r, 0.0, 0.0], &[r, 0.0, 0.0]))
            .unwrap();
        assert_eq!(st.snapshots().len(), 1);
        assert!((st.snapshots()[0].weight - 101.0).abs() < 1e-9);
        assert_eq!(st.snapshots()[0].t, 2);
        assert!(st.residual_top_singular_value() < 1e-6);
    }

    #[test]
    fn orthogonal_pairs_above_threshold_all_dumped() {
        let mut st = DsCodState::new(4, 4, 2, 40.0).unwrap();
        let w = 50f64.sqrt();
        for i in 0..4 {
            let mut x = [0.0; 4];
            x[i] = w;
            st.update(&ColumnPair::from_slices(i as u64 + 1, &x, &x)).unwrap();
        }
        assert_eq!(st.snapshots().len(), 4);
        for s in st.snapshots() {
            assert!((s.weight - 50.0).abs() < 1e-9);
        }
        assert!(st.residual_top_singular_value() < 40.0);
        // dumped components reconstruct the full product
        let mut sum = Matrix::zeros(4, 4);
        for s in st.snapshots() {
            sum += &s.a * s.b.transpose();
        }
        sum += st.a() * st.b().transpose();
        assert!((sum - Matrix::identity(4, 4) * 50.0).amax() < 1e-9);
    }

    #[test]
    fn quick_check_dumps_single_component() {
        let (a, b) = prescribed(&[150.0, 30.0], 5);
        let mut st = DsCodState::from_buffers(a, b, 2, 100.0).unwrap();
        let n = st.quick_check(7).unwrap();
        assert_eq!(n, 1);
        assert!((st.snapshots()[0].weight - 150.0).abs() < 1e-7 * 150.0);
        assert!((st.psi() - 30.0).abs() < 1e-7 * 150.0);
        assert!((st.residual_top_singular_value() - 30.0).abs() < 1e-6 * 150.0);
    }

    #[test]
    fn quick_check_below_threshold_is_noop() {
        let (a, b) = prescribed(&[50.0, 40.0], 5);
        let mut st = DsCodState::from_buffers(a.clone(), b, 2, 100.0).unwrap();
        assert_eq!(st.quick_check(1).unwrap(), 0);
        assert!((st.psi() - 50.0).abs() < 1e-9);
        assert_eq!(st.a(), &a);
    }

    #[test]
    fn quick_check_dumps_two_components() {
        let (a, b) = prescribed(&[150.0, 120.0, 10.0], 6);
        let mut st = DsCodState::from_buffers(a, b, 2, 100.0).unwrap();
        assert_eq!(st.quick_check(3).unwrap(), 2);
        let w: Vec<f64> = st.snapshots().iter().map(|s| s.weight).collect();
        assert!((w[0] - 150.0).abs() < 1e-7 * 150.0);
        assert!((w[1] - 120.0).abs() < 1e-7 * 150.0);
        let residual = top_sv(&(st.a() * st.b().transpose()));
        assert!((residual - 10.0).abs() < 1e-6 * 150.0);
        assert!(st.covariance_drift() < 1e-9);
    }

    #[test]
    fn extract_snapshot_diagonal_case() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 1.0]));
        let st = DsCodState::from_buffers(d.clone(), d, 2, 1.0).unwrap();
        let f = st.core_factors().unwrap();
        let (a, b) = st.extract_snapshot(&f, 0).unwrap();
        assert!((a.abs() - Vector::from_vec(vec![2.0, 0.0])).amax() < 1e-12);
        assert!((b.abs() - Vector::from_vec(vec![2.0, 0.0])).amax() < 1e-12);
        assert!((a.norm() * b.norm() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn extract_snapshot_unit_case() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let qa = random(&mut rng, 5, 3).qr().q();
        let qb = random(&mut rng, 5, 3).qr().q();
        let st = DsCodState::from_buffers(qa, qb, 2, 0.5).unwrap();
        let f = st.core_factors().unwrap();
        assert!((f.svd.sigma[0] - 1.0).abs() < 1e-10);
        let (a, b) = st.extract_snapshot(&f, 0).unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert!((b.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn extract_snapshot_matches_aligned_pair() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
        let a = random(&mut rng, 6, 3);
        let b = random(&mut rng, 6, 3);
        let st = DsCodState::from_buffers(a.clone(), b.clone(), 2, 1e-3).unwrap();
        let f = st.core_factors().unwrap();
        let (c, d) = aligned_pair(&a, &b).unwrap();
        for j in 0..3 {
            let (sa, sb) = st.extract_snapshot(&f, j).unwrap();
            let got = &sa * sb.transpose();
            let want = c.column(j) * d.column(j).transpose();
            assert!((got - want).amax() < 1e-8 * (1.0 + f.svd.sigma[0]));
            assert!((sa.norm() * sb.norm() - f.svd.sigma[j]).abs() < 1e-7 * f.svd.sigma[j]);
        }
    }

    #[test]
    fn extract_and_remove_respect_floor() {
        let st0 = DsCodState::from_buffers(Matrix::zeros(3, 1), Matrix::zeros(3, 1), 1, 1.0)
            .unwrap();
        let f = st0.core_factors().unwrap();
        assert!(st0.extract_snapshot(&f, 0).is_none());
        let mut st = st0.clone();
        assert!(matches!(
            st.remove_component(&f, 0),
            Err(SketchError::BelowFloor { .. })
        ));
    }

    #[test]
    fn remove_component_diagonal_case() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 1.0]));
        let mut st = DsCodState::from_buffers(d.clone(), d, 2, 1.0).unwrap();
        let f = st.core_factors().unwrap();
        st.remove_component(&f, 0).unwrap();
        let p = st.a() * st.b().transpose();
        let want = Matrix::from_diagonal(&Vector::from_vec(vec![0.0, 1.0]));
        assert!((p - want).amax() < 1e-12);
        assert!(st.covariance_drift() < 1e-12);
    }

    #[test]
    fn remove_top_component_leaves_second() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(13);
        let a = random(&mut rng, 7, 4);
        let b = random(&mut rng, 6, 4);
        let before: Vec<f64> = (&a * b.transpose()).singular_values().iter().copied().collect();
        let mut sorted = before.clone();
        sorted.sort_by(|x, y| y.total_cmp(x));
        let mut st = DsCodState::from_buffers(a, b, 3, 1e-3).unwrap();
        let f = st.core_factors().unwrap();
        st.remove_component(&f, 0).unwrap();
        let after = top_sv(&(st.a() * st.b().transpose()));
        assert!((after - sorted[1]).abs() < 1e-6 * sorted[0]);
    }

    #[test]
    fn removing_everything_annihilates_product() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(14);
        let a = random(&mut rng, 8, 5);
        let b = random(&mut rng, 8, 5);
        let mut st = DsCodState::from_buffers(a.clone(), b.clone(), 3, 1e-3).unwrap();
        let sigma1 = top_sv(&(&a * b.transpose()));
        let f = st.core_factors().unwrap();
        for j in 0..f.svd.sigma.len() {
            if f.svd.sigma[j] > 0.0 {
                st.remove_component(&f, j).unwrap();
            }
        }
        assert!(top_sv(&(st.a() * st.b().transpose())) <= 1e-6 * sigma1);
    }

    fn snap(t: u64) -> Snapshot {
        Snapshot {
            a: Vector::zeros(1),
            b: Vector::zeros(1),
            t,
            weight: 1.0,
            theta: 1.0,
        }
    }

    #[test]
    fn expire_by_time_boundary() {
        let mut st = DsCodState::new(1, 1, 1, 1.0).unwrap();
        st.snapshots.extend([snap(1), snap(5)]);
        st.expire(11, 10, None);
        assert_eq!(st.snapshots().iter().map(|s| s.t).collect::<Vec<_>>(), vec![5]);
        st.expire(14, 10, None);
        assert_eq!(st.snapshots().len(), 1);
        st.expire(15, 10, None);
        assert!(st.snapshots().is_empty());
        st.expire(100, 10, Some(3));
        assert!(st.snapshots().is_empty());
    }

    #[test]
    fn expire_by_count_cap() {
        let mut st = DsCodState::new(1, 1, 1, 1.0).unwrap();
        st.snapshots.extend((1..=12).map(snap));
        st.expire(12, 1000, Some(10));
        assert_eq!(st.snapshots().len(), 10);
        assert_eq!(st.snapshots()[0].t, 3);
    }

    #[test]
    fn zero_pair_only_advances_clock() {
        let mut st = DsCodState::new(2, 2, 1, 1.0).unwrap();
        st.update(&ColumnPair::zero(3, 2, 2)).unwrap();
        assert_eq!(st.last_ts(), Some(3));
        assert_eq!(st.buffer_cols(), 0);
        assert_eq!(st.psi(), 0.0);
    }
}
