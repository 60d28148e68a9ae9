//! Window-level sketches built on [`DsCodState`].
//!
//! * [`LevelSet`]: hierarchical thresholds `εN·2^j` (sequence windows) or
//!   `2^i` (time windows), one main/auxiliary pair per level.
//! * [`AdaptiveState`]: a single main/auxiliary pair whose threshold doubles
//!   or halves with the live snapshot count.
//! * [`CodSketch`] and [`NaiveWindowCod`]: plain co-occurring directions,
//!   over the whole stream or rerun on the exact window contents.
//!
//! Residual buffers are expired coarsely: every `N` steps the auxiliary
//! sketch, which started empty `N` steps earlier, replaces the main one.

use crate::decomp::{cs_shrink, Matrix};
use crate::error::{invalid, Result, SketchError};
use crate::oracle::WindowOracle;
use crate::sketch::{ColumnPair, DsCodState};

/// A level qualifies for queries when it holds at least
/// `QUERY_LEVEL_FACTOR * ℓ` live snapshots.
pub const QUERY_LEVEL_FACTOR: f64 = 1.0;

// Guards ratios like 3/0.1 = 30.000000000000004 against spurious rounding.
const RATIO_FUZZ: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    Sequence,
    Time,
}

/// `⌈x⌉` tolerant to last-bit noise in `x`.
pub(crate) fn fuzzy_ceil(x: f64) -> usize {
    (x - RATIO_FUZZ).ceil().max(0.0) as usize
}

/// `⌊x⌋` tolerant to last-bit noise in `x`.
pub(crate) fn fuzzy_floor(x: f64) -> usize {
    (x + RATIO_FUZZ).floor().max(0.0) as usize
}

/// Sketch size `ℓ = ⌈1/ε⌉`.
pub fn sketch_size_for(eps: f64) -> usize {
    fuzzy_ceil(1.0 / eps)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(invalid("eps", format!("must lie in (0, 1), got {eps}")))
    }
}

/// Result of a window query: at most `ℓ` nonzero columns.
#[derive(Debug, Clone)]
pub struct CorrelationSketch {
    pub a: Matrix,
    pub b: Matrix,
    pub level_used: usize,
    pub window_id: u64,
}

impl CorrelationSketch {
    /// Columns whose norm product is nonzero.
    pub fn nonzero_cols(&self) -> usize {
        (0..self.a.ncols())
            .filter(|&j| self.a.column(j).norm() * self.b.column(j).norm() > 0.0)
            .count()
    }
}

/// Common surface the benchmark runner drives.
pub trait WindowSketch {
    fn update(&mut self, col: &ColumnPair) -> Result<()>;
    fn query(&self, now: u64) -> Result<CorrelationSketch>;
    /// All live residual and snapshot columns, main and auxiliary.
    fn total_space_cols(&self) -> usize;
}

fn shrink_to_sketch(a: Matrix, b: Matrix, ell: usize) -> Result<(Matrix, Matrix)> {
    let (a, b) = if a.ncols() < ell {
        (a.resize_horizontally(ell, 0.0), b.resize_horizontally(ell, 0.0))
    } else {
        (a, b)
    };
    cs_shrink(&a, &b, ell)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Restart {
    Continue,
    /// First step of a new epoch.
    Swap,
    /// At least one whole epoch was skipped; both sketches are stale.
    Stale,
}

/// Tracks epochs `(t − 1) / N`. For gap-free timestamps a swap fires exactly
/// when `t mod N == 1` (every step when `N = 1`), except at the very first
/// step where both sketches are still empty.
#[derive(Debug, Clone)]
struct RestartClock {
    window: u64,
    epoch: Option<u64>,
}

impl RestartClock {
    fn new(window: u64) -> Self {
        RestartClock {
            window,
            epoch: None,
        }
    }

    fn tick(&mut self, t: u64) -> Restart {
        let e = (t - 1) / self.window;
        let r = match self.epoch {
            None => Restart::Continue,
            Some(p) if e == p => Restart::Continue,
            Some(p) if e == p + 1 => Restart::Swap,
            Some(_) => Restart::Stale,
        };
        self.epoch = Some(e);
        r
    }
}

fn check_time(last: Option<u64>, t: u64) -> Result<()> {
    if t == 0 {
        return Err(invalid("t", "timestamps start at 1"));
    }
    match last {
        Some(l) if t <= l => Err(SketchError::NonMonotoneTimestamp { last: l, got: t }),
        _ => Ok(()),
    }
}

/// Highest level whose count reaches `c_q·ℓ`; otherwise the level with the
/// largest count, ties broken toward the lower level.
pub fn select_level(counts: &[usize], ell: usize, factor: f64) -> usize {
    let need = factor * ell as f64;
    if let Some(j) = counts.iter().rposition(|&c| c as f64 >= need) {
        return j;
    }
    let mut best = 0;
    for (j, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Level {
    pub main: DsCodState,
    pub aux: DsCodState,
}

/// Hierarchical DS-COD.
#[derive(Debug, Clone)]
pub struct LevelSet {
    levels: Vec<Level>,
    thresholds: Vec<f64>,
    window: u64,
    ell: usize,
    eps: f64,
    max_norm: f64,
    mode: WindowMode,
    snapshot_cap: usize,
    clock: RestartClock,
    last_t: Option<u64>,
}

impl LevelSet {
    /// `max_norm` is `R`, the bound on `‖x‖‖y‖` per pair.
    pub fn new(
        m_x: usize,
        m_y: usize,
        window: u64,
        ell: usize,
        eps: f64,
        max_norm: f64,
        mode: WindowMode,
    ) -> Result<Self> {
        if window == 0 {
            return Err(invalid("window", "window size must be positive"));
        }
        check_eps(eps)?;
        if !(max_norm >= 1.0 && max_norm.is_finite()) {
            return Err(invalid("R", format!("norm bound must be >= 1, got {max_norm}")));
        }
        let thresholds: Vec<f64> = match mode {
            WindowMode::Sequence => {
                let top = fuzzy_ceil(max_norm.log2());
                (0..=top)
                    .map(|j| eps * window as f64 * 2f64.powi(j as i32))
                    .collect()
            }
            WindowMode::Time => {
                let span = eps * window as f64 * max_norm;
                let top = if span > 1.0 { fuzzy_ceil(span.log2()) } else { 0 };
                (0..=top).map(|i| 2f64.powi(i as i32)).collect()
            }
        };
        let levels = thresholds
            .iter()
            .map(|&theta| {
                let main = DsCodState::new(m_x, m_y, ell, theta)?;
                Ok(Level {
                    aux: main.clone(),
                    main,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LevelSet {
            levels,
            thresholds,
            window,
            ell,
            eps,
            max_norm,
            mode,
            snapshot_cap: sketch_size_for(eps),
            clock: RestartClock::new(window),
            last_t: None,
        })
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    pub fn mode(&self) -> WindowMode {
        self.mode
    }

    pub fn snapshot_cap(&self) -> usize {
        self.snapshot_cap
    }

    /// Live snapshot counts of the main sketches at `now`.
    pub fn live_counts(&self, now: u64) -> Vec<usize> {
        self.levels
            .iter()
            .map(|l| l.main.live_snapshots(now, self.window).count())
            .collect()
    }

    pub fn update(&mut self, col: &ColumnPair) -> Result<()> {
        check_time(self.last_t, col.t)?;
        let restart = self.clock.tick(col.t);
        let (t, window, cap) = (col.t, self.window, Some(self.snapshot_cap));
        for level in &mut self.levels {
            level.main.expire(t, window, cap);
            level.aux.expire(t, window, cap);
            if restart == Restart::Stale {
                level.main = level.main.fresh();
                level.aux = level.aux.fresh();
            }
            level.main.update(col)?;
            level.aux.update(col)?;
            // keep the count cap exact between steps as well
            level.main.expire(t, window, cap);
            level.aux.expire(t, window, cap);
            if restart != Restart::Continue {
                let fresh = level.aux.fresh();
                level.main = std::mem::replace(&mut level.aux, fresh);
            }
        }
        self.last_t = Some(t);
        Ok(())
    }

    pub fn query(&self, now: u64) -> Result<CorrelationSketch> {
        let counts = self.live_counts(now);
        let level = select_level(&counts, self.ell, QUERY_LEVEL_FACTOR);
        let (a, b) = self.levels[level].main.stacked(now, self.window);
        let (a, b) = shrink_to_sketch(a, b, self.ell)?;
        Ok(CorrelationSketch {
            a,
            b,
            level_used: level,
            window_id: now,
        })
    }

    pub fn total_space_cols(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.main.space_cols() + l.aux.space_cols())
            .sum()
    }
}

impl WindowSketch for LevelSet {
    fn update(&mut self, col: &ColumnPair) -> Result<()> {
        LevelSet::update(self, col)
    }

    fn query(&self, now: u64) -> Result<CorrelationSketch> {
        LevelSet::query(self, now)
    }

    fn total_space_cols(&self) -> usize {
        LevelSet::total_space_cols(self)
    }
}

/// Adaptive DS-COD: one threshold level `L`, moved up when the live
/// snapshot count reaches `L/ε` and down when it falls to `(L−1)/ε`.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    ds: DsCodState,
    ds_aux: DsCodState,
    level: u32,
    window: u64,
    ell: usize,
    eps: f64,
    theta_floor: f64,
    clock: RestartClock,
    last_t: Option<u64>,
}

impl AdaptiveState {
    /// Initial (and minimum) threshold is `εN`. Time windows need no
    /// special handling: zero pairs only advance the clock.
    pub fn new(m_x: usize, m_y: usize, window: u64, ell: usize, eps: f64) -> Result<Self> {
        if window == 0 {
            return Err(invalid("window", "window size must be positive"));
        }
        check_eps(eps)?;
        let theta_floor = eps * window as f64;
        let ds = DsCodState::new(m_x, m_y, ell, theta_floor)?;
        Ok(AdaptiveState {
            ds_aux: ds.clone(),
            ds,
            level: 1,
            window,
            ell,
            eps,
            theta_floor,
            clock: RestartClock::new(window),
            last_t: None,
        })
    }

    pub fn main(&self) -> &DsCodState {
        &self.ds
    }

    pub fn aux(&self) -> &DsCodState {
        &self.ds_aux
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn theta(&self) -> f64 {
        self.ds.theta()
    }

    pub fn theta_floor(&self) -> f64 {
        self.theta_floor
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn update(&mut self, col: &ColumnPair) -> Result<()> {
        check_time(self.last_t, col.t)?;
        let restart = self.clock.tick(col.t);
        self.ds.expire(col.t, self.window, None);
        self.ds_aux.expire(col.t, self.window, None);
        match restart {
            Restart::Continue => {}
            Restart::Swap => {
                let fresh = self.ds_aux.fresh();
                self.ds = std::mem::replace(&mut self.ds_aux, fresh);
            }
            Restart::Stale => {
                self.ds = self.ds.fresh();
                self.ds_aux = self.ds_aux.fresh();
            }
        }
        self.ds.update(col)?;
        self.ds_aux.update(col)?;
        self.last_t = Some(col.t);

        let len = self.ds.snapshots().len();
        let level = self.level as f64;
        if len >= fuzzy_ceil(level / self.eps) {
            self.level += 1;
            self.set_theta(self.ds.theta() * 2.0);
        } else if len <= fuzzy_floor((level - 1.0) / self.eps) && self.level > 1 {
            self.level -= 1;
            self.set_theta((self.ds.theta() / 2.0).max(self.theta_floor));
        }
        Ok(())
    }

    fn set_theta(&mut self, theta: f64) {
        self.ds.set_theta(theta);
        self.ds_aux.set_theta(theta);
    }

    pub fn query(&self, now: u64) -> Result<CorrelationSketch> {
        let (a, b) = self.ds.stacked(now, self.window);
        let (a, b) = shrink_to_sketch(a, b, self.ell)?;
        Ok(CorrelationSketch {
            a,
            b,
            level_used: self.level as usize,
            window_id: now,
        })
    }

    pub fn total_space_cols(&self) -> usize {
        self.ds.space_cols() + self.ds_aux.space_cols()
    }
}

impl WindowSketch for AdaptiveState {
    fn update(&mut self, col: &ColumnPair) -> Result<()> {
        AdaptiveState::update(self, col)
    }

    fn query(&self, now: u64) -> Result<CorrelationSketch> {
        AdaptiveState::query(self, now)
    }

    fn total_space_cols(&self) -> usize {
        AdaptiveState::total_space_cols(self)
    }
}

/// Co-occurring directions over the whole stream.
///
/// Buffers hold at most `ℓ` columns; a full buffer is shrunk to `ℓ/2`,
/// which gives `‖XYᵀ − ABᵀ‖₂ ≤ (2/ℓ)‖X‖_F‖Y‖_F`.
#[derive(Debug, Clone)]
pub struct CodSketch {
    ell: usize,
    a: Matrix,
    b: Matrix,
}

impl CodSketch {
    pub fn new(m_x: usize, m_y: usize, ell: usize) -> Result<Self> {
        if ell < 2 {
            return Err(invalid("ell", "COD needs a sketch size of at least 2"));
        }
        if ell / 2 > m_x.min(m_y) {
            return Err(invalid(
                "ell",
                format!("ell/2 = {} exceeds min(m_x, m_y) = {}", ell / 2, m_x.min(m_y)),
            ));
        }
        Ok(CodSketch {
            ell,
            a: Matrix::zeros(m_x, 0),
            b: Matrix::zeros(m_y, 0),
        })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn push(&mut self, col: &ColumnPair) -> Result<()> {
        if col.x.len() != self.a.nrows() || col.y.len() != self.b.nrows() {
            return Err(SketchError::DimensionMismatch(format!(
                "expected ({}, {}), got ({}, {})",
                self.a.nrows(),
                self.b.nrows(),
                col.x.len(),
                col.y.len()
            )));
        }
        if col.is_zero() {
            return Ok(());
        }
        let c = self.a.ncols();
        let mut a = std::mem::replace(&mut self.a, Matrix::zeros(0, 0)).insert_column(c, 0.0);
        let mut b = std::mem::replace(&mut self.b, Matrix::zeros(0, 0)).insert_column(c, 0.0);
        a.set_column(c, &col.x);
        b.set_column(c, &col.y);
        if a.ncols() == self.ell {
            let (sa, sb) = cs_shrink(&a, &b, self.ell / 2)?;
            let keep: Vec<usize> = (0..sa.ncols())
                .filter(|&j| sa.column(j).norm() * sb.column(j).norm() > 0.0)
                .collect();
            a = sa.select_columns(keep.iter());
            b = sb.select_columns(keep.iter());
        }
        self.a = a;
        self.b = b;
        Ok(())
    }

    pub fn sketch(&self) -> (Matrix, Matrix) {
        (self.a.clone(), self.b.clone())
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }
}

impl WindowSketch for CodSketch {
    fn update(&mut self, col: &ColumnPair) -> Result<()> {
        self.push(col)
    }

    fn query(&self, now: u64) -> Result<CorrelationSketch> {
        let (a, b) = self.sketch();
        Ok(CorrelationSketch {
            a,
            b,
            level_used: 0,
            window_id: now,
        })
    }

    fn total_space_cols(&self) -> usize {
        self.cols()
    }
}

/// Run COD over an entire stream of pairs.
pub fn cod_stream<'a, I>(pairs: I, m_x: usize, m_y: usize, ell: usize) -> Result<(Matrix, Matrix)>
where
    I: IntoIterator<Item = &'a ColumnPair>,
{
    let mut cod = CodSketch::new(m_x, m_y, ell)?;
    for p in pairs {
        cod.push(p)?;
    }
    Ok(cod.sketch())
}

/// COD rerun from scratch on the exact window contents.
pub fn naive_window_cod(oracle: &WindowOracle, ell: usize) -> Result<(Matrix, Matrix)> {
    let (m_x, m_y) = oracle.dims();
    cod_stream(oracle.pairs(), m_x, m_y, ell)
}

/// Baseline that keeps the whole window and recomputes COD at query time.
#[derive(Debug, Clone)]
pub struct NaiveWindowCod {
    buffer: WindowOracle,
    ell: usize,
}

impl NaiveWindowCod {
    pub fn new(m_x: usize, m_y: usize, window: u64, ell: usize) -> Result<Self> {
        CodSketch::new(m_x, m_y, ell)?;
        Ok(NaiveWindowCod {
            buffer: WindowOracle::new(m_x, m_y, window)?,
            ell,
        })
    }
}

impl WindowSketch for NaiveWindowCod {
    fn update(&mut self, col: &ColumnPair) -> Result<()> {
        self.buffer.push(col.clone())
    }

    fn query(&self, now: u64) -> Result<CorrelationSketch> {
        let (a, b) = naive_window_cod(&self.buffer, self.ell)?;
        Ok(CorrelationSketch {
            a,
            b,
            level_used: 0,
            window_id: now,
        })
    }

    fn total_space_cols(&self) -> usize {
        self.buffer.pairs().filter(|p| !p.is_zero()).count()
    }
}
