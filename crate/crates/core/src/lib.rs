//! Sliding-window correlation sketches for approximate matrix multiplication.
//!
//! Two column streams `x_t ∈ R^{m_x}`, `y_t ∈ R^{m_y}` arrive in lockstep and
//! the goal is a pair of small matrices `(A, B)` with
//! `‖X_W Y_Wᵀ − A Bᵀ‖₂ ≤ ε ‖X_W‖_F ‖Y_W‖_F` for the current window `W`.
//!
//! * [`decomp`]: QR / LDL / SVD primitives and correlation shrinkage.
//! * [`sketch`]: the snapshot-dumping co-occurring-directions state machine.
//! * [`window`]: hierarchical and adaptive window sketches plus COD baselines.
//! * [`oracle`]: exact window buffer and the correlation-error metric.
//! * [`stream`]: synthetic stream generation and the text stream format.
//! * [`bench`]: the benchmark runner behind the `slidewin` binary.

pub mod bench;
pub mod decomp;
pub mod error;
pub mod oracle;
pub mod sketch;
pub mod stream;
pub mod window;

pub use decomp::{Matrix, Vector};
pub use error::{Result, SketchError};
pub use oracle::{ErrorReport, WindowOracle};
pub use sketch::{ColumnPair, DsCodState, Snapshot};
pub use window::{
    AdaptiveState, CodSketch, CorrelationSketch, LevelSet, NaiveWindowCod, WindowMode,
    WindowSketch,
};
