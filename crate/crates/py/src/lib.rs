//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use slidewin::bench::{mode_name, parse_mode};
use slidewin::stream::{Arrival, StreamConfig};
use slidewin::{ColumnPair, Matrix, SketchError, WindowSketch};

type Rows = Vec<Vec<f64>>;
type Pair = (u64, Vec<f64>, Vec<f64>);

fn py_err(e: SketchError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_rows(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &Rows, name: &str) -> PyResult<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{name}: ragged rows")));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// `(a, b, level_used, window_id)` from a query.
type Query = (Rows, Rows, usize, u64);

macro_rules! window_methods {
    ($ty:ident { $($extra:tt)* }) => {
        #[pymethods]
        impl $ty {
            $($extra)*

            /// Feed one column pair with timestamp `t`.
            fn update(&mut self, t: u64, x: Vec<f64>, y: Vec<f64>) -> PyResult<()> {
                self.inner.update(&ColumnPair::from_slices(t, &x, &y)).map_err(py_err)
            }

            fn query(&self, now: u64) -> PyResult<Query> {
                let q = self.inner.query(now).map_err(py_err)?;
                Ok((to_rows(&q.a), to_rows(&q.b), q.level_used, q.window_id))
            }

            fn total_space_cols(&self) -> usize {
                self.inner.total_space_cols()
            }
        }
    };
}

/// Hierarchical sketch: one level per threshold.
#[pyclass(module = "slidewin_py")]
struct LevelSet {
    inner: slidewin::LevelSet,
}

window_methods!(LevelSet {
    #[new]
    #[pyo3(signature = (m_x, m_y, window, ell, eps, max_norm, mode = "sequence"))]
    fn new(
        m_x: usize,
        m_y: usize,
        window: u64,
        ell: usize,
        eps: f64,
        max_norm: f64,
        mode: &str,
    ) -> PyResult<Self> {
        let mode = parse_mode(mode).map_err(py_err)?;
        slidewin::LevelSet::new(m_x, m_y, window, ell, eps, max_norm, mode)
            .map(|inner| LevelSet { inner })
            .map_err(py_err)
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds().to_vec()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        mode_name(self.inner.mode())
    }

    fn live_counts(&self, now: u64) -> Vec<usize> {
        self.inner.live_counts(now)
    }
});

/// Adaptive sketch with a single moving threshold.
#[pyclass(module = "slidewin_py")]
struct AdaptiveState {
    inner: slidewin::AdaptiveState,
}

window_methods!(AdaptiveState {
    #[new]
    fn new(m_x: usize, m_y: usize, window: u64, ell: usize, eps: f64) -> PyResult<Self> {
        slidewin::AdaptiveState::new(m_x, m_y, window, ell, eps)
            .map(|inner| AdaptiveState { inner })
            .map_err(py_err)
    }

    #[getter]
    fn level(&self) -> u32 {
        self.inner.level()
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta()
    }
});

/// Whole-stream co-occurring directions (no expiry).
#[pyclass(module = "slidewin_py")]
struct Cod {
    inner: slidewin::CodSketch,
}

window_methods!(Cod {
    #[new]
    fn new(m_x: usize, m_y: usize, ell: usize) -> PyResult<Self> {
        slidewin::CodSketch::new(m_x, m_y, ell)
            .map(|inner| Cod { inner })
            .map_err(py_err)
    }

    fn sketch(&self) -> (Rows, Rows) {
        let (a, b) = self.inner.sketch();
        (to_rows(&a), to_rows(&b))
    }
});

/// Exact window buffer used to score sketches.
#[pyclass(module = "slidewin_py")]
struct WindowOracle {
    inner: slidewin::WindowOracle,
}

#[pymethods]
impl WindowOracle {
    #[new]
    fn new(m_x: usize, m_y: usize, window: u64) -> PyResult<Self> {
        slidewin::WindowOracle::new(m_x, m_y, window)
            .map(|inner| WindowOracle { inner })
            .map_err(py_err)
    }

    fn push(&mut self, t: u64, x: Vec<f64>, y: Vec<f64>) -> PyResult<()> {
        self.inner
            .push(ColumnPair::from_slices(t, &x, &y))
            .map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Normalized spectral error of `A Bᵀ` against the window product.
    fn corr_err(&self, a: Rows, b: Rows) -> PyResult<f64> {
        let (a, b) = (from_rows(&a, "a")?, from_rows(&b, "b")?);
        let (m_x, m_y) = self.inner.dims();
        // an empty query result arrives as []
        let a = if a.nrows() == 0 { Matrix::zeros(m_x, 0) } else { a };
        let b = if b.nrows() == 0 { Matrix::zeros(m_y, 0) } else { b };
        self.inner
            .corr_err(&a, &b)
            .map(|r| r.corr_err)
            .map_err(py_err)
    }
}

/// Synthetic stream as a list of `(t, x, y)`.
#[pyfunction]
#[pyo3(signature = (m_x, m_y, n, window, max_norm, seed, two_regime = true, poisson = None))]
#[allow(clippy::too_many_arguments)]
fn gen_synthetic(
    m_x: usize,
    m_y: usize,
    n: u64,
    window: u64,
    max_norm: f64,
    seed: u64,
    two_regime: bool,
    poisson: Option<f64>,
) -> PyResult<Vec<Pair>> {
    let mut cfg = StreamConfig::new(m_x, m_y, n, window, max_norm, seed);
    if two_regime {
        cfg = cfg.two_regime();
    }
    if let Some(lambda) = poisson {
        cfg = cfg.with_arrival(Arrival::Poisson(lambda));
    }
    let stream = slidewin::stream::gen_synthetic(&cfg).map_err(py_err)?;
    Ok(stream
        .map(|p| (p.t, p.x.as_slice().to_vec(), p.y.as_slice().to_vec()))
        .collect())
}

#[pyfunction]
fn cs_shrink(a: Rows, b: Rows, ell: usize) -> PyResult<(Rows, Rows)> {
    let (a, b) = (from_rows(&a, "a")?, from_rows(&b, "b")?);
    let (a, b) = slidewin::decomp::cs_shrink(&a, &b, ell).map_err(py_err)?;
    Ok((to_rows(&a), to_rows(&b)))
}

#[pymodule]
fn slidewin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LevelSet>()?;
    m.add_class::<AdaptiveState>()?;
    m.add_class::<Cod>()?;
    m.add_class::<WindowOracle>()?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(cs_shrink, m)?)?;
    Ok(())
}
