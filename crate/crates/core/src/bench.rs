//! Benchmark runner: drives a window sketch over a stream, queries it at a
//! fixed cadence and scores every answer against the exact window.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{invalid, Result, SketchError};
use crate::oracle::WindowOracle;
use crate::sketch::ColumnPair;
use crate::stream::{Arrival, StreamConfig};
use crate::window::{
    sketch_size_for, AdaptiveState, CodSketch, LevelSet, NaiveWindowCod, WindowMode, WindowSketch,
};

pub const CSV_HEADER: &str =
    "step,algorithm,level_used,sketch_cols,total_space_cols,corr_err,update_time_us";

pub const DEFAULT_QUERY_EVERY: u64 = 1_000;
pub const SHORT_QUERY_EVERY: u64 = 200;
pub const SHORT_STREAM: u64 = 5_000;

/// Query cadence when none is given: every 1000 steps, or every 200 for
/// streams of at most 5000 steps.
pub fn default_query_every(n: u64) -> u64 {
    if n <= SHORT_STREAM {
        SHORT_QUERY_EVERY
    } else {
        DEFAULT_QUERY_EVERY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Hds,
    Ads,
    Cod,
    Naive,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Hds => "hds",
            Algorithm::Ads => "ads",
            Algorithm::Cod => "cod",
            Algorithm::Naive => "naive",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = SketchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hds" => Ok(Algorithm::Hds),
            "ads" => Ok(Algorithm::Ads),
            "cod" => Ok(Algorithm::Cod),
            "naive" => Ok(Algorithm::Naive),
            other => Err(invalid(
                "algorithm",
                format!("unknown algorithm `{other}` (expected hds, ads, cod or naive)"),
            )),
        }
    }
}

pub fn parse_mode(s: &str) -> Result<WindowMode> {
    match s {
        "sequence" | "seq" => Ok(WindowMode::Sequence),
        "time" => Ok(WindowMode::Time),
        other => Err(invalid("mode", format!("unknown mode `{other}`"))),
    }
}

pub fn mode_name(mode: WindowMode) -> &'static str {
    match mode {
        WindowMode::Sequence => "sequence",
        WindowMode::Time => "time",
    }
}

/// Sketch size given either as `ε` or as `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SizeSpec {
    Eps(f64),
    Ell(usize),
}

impl SizeSpec {
    pub fn from_options(eps: Option<f64>, ell: Option<usize>) -> Result<Self> {
        match (eps, ell) {
            (Some(e), None) => {
                if e > 0.0 && e < 1.0 {
                    Ok(SizeSpec::Eps(e))
                } else {
                    Err(invalid("eps", format!("must lie in (0, 1), got {e}")))
                }
            }
            (None, Some(l)) if l >= 1 => Ok(SizeSpec::Ell(l)),
            (None, Some(_)) => Err(invalid("ell", "must be positive")),
            _ => Err(invalid("eps", "give exactly one of eps and ell")),
        }
    }

    pub fn ell(self) -> usize {
        match self {
            SizeSpec::Eps(e) => sketch_size_for(e),
            SizeSpec::Ell(l) => l,
        }
    }

    pub fn eps(self) -> f64 {
        match self {
            SizeSpec::Eps(e) => e,
            SizeSpec::Ell(l) => 1.0 / l as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub size: SizeSpec,
    pub window: u64,
    pub mode: WindowMode,
    pub query_every: u64,
    /// Norm-product bound `R` handed to the hierarchical sketch.
    pub max_norm: f64,
    /// Value of the `algorithm` CSV column; defaults to the algorithm name.
    pub label: Option<String>,
    pub record_timing: bool,
}

impl RunConfig {
    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.algorithm.as_str().to_string())
    }

    /// The guaranteed correlation-error bound, if the algorithm has one
    /// against the window.
    pub fn error_bound(&self) -> Option<f64> {
        match self.algorithm {
            Algorithm::Hds | Algorithm::Ads => Some(8.0 * self.size.eps()),
            Algorithm::Naive => Some(2.0 / self.size.ell() as f64),
            Algorithm::Cod => None,
        }
    }

    pub fn build(&self, m_x: usize, m_y: usize) -> Result<Box<dyn WindowSketch>> {
        if self.query_every == 0 {
            return Err(invalid("query-every", "must be positive"));
        }
        let ell = self.size.ell();
        let eps = self.size.eps();
        Ok(match self.algorithm {
            Algorithm::Hds => Box::new(LevelSet::new(
                m_x,
                m_y,
                self.window,
                ell,
                eps,
                self.max_norm,
                self.mode,
            )?),
            Algorithm::Ads => Box::new(AdaptiveState::new(m_x, m_y, self.window, ell, eps)?),
            Algorithm::Cod => Box::new(CodSketch::new(m_x, m_y, ell)?),
            Algorithm::Naive => Box::new(NaiveWindowCod::new(m_x, m_y, self.window, ell)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub algorithm: String,
    pub level_used: usize,
    pub sketch_cols: usize,
    pub total_space_cols: usize,
    pub corr_err: f64,
    pub update_time_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub label: String,
    pub rows: Vec<MetricsRow>,
    pub bound: Option<f64>,
}

impl RunReport {
    pub fn mean_err(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.corr_err).sum::<f64>() / self.rows.len() as f64
    }

    pub fn max_err(&self) -> f64 {
        self.rows.iter().map(|r| r.corr_err).fold(0.0, f64::max)
    }

    /// Rows whose error exceeds the bound. NaN errors count.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn violations(&self) -> Vec<&MetricsRow> {
        match self.bound {
            Some(b) => self.rows.iter().filter(|r| !(r.corr_err <= b)).collect(),
            None => Vec::new(),
        }
    }
}

/// Run one configuration over `pairs`.
pub fn run_pairs<I>(cfg: &RunConfig, m_x: usize, m_y: usize, pairs: I) -> Result<RunReport>
where
    I: IntoIterator<Item = Result<ColumnPair>>,
{
    let mut sketch = cfg.build(m_x, m_y)?;
    let mut oracle = WindowOracle::new(m_x, m_y, cfg.window)?;
    let label = cfg.label();
    let mut rows = Vec::new();
    let mut elapsed_us = 0.0;
    let mut since_row = 0u64;
    for (i, pair) in pairs.into_iter().enumerate() {
        let pair = pair?;
        let step = i as u64 + 1;
        let t0 = Instant::now();
        sketch.update(&pair)?;
        elapsed_us += t0.elapsed().as_secs_f64() * 1e6;
        since_row += 1;
        let now = pair.t;
        oracle.push(pair)?;
        if !step.is_multiple_of(cfg.query_every) {
            continue;
        }
        let q = sketch.query(now)?;
        let report = oracle.corr_err(&q.a, &q.b)?;
        rows.push(MetricsRow {
            step,
            algorithm: label.clone(),
            level_used: q.level_used,
            sketch_cols: q.nonzero_cols(),
            total_space_cols: sketch.total_space_cols(),
            corr_err: report.corr_err,
            update_time_us: if cfg.record_timing {
                elapsed_us / since_row as f64
            } else {
                0.0
            },
        });
        elapsed_us = 0.0;
        since_row = 0;
    }
    Ok(RunReport {
        label,
        rows,
        bound: cfg.error_bound(),
    })
}

/// Run several configurations over one shared in-memory stream.
pub fn compare(cfgs: &[RunConfig], m_x: usize, m_y: usize, pairs: &[ColumnPair]) -> Result<Vec<RunReport>> {
    if let Some(first) = cfgs.first() {
        if let Some(bad) = cfgs.iter().find(|c| c.window != first.window || c.mode != first.mode) {
            return Err(invalid(
                "run",
                format!(
                    "all runs must share the window and mode; `{}` differs from `{}`",
                    bad.label(),
                    first.label()
                ),
            ));
        }
    }
    cfgs.iter()
        .map(|c| run_pairs(c, m_x, m_y, pairs.iter().cloned().map(Ok)))
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Write the header, every row and a `summary_mean` / `summary_max` pair of
/// rows per report. The summary rows leave `level_used` empty.
pub fn write_csv<W: Write>(mut out: W, reports: &[RunReport]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for rep in reports {
        for r in &rep.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{:.3}",
                r.step,
                r.algorithm,
                r.level_used,
                r.sketch_cols,
                r.total_space_cols,
                r.corr_err,
                r.update_time_us
            )?;
        }
        let rows = &rep.rows;
        writeln!(
            out,
            "summary_mean,{},,{},{},{},{:.3}",
            rep.label,
            mean(rows.iter().map(|r| r.sketch_cols as f64)),
            mean(rows.iter().map(|r| r.total_space_cols as f64)),
            rep.mean_err(),
            mean(rows.iter().map(|r| r.update_time_us)),
        )?;
        writeln!(
            out,
            "summary_max,{},,{},{},{},{:.3}",
            rep.label,
            rows.iter().map(|r| r.sketch_cols).max().unwrap_or(0),
            rows.iter().map(|r| r.total_space_cols).max().unwrap_or(0),
            rep.max_err(),
            rows.iter().map(|r| r.update_time_us).fold(0.0, f64::max),
        )?;
    }
    out.flush()?;
    Ok(())
}

fn key_values(spec: &str, what: &'static str) -> Result<Vec<(String, String)>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| invalid(what, format!("expected key=value, got `{kv}`")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn parse_num<T: FromStr>(what: &'static str, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| invalid(what, format!("bad value `{v}` for `{key}`")))
}

/// Generator parameters from `mx=..,my=..,n=..,N=..,R=..`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub m_x: usize,
    pub m_y: usize,
    pub n: u64,
    pub window: u64,
    pub max_norm: f64,
}

impl FromStr for GenSpec {
    type Err = SketchError;

    fn from_str(s: &str) -> Result<Self> {
        let (mut mx, mut my, mut n, mut w, mut r) = (None, None, None, None, None);
        for (k, v) in key_values(s, "gen")? {
            match k.as_str() {
                "mx" | "m_x" => mx = Some(parse_num("gen", &k, &v)?),
                "my" | "m_y" => my = Some(parse_num("gen", &k, &v)?),
                "n" => n = Some(parse_num("gen", &k, &v)?),
                "N" => w = Some(parse_num("gen", &k, &v)?),
                "R" => r = Some(parse_num("gen", &k, &v)?),
                _ => return Err(invalid("gen", format!("unknown key `{k}`"))),
            }
        }
        let need = |name: &str| invalid("gen", format!("missing `{name}`"));
        Ok(GenSpec {
            m_x: mx.ok_or_else(|| need("mx"))?,
            m_y: my.ok_or_else(|| need("my"))?,
            n: n.ok_or_else(|| need("n"))?,
            window: w.ok_or_else(|| need("N"))?,
            max_norm: r.ok_or_else(|| need("R"))?,
        })
    }
}

impl GenSpec {
    pub fn stream_config(&self, seed: u64, regimes: Option<Vec<(u64, f64)>>, poisson: Option<f64>) -> StreamConfig {
        let mut cfg = StreamConfig::new(self.m_x, self.m_y, self.n, self.window, self.max_norm, seed);
        if let Some(r) = regimes {
            cfg.regimes = r;
        }
        if let Some(l) = poisson {
            cfg.arrival = Arrival::Poisson(l);
        }
        cfg
    }
}

/// `two` for the two-regime schedule, or `start:scale` items separated by
/// commas.
pub fn parse_regimes(s: &str, n: u64) -> Result<Vec<(u64, f64)>> {
    if s == "two" {
        return Ok(vec![(1, 1.0), (n / 2 + 1, 0.25)]);
    }
    s.split(',')
        .map(|item| {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| invalid("regimes", format!("expected start:scale, got `{item}`")))?;
            Ok((parse_num("regimes", "start", a.trim())?, parse_num("regimes", "scale", b.trim())?))
        })
        .collect()
}

/// One `--run` item of `compare`: `algorithm=..,eps=..|ell=..` plus optional
/// `label`, `N`, `mode` and `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub size: SizeSpec,
    pub label: Option<String>,
    pub window: Option<u64>,
    pub mode: Option<WindowMode>,
    pub seed: Option<u64>,
}

impl FromStr for RunSpec {
    type Err = SketchError;

    fn from_str(s: &str) -> Result<Self> {
        let mut algorithm = None;
        let (mut eps, mut ell, mut label, mut window, mut mode, mut seed) =
            (None, None, None, None, None, None);
        for (k, v) in key_values(s, "run")? {
            match k.as_str() {
                "algorithm" | "alg" => algorithm = Some(v.parse()?),
                "eps" => eps = Some(parse_num("run", &k, &v)?),
                "ell" => ell = Some(parse_num("run", &k, &v)?),
                "label" => label = Some(v),
                "N" => window = Some(parse_num("run", &k, &v)?),
                "mode" => mode = Some(parse_mode(&v)?),
                "seed" => seed = Some(parse_num("run", &k, &v)?),
                _ => return Err(invalid("run", format!("unknown key `{k}`"))),
            }
        }
        Ok(RunSpec {
            algorithm: algorithm.ok_or_else(|| invalid("run", "missing `algorithm`"))?,
            size: SizeSpec::from_options(eps, ell)?,
            label,
            window,
            mode,
            seed,
        })
    }
}

/// The one value all items agree on, or `fallback` when none sets it.
pub fn agreed<T: PartialEq + Copy + fmt::Debug>(
    name: &'static str,
    values: impl IntoIterator<Item = Option<T>>,
    fallback: Option<T>,
) -> Result<Option<T>> {
    let mut out: Option<T> = None;
    for v in values.into_iter().flatten().chain(fallback) {
        match out {
            None => out = Some(v),
            Some(prev) if prev == v => {}
            Some(prev) => {
                return Err(invalid(name, format!("conflicting values {prev:?} and {v:?}")));
            }
        }
    }
    Ok(out)
}
