//! Synthetic column-pair streams and the `cpsv1` text format.
//!
//! ```text
//! cpsv1 m_x=2 m_y=3 n=2
//! t=1|0.5,1|0.25,0,2
//! t=2|0,0|0,0,0
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::decomp::Vector;
use crate::error::{invalid, Result, SketchError};
use crate::sketch::ColumnPair;

pub const FORMAT_TAG: &str = "cpsv1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arrival {
    /// One data pair per timestamp.
    Unit,
    /// After each data pair, a Poisson(λ) number of zero pairs.
    Poisson(f64),
}

/// Parameters of a synthetic stream. `n` counts timestamps, zero pairs
/// included.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub m_x: usize,
    pub m_y: usize,
    pub n: u64,
    pub window: u64,
    pub max_norm: f64,
    pub seed: u64,
    /// `(start_step, scale)`: from `start_step` on, norm products are drawn
    /// from `[1, clamp(scale·R, 1, R)]`.
    pub regimes: Vec<(u64, f64)>,
    pub arrival: Arrival,
}

impl StreamConfig {
    pub fn new(m_x: usize, m_y: usize, n: u64, window: u64, max_norm: f64, seed: u64) -> Self {
        StreamConfig {
            m_x,
            m_y,
            n,
            window,
            max_norm,
            seed,
            regimes: vec![(1, 1.0)],
            arrival: Arrival::Unit,
        }
    }

    /// Full range for the first half, a quarter of it afterwards.
    pub fn two_regime(mut self) -> Self {
        self.regimes = vec![(1, 1.0), (self.n / 2 + 1, 0.25)];
        self
    }

    pub fn with_arrival(mut self, arrival: Arrival) -> Self {
        self.arrival = arrival;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_x == 0 || self.m_y == 0 {
            return Err(invalid("m", "dimensions must be positive"));
        }
        if self.n == 0 {
            return Err(invalid("n", "stream length must be positive"));
        }
        if self.window == 0 {
            return Err(invalid("N", "window size must be positive"));
        }
        if !(self.max_norm >= 1.0 && self.max_norm.is_finite()) {
            return Err(invalid("R", format!("must be a finite value >= 1, got {}", self.max_norm)));
        }
        if self.regimes.is_empty() || self.regimes[0].0 != 1 {
            return Err(invalid("regimes", "the first regime must start at step 1"));
        }
        if self.regimes.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("regimes", "start steps must be strictly increasing"));
        }
        if self.regimes.iter().any(|&(_, s)| !(s > 0.0 && s.is_finite())) {
            return Err(invalid("regimes", "scales must be positive"));
        }
        if let Arrival::Poisson(l) = self.arrival {
            if !(l > 0.0 && l.is_finite()) {
                return Err(invalid("poisson", format!("rate must be positive, got {l}")));
            }
        }
        Ok(())
    }

    /// Largest norm product allowed at step `t`.
    pub fn peak_at(&self, t: u64) -> f64 {
        let scale = self
            .regimes
            .iter()
            .take_while(|&&(start, _)| start <= t)
            .last()
            .map_or(1.0, |&(_, s)| s);
        (scale * self.max_norm).clamp(1.0, self.max_norm)
    }
}

/// Deterministic iterator over the pairs of a [`StreamConfig`].
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    cfg: StreamConfig,
    rng: Xoshiro256PlusPlus,
    gaps: Option<Poisson<f64>>,
    t: u64,
    pending_zeros: u64,
}

/// Entries are uniform on `[0, 1)`; each data pair is then rescaled so that
/// `‖x‖‖y‖ = 1 + (p − 1)·w` with `w ~ U[0, 1)` and `p` the regime peak.
pub fn gen_synthetic(cfg: &StreamConfig) -> Result<SyntheticStream> {
    cfg.validate()?;
    let gaps = match cfg.arrival {
        Arrival::Unit => None,
        Arrival::Poisson(l) => {
            Some(Poisson::new(l).map_err(|e| invalid("poisson", e.to_string()))?)
        }
    };
    Ok(SyntheticStream {
        cfg: cfg.clone(),
        rng: Xoshiro256PlusPlus::seed_from_u64(cfg.seed),
        gaps,
        t: 0,
        pending_zeros: 0,
    })
}

impl SyntheticStream {
    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    fn unit_direction(&mut self, m: usize) -> Vector {
        loop {
            let v = Vector::from_fn(m, |_, _| self.rng.random::<f64>());
            let n = v.norm();
            if n > 0.0 {
                return v / n;
            }
        }
    }

    fn data_pair(&mut self, t: u64) -> ColumnPair {
        let peak = self.cfg.peak_at(t);
        let w: f64 = self.rng.random();
        let tau = 1.0 + (peak - 1.0) * w;
        let x = self.unit_direction(self.cfg.m_x) * tau.sqrt();
        let y = self.unit_direction(self.cfg.m_y) * tau.sqrt();
        ColumnPair::new(t, x, y)
    }
}

impl Iterator for SyntheticStream {
    type Item = ColumnPair;

    fn next(&mut self) -> Option<ColumnPair> {
        if self.t >= self.cfg.n {
            return None;
        }
        self.t += 1;
        if self.pending_zeros > 0 {
            self.pending_zeros -= 1;
            return Some(ColumnPair::zero(self.t, self.cfg.m_x, self.cfg.m_y));
        }
        let pair = self.data_pair(self.t);
        if let Some(g) = &self.gaps {
            self.pending_zeros = g.sample(&mut self.rng) as u64;
        }
        Some(pair)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.cfg.n - self.t) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SyntheticStream {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub m_x: usize,
    pub m_y: usize,
    pub n: u64,
}

fn write_floats<W: Write>(out: &mut W, v: &Vector) -> std::io::Result<()> {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.write_all(b",")?;
        }
        write!(out, "{x}")?;
    }
    Ok(())
}

/// Write a header and every pair. The pair count must equal `header.n`.
pub fn write_stream<'a, W, I>(out: W, header: StreamHeader, pairs: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a ColumnPair>,
{
    let mut out = BufWriter::new(out);
    writeln!(out, "{FORMAT_TAG} m_x={} m_y={} n={}", header.m_x, header.m_y, header.n)?;
    let mut count = 0u64;
    let mut last = 0u64;
    for p in pairs {
        if p.x.len() != header.m_x || p.y.len() != header.m_y {
            return Err(SketchError::DimensionMismatch(format!(
                "pair at t={} has sizes ({}, {})",
                p.t,
                p.x.len(),
                p.y.len()
            )));
        }
        if p.t <= last {
            return Err(SketchError::NonMonotoneTimestamp { last, got: p.t });
        }
        if !p.x.iter().chain(p.y.iter()).all(|v| v.is_finite()) {
            return Err(SketchError::NonFinite("stream pair"));
        }
        last = p.t;
        write!(out, "t={}|", p.t)?;
        write_floats(&mut out, &p.x)?;
        out.write_all(b"|")?;
        write_floats(&mut out, &p.y)?;
        out.write_all(b"\n")?;
        count += 1;
    }
    if count != header.n {
        return Err(invalid("n", format!("header says {} pairs, wrote {count}", header.n)));
    }
    out.flush()?;
    Ok(())
}

pub fn save_stream(path: &Path, header: StreamHeader, pairs: &[ColumnPair]) -> Result<()> {
    write_stream(File::create(path)?, header, pairs)
}

fn format_err(line: usize, msg: impl Into<String>) -> SketchError {
    SketchError::Format {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line: &str) -> Result<StreamHeader> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(FORMAT_TAG) {
        return Err(format_err(1, format!("expected `{FORMAT_TAG}` header")));
    }
    let mut field = |key: &str| -> Result<u64> {
        let tok = parts
            .next()
            .ok_or_else(|| format_err(1, format!("missing `{key}=`")))?;
        tok.strip_prefix(key)
            .and_then(|s| s.strip_prefix('='))
            .ok_or_else(|| format_err(1, format!("expected `{key}=<int>`, got `{tok}`")))?
            .parse()
            .map_err(|_| format_err(1, format!("bad integer in `{tok}`")))
    };
    let m_x = field("m_x")? as usize;
    let m_y = field("m_y")? as usize;
    let n = field("n")?;
    if parts.next().is_some() {
        return Err(format_err(1, "trailing tokens in header"));
    }
    if m_x == 0 || m_y == 0 {
        return Err(format_err(1, "dimensions must be positive"));
    }
    Ok(StreamHeader { m_x, m_y, n })
}

fn parse_floats(s: &str, want: usize, line: usize, which: &str) -> Result<Vector> {
    let vals = s
        .split(',')
        .map(|tok| {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| format_err(line, format!("bad float `{tok}` in {which}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format_err(line, format!("non-finite value in {which}")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    if vals.len() != want {
        return Err(format_err(
            line,
            format!("{which} has {} values, expected {want}", vals.len()),
        ));
    }
    Ok(Vector::from_vec(vals))
}

/// Streaming reader: yields pairs in file order, validating as it goes.
pub struct StreamReader<R> {
    lines: std::io::Lines<R>,
    header: StreamHeader,
    line_no: usize,
    count: u64,
    last_t: u64,
    done: bool,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| format_err(1, "empty stream file"))??;
        let header = parse_header(&first)?;
        Ok(StreamReader {
            lines,
            header,
            line_no: 1,
            count: 0,
            last_t: 0,
            done: false,
        })
    }

    pub fn header(&self) -> StreamHeader {
        self.header
    }

    fn parse_line(&mut self, text: &str) -> Result<ColumnPair> {
        let line = self.line_no;
        let mut parts = text.split('|');
        let (ts, xs, ys) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(x), Some(y), None) => (t, x, y),
            _ => return Err(format_err(line, "expected `t=<int>|<x>|<y>`")),
        };
        let t: u64 = ts
            .strip_prefix("t=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(line, format!("bad timestamp `{ts}`")))?;
        if t <= self.last_t {
            return Err(format_err(
                line,
                format!("timestamp {t} is not after {}", self.last_t),
            ));
        }
        let x = parse_floats(xs, self.header.m_x, line, "x")?;
        let y = parse_floats(ys, self.header.m_y, line, "y")?;
        self.last_t = t;
        Ok(ColumnPair::new(t, x, y))
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<ColumnPair>;

    fn next(&mut self) -> Option<Result<ColumnPair>> {
        if self.done {
            return None;
        }
        loop {
            let text = match self.lines.next() {
                None => {
                    self.done = true;
                    if self.count != self.header.n {
                        return Some(Err(format_err(
                            self.line_no,
                            format!("header says {} pairs, found {}", self.header.n, self.count),
                        )));
                    }
                    return None;
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
                Some(Ok(s)) => s,
            };
            self.line_no += 1;
            if text.trim().is_empty() {
                continue;
            }
            if self.count == self.header.n {
                self.done = true;
                return Some(Err(format_err(self.line_no, "more pairs than the header declares")));
            }
            let r = self.parse_line(text.trim_end());
            match r {
                Ok(_) => self.count += 1,
                Err(_) => self.done = true,
            }
            return Some(r);
        }
    }
}

/// Read a whole stream file into memory.
pub fn load_stream(path: &Path) -> Result<(StreamHeader, Vec<ColumnPair>)> {
    let reader = StreamReader::new(BufReader::new(File::open(path)?))?;
    let header = reader.header();
    let pairs = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_str(s: &str) -> Result<Vec<ColumnPair>> {
        StreamReader::new(s.as_bytes())?.collect()
    }

    #[test]
    fn parses_small_file() {
        let s = "cpsv1 m_x=2 m_y=1 n=3\nt=1|1,2|3\nt=2|0,0|0\nt=5|-0.5,1e-3|7\n";
        let pairs = read_str(s).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[2].t, 5);
        assert_eq!(pairs[2].x.as_slice(), &[-0.5, 1e-3]);
        assert!(pairs[1].is_zero());
    }

    #[test]
    fn rejects_bad_input_with_line_numbers() {
        let cases = [
            ("cpsv2 m_x=1 m_y=1 n=1\nt=1|1|1\n", 1),
            ("cpsv1 m_x=1 m_y=1 n=2\nt=1|1|1\nt=1|1|1\n", 3),
            ("cpsv1 m_x=2 m_y=1 n=1\nt=1|1|1\n", 2),
            ("cpsv1 m_x=1 m_y=1 n=1\nt=1|x|1\n", 2),
            ("cpsv1 m_x=1 m_y=1 n=2\nt=1|1|1\n", 2),
            ("cpsv1 m_x=1 m_y=1 n=1\nt=1|1|1\nt=2|1|1\n", 3),
            ("cpsv1 m_x=1 m_y=1 n=1\nt=1|NaN|1\n", 2),
        ];
        for (text, want) in cases {
            match read_str(text) {
                Err(SketchError::Format { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = StreamConfig::new(4, 3, 50, 10, 8.0, 11);
        let a: Vec<_> = gen_synthetic(&cfg).unwrap().collect();
        let b: Vec<_> = gen_synthetic(&cfg).unwrap().collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        let c: Vec<_> = gen_synthetic(&StreamConfig { seed: 12, ..cfg }).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn unit_norm_bound_gives_unit_products() {
        let cfg = StreamConfig::new(5, 7, 100, 10, 1.0, 3);
        for p in gen_synthetic(&cfg).unwrap() {
            assert!((p.norm_product() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn regime_peaks() {
        let cfg = StreamConfig::new(2, 2, 100, 10, 64.0, 1).two_regime();
        assert_eq!(cfg.peak_at(1), 64.0);
        assert_eq!(cfg.peak_at(50), 64.0);
        assert_eq!(cfg.peak_at(51), 16.0);
        let cfg = StreamConfig {
            regimes: vec![(1, 0.001)],
            ..cfg
        };
        assert_eq!(cfg.peak_at(7), 1.0);
    }

    #[test]
    fn poisson_gaps_are_zero_pairs() {
        let cfg = StreamConfig::new(3, 3, 3000, 100, 4.0, 5).with_arrival(Arrival::Poisson(2.0));
        let pairs: Vec<_> = gen_synthetic(&cfg).unwrap().collect();
        assert_eq!(pairs.len(), 3000);
        assert!(pairs.iter().enumerate().all(|(i, p)| p.t == i as u64 + 1));
        let zeros = pairs.iter().filter(|p| p.is_zero()).count() as f64 / 3000.0;
        assert!((0.6..0.73).contains(&zeros), "zero fraction {zeros}");
    }

    #[test]
    fn rejects_bad_config() {
        let ok = StreamConfig::new(2, 2, 10, 5, 2.0, 0);
        assert!(ok.validate().is_ok());
        assert!(StreamConfig { max_norm: 0.5, ..ok.clone() }.validate().is_err());
        assert!(StreamConfig { regimes: vec![(2, 1.0)], ..ok.clone() }.validate().is_err());
        assert!(ok.clone().with_arrival(Arrival::Poisson(0.0)).validate().is_err());
    }

    #[test]
    fn writer_checks_count() {
        let p = [ColumnPair::from_slices(1, &[1.0], &[2.0])];
        let h = StreamHeader { m_x: 1, m_y: 1, n: 2 };
        assert!(write_stream(Vec::new(), h, &p).is_err());
    }
}
