use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slidewin::bench::{
    self, agreed, default_query_every, parse_mode, parse_regimes, Algorithm, GenSpec, RunConfig,
    RunReport, RunSpec, SizeSpec,
};
use slidewin::stream::{gen_synthetic, load_stream, save_stream, StreamHeader, StreamReader};
use slidewin::{ColumnPair, SketchError, WindowMode};

const SEED_ENV: &str = "SLIDEWIN_SEED";

#[derive(Parser)]
#[command(name = "slidewin", version, about = "Sliding-window correlation sketch benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stream file.
    Gen {
        #[command(flatten)]
        source: GenArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one algorithm and write a metrics CSV.
    Run {
        #[arg(long)]
        algorithm: String,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        ell: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run several algorithms over one shared stream.
    Compare {
        /// `algorithm=hds,eps=0.1[,label=..][,N=..][,mode=..][,seed=..]`
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct GenArgs {
    /// `mx=..,my=..,n=..,N=..,R=..`
    #[arg(long = "gen")]
    gen: Option<String>,
    /// Poisson rate of zero-pair gaps after each data pair.
    #[arg(long)]
    poisson: Option<f64>,
    /// `two`, or `start:scale` items separated by commas.
    #[arg(long)]
    regimes: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CommonArgs {
    #[command(flatten)]
    source: GenArgs,
    /// Read pairs from a stream file instead of generating them.
    #[arg(long, conflicts_with = "gen")]
    input: Option<PathBuf>,
    #[arg(long)]
    window: Option<u64>,
    /// `sequence` or `time`; defaults to `time` for Poisson streams.
    #[arg(long)]
    mode: Option<String>,
    /// Norm-product bound R; taken from the stream when omitted.
    #[arg(long)]
    max_norm: Option<f64>,
    #[arg(long)]
    query_every: Option<u64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 if any sampled error exceeds the algorithm's bound.
    #[arg(long)]
    assert_bound: bool,
    /// Report update_time_us as 0 so output is byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
    Bound(String),
}

impl From<SketchError> for Failure {
    fn from(e: SketchError) -> Self {
        match e {
            SketchError::InvalidParameter { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn config(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Materialized input shared by `run` and `compare`.
struct Source {
    m_x: usize,
    m_y: usize,
    pairs: Vec<ColumnPair>,
    window: Option<u64>,
    max_norm: f64,
    poisson: bool,
}

fn load_source(args: &CommonArgs, seed: Option<u64>) -> Result<Source, Failure> {
    let seed = match env_seed()? {
        Some(s) => Some(s),
        None => seed.or(args.source.seed),
    };
    if let Some(path) = &args.input {
        if args.source.poisson.is_some() || args.source.regimes.is_some() {
            return Err(config("--poisson and --regimes only apply to generated streams"));
        }
        let (h, pairs) = load_stream(path)?;
        let observed = pairs.iter().map(ColumnPair::norm_product).fold(1.0, f64::max);
        return Ok(Source {
            m_x: h.m_x,
            m_y: h.m_y,
            pairs,
            window: None,
            max_norm: args.max_norm.unwrap_or(observed),
            poisson: false,
        });
    }
    let spec: GenSpec = args
        .source
        .gen
        .as_deref()
        .ok_or_else(|| config("one of --gen or --input is required"))?
        .parse()?;
    let regimes = args
        .source
        .regimes
        .as_deref()
        .map(|r| parse_regimes(r, spec.n))
        .transpose()?;
    let cfg = spec.stream_config(seed.unwrap_or(0), regimes, args.source.poisson);
    let pairs = gen_synthetic(&cfg)?.collect();
    Ok(Source {
        m_x: spec.m_x,
        m_y: spec.m_y,
        pairs,
        window: Some(spec.window),
        max_norm: args.max_norm.unwrap_or(spec.max_norm),
        poisson: args.source.poisson.is_some(),
    })
}

fn emit(args: &CommonArgs, reports: &[RunReport]) -> Result<(), Failure> {
    match &args.out {
        Some(path) => bench::write_csv(File::create(path)?, reports)?,
        None => bench::write_csv(io::stdout().lock(), reports)?,
    }
    if args.assert_bound {
        let mut msgs = Vec::new();
        for rep in reports {
            for r in rep.violations() {
                msgs.push(format!(
                    "{} step {}: corr_err {} exceeds bound {}",
                    rep.label,
                    r.step,
                    r.corr_err,
                    rep.bound.unwrap_or(f64::NAN)
                ));
            }
        }
        if !msgs.is_empty() {
            return Err(Failure::Bound(msgs.join("\n")));
        }
    }
    Ok(())
}

fn base_config(
    args: &CommonArgs,
    src: &Source,
    window: Option<u64>,
    mode: Option<WindowMode>,
) -> Result<RunConfig, Failure> {
    let window = agreed("window", [window, args.window], src.window)?
        .ok_or_else(|| config("window size unknown: pass --window"))?;
    let mode = match mode {
        Some(m) => m,
        None if src.poisson => WindowMode::Time,
        None => WindowMode::Sequence,
    };
    Ok(RunConfig {
        algorithm: Algorithm::Hds,
        size: SizeSpec::Ell(1),
        window,
        mode,
        query_every: args
            .query_every
            .unwrap_or_else(|| default_query_every(src.pairs.len() as u64)),
        max_norm: src.max_norm,
        label: None,
        record_timing: !args.no_timing,
    })
}

fn run_cmd(alg: &str, eps: Option<f64>, ell: Option<usize>, args: &CommonArgs) -> Result<(), Failure> {
    let algorithm: Algorithm = alg.parse()?;
    let size = SizeSpec::from_options(eps, ell)?;
    let mode = args.mode.as_deref().map(parse_mode).transpose()?;
    let src = load_source(args, None)?;
    let cfg = RunConfig {
        algorithm,
        size,
        ..base_config(args, &src, None, mode)?
    };
    let rep = bench::run_pairs(&cfg, src.m_x, src.m_y, src.pairs.into_iter().map(Ok))?;
    emit(args, &[rep])
}

fn compare_cmd(runs: &[String], args: &CommonArgs) -> Result<(), Failure> {
    let specs = runs
        .iter()
        .map(|s| s.parse::<RunSpec>())
        .collect::<Result<Vec<_>, _>>()?;
    let seed = agreed("seed", specs.iter().map(|s| s.seed), args.source.seed)?;
    let window = agreed("window", specs.iter().map(|s| s.window), args.window)?;
    let cli_mode = args.mode.as_deref().map(parse_mode).transpose()?;
    let mode = agreed("mode", specs.iter().map(|s| s.mode), cli_mode)?;
    let src = load_source(args, seed)?;
    let base = base_config(args, &src, window, mode)?;
    let cfgs: Vec<RunConfig> = specs
        .into_iter()
        .map(|s| RunConfig {
            algorithm: s.algorithm,
            size: s.size,
            label: s.label,
            ..base.clone()
        })
        .collect();
    let reports = bench::compare(&cfgs, src.m_x, src.m_y, &src.pairs)?;
    emit(args, &reports)
}

fn gen_cmd(source: &GenArgs, out: &PathBuf) -> Result<(), Failure> {
    let seed = env_seed()?.or(source.seed).unwrap_or(0);
    let spec: GenSpec = source
        .gen
        .as_deref()
        .ok_or_else(|| config("--gen is required"))?
        .parse()?;
    let regimes = source
        .regimes
        .as_deref()
        .map(|r| parse_regimes(r, spec.n))
        .transpose()?;
    let cfg = spec.stream_config(seed, regimes, source.poisson);
    let pairs: Vec<ColumnPair> = gen_synthetic(&cfg)?.collect();
    let header = StreamHeader {
        m_x: spec.m_x,
        m_y: spec.m_y,
        n: pairs.len() as u64,
    };
    save_stream(out, header, &pairs)?;
    // read back as a cheap self-check of the written file
    let check = StreamReader::new(BufReader::new(File::open(out)?))?;
    if check.count() != pairs.len() {
        return Err(Failure::Runtime("written stream could not be read back".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Command::Gen { source, out } => gen_cmd(source, out),
        Command::Run {
            algorithm,
            eps,
            ell,
            common,
        } => run_cmd(algorithm, *eps, *ell, common),
        Command::Compare { runs, common } => compare_cmd(runs, common),
    };
    let mut err = io::stderr().lock();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            let _ = writeln!(err, "slidewin: configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "slidewin: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Bound(m)) => {
            let _ = writeln!(err, "slidewin: bound violated\n{m}");
            ExitCode::from(3)
        }
    }
}
