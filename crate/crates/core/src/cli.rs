//! Command-line front end.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails or a run
//! hits an I/O error, 2 on usage or parameter errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::catalog::{self, Nonlinearity, DEFAULT_EPS_LEVELS};
use crate::config::{resolve_seed, Config};
use crate::csrecover::{self, CsConfig, Generator};
use crate::distortion::{self, Mode, SweepConfig, TrialPlan};
use crate::error::{Error, Result};
use crate::pwl::{self, build_pwl, PwlFunction};
use crate::regions::{self, Method};
use crate::rng::derive_seed;
use crate::sketch::{self, DimMode, DimSpec, DEFAULT_C};
use crate::subspace::{random_subspace, SamplePlan};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nlse", version, about = "Subspace embeddings under entrywise nonlinearities")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Regularity constants of the activation fixtures.
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Piecewise-linear approximants.
    #[command(subcommand)]
    Pwl(PwlCmd),
    /// Embedding dimensions.
    #[command(subcommand)]
    Sketch(SketchCmd),
    /// Distortion sweeps.
    #[command(subcommand)]
    Distortion(DistortionCmd),
    /// Linear-region counts.
    #[command(subcommand)]
    Regions(RegionsCmd),
    /// Compressed sensing with generator priors.
    #[command(subcommand)]
    Csgen(CsgenCmd),
}

#[derive(Debug, Subcommand)]
enum CatalogCmd {
    /// Checks conditions 1–3 on dense grids and prints a JSON report.
    Verify {
        /// Fixture name or `all`.
        #[arg(long, default_value = "all")]
        fixture: String,
        /// Accuracy levels for condition 2 (repeatable).
        #[arg(long = "eps")]
        eps: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct PwlArgs {
    #[arg(long)]
    fixture: String,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum PwlCmd {
    /// Writes the knots CSV (`index,t,f_t,slope,intercept`).
    Build(PwlArgs),
    /// Measures the uniform error on the certification grid.
    Certify(PwlArgs),
}

#[derive(Debug, Subcommand)]
enum SketchCmd {
    /// Prints the target dimension and whether it was clamped to `n`.
    Dims {
        /// piecewise, additive, relative or srec.
        #[arg(long)]
        mode: String,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        n: usize,
        /// Piece count (piecewise mode).
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        eps1: Option<f64>,
        #[arg(long)]
        eps2: Option<f64>,
        #[arg(long)]
        delta: f64,
        #[arg(long = "C", default_value_t = DEFAULT_C)]
        c: f64,
    },
}

#[derive(Debug, Subcommand)]
enum DistortionCmd {
    /// Runs a sweep described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum RegionsCmd {
    /// Counts activation patterns of a PWL approximant on a random subspace.
    Census {
        /// Catalog fixture, `relu`, or `generic` (see `--pieces`).
        #[arg(long)]
        fixture: String,
        /// Accuracy of the approximant built from a catalog fixture.
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        /// Piece count for `generic`; breakpoint for `relu`.
        #[arg(long)]
        pieces: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        shift: f64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        n: usize,
        /// exact_1d or sign_sample.
        #[arg(long, default_value = "sign_sample")]
        method: String,
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum CsgenCmd {
    /// Recovery trials from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Samples the S-REC inequality for one generator and sketch.
    Srec {
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long, default_value = "sigmoid")]
        fixture: String,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 128)]
        n: usize,
        /// Sketch rows; default from the srec dimension formula.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        eps1: f64,
        #[arg(long, default_value_t = 0.1)]
        eps2: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long = "C", default_value_t = DEFAULT_C)]
        c: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_USAGE;
        }
        // Ignore the error if a pool already exists (repeated in-process calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match dispatch(cli.command) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidParameter { .. }
                | Error::DimensionMismatch { .. }
                | Error::Unsupported { .. }
                | Error::Grid(_)
                | Error::Resource { .. }
                | Error::UnknownFixture(_)
                | Error::Config { .. } => EXIT_USAGE,
                Error::Io { .. } | Error::Csv { .. } | Error::Json(_) => EXIT_FAIL,
            }
        }
    }
}

fn fixture(name: &str) -> Result<Nonlinearity> {
    name.parse()
}

/// Writes `text` to `out`, or stdout when `out` is `None`.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, &text)
}

/// `<out>.meta.json` next to a data file, holding everything needed to
/// reproduce it.
fn write_meta<T: Serialize>(out: &Path, command: &str, config: &Config, resolved: &T, base_seed: u64) -> Result<()> {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    let given: serde_json::Map<String, serde_json::Value> =
        config.entries().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "base_seed": base_seed,
        "config": given,
        "resolved": resolved,
    });
    emit_json(Some(Path::new(&name)), &meta)
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Catalog(CatalogCmd::Verify { fixture: name, eps, out }) => {
            let fixtures: Vec<Nonlinearity> = if name.eq_ignore_ascii_case("all") {
                catalog::catalog().to_vec()
            } else {
                vec![fixture(&name)?]
            };
            let levels = if eps.is_empty() { DEFAULT_EPS_LEVELS.to_vec() } else { eps };
            let mut results = Vec::new();
            for nl in &fixtures {
                results.extend(catalog::certify(nl, &levels)?);
            }
            let pass = results.iter().all(|r| r.pass);
            emit_json(out.as_deref(), &json!({ "pass": pass, "results": results }))?;
            Ok(pass)
        }
        Command::Pwl(PwlCmd::Build(a)) => {
            let nl = fixture(&a.fixture)?;
            let p = build_pwl(&nl, &nl.constants(), a.eps)?;
            let mut buf = Vec::new();
            p.write_knots_csv(&nl, &mut buf).map_err(|source| Error::Csv {
                path: a.out.clone().unwrap_or_else(|| "<stdout>".into()),
                source,
            })?;
            emit(a.out.as_deref(), &String::from_utf8_lossy(&buf))?;
            Ok(true)
        }
        Command::Pwl(PwlCmd::Certify(a)) => {
            let nl = fixture(&a.fixture)?;
            let p = build_pwl(&nl, &nl.constants(), a.eps)?;
            let err = pwl::certify(&nl, &p)?;
            let pass = err <= a.eps;
            emit_json(
                a.out.as_deref(),
                &json!({
                    "fixture": nl.name(),
                    "eps": a.eps,
                    "pieces": p.piece_count(),
                    "lattice_intervals": p.lattice_intervals(),
                    "step": p.step(),
                    "onset": p.onset(),
                    "uniform_error": err,
                    "pass": pass,
                }),
            )?;
            Ok(pass)
        }
        Command::Sketch(SketchCmd::Dims { mode, k, n, t, eps, eps1, eps2, delta, c }) => {
            let need = |v: Option<f64>, name: &'static str| v.ok_or_else(|| Error::param(name, format!("required for --mode {mode}")));
            let mode = match mode.to_ascii_lowercase().as_str() {
                "piecewise" => DimMode::Piecewise {
                    t: t.ok_or_else(|| Error::param("t", "required for --mode piecewise"))?,
                    eps: need(eps, "eps")?,
                },
                "additive" => DimMode::Additive { eps1: need(eps1, "eps1")?, eps2: need(eps2, "eps2")? },
                "srec" => DimMode::Srec { eps1: need(eps1, "eps1")?, eps2: need(eps2, "eps2")? },
                "relative" => DimMode::Relative { eps: need(eps, "eps")? },
                other => return Err(Error::param("mode", format!("unknown mode `{other}`"))),
            };
            let d = sketch::required_dim(&DimSpec { k, n, delta, constant_c: c, mode })?;
            emit(None, &format!("{}\nclamped={}\n", d.m, d.clamped))?;
            Ok(true)
        }
        Command::Distortion(DistortionCmd::Run { config, out }) => distortion_run(&config, &out),
        Command::Regions(RegionsCmd::Census { fixture: name, eps, pieces, shift, k, n, method, budget, seed, out }) => {
            let method: Method = method.parse()?;
            let pwl = match name.to_ascii_lowercase().as_str() {
                "generic" => regions::generic_pwl(pieces.ok_or_else(|| Error::param("pieces", "required for generic"))?)?,
                "relu" => PwlFunction::relu(shift),
                _ => {
                    let nl = fixture(&name)?;
                    build_pwl(&nl, &nl.constants(), eps)?
                }
            };
            let seed = resolve_seed(seed)?;
            let space = random_subspace(n, k, derive_seed(seed, 0))?;
            let c = regions::census(&pwl, &space, method, budget, derive_seed(seed, 1))?;
            let pass = c.distinct_patterns as u128 <= c.bound && c.matches_formula() != Some(false);
            emit_json(out.as_deref(), &json!({ "census": c, "matches_formula": c.matches_formula(), "pass": pass }))?;
            Ok(pass)
        }
        Command::Csgen(CsgenCmd::Run { config, out }) => csgen_run(&config, &out),
        Command::Csgen(CsgenCmd::Srec { pairs, fixture: name, depth, k, n, m, eps1, eps2, delta, c, seed, out }) => {
            let nl = fixture(&name)?;
            let seed = resolve_seed(seed)?;
            let m = match m {
                Some(m) => m,
                None => sketch::required_dim(&DimSpec { k, n, delta, constant_c: c, mode: DimMode::Srec { eps1, eps2 } })?.m,
            };
            let g = Generator::random(&csrecover::widths(k, n, depth), &vec![nl; depth], derive_seed(seed, 0))?;
            let a = sketch::sample_sketch(m, n, derive_seed(seed, 1))?;
            let plan = SamplePlan::default_for(k, 2 * pairs.max(1), derive_seed(seed, 2))?;
            let r = csrecover::check_srec(&a, &g, &plan, eps1, eps2)?;
            emit_json(out.as_deref(), &r)?;
            Ok(r.pass)
        }
    }
}

/// Keys accepted by `distortion run`.
pub const DISTORTION_KEYS: &[&str] = &[
    "fixture", "mode", "k", "n", "m", "eps1", "eps2", "delta", "C", "trials", "samples", "probes", "aligned", "seed",
    "min_pass_rate",
];

fn distortion_run(config: &Path, out: &Path) -> Result<bool> {
    let cfg = Config::load(config, DISTORTION_KEYS)?;
    let plan = TrialPlan::default();
    let sweep = SweepConfig {
        fixtures: cfg.list::<Nonlinearity>("fixture", vec![])?,
        modes: cfg.list::<Mode>("mode", vec![Mode::Additive])?,
        ks: cfg.list("k", vec![4])?,
        ns: cfg.list("n", vec![256])?,
        ms: cfg.list("m", vec![])?,
        eps1: cfg.list("eps1", vec![0.25])?,
        eps2: cfg.list("eps2", vec![0.1])?,
        delta: cfg.list("delta", vec![0.05])?,
        constant_c: cfg.list("C", vec![DEFAULT_C])?,
        trials: cfg.one("trials", 100)?,
        plan: TrialPlan {
            samples: cfg.one("samples", plan.samples)?,
            probes_per_radius: cfg.one("probes", plan.probes_per_radius)?,
            aligned: cfg.one("aligned", plan.aligned)?,
        },
        base_seed: resolve_seed(cfg.one("seed", 0)?)?,
    };
    let min_rate: f64 = cfg.one("min_pass_rate", 0.95)?;
    let results = distortion::trial_sweep(&sweep, out)?;
    write_meta(out, "distortion run", &cfg, &json!({ "sweep": sweep, "min_pass_rate": min_rate }), sweep.base_seed)?;
    Ok(results.iter().all(|r| r.pass_rate() >= min_rate))
}

/// Keys accepted by `csgen run`.
pub const CS_KEYS: &[&str] = &[
    "fixture", "depth", "k", "n", "m", "trials", "noise", "restarts", "iters", "step", "srec_pairs", "eps1", "eps2", "seed",
];

fn csgen_run(config: &Path, out: &Path) -> Result<bool> {
    let cfg = Config::load(config, CS_KEYS)?;
    let d = CsConfig::default();
    let cs = CsConfig {
        fixture: cfg.one("fixture", d.fixture)?,
        depth: cfg.one("depth", d.depth)?,
        k: cfg.one("k", d.k)?,
        n: cfg.one("n", d.n)?,
        m: cfg.one("m", d.m)?,
        trials: cfg.one("trials", d.trials)?,
        noise: cfg.one("noise", d.noise)?,
        restarts: cfg.one("restarts", d.restarts)?,
        iters: cfg.one("iters", d.iters)?,
        step: cfg.one("step", d.step)?,
        srec_pairs: cfg.one("srec_pairs", d.srec_pairs)?,
        eps1: cfg.one("eps1", d.eps1)?,
        eps2: cfg.one("eps2", d.eps2)?,
        base_seed: resolve_seed(cfg.one("seed", d.base_seed)?)?,
    };
    let trials = csrecover::cs_sweep(&cs, out)?;
    write_meta(out, "csgen run", &cfg, &cs, cs.base_seed)?;
    if trials.is_empty() {
        return Ok(true);
    }
    // Success is judged on the median, never per problem.
    let ratios: Vec<f64> = trials
        .iter()
        .map(|t| {
            let err = t.result.reconstruction_error.unwrap_or(f64::INFINITY);
            if t.noise_norm > 0.0 {
                err / (5.0 * t.noise_norm)
            } else {
                err / (1e-2 * t.signal_norm)
            }
        })
        .collect();
    Ok(csrecover::median(&ratios) <= 1.0)
}
