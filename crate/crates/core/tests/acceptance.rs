//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that every criterion reports even
//! when an earlier one fails. The process exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use nlse::catalog::{self, catalog, Nonlinearity};
use nlse::csrecover::{self, check_srec, deep_pwl_surrogate, estimate_lipschitz, widths, CsConfig, Generator};
use nlse::distortion::{run_sweep, CellResult, Mode, SweepConfig, TrialPlan};
use nlse::pwl::{build_pwl, uniform_error};
use nlse::regions::{self, census, generic_pwl, Method};
use nlse::rng::derive_seed;
use nlse::sketch::{required_dim, sample_sketch, DimMode, DimSpec, DEFAULT_C};
use nlse::subspace::{random_subspace, SamplePlan};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Outcome {
    // Listed constants, checked against the catalog before certifying.
    let s3 = 3f64.sqrt();
    let expected_a = [
        (Nonlinearity::Sigmoid, 1.0 / (6.0 * s3)),
        (Nonlinearity::SoftPlus, 0.25),
        (Nonlinearity::Gaussian, 2.0),
        (Nonlinearity::Tanh, 4.0 / (3.0 * s3)),
        (Nonlinearity::Elu, 1.0),
        (Nonlinearity::ArcTan, 3.0 * s3 / 8.0),
        (Nonlinearity::SoftSign, 2.0),
        (Nonlinearity::Sqnl, 0.5),
    ];
    for (nl, a) in expected_a {
        if nl.constants().a != a {
            return outcome(false, format!("{nl}: a = {} instead of {a}", nl.constants().a));
        }
    }
    let expected_g = [
        (Nonlinearity::Tanh, (0.5, 1.0, 0.2)),
        (Nonlinearity::Elu, (0.5, 1.0, 1.0)),
        (Nonlinearity::ArcTan, (1.0, 1.0, 0.56)),
        (Nonlinearity::SoftSign, (0.5, 1.0, 2.0)),
        (Nonlinearity::Sqnl, (0.5, 1.0, 1.0)),
    ];
    for (nl, (g1, g2, g3)) in expected_g {
        let g = nl.constants().near_origin.unwrap();
        if (g.g1, g.g2, g.g3) != (g1, g2, g3) {
            return outcome(false, format!("{nl}: near-origin constants {g:?}"));
        }
    }
    let mut checks = 0;
    let mut worst_margin = f64::INFINITY;
    for nl in catalog() {
        let results = match catalog::certify(nl, &catalog::DEFAULT_EPS_LEVELS) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("{nl}: {e}")),
        };
        for r in &results {
            checks += 1;
            if !r.pass {
                return outcome(false, format!("{nl} condition {:?} failed: {:?}", r.condition, r.violation));
            }
            if r.condition == catalog::Condition::BoundedSecondDerivative {
                worst_margin = worst_margin.min(r.claimed - r.observed);
            }
        }
    }
    outcome(true, format!("{} fixtures, {checks} checks, min a − sup|f″| = {worst_margin:.3e}", catalog().len()))
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}

fn criterion_2() -> Outcome {
    let levels = [0.5, 0.1, 0.01];
    let mut exps = Vec::new();
    for nl in catalog() {
        let cc = nl.constants();
        let mut counts = Vec::new();
        for &eps in &levels {
            let p = match build_pwl(nl, &cc, eps) {
                Ok(p) => p,
                Err(e) => return outcome(false, format!("{nl} at {eps}: {e}")),
            };
            let step = p.step().unwrap();
            let err = uniform_error(nl, &p, 2.0 * cc.asymptote_onset(eps), step / 20.0).unwrap();
            if err > eps {
                return outcome(false, format!("{nl} at ε = {eps}: uniform error {err}"));
            }
            counts.push((eps.ln(), (p.lattice_intervals() as f64).ln()));
        }
        let e = slope(&counts);
        if !(-1.7..=-1.3).contains(&e) {
            return outcome(false, format!("{nl}: fitted exponent {e:.3}"));
        }
        exps.push(e);
    }
    let (lo, hi) = exps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &e| (l.min(e), h.max(e)));
    outcome(true, format!("all errors ≤ ε; lattice exponents in [{lo:.3}, {hi:.3}]"))
}

fn sweep(fixtures: Vec<Nonlinearity>, mode: Mode, eps1: f64, eps2: f64, seed: u64) -> Vec<CellResult> {
    run_sweep(&SweepConfig {
        fixtures,
        modes: vec![mode],
        ks: vec![4],
        ns: vec![256],
        ms: vec![],
        eps1: vec![eps1],
        eps2: vec![eps2],
        delta: vec![0.05],
        constant_c: vec![DEFAULT_C],
        trials: 100,
        plan: TrialPlan::default(),
        base_seed: seed,
    })
    .expect("sweep runs")
}

fn rates(cells: &[CellResult]) -> (bool, String) {
    let ok = cells.iter().all(|c| c.pass_rate() >= 0.95);
    let text = cells
        .iter()
        .map(|c| format!("{} m={} {:.0}/100", c.cell.fixture, c.reports[0].m, c.pass_rate() * 100.0))
        .collect::<Vec<_>>()
        .join(", ");
    (ok, text)
}

fn criterion_3() -> Outcome {
    let cells = sweep(vec![Nonlinearity::Identity], Mode::Relative, 0.25, 0.0, 3);
    let worst = cells[0].reports.iter().map(|r| r.max_rel_over.max(r.min_rel_under)).fold(0.0, f64::max);
    let (ok, text) = rates(&cells);
    outcome(ok && cells[0].reports.iter().all(|r| r.samples >= 1000), format!("{text}, worst distortion {worst:.3}"))
}

fn criterion_4() -> Outcome {
    let cells = sweep(vec![Nonlinearity::Sigmoid, Nonlinearity::Gaussian], Mode::Additive, 0.25, 0.1, 4);
    let worst = cells.iter().flat_map(|c| &c.reports).map(|r| r.additive_fit).fold(0.0, f64::max);
    let (ok, text) = rates(&cells);
    outcome(ok, format!("{text}, worst additive fit {worst:.3e}"))
}

fn criterion_5() -> Outcome {
    let cells = sweep(vec![Nonlinearity::Tanh, Nonlinearity::Elu, Nonlinearity::SoftSign], Mode::Relative, 0.3, 0.0, 5);
    let both = cells.iter().flat_map(|c| &c.reports).all(|r| r.worst_sl.is_some() && r.worst_su.is_some());
    let (ok, text) = rates(&cells);
    outcome(ok && both, format!("{text}, both norm regimes sampled: {both}"))
}

fn criterion_6() -> Outcome {
    let mut runs = 0;
    for n in [3usize, 5, 8] {
        for t in [2usize, 3, 5] {
            let pwl = generic_pwl(t).unwrap();
            let space = random_subspace(n, 1, derive_seed(6, (n * 10 + t) as u64)).unwrap();
            let c = census(&pwl, &space, Method::Exact1d, 0, 0).unwrap();
            runs += 1;
            if c.degenerate || c.distinct_patterns != n * (t - 1) + 1 || c.distinct_patterns as u128 > c.bound {
                return outcome(false, format!("n={n} t={t}: {c:?}"));
            }
        }
    }
    let space = random_subspace(2, 2, 66).unwrap();
    let c = census(&generic_pwl(2).unwrap(), &space, Method::SignSample, 100_000, 7).unwrap();
    if c.distinct_patterns != 4 || c.bound != regions::arrangement_bound(2, 2) {
        return outcome(false, format!("k=2 n=2 t=2: {c:?}"));
    }
    outcome(true, format!("{runs} exact line censuses match n(t−1)+1; plane census found 4 of bound {}", c.bound))
}

fn criterion_7() -> Outcome {
    let bound = 3.0 * (256f64).sqrt() / (64f64).sqrt();
    let norms: Vec<f64> = (0..100)
        .map(|i| sample_sketch(64, 256, derive_seed(7, i)).unwrap().spectral_norm(200).unwrap())
        .collect();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    outcome(norms.iter().all(|&s| s <= bound), format!("max estimate {max:.3} ≤ {bound}"))
}

fn criterion_8() -> Outcome {
    let (k, n) = (4, 128);
    let m = required_dim(&DimSpec {
        k,
        n,
        delta: 0.05,
        constant_c: DEFAULT_C,
        mode: DimMode::Srec { eps1: 0.5, eps2: 0.1 },
    })
    .unwrap();
    let mut passes = 0;
    let mut worst = f64::INFINITY;
    for i in 0..100 {
        let s = derive_seed(8, i);
        let g = Generator::random(&widths(k, n, 2), &[Nonlinearity::Sigmoid; 2], derive_seed(s, 0)).unwrap();
        let a = sample_sketch(m.m, n, derive_seed(s, 1)).unwrap();
        let plan = SamplePlan::default_for(k, 20_000, derive_seed(s, 2)).unwrap();
        let r = check_srec(&a, &g, &plan, 0.5, 0.1).unwrap();
        passes += usize::from(r.pass);
        worst = worst.min(r.worst_slack);
    }
    outcome(passes >= 95, format!("m={} (clamped {}), {passes}/100 trials, min slack {worst:.3e}", m.m, m.clamped))
}

fn criterion_9() -> Outcome {
    let base = CsConfig {
        fixture: Nonlinearity::Tanh,
        depth: 2,
        k: 4,
        n: 128,
        m: 64,
        trials: 20,
        restarts: 20,
        srec_pairs: 0,
        base_seed: 9,
        ..CsConfig::default()
    };
    let clean = csrecover::run_cs(&base).unwrap();
    let clean_rel: Vec<f64> = clean.iter().map(|t| t.result.reconstruction_error.unwrap() / t.signal_norm).collect();
    let noisy = csrecover::run_cs(&CsConfig { noise: 0.1, ..base }).unwrap();
    let noisy_rel: Vec<f64> = noisy.iter().map(|t| t.result.reconstruction_error.unwrap() / t.noise_norm).collect();
    let (mc, mn) = (csrecover::median(&clean_rel), csrecover::median(&noisy_rel));
    outcome(
        mc <= 1e-2 && mn <= 5.0,
        format!("noiseless median error/‖G(z*)‖ = {mc:.2e} (≤ 1e-2); noisy median error/‖η‖ = {mn:.3} (≤ 5)"),
    )
}

fn criterion_10() -> Outcome {
    let (k, n) = (4, 128);
    let g = Generator::random(&widths(k, n, 3), &[Nonlinearity::Tanh; 3], 10).unwrap();
    let plan = SamplePlan::default_for(k, 10_000, 11).unwrap();
    let zs = plan.points(k);
    let (g1, g2) = g.split(1).unwrap();
    let l_est = estimate_lipschitz(&g2, &g1.generate_batch(&zs).unwrap(), 10_000, 12).unwrap();
    let exact = g.generate_batch(&zs).unwrap();
    let mut worst = Vec::new();
    for eps2 in [0.2, 0.1] {
        let (sur, _) = deep_pwl_surrogate(&g, eps2, l_est).unwrap();
        let diff = &exact - sur.generate_batch(&zs).unwrap();
        let max = diff.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        if max > eps2 / (n as f64).sqrt() {
            return outcome(false, format!("eps2={eps2}: max ‖G − G̃‖ = {max:.3e} > {:.3e}", eps2 / (n as f64).sqrt()));
        }
        worst.push(max);
    }
    let ratio = worst[1] / worst[0];
    outcome(
        (0.4..=0.6).contains(&ratio),
        format!("L_est={l_est:.3}, max errors {:.3e} / {:.3e}, ratio {ratio:.3}", worst[0], worst[1]),
    )
}

fn run_cli(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_nlse"))
        .args(args)
        .env_remove("NLSE_SEED")
        .status()
        .expect("binary runs")
        .code()
        .unwrap_or(-1)
}

/// Every output file of a fixed set of commands, as bytes, in a fixed order.
fn cli_outputs(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::write(
        dir.join("sweep.cfg"),
        "fixture = tanh\nfixture = sigmoid\nmode = additive\nk = 3\nn = 64\neps1 = 0.25\neps2 = 0.1\ntrials = 6\nsamples = 200\nseed = 42\nmin_pass_rate = 0\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("cs.cfg"),
        "fixture = tanh\nk = 3\nn = 32\nm = 16\ntrials = 4\nrestarts = 3\niters = 200\nsrec_pairs = 200\nnoise = 0.1\nseed = 5\n",
    )
    .unwrap();
    let commands: Vec<Vec<String>> = vec![
        vec!["catalog", "verify", "--fixture", "all", "--out", &p("catalog.json")],
        vec!["pwl", "build", "--fixture", "elu", "--eps", "0.1", "--out", &p("knots.csv")],
        vec!["pwl", "certify", "--fixture", "sqnl", "--eps", "0.1", "--out", &p("certify.json")],
        vec!["distortion", "run", "--config", &p("sweep.cfg"), "--out", &p("sweep.csv")],
        vec!["regions", "census", "--fixture", "generic", "--pieces", "3", "--k", "2", "--n", "4", "--budget", "20000", "--seed", "3", "--out", &p("census.json")],
        vec!["csgen", "run", "--config", &p("cs.cfg"), "--out", &p("cs.csv")],
        vec!["csgen", "srec", "--pairs", "500", "--n", "32", "--seed", "4", "--out", &p("srec.json")],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    for c in &commands {
        let mut args = vec!["--threads", threads];
        args.extend(c.iter().map(String::as_str));
        let code = run_cli(&args);
        assert!(code == 0 || code == 1, "{c:?} exited with {code}");
    }
    let mut files: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|f| !f.ends_with(".cfg"))
        .collect();
    files.sort();
    files.into_iter().map(|f| (f.clone(), std::fs::read(dir.join(&f)).unwrap())).collect()
}

fn criterion_11() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let a = cli_outputs(dirs[0].path(), "1");
    let b = cli_outputs(dirs[1].path(), "1");
    let c = cli_outputs(dirs[2].path(), "8");
    if a.len() < 9 {
        return outcome(false, format!("only {} output files", a.len()));
    }
    for ((x, y), z) in a.iter().zip(&b).zip(&c) {
        if x != y {
            return outcome(false, format!("{} differs between identical runs", x.0));
        }
        if x != z {
            return outcome(false, format!("{} differs between 1 and 8 threads", x.0));
        }
    }
    // In-process check of a library path that is not exposed through files.
    let g = Generator::random(&widths(3, 16, 2), &[Nonlinearity::Tanh; 2], 1).unwrap();
    let sk = sample_sketch(8, 16, 2).unwrap();
    let y = sk.apply(&g.generate(&DVector::from_vec(vec![0.1, -0.4, 0.9])).unwrap()).unwrap();
    let opts = csrecover::RecoverOptions { restarts: 4, iters: 100, step: 0.1, seed: 3 };
    let solve = |t| {
        rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap().install(|| csrecover::recover(&g, &sk, &y, &opts).unwrap())
    };
    outcome(solve(1) == solve(8), format!("{} files byte-identical across runs and thread counts", a.len()))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 11] = [
        ("catalog constants certify", Duration::from_secs(10), criterion_1),
        ("PWL uniform error and piece-count scaling", Duration::from_secs(60), criterion_2),
        ("linear-case subspace embedding", Duration::from_secs(300), criterion_3),
        ("additive-error embedding", Duration::from_secs(600), criterion_4),
        ("relative-error embedding", Duration::from_secs(600), criterion_5),
        ("region census", Duration::from_secs(60), criterion_6),
        ("spectral norm bound", Duration::from_secs(60), criterion_7),
        ("S-REC on generator outputs", Duration::from_secs(600), criterion_8),
        ("recovery by gradient descent", Duration::from_secs(900), criterion_9),
        ("depth-d PWL surrogate", Duration::from_secs(300), criterion_10),
        ("determinism", Duration::from_secs(600), criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= *limit;
        let pass = result.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {}: {name}: {} ({:.1}s of {}s{})",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", over time limit" }
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
