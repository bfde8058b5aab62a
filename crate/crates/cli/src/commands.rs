use std::path::Path;
use std::time::Instant;

use affine_hilbert::families::shipped;
use affine_hilbert::params::{
    check_admissibility, check_existence_side_conditions, check_inward, check_parallel, check_uniqueness_conditions,
};
use affine_hilbert::riccati::{solve_riccati, CertMode, FreeBlock, SolverOpts};
use affine_hilbert::simulate::{ou_exact_ensemble, simulate_with_pack};
use affine_hilbert::transform::{build_retraction, NuRule};
use affine_hilbert::verify::{
    affine_identity_test, cone_invariance_test, default_u_batch, joint_laplace_test, martingale_test, pathwise_uniqueness_test,
    VerifyConfig,
};
use affine_hilbert::{AdmissibilityReport, AffineParams, Scheme, SimConfig, Store, TransformPack};
use clap::Parser;
use serde_json::json;

use crate::cli::{Check, Cli, Command, FamiliesArgs, FreeBlockArg, ReplayArgs, RiccatiArgs, SchemeArg, SimulateArgs, Suite, ValidateArgs, VerifyArgs};
use crate::error::CliError;
use crate::format::{load_params, parse_complex, parse_reals, ParamsFile};
use crate::manifest::{self, RunManifest};
use crate::output::{float, summarize, write_json, write_paths_csv, write_riccati_csv};
use crate::runner::{resolve_threads, Rayon};

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn of(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Validate(a) => validate(&a),
        Command::Riccati(a) => riccati(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Verify(a) => verify(&a),
        Command::Families(a) => families(&a),
        Command::Replay(a) => replay(&a),
    }
}

/// Runs a command line and returns the process exit code, reporting
/// errors on stderr.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn scheme(s: SchemeArg) -> Scheme {
    match s {
        SchemeArg::FullTruncation => Scheme::FullTruncation,
        SchemeArg::Absorbed => Scheme::Absorbed,
        SchemeArg::Unclamped => Scheme::Unclamped,
    }
}

fn runner(flag: Option<usize>) -> Result<Rayon, CliError> {
    let t = resolve_threads(flag).map_err(CliError::Input)?;
    Rayon::new(t).map_err(|e| CliError::Input(e.to_string()))
}

fn seed_or_entropy(seed: Option<u64>) -> (u64, &'static str) {
    match seed {
        Some(s) => (s, "flag"),
        None => (rand::random(), "entropy"),
    }
}

pub fn validation_report(p: &AffineParams, checks: &[Check], tol: f64) -> Vec<(&'static str, AdmissibilityReport)> {
    let all = checks.contains(&Check::All);
    let want = |c: Check| all || checks.contains(&c);
    let mut out = Vec::new();
    if want(Check::Admissibility) {
        out.push(("admissibility", check_admissibility(p, tol)));
    }
    if want(Check::Inward) {
        out.push(("inward", check_inward(p, tol)));
    }
    if want(Check::Parallel) {
        out.push(("parallel", check_parallel(p, tol)));
    }
    if want(Check::Existence) {
        let (lambda, _) = p.lambda_kappa();
        if let Ok(t) = build_retraction(&p.partition, &lambda, NuRule::for_decay(p.decay.as_ref())) {
            out.push(("existence", check_existence_side_conditions(p, &t, tol)));
        }
    }
    if want(Check::Uniqueness) {
        out.push(("uniqueness", check_uniqueness_conditions(p, tol)));
    }
    out
}

fn validate(a: &ValidateArgs) -> Result<Outcome, CliError> {
    let p = load_params(&a.params)?;
    let reports = validation_report(&p, &a.checks, a.tol);
    let overall = reports.iter().all(|(_, r)| r.overall);
    for (name, r) in &reports {
        for f in &r.findings {
            let status = serde_json::to_value(f.status)?;
            println!("{name}/{}: {} ({})", f.id, status.as_str().unwrap_or("?"), float(f.residual));
        }
    }
    let failed: Vec<&str> = reports.iter().flat_map(|(_, r)| r.failed_ids()).collect();
    for id in &failed {
        println!("{id}: fail");
    }
    println!("overall: {}", if overall { "pass" } else { "fail" });
    if let Some(out) = &a.out {
        let checks: serde_json::Map<String, serde_json::Value> =
            reports.iter().map(|(n, r)| Ok(((*n).to_string(), serde_json::to_value(r)?))).collect::<Result<_, CliError>>()?;
        write_json(out, &json!({ "overall": overall, "failed": failed, "tol": a.tol, "checks": checks }))?;
    }
    Ok(Outcome::of(overall))
}

fn riccati(a: &RiccatiArgs) -> Result<Outcome, CliError> {
    let p = load_params(&a.params)?;
    let u = parse_complex(&a.u, p.n(), "u")?;
    let mut opts = match (a.dt, a.atol) {
        (Some(dt), _) => SolverOpts::rk4(dt),
        (None, Some(atol)) => SolverOpts::dopri5(atol, a.rtol.unwrap_or(atol)),
        (None, None) => SolverOpts::default(),
    };
    opts.mode = CertMode::Enforce;
    opts.record_every = a.record_every;
    opts.free_block = match a.free_block {
        FreeBlockArg::Closed => FreeBlock::ClosedForm,
        FreeBlockArg::Integrate => FreeBlock::Integrate,
    };
    let sol = solve_riccati(&p, &u, a.t_end, &opts)?;
    if let Some(out) = &a.out {
        write_riccati_csv(std::fs::File::create(out)?, &sol)?;
    }
    let phi = sol.final_phi();
    let psi: Vec<String> = sol.final_psi().iter().map(|z| format!("{}{:+}i", float(z.re), z.im)).collect();
    println!("t = {}", float(sol.final_time()));
    println!("phi = {}{:+}i", float(phi.re), phi.im);
    println!("psi = [{}]", psi.join(", "));
    println!("steps = {} (rejected {})", sol.steps, sol.rejected);
    Ok(Outcome::Pass)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let params_path = manifest::absolute(&a.params);
    let p = load_params(&a.params)?;
    let x0 = parse_reals(&a.x0, p.n(), "x0")?;
    let (seed, source) = seed_or_entropy(a.seed);
    let mut cfg = SimConfig::new(a.t_end, a.dt, a.paths, seed);
    cfg.scheme = scheme(a.scheme);
    cfg.store = if a.store_every == 0 { Store::Terminal } else { Store::Every(a.store_every) };
    cfg.substeps = a.substeps;
    cfg.freeze_root = a.freeze_root;
    let run = runner(a.threads)?;
    let (ensemble, sampler) = if a.exact {
        (ou_exact_ensemble(&p, &x0, &cfg, &run)?, "exact")
    } else {
        let pack = TransformPack::build(&p)?;
        (simulate_with_pack(&pack, &x0, &cfg, &run)?, "euler")
    };
    create_dir(&a.out)?;
    let paths_csv = a.out.join("paths.csv");
    let summary_json = a.out.join("summary.json");
    write_paths_csv(std::io::BufWriter::new(std::fs::File::create(&paths_csv)?), &ensemble)?;
    let summary = summarize(&ensemble, sampler);
    write_json(&summary_json, &summary)?;
    let m = RunManifest {
        command: "simulate".into(),
        args: a.resolved(&params_path, seed),
        inputs: vec![params_path],
        config: serde_json::to_value(&cfg)?,
        outputs: vec![manifest::absolute(&paths_csv), manifest::absolute(&summary_json)],
        master_seed: seed,
        seed_source: source.into(),
        threads: run.threads(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write_json(&a.out.join(manifest::FILE), &m)?;
    let means: Vec<String> = summary.terminal_mean.iter().take(8).map(|&x| float(x)).collect();
    println!("terminal mean = [{}{}]", means.join(", "), if summary.terminal_mean.len() > 8 { ", ..." } else { "" });
    println!("cone violations = {}", summary.cone.violations);
    Ok(Outcome::Pass)
}

fn default_x0(p: &AffineParams) -> Vec<f64> {
    (0..p.n()).map(|k| if p.partition.is_cone(k) { 0.5 } else { 0.0 }).collect()
}

/// Runs the selected suites; the report is a pure function of the
/// arguments and the seed.
pub fn verify_report(p: &AffineParams, x0: &[f64], a: &VerifyArgs, seed: u64, run: &Rayon) -> Result<serde_json::Value, CliError> {
    let cfg = VerifyConfig {
        paths: a.paths,
        dt: a.dt,
        seed,
        z_crit: a.z_crit,
        scheme: scheme(a.scheme),
        richardson: !a.no_richardson,
        min_paths: a.min_paths,
        ..VerifyConfig::default()
    };
    let all = a.suite.contains(&Suite::All);
    let want = |s: Suite| all || a.suite.contains(&s);
    let t = a.t_end;
    let batch = default_u_batch(&p.partition, a.u_real, a.u_imag);
    // observation times must lie on the grid of the coarse Richardson run too
    let h = if cfg.richardson { 2.0 * a.dt } else { a.dt };
    let snap = |s: f64| (s / h).round() * h;
    let mut suites = Vec::new();
    let mut pass = true;
    let mut underpowered = false;
    let mut warnings: Vec<String> = Vec::new();
    let mut push = |name: &str, ok: bool, low: bool, w: &[String], body: serde_json::Value| {
        pass &= ok;
        underpowered |= low;
        warnings.extend(w.iter().map(|s| format!("{name}: {s}")));
        suites.push(json!({ "suite": name, "pass": ok, "report": body }));
    };
    if want(Suite::Affine) {
        let r = affine_identity_test(p, x0, t, &batch, &cfg, run)?;
        push("affine", r.pass, r.underpowered, &r.warnings, serde_json::to_value(&r)?);
    }
    if want(Suite::Martingale) {
        let u = &batch[batch.len() / 2];
        let mut checkpoints: Vec<f64> = (0..4).map(|k| snap(t * k as f64 / 4.0)).collect();
        checkpoints.push(t);
        checkpoints.dedup();
        let r = martingale_test(p, x0, t, u, &checkpoints, &cfg, run)?;
        push("martingale", r.pass, r.underpowered, &r.warnings, serde_json::to_value(&r)?);
    }
    if want(Suite::Joint) {
        let r = joint_laplace_test(p, x0, snap(0.5 * t), t, &batch[0], &batch[batch.len() - 1], &cfg, run)?;
        push("joint", r.pass, r.underpowered, &r.warnings, serde_json::to_value(&r)?);
    }
    if want(Suite::Uniqueness) {
        let ucfg = VerifyConfig { paths: a.uniqueness_paths.min(a.paths), ..cfg.clone() };
        let r = pathwise_uniqueness_test(p, x0, t, a.eps, &ucfg, run)?;
        push("uniqueness", r.pass, false, &[], serde_json::to_value(&r)?);
    }
    if want(Suite::Cone) {
        let mut sim = SimConfig::new(t, a.dt, a.paths, seed);
        sim.scheme = cfg.scheme;
        sim.store = Store::Every((sim.steps()? / 10).max(1));
        let e = simulate_with_pack(&TransformPack::build(p)?, x0, &sim, run)?;
        let r = cone_invariance_test(&e);
        push("cone", r.pass, false, &[], serde_json::to_value(r)?);
    }
    Ok(json!({
        "pass": pass,
        "underpowered": underpowered,
        "warnings": warnings,
        "x0": x0,
        "suites": suites,
    }))
}

fn verify(a: &VerifyArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let params_path = manifest::absolute(&a.params);
    let p = load_params(&a.params)?;
    let x0 = match &a.x0 {
        Some(s) => parse_reals(s, p.n(), "x0")?,
        None => default_x0(&p),
    };
    let (seed, source) = seed_or_entropy(a.seed);
    let run = runner(a.threads)?;
    let report = verify_report(&p, &x0, a, seed, &run)?;
    create_dir(&a.out)?;
    let report_json = a.out.join("report.json");
    write_json(&report_json, &report)?;
    let m = RunManifest {
        command: "verify".into(),
        args: a.resolved(&params_path, seed),
        inputs: vec![params_path],
        config: json!({ "paths": a.paths, "dt": a.dt, "t_end": a.t_end, "seed": seed, "z_crit": a.z_crit, "x0": x0 }),
        outputs: vec![manifest::absolute(&report_json)],
        master_seed: seed,
        seed_source: source.into(),
        threads: run.threads(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write_json(&a.out.join(manifest::FILE), &m)?;

    for s in report["suites"].as_array().into_iter().flatten() {
        println!("{}: {}", s["suite"].as_str().unwrap_or("?"), if s["pass"].as_bool() == Some(true) { "pass" } else { "FAIL" });
    }
    for w in report["warnings"].as_array().into_iter().flatten() {
        eprintln!("warning: {}", w.as_str().unwrap_or_default());
    }
    let pass = report["pass"].as_bool() == Some(true);
    if !pass && report["underpowered"].as_bool() == Some(true) {
        eprintln!("warning: run is underpowered; failures are not conclusive");
        return Ok(Outcome::Pass);
    }
    Ok(Outcome::of(pass))
}

fn families(a: &FamiliesArgs) -> Result<Outcome, CliError> {
    for (name, spec) in shipped() {
        match &a.out {
            Some(dir) => {
                create_dir(dir)?;
                let path = dir.join(format!("{name}.json"));
                if a.expand {
                    write_json(&path, &ParamsFile::from_params(&spec.build()?))?;
                } else {
                    write_json(&path, &spec)?;
                }
                println!("{}", path.display());
            }
            None => println!("{name}"),
        }
    }
    Ok(Outcome::Pass)
}

fn replay(a: &ReplayArgs) -> Result<Outcome, CliError> {
    let m = manifest::read(&a.manifest)?;
    if m.command != "simulate" && m.command != "verify" {
        return Err(CliError::Input(format!("cannot replay command '{}'", m.command)));
    }
    let mut args = vec!["affine-hilbert".to_string()];
    args.extend(m.args.iter().cloned());
    args.push(format!("--out={}", a.out.display()));
    if let Some(t) = a.threads {
        args.push(format!("--threads={t}"));
    }
    let cli = Cli::try_parse_from(&args).map_err(|e| CliError::Input(format!("manifest arguments: {e}")))?;
    run(cli)
}
