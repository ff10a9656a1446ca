use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use bata_cli::config::{parse_list, KeyValues};
use bata_cli::toy;
use bata_cli::{error_line, exit_code, run_method, run_sweep, write_csv, Column, InitChoice, Method, SolverOptions, SweepGrid};
use bata_core::io::{self, fmt_real};
use bata_core::metrics::{self, nrmse, robust_align};
use bata_core::synthetic::{gen_instance, gen_two_cluster, SynthConfig, TwoClusterConfig};
use bata_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "bata", version, about = "Translation averaging solvers and synthetic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic view graph with its ground truth and sidecar.
    Gen(GenArgs),
    /// Solve a view graph for camera locations.
    Solve(SolveArgs),
    /// Compare estimated locations with ground truth.
    Eval(EvalArgs),
    /// Run a synthetic sweep and print one CSV row per trial plus medians.
    Sweep(SweepArgs),
    /// Grid search of the magnitude and angular objectives on the planar toy.
    ToyGrid(ToyGridArgs),
    /// Regime comparison of LUD and RevisedLUD on the four-camera toy.
    ToySquash(ToySquashArgs),
}

#[derive(Args, Debug, Default)]
struct SolverArgs {
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    irls_iter: Option<usize>,
    #[arg(long)]
    bcd_iter: Option<usize>,
    #[arg(long)]
    conv_tol: Option<f64>,
    /// random, convex or file
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    init_file: Option<PathBuf>,
    /// LUD lower bound on the scales.
    #[arg(long)]
    c: Option<f64>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    sigma_deg: Option<f64>,
    /// Cluster separation; switches to the two-cluster layout with n/2 cameras each.
    #[arg(long = "L")]
    separation: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rotation residual written for outlier edges (inliers get 0).
    #[arg(long)]
    rot_proxy: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Record wall time in the diagnostics file.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Estimated locations.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// View graph, for the baseline ratio r1.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Sidecar with cluster labels, for r3.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    align_rounds: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated methods; `truth` adds a ground-truth column.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated observation ratios, crossed with --q.
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    sigma_deg: Option<String>,
    /// Comma-separated cluster separations (two-cluster sweep).
    #[arg(long = "L")]
    separation: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rot_proxy: Option<f64>,
    #[arg(long)]
    separate_normalization: bool,
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    grid_spec: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ToyGridArgs {
    #[arg(long, default_value_t = 0.01)]
    resolution: f64,
    /// Comma-separated noise levels in degrees.
    #[arg(long, default_value = "0,3")]
    noise_deg: String,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ToySquashArgs {
    #[arg(long, default_value_t = 3.0)]
    noise_deg: f64,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

const SOLVER_KEYS: [&str; 11] =
    ["loss", "alpha", "delta", "beta", "irls_iter", "bcd_iter", "conv_tol", "init", "init_file", "c", "seed"];
const GRID_KEYS: [&str; 11] = [
    "method",
    "p",
    "q",
    "cells",
    "sigma_deg",
    "l",
    "n",
    "trials",
    "rot_proxy",
    "separate_normalization",
    "timing",
];

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_config(path: Option<&Path>, allowed: &[&str]) -> Result<KeyValues> {
    match path {
        None => Ok(KeyValues::default()),
        Some(p) => {
            let kv = KeyValues::parse(&read(p)?)?;
            kv.check_keys(allowed)?;
            Ok(kv)
        }
    }
}

/// Flag value, falling back to the config file.
fn pick<T: FromStr>(flag: Option<T>, kv: &KeyValues, key: &str) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => kv.get(key),
    }
}

fn list<T: FromStr>(flag: Option<&str>, kv: &KeyValues, key: &str) -> Result<Option<Vec<T>>> {
    match flag {
        Some(s) => parse_list(s)
            .map(Some)
            .map_err(|_| Error::Config(format!("invalid list '{s}' for --{}", key.replace('_', "-")))),
        None => kv.get_list(key),
    }
}

fn solver_options(a: &SolverArgs, kv: &KeyValues) -> Result<SolverOptions> {
    let init: Option<InitChoice> = match pick(a.init.clone(), kv, "init")? {
        Some(s) => Some(s.parse::<InitChoice>()?),
        None => None,
    };
    let init_file: Option<PathBuf> = pick(a.init_file.clone(), kv, "init_file")?;
    let init_locations = match (&init, init_file) {
        (Some(InitChoice::File), Some(p)) => Some(io::parse_locations(&read(&p)?)?),
        (Some(InitChoice::File), None) => return Err(Error::Config("--init file needs --init-file".into())),
        (_, Some(_)) => return Err(Error::Config("--init-file is only used with --init file".into())),
        _ => None,
    };
    Ok(SolverOptions {
        loss: pick(a.loss.clone(), kv, "loss")?,
        alpha: pick(a.alpha, kv, "alpha")?,
        delta: pick(a.delta, kv, "delta")?,
        beta: pick(a.beta, kv, "beta")?,
        irls_iter: pick(a.irls_iter, kv, "irls_iter")?,
        bcd_iter: pick(a.bcd_iter, kv, "bcd_iter")?,
        conv_tol: pick(a.conv_tol, kv, "conv_tol")?,
        init,
        init_locations,
        c: pick(a.c, kv, "c")?,
    })
}

fn gen(a: &GenArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref(), &["n", "p", "q", "sigma_deg", "l", "seed", "rot_proxy"])?;
    let d = SynthConfig::default();
    let n = pick(a.n, &kv, "n")?.unwrap_or(d.n);
    let p = pick(a.p, &kv, "p")?.unwrap_or(d.p);
    let q = pick(a.q, &kv, "q")?.unwrap_or(d.q);
    let sigma_deg = pick(a.sigma_deg, &kv, "sigma_deg")?.unwrap_or(d.sigma_deg);
    let seed = pick(a.seed, &kv, "seed")?.unwrap_or(d.seed);
    let rot_proxy = pick(a.rot_proxy, &kv, "rot_proxy")?.unwrap_or(2.0);
    let inst = match pick(a.separation, &kv, "l")? {
        None => gen_instance(&SynthConfig { n, p, q, sigma_deg, seed })?,
        Some(separation) => {
            if n % 2 != 0 {
                return Err(Error::Config(format!("two-cluster layouts need an even n, got {n}")));
            }
            gen_two_cluster(&TwoClusterConfig { n_per_cluster: n / 2, separation, p, q, sigma_deg, seed })?
        }
    };
    let g = inst.with_rotation_proxy(0.0, rot_proxy)?;
    write(&a.output, &io::write_view_graph(&g))?;
    write(&with_suffix(&a.output, ".truth"), &io::write_locations(&inst.truth))?;
    write(&with_suffix(&a.output, ".sidecar"), &io::write_sidecar(&inst))?;
    Ok(())
}

fn solve(a: &SolveArgs) -> Result<()> {
    let mut allowed = SOLVER_KEYS.to_vec();
    allowed.extend(["method", "timing"]);
    let kv = load_config(a.config.as_deref(), &allowed)?;
    let method: Method = pick(a.method.clone(), &kv, "method")?
        .ok_or_else(|| Error::Config("solve needs --method".into()))?
        .parse()?;
    let opts = solver_options(&a.solver, &kv)?;
    let seed = pick(a.seed, &kv, "seed")?.unwrap_or(0);
    let timing = a.timing || kv.get::<bool>("timing")?.unwrap_or(false);
    let g = io::parse_view_graph(&read(&a.input)?)?;

    let start = Instant::now();
    let (t, diag) = run_method(method, &g, &opts, seed)?;
    let elapsed = start.elapsed().as_secs_f64();

    write(&a.output, &io::write_locations(&t))?;
    let mut s = String::new();
    let _ = writeln!(s, "method = {method}");
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "iterations = {}", diag.outer_iterations_used);
    let _ = writeln!(s, "converged = {}", diag.converged);
    let trace: Vec<String> = diag.objective_trace.iter().map(|&f| fmt_real(f)).collect();
    let _ = writeln!(s, "objective_trace = {}", trace.join(", "));
    if timing {
        let _ = writeln!(s, "wall_seconds = {elapsed}");
    }
    write(&with_suffix(&a.output, ".diag"), &s)
}

fn opt_csv(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn eval(a: &EvalArgs) -> Result<()> {
    let est = io::parse_locations(&read(&a.input)?)?;
    let gt = io::parse_locations(&read(&a.truth)?)?;
    if est.len() != gt.len() {
        return Err(Error::Config(format!("estimate has {} cameras, truth has {}", est.len(), gt.len())));
    }
    let e = nrmse(&est, &gt)?;
    let (r1, r2) = match &a.graph {
        Some(p) => {
            let g = io::parse_view_graph(&read(p)?)?;
            let r = metrics::squash_r1_r2(&g, &est)?;
            (Some(r.r1), Some(r.r2))
        }
        None => (None, None),
    };
    let r3 = match &a.sidecar {
        Some(p) => match io::parse_sidecar(&read(p)?)?.labels {
            Some(labels) => Some(metrics::squash_r3(&est, &labels)?),
            None => None,
        },
        None => None,
    };
    let aligned = robust_align(&est, &gt, a.align_rounds)?;
    let s = format!(
        "nrmse,r1,r2,r3,median_error,mean_error\n{},{},{},{},{},{}\n",
        e,
        opt_csv(r1),
        opt_csv(r2),
        opt_csv(r3),
        aligned.median_error,
        aligned.mean_error
    );
    emit(a.output.as_deref(), &s)
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let mut allowed = SOLVER_KEYS.to_vec();
    allowed.extend(GRID_KEYS);
    let kv_cfg = load_config(a.config.as_deref(), &allowed)?;
    let kv_grid = load_config(a.grid_spec.as_deref(), &GRID_KEYS)?;
    // grid-spec file, then config file, then flags
    let kv = merge(&kv_grid, &kv_cfg);

    let d = SweepGrid::default();
    let ps: Option<Vec<f64>> = list(a.p.as_deref(), &kv, "p")?;
    let qs: Option<Vec<f64>> = list(a.q.as_deref(), &kv, "q")?;
    let cells = match (ps, qs) {
        (None, None) => match kv.raw("cells") {
            Some(raw) => parse_cells(raw)?,
            None => d.cells.clone(),
        },
        (ps, qs) => {
            let ps = ps.unwrap_or_else(|| vec![SynthConfig::default().p]);
            let qs = qs.unwrap_or_else(|| vec![0.0]);
            ps.iter().flat_map(|&p| qs.iter().map(move |&q| (p, q))).collect()
        }
    };
    let grid = SweepGrid {
        cells,
        sigmas: list(a.sigma_deg.as_deref(), &kv, "sigma_deg")?.unwrap_or(d.sigmas),
        separations: list(a.separation.as_deref(), &kv, "l")?,
        trials: pick(a.trials, &kv, "trials")?.unwrap_or(d.trials),
        n: pick(a.n, &kv, "n")?.unwrap_or(d.n),
        seed: pick(a.seed, &kv, "seed")?.unwrap_or(d.seed),
        rot_proxy: pick(a.rot_proxy, &kv, "rot_proxy")?.unwrap_or(d.rot_proxy),
        separate_normalization: a.separate_normalization
            || kv.get::<bool>("separate_normalization")?.unwrap_or(false),
        timing: a.timing || kv.get::<bool>("timing")?.unwrap_or(false),
    };
    let columns: Vec<Column> = match pick(a.method.clone(), &kv, "method")? {
        Some(s) => s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(Column::parse).collect::<Result<_>>()?,
        None => Method::ALL.iter().map(|&m| Column::Solver(m)).chain([Column::Truth]).collect(),
    };
    if columns.is_empty() {
        return Err(Error::Config("sweep needs at least one method".into()));
    }
    let opts = solver_options(&a.solver, &kv)?;
    let rows = run_sweep(&grid, &columns, &opts)?;
    emit(a.output.as_deref(), &write_csv(&rows))
}

/// Entries of `base` overridden by `top`.
fn merge(base: &KeyValues, top: &KeyValues) -> KeyValues {
    let mut text = String::new();
    for k in base.keys().filter(|k| top.raw(k).is_none()) {
        let _ = writeln!(text, "{k} = {}", base.raw(k).unwrap_or_default());
    }
    for k in top.keys() {
        let _ = writeln!(text, "{k} = {}", top.raw(k).unwrap_or_default());
    }
    KeyValues::parse(&text).expect("re-serialized entries parse")
}

/// `p:q, p:q, ...`.
fn parse_cells(raw: &str) -> Result<Vec<(f64, f64)>> {
    raw.split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(|c| {
            let bad = || Error::Config(format!("cell '{c}' is not 'p:q'"));
            let (p, q) = c.split_once(':').ok_or_else(bad)?;
            Ok((p.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

fn toy_grid(a: &ToyGridArgs) -> Result<()> {
    let noises: Vec<f64> =
        parse_list(&a.noise_deg).map_err(|_| Error::Config(format!("invalid noise list '{}'", a.noise_deg)))?;
    let results = noises.iter().map(|&nd| toy::toy_grid(a.resolution, nd)).collect::<Result<Vec<_>>>()?;
    emit(a.output.as_deref(), &toy::toy_grid_csv(&results))
}

fn toy_squash(a: &ToySquashArgs) -> Result<()> {
    let r = toy::toy_squash(a.noise_deg, a.c.unwrap_or(1.0), a.seed.unwrap_or(0))?;
    emit(a.output.as_deref(), &toy::toy_squash_csv(&r))
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BATA_THREADS") else {
        return Ok(());
    };
    let k: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::Config(format!("BATA_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Solve(a) => solve(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::ToyGrid(a) => toy_grid(a),
        Command::ToySquash(a) => toy_squash(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = Error::Config(e.kind().to_string());
            let _ = e.print();
            eprintln!("{}", error_line(&err));
            return ExitCode::from(exit_code(&err) as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_parse() {
        assert_eq!(parse_cells("0.3:0.2, 0.1:0").unwrap(), vec![(0.3, 0.2), (0.1, 0.0)]);
        assert!(parse_cells("0.3").is_err());
    }

    #[test]
    fn merge_prefers_top() {
        let a = KeyValues::parse("n = 10\np = 0.1").unwrap();
        let b = KeyValues::parse("p = 0.5").unwrap();
        let m = merge(&a, &b);
        assert_eq!(m.get::<f64>("p").unwrap(), Some(0.5));
        assert_eq!(m.get::<usize>("n").unwrap(), Some(10));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
