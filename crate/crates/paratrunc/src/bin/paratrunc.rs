//! Command-line front end: field generation and conversion, maximal-function
//! and Whitney-cover runs, the truncation verification pipeline, Poincare
//! batteries, the nonlinear-heat solver and approximation experiment, and
//! lambda sweeps. Reports are deterministic JSON (schema `paratrunc-report/1`);
//! fields travel as PTF1, sweeps additionally as CSV.
//!
//! Exit codes: 0 success, 1 invalid configuration or unreadable input,
//! 2 numeric failure inside a computation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use paratrunc::caloric::{self, CaloricProblem, SolverConfig};
use paratrunc::grid::{self, GridSpec, SpaceTimeField};
use paratrunc::maximal::{self, NqMode, ParabolicCylinder};
use paratrunc::orlicz::NFunction;
use paratrunc::poincare::{self, PoincareMode};
use paratrunc::truncation::{self, TruncationParams};
use paratrunc::whitney::{self, NodeMask};

const SCHEMA: &str = "paratrunc-report/1";

/// Config/IO problems exit 1, numeric failures exit 2.
enum CliError {
    Config(String),
    Numeric(String),
}

fn cfg<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}
fn num<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numeric(e.to_string())
}

#[derive(Parser)]
#[command(name = "paratrunc", disable_help_subcommand = true)]
struct Cli {
    /// Worker thread count; falls back to PARATRUNC_THREADS, then 1.
    /// Recorded in reports; all reductions are order-deterministic.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, convert, or summarize space-time fields.
    Field {
        #[command(subcommand)]
        action: FieldCmd,
    },
    /// Parabolic maximal operators on a field.
    Maximal(MaximalArgs),
    /// Whitney cover and partition of unity for a node mask.
    Whitney(WhitneyArgs),
    /// Lipschitz truncation with full property verification.
    Truncate(TruncateArgs),
    /// Poincare-inequality batteries.
    Poincare(PoincareArgs),
    /// Nonlinear heat solver and approximation experiment.
    Caloric {
        #[command(subcommand)]
        action: CaloricCmd,
    },
    /// Lambda sweep of the truncation constants on a fixed field.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum FieldCmd {
    /// Generate a preset field pair (w and its compatible flux).
    Gen(FieldGenArgs),
    /// Convert between PTF1 and CSV (m=1 only for CSV).
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print summary statistics of a field as JSON.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FieldGenArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value_t = 32)]
    nt: usize,
    #[arg(long, default_value_t = 64)]
    nx: usize,
    #[arg(long, default_value_t = 0)]
    ny: usize,
    /// Time-interval length; grid spacing is 1/(nx-1).
    #[arg(long, default_value_t = 0.1)]
    t_span: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Optional output for the compatible flux G with dt w = div G.
    #[arg(long)]
    flux_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Single smooth separable mode.
    Smooth,
    /// Smooth background plus a sharp node spike (spike breaks the flux
    /// compatibility at four nodes; the flux stays that of the background).
    Spike,
    /// Short-wavelength gradient oscillation on a wide plateau.
    Oscillation,
    /// Seeded sum of smooth modes.
    Random,
}

#[derive(Args)]
struct MaximalArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = MaximalOp::M)]
    op: MaximalOp,
    /// Scaling alpha, or `auto` (fits the grid aspect).
    #[arg(long, default_value = "auto")]
    alpha: String,
    /// Radius ladder; only `dyadic` is implemented.
    #[arg(long, default_value = "dyadic")]
    radii: String,
    /// Cylinder radius for the sharp/n operators (default: quarter width).
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, value_enum, default_value_t = NqCliMode::Family)]
    mode: NqCliMode,
    /// Flux field for the certified bound mode.
    #[arg(long)]
    g: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaximalOp {
    /// Full maximal-function field.
    M,
    /// Sharp mean-oscillation value on one cylinder.
    Sharp,
    /// Negative-norm functional of dt w on one cylinder.
    N,
}

#[derive(Clone, Copy, ValueEnum)]
enum NqCliMode {
    Family,
    Flux,
}

#[derive(Args)]
struct WhitneyArgs {
    /// Scalar PTF1 field; nodes with value > 0.5 form the open set.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Sparse partition weights (JSON, one entry list per cylinder).
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Args)]
struct TruncateArgs {
    #[arg(long)]
    w: PathBuf,
    #[arg(long)]
    g: PathBuf,
    #[arg(long, default_value = "p:2")]
    phi: String,
    /// Numeric level, or `goodlambda:<m0>` to route through level selection.
    #[arg(long)]
    lambda: String,
    /// Numeric scaling, or `auto` (= lambda / phi'(lambda)).
    #[arg(long, default_value = "auto")]
    alpha: String,
    #[arg(long, default_value_t = 0)]
    pad_t: usize,
    #[arg(long, default_value_t = 0)]
    pad_x: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    dump_wlam: Option<PathBuf>,
}

#[derive(Args)]
struct PoincareArgs {
    #[arg(long, default_value_t = 100)]
    battery: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PoincareCliMode::Weak)]
    mode: PoincareCliMode,
    #[arg(long, default_value = "p:2")]
    phi: String,
    #[arg(long, default_value_t = 24)]
    nt: usize,
    #[arg(long, default_value_t = 48)]
    nx: usize,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoincareCliMode {
    Weak,
    Modular,
}

#[derive(Subcommand)]
enum CaloricCmd {
    /// Solve dt h = div A(grad h) with the data's parabolic boundary values.
    Solve(CaloricArgs),
    /// Full approximation experiment.
    Experiment(CaloricArgs),
}

#[derive(Args)]
struct CaloricArgs {
    /// Problem configuration JSON.
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, default_value = "p:2")]
    phi: String,
    #[arg(long, default_value_t = 6)]
    m0: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    #[arg(long, default_value_t = 0.25)]
    theta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    w: PathBuf,
    #[arg(long)]
    g: PathBuf,
    #[arg(long, default_value = "p:2")]
    phi: String,
    #[arg(long)]
    lambda_min: f64,
    /// Number of dyadic decades to span upward from lambda_min.
    #[arg(long, default_value_t = 3)]
    decades: usize,
    #[arg(long, default_value_t = 2)]
    per_decade: usize,
    #[arg(long, default_value = "auto")]
    alpha: String,
    #[arg(long, default_value_t = 0)]
    pad_t: usize,
    #[arg(long, default_value_t = 0)]
    pad_x: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Problem file for the caloric subcommands. Either explicit field paths or
/// a generated preset.
#[derive(Deserialize)]
struct ProblemCfg {
    u: Option<String>,
    flux: Option<String>,
    preset: Option<PresetCfg>,
}

#[derive(Deserialize)]
struct PresetCfg {
    kind: String,
    #[serde(default = "default_nt")]
    nt: usize,
    #[serde(default = "default_nx")]
    nx: usize,
    #[serde(default = "default_span")]
    t_span: f64,
    #[serde(default)]
    eps: f64,
    #[serde(default)]
    seed: u64,
}

fn default_nt() -> usize {
    13
}
fn default_nx() -> usize {
    33
}
fn default_span() -> f64 {
    0.05
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version are not configuration errors.
            use clap::error::ErrorKind::*;
            if matches!(e.kind(), DisplayHelp | DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("PARATRUNC_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1);
    match run(cli.command, threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("paratrunc: invalid configuration: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("paratrunc: numeric failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command, threads: usize) -> Result<(), CliError> {
    match command {
        Command::Field { action } => field_cmd(action, threads),
        Command::Maximal(a) => maximal_cmd(a, threads),
        Command::Whitney(a) => whitney_cmd(a, threads),
        Command::Truncate(a) => truncate_cmd(a, threads),
        Command::Poincare(a) => poincare_cmd(a, threads),
        Command::Caloric { action } => caloric_cmd(action, threads),
        Command::Sweep(a) => sweep_cmd(a, threads),
    }
}

fn parse_phi(spec: &str) -> Result<NFunction, CliError> {
    NFunction::parse_spec(spec).map_err(cfg)
}

fn read_field(path: &Path) -> Result<SpaceTimeField, CliError> {
    if path.extension().map_or(false, |e| e == "csv") {
        grid::read_csv_1d(path).map_err(cfg)
    } else {
        grid::read_ptf1(path).map_err(cfg)
    }
}

fn write_report(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(cfg)?;
    text.push('\n');
    std::fs::write(path, text).map_err(cfg)
}

fn auto_alpha(spec: &GridSpec) -> f64 {
    // Aspect-fitting scale: the grid's time span over its squared half-width.
    let t_span = spec.t_max() - spec.t_min;
    let half = 0.5 * (spec.n[0] - 1) as f64 * spec.h;
    t_span / (half * half)
}

// ---------------------------------------------------------------- field ----

/// Pair (w, G) with discretely exact dt w = div G, built from potentials:
/// m=1: w = Dx psi, G = Dt psi; m=2: w = Dx psi1 + Dy psi2,
/// G = (Dt psi1, Dt psi2).
fn pair_from_potentials(
    spec: &GridSpec,
    psis: &[SpaceTimeField],
) -> (SpaceTimeField, SpaceTimeField) {
    let m = spec.m;
    let mut w = SpaceTimeField::zeros(spec.clone(), 1);
    let mut g = SpaceTimeField::zeros(spec.clone(), m);
    for (c, psi) in psis.iter().enumerate().take(m) {
        let gp = psi.gradient();
        for it in 0..spec.nt {
            for iy in 0..spec.ny() {
                for ix in 0..spec.nx() {
                    let i = w.index(0, it, iy, ix);
                    w.data[i] += gp.get(c, it, iy, ix);
                }
            }
        }
        let dp = psi.dt();
        for it in 0..spec.nt {
            for iy in 0..spec.ny() {
                for ix in 0..spec.nx() {
                    g.set(c, it, iy, ix, dp.get(0, it, iy, ix));
                }
            }
        }
    }
    (w, g)
}

fn gen_pair(args: &FieldGenArgs) -> Result<(SpaceTimeField, SpaceTimeField), CliError> {
    let pi = std::f64::consts::PI;
    let m = args.m;
    if m != 1 && m != 2 {
        return Err(CliError::Config("m must be 1 or 2".into()));
    }
    let ny = if m == 2 {
        if args.ny == 0 {
            args.nx
        } else {
            args.ny
        }
    } else {
        1
    };
    let spec = GridSpec::new(
        m,
        args.nt,
        [args.nx, ny],
        1.0 / (args.nx - 1) as f64,
        args.t_span / (args.nt - 1) as f64,
    )
    .map_err(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mode = |rng: &mut ChaCha8Rng| {
        let k = rng.gen_range(1..4) as f64;
        let l = rng.gen_range(1..4) as f64;
        let om = rng.gen_range(2.0..9.0);
        let ph: f64 = rng.gen_range(0.0..pi);
        let amp: f64 = rng.gen_range(0.3..1.5);
        move |t: f64, x: f64, y: f64| {
            amp * (om * t + ph).cos()
                * (k * pi * x).sin().powi(2)
                * if m == 2 { (l * pi * y).sin().powi(2) } else { 1.0 }
        }
    };
    let make_psis = |fs: Vec<Box<dyn Fn(f64, f64, f64) -> f64>>| -> Vec<SpaceTimeField> {
        fs.into_iter()
            .map(|f| SpaceTimeField::from_fn(spec.clone(), move |t, x, y| f(t, x, y)))
            .collect()
    };
    let (w, g) = match args.preset {
        Preset::Smooth => {
            let psis = make_psis(
                (0..m)
                    .map(|_| {
                        Box::new(move |t: f64, x: f64, y: f64| {
                            (4.0 * t).cos()
                                * (pi * x).sin().powi(2)
                                * if m == 2 { (pi * y).sin().powi(2) } else { 1.0 }
                        }) as Box<dyn Fn(f64, f64, f64) -> f64>
                    })
                    .collect(),
            );
            pair_from_potentials(&spec, &psis)
        }
        Preset::Spike => {
            let psis = make_psis(
                (0..m)
                    .map(|_| {
                        Box::new(move |t: f64, x: f64, y: f64| {
                            (4.0 * t).cos()
                                * (pi * x).sin().powi(2)
                                * if m == 2 { (pi * y).sin().powi(2) } else { 1.0 }
                        }) as Box<dyn Fn(f64, f64, f64) -> f64>
                    })
                    .collect(),
            );
            let (mut w, g) = pair_from_potentials(&spec, &psis);
            let (it0, iy0, ix0) = (spec.nt / 2, spec.ny() / 2, spec.nx() / 2);
            let spike = 20.0
                * w.data
                    .iter()
                    .fold(0.0f64, |a, v| a.max(v.abs()))
                    .max(1.0);
            for dt in 0..2usize {
                for dx in 0..2usize {
                    let i = w.index(0, it0 + dt, iy0, ix0 + dx);
                    w.data[i] += spike;
                }
            }
            (w, g)
        }
        Preset::Oscillation => {
            let k = pi / (2.0 * spec.h);
            let amp = 20.0 / k;
            let t_lo = spec.t_min;
            let span = spec.t_max() - t_lo;
            let tc = t_lo + 0.45 * span;
            let th = 0.5 * span;
            let psis = make_psis(
                (0..m)
                    .map(|_| {
                        Box::new(move |t: f64, x: f64, y: f64| {
                            let d = (x - 0.5).abs();
                            let window = if d <= 0.25 {
                                1.0
                            } else if d < 0.3 {
                                ((d - 0.25) / 0.05 * pi / 2.0).cos().powi(2)
                            } else {
                                0.0
                            };
                            let s = (t - tc) / th;
                            let qt = if s.abs() < 0.5 {
                                (pi * s).cos().powi(2)
                            } else {
                                0.0
                            };
                            qt * (amp * (k * x).sin() * window + (pi * x).sin().powi(2))
                                * if m == 2 { (pi * y).sin().powi(2) } else { 1.0 }
                        }) as Box<dyn Fn(f64, f64, f64) -> f64>
                    })
                    .collect(),
            );
            pair_from_potentials(&spec, &psis)
        }
        Preset::Random => {
            let mut fs: Vec<Box<dyn Fn(f64, f64, f64) -> f64>> = Vec::new();
            for _ in 0..m {
                let m1 = mode(&mut rng);
                let m2 = mode(&mut rng);
                let m3 = mode(&mut rng);
                fs.push(Box::new(move |t, x, y| m1(t, x, y) + m2(t, x, y) + m3(t, x, y)));
            }
            let psis = make_psis(fs);
            pair_from_potentials(&spec, &psis)
        }
    };
    w.assert_finite().map_err(num)?;
    Ok((w, g))
}

fn field_cmd(action: FieldCmd, _threads: usize) -> Result<(), CliError> {
    match action {
        FieldCmd::Gen(args) => {
            let (w, g) = gen_pair(&args)?;
            grid::write_ptf1(&w, &args.out).map_err(cfg)?;
            if let Some(p) = &args.flux_out {
                grid::write_ptf1(&g, p).map_err(cfg)?;
            }
            Ok(())
        }
        FieldCmd::Convert { input, out } => {
            let f = read_field(&input)?;
            if out.extension().map_or(false, |e| e == "csv") {
                grid::write_csv_1d(&f, &out).map_err(cfg)
            } else {
                grid::write_ptf1(&f, &out).map_err(cfg)
            }
        }
        FieldCmd::Stats { input, report } => {
            let f = read_field(&input)?;
            let n = f.data.len() as f64;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            let mut sum = 0.0;
            let mut sq = 0.0;
            for &v in &f.data {
                min = min.min(v);
                max = max.max(v);
                sum += v;
                sq += v * v;
            }
            let value = json!({
                "schema": SCHEMA,
                "command": "field stats",
                "grid": {
                    "m": f.spec.m, "nt": f.spec.nt, "n": f.spec.n,
                    "h": f.spec.h, "tau": f.spec.tau, "rank": f.rank,
                },
                "min": min,
                "max": max,
                "mean": sum / n,
                "l2": (sq / n).sqrt(),
            });
            match report {
                Some(p) => write_report(&p, &value),
                None => {
                    println!("{}", serde_json::to_string_pretty(&value).map_err(cfg)?);
                    Ok(())
                }
            }
        }
    }
}

// -------------------------------------------------------------- maximal ----

fn maximal_cmd(args: MaximalArgs, threads: usize) -> Result<(), CliError> {
    if args.radii != "dyadic" {
        return Err(CliError::Config("only --radii dyadic is supported".into()));
    }
    let f = read_field(&args.input)?;
    let spec = f.spec.clone();
    let alpha = if args.alpha == "auto" {
        auto_alpha(&spec)
    } else {
        args.alpha
            .parse::<f64>()
            .map_err(|_| CliError::Config("alpha must be a number or `auto`".into()))?
    };
    let radii = maximal::dyadic_radii(&spec, alpha);
    let r = args
        .r
        .unwrap_or_else(|| 0.25 * (spec.n[0] - 1) as f64 * spec.h);
    let q = ParabolicCylinder {
        t: 0.5 * (spec.t_min + spec.t_max()),
        x: [
            spec.x_min[0] + 0.5 * (spec.n[0] - 1) as f64 * spec.h,
            if spec.m == 2 {
                spec.x_min[1] + 0.5 * (spec.n[1] - 1) as f64 * spec.h
            } else {
                0.0
            },
        ],
        r,
        alpha,
    };
    let mut report = json!({
        "schema": SCHEMA,
        "command": "maximal",
        "threads": threads,
        "alpha": alpha,
        "radii": radii,
    });
    match args.op {
        MaximalOp::M => {
            let out = maximal::m_alpha(&f, alpha, &radii).map_err(num)?;
            if let Some(p) = &args.out {
                grid::write_ptf1(&out, p).map_err(cfg)?;
            }
            let sup = out.data.iter().fold(0.0f64, |a, v| a.max(*v));
            report["sup"] = json!(sup);
        }
        MaximalOp::Sharp => {
            let v = maximal::sharp_mq(&f, &q).map_err(num)?;
            report["cylinder"] = json!({"t": q.t, "x": q.x, "r": q.r, "alpha": q.alpha});
            report["sharp"] = json!(v);
        }
        MaximalOp::N => {
            let (mode, g) = match args.mode {
                NqCliMode::Family => (NqMode::TestFamily, None),
                NqCliMode::Flux => {
                    let gp = args.g.as_ref().ok_or_else(|| {
                        CliError::Config("flux mode needs --g".into())
                    })?;
                    (NqMode::FluxBound, Some(read_field(gp)?))
                }
            };
            let v = maximal::n_q(&f, g.as_ref(), &q, mode, args.seed).map_err(num)?;
            report["cylinder"] = json!({"t": q.t, "x": q.x, "r": q.r, "alpha": q.alpha});
            report["n_q"] = json!(v);
        }
    }
    match &args.report {
        Some(p) => write_report(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).map_err(cfg)?);
            Ok(())
        }
    }
}

// -------------------------------------------------------------- whitney ----

fn whitney_cmd(args: WhitneyArgs, threads: usize) -> Result<(), CliError> {
    let f = read_field(&args.mask)?;
    if f.rank != 1 {
        return Err(CliError::Config("mask must be a scalar field".into()));
    }
    let mask = NodeMask::from_threshold(&f, 0.5);
    let mut cover = whitney::cover(&mask, args.alpha).map_err(num)?;
    whitney::partition_of_unity(&mut cover).map_err(num)?;
    let summary = cover.summary();
    let report = json!({
        "schema": SCHEMA,
        "command": "whitney",
        "threads": threads,
        "summary": summary,
    });
    if let Some(p) = &args.weights_out {
        let text = serde_json::to_string(&cover.weights).map_err(cfg)?;
        std::fs::write(p, text).map_err(cfg)?;
    }
    match &args.report {
        Some(p) => write_report(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).map_err(cfg)?);
            Ok(())
        }
    }
}

// ------------------------------------------------------------- truncate ----

fn default_eta(spec: &GridSpec, original: &GridSpec) -> SpaceTimeField {
    // Time bump supported strictly inside the original time interval.
    let (t_lo, t_hi) = (original.t_min, original.t_max());
    let tm = 0.5 * (t_lo + t_hi);
    let th = 0.8 * (t_hi - t_lo);
    let pi = std::f64::consts::PI;
    SpaceTimeField::from_fn(spec.clone(), move |t, _, _| {
        let s = (t - tm) / th;
        if s.abs() < 0.5 {
            (pi * s).cos().powi(2)
        } else {
            0.0
        }
    })
}

fn truncate_cmd(args: TruncateArgs, threads: usize) -> Result<(), CliError> {
    let w = read_field(&args.w)?;
    let g = read_field(&args.g)?;
    let phi = parse_phi(&args.phi)?;
    if w.spec != g.spec {
        return Err(CliError::Config("w and g live on different grids".into()));
    }
    let spec = w.spec.clone();
    // Lambda, possibly via good-lambda selection on the original grid.
    let (lambda, alpha, gl_info) = if let Some(m0s) = args.lambda.strip_prefix("goodlambda:") {
        let m0: usize = m0s
            .parse()
            .map_err(|_| CliError::Config("goodlambda:<m0> needs an integer".into()))?;
        let gl = caloric::good_lambda_select(&w, &g, &phi, m0).map_err(num)?;
        let info = json!({
            "m0": m0, "gamma": gl.gamma, "lambda": gl.lambda,
            "alpha": gl.alpha, "level": gl.level, "bound": gl.bound,
        });
        (gl.lambda, gl.alpha, Some(info))
    } else {
        let lambda: f64 = args
            .lambda
            .parse()
            .map_err(|_| CliError::Config("lambda must be a number or goodlambda:<m0>".into()))?;
        let alpha = if args.alpha == "auto" {
            lambda / phi.deriv(lambda)
        } else {
            args.alpha
                .parse()
                .map_err(|_| CliError::Config("alpha must be a number or `auto`".into()))?
        };
        (lambda, alpha, None)
    };
    let mut report = json!({
        "schema": SCHEMA,
        "command": "truncate",
        "threads": threads,
        "seed": args.seed,
        "phi": args.phi,
        "lambda": lambda,
        "alpha": alpha,
        "good_lambda": gl_info,
    });
    if lambda <= 0.0 {
        // Zero-data sentinel from the selection: nothing to truncate.
        report["results"] = serde_json::Value::Null;
        return write_report(&args.report, &report);
    }
    let pad_t = if args.pad_t == 0 {
        spec.nt / 2 + 2
    } else {
        args.pad_t
    };
    let pad_x = if args.pad_x == 0 {
        spec.n[0] / 4 + 2
    } else {
        args.pad_x
    };
    let ext = grid::extend(&w, &g, pad_t, pad_x).map_err(num)?;
    let params = TruncationParams {
        lambda,
        alpha,
        radii: Vec::new(),
        phi,
    };
    let res = truncation::truncate(&ext, &params).map_err(num)?;
    let props = truncation::verify_properties(&res, &ext, args.seed).map_err(num)?;
    let eta = default_eta(&ext.w.spec, &ext.original);
    let ibp = truncation::ibp_residual(&ext, &res, &eta).map_err(num)?;
    report["results"] = json!({
        "prop_a_exact": props.prop_a_exact,
        "a_max_dev": props.a_max_dev,
        "c_b": props.c_b,
        "c_c": props.c_c,
        "c_d_flux": props.c_d_flux,
        "c_d_family": props.c_d_family,
        "c_e": props.c_e,
        "ibp_residual": ibp,
        "osc_c": props.osc_c,
        "neighbor_c": props.neighbor_c,
        "support_ok": props.support_ok,
        "degenerate": props.degenerate,
        "bad_nodes": res.bad_set.count(),
        "cylinders": res.cover.cylinders.len(),
    });
    if let Some(p) = &args.dump_wlam {
        grid::write_ptf1(&res.truncated, p).map_err(cfg)?;
    }
    write_report(&args.report, &report)
}

// ------------------------------------------------------------- poincare ----

fn poincare_cmd(args: PoincareArgs, threads: usize) -> Result<(), CliError> {
    let phi = parse_phi(&args.phi)?;
    let spec = GridSpec::new(
        1,
        args.nt,
        [args.nx, 1],
        1.0 / (args.nx - 1) as f64,
        0.048 / (args.nt - 1) as f64,
    )
    .map_err(cfg)?;
    let pi = std::f64::consts::PI;
    let mode = match args.mode {
        PoincareCliMode::Weak => PoincareMode::Weak,
        PoincareCliMode::Modular => PoincareMode::Modular,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut ratios = Vec::with_capacity(args.battery);
    for _ in 0..args.battery {
        let a1: f64 = rng.gen_range(0.2..2.0);
        let k1 = rng.gen_range(1..4) as f64;
        let om = rng.gen_range(1.0..8.0);
        let ph: f64 = rng.gen_range(0.0..pi);
        let psi = SpaceTimeField::from_fn(spec.clone(), |t, x, _| {
            a1 * (om * t + ph).cos() * (k1 * pi * x).sin().powi(2)
        });
        let gp = psi.gradient();
        let mut a = SpaceTimeField::zeros(spec.clone(), 1);
        let n = a.data.len();
        a.data.copy_from_slice(&gp.data[..n]);
        let g = psi.dt();
        let r = rng.gen_range(0.15..0.45);
        let alpha = rng.gen_range(0.5..4.0);
        let q = ParabolicCylinder {
            t: spec.t_min + 0.75 * (spec.t_max() - spec.t_min),
            x: [0.5, 0.0],
            r,
            alpha,
        };
        let rep = poincare::poincare_gap(&a, &g, &q, None, mode, Some(&phi)).map_err(num)?;
        ratios.push(rep.ratio);
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max = sorted.last().copied().unwrap_or(0.0);
    let median = if sorted.is_empty() {
        0.0
    } else {
        sorted[sorted.len() / 2]
    };
    let report = json!({
        "schema": SCHEMA,
        "command": "poincare",
        "threads": threads,
        "seed": args.seed,
        "mode": match args.mode { PoincareCliMode::Weak => "weak", PoincareCliMode::Modular => "modular" },
        "phi": args.phi,
        "battery": args.battery,
        "max": max,
        "median": median,
        "ratios": ratios,
    });
    write_report(&args.report, &report)
}

// -------------------------------------------------------------- caloric ----

fn load_problem(args: &CaloricArgs) -> Result<CaloricProblem, CliError> {
    let phi = parse_phi(&args.phi)?;
    let text = std::fs::read_to_string(&args.problem).map_err(cfg)?;
    let pc: ProblemCfg = serde_json::from_str(&text).map_err(cfg)?;
    let (u, flux) = if let Some(preset) = &pc.preset {
        let spec = GridSpec::new(
            1,
            preset.nt,
            [preset.nx, 1],
            1.0 / (preset.nx - 1) as f64,
            preset.t_span / (preset.nt - 1) as f64,
        )
        .map_err(cfg)?;
        let pi = std::f64::consts::PI;
        match preset.kind.as_str() {
            "wave" => {
                let u = SpaceTimeField::from_fn(spec.clone(), |t, x, _| {
                    (pi * x).sin() * (1.0 + 0.1 * (3.0 * t).sin())
                });
                let flux = caloric::a_flux(&u, &phi);
                (u, flux)
            }
            "heat-bump" => {
                let base = SpaceTimeField::from_fn(spec.clone(), |t, x, _| {
                    (pi * x).sin() * (1.0 + 0.1 * (3.0 * t).sin())
                });
                let prob0 = CaloricProblem {
                    phi: phi.clone(),
                    h_flux: caloric::a_flux(&base, &phi),
                    u: base,
                    sigma: args.sigma,
                    q_exp: args.q,
                    theta: args.theta,
                };
                let (h, _) = caloric::solve_phi_heat(&prob0, &SolverConfig::default())
                    .map_err(num)?;
                let t_span = spec.t_max() - spec.t_min;
                let mut u = h;
                let spec2 = spec.clone();
                let bump = SpaceTimeField::from_fn(spec.clone(), move |t, x, _| {
                    let ts = (t - (spec2.t_min + 0.5 * t_span)) / (0.35 * t_span);
                    let xs = (x - 0.5) / 0.3;
                    if ts.abs() < 1.0 && xs.abs() < 1.0 {
                        (1.0 - ts * ts).powi(2) * (1.0 - xs * xs).powi(2)
                    } else {
                        0.0
                    }
                });
                for (a, b) in u.data.iter_mut().zip(&bump.data) {
                    *a += preset.eps * b;
                }
                let flux = caloric::a_flux(&u, &phi);
                let _ = preset.seed;
                (u, flux)
            }
            other => {
                return Err(CliError::Config(format!("unknown preset kind `{other}`")));
            }
        }
    } else {
        let up = pc
            .u
            .as_ref()
            .ok_or_else(|| CliError::Config("problem needs `u` or `preset`".into()))?;
        let u = read_field(Path::new(up))?;
        let flux = match &pc.flux {
            Some(fp) => read_field(Path::new(fp))?,
            None => caloric::a_flux(&u, &phi),
        };
        (u, flux)
    };
    Ok(CaloricProblem {
        phi,
        u,
        h_flux: flux,
        sigma: args.sigma,
        q_exp: args.q,
        theta: args.theta,
    })
}

fn caloric_cmd(action: CaloricCmd, threads: usize) -> Result<(), CliError> {
    match action {
        CaloricCmd::Solve(args) => {
            let prob = load_problem(&args)?;
            let (h, stats) = caloric::solve_phi_heat(&prob, &SolverConfig::default())
                .map_err(num)?;
            if let Some(p) = &args.out {
                grid::write_ptf1(&h, p).map_err(cfg)?;
            }
            let report = json!({
                "schema": SCHEMA,
                "command": "caloric solve",
                "threads": threads,
                "phi": args.phi,
                "solver": stats,
            });
            match &args.report {
                Some(p) => write_report(p, &report),
                None => {
                    println!("{}", serde_json::to_string_pretty(&report).map_err(cfg)?);
                    Ok(())
                }
            }
        }
        CaloricCmd::Experiment(args) => {
            let prob = load_problem(&args)?;
            let rep = caloric::approximation_experiment(&prob, &SolverConfig::default(), args.m0)
                .map_err(num)?;
            let report = json!({
                "schema": SCHEMA,
                "command": "caloric experiment",
                "threads": threads,
                "phi": args.phi,
                "m0": args.m0,
                "sigma": args.sigma,
                "q": args.q,
                "theta": args.theta,
                "results": rep,
            });
            match &args.report {
                Some(p) => write_report(p, &report),
                None => {
                    println!("{}", serde_json::to_string_pretty(&report).map_err(cfg)?);
                    Ok(())
                }
            }
        }
    }
}

// ---------------------------------------------------------------- sweep ----

fn sweep_cmd(args: SweepArgs, threads: usize) -> Result<(), CliError> {
    let w = read_field(&args.w)?;
    let g = read_field(&args.g)?;
    let phi = parse_phi(&args.phi)?;
    if w.spec != g.spec {
        return Err(CliError::Config("w and g live on different grids".into()));
    }
    if !(args.lambda_min > 0.0) {
        return Err(CliError::Config("lambda-min must be positive".into()));
    }
    let spec = w.spec.clone();
    let pad_t = if args.pad_t == 0 {
        spec.nt / 2 + 2
    } else {
        args.pad_t
    };
    let pad_x = if args.pad_x == 0 {
        spec.n[0] / 4 + 2
    } else {
        args.pad_x
    };
    let ext = grid::extend(&w, &g, pad_t, pad_x).map_err(num)?;
    let steps = args.decades * args.per_decade;
    let mut rows = Vec::new();
    for i in 0..=steps {
        let lambda = args.lambda_min * 2f64.powf(i as f64 / args.per_decade as f64);
        let alpha = if args.alpha == "auto" {
            lambda / phi.deriv(lambda)
        } else {
            args.alpha
                .parse()
                .map_err(|_| CliError::Config("alpha must be a number or `auto`".into()))?
        };
        let params = TruncationParams {
            lambda,
            alpha,
            radii: Vec::new(),
            phi: phi.clone(),
        };
        let res = truncation::truncate(&ext, &params).map_err(num)?;
        let props = truncation::verify_properties(&res, &ext, args.seed).map_err(num)?;
        rows.push(json!({
            "lambda": lambda,
            "alpha": alpha,
            "bad_nodes": res.bad_set.count(),
            "c_b": props.c_b,
            "c_c": props.c_c,
            "c_e": props.c_e,
            "prop_a_exact": props.prop_a_exact,
        }));
    }
    if let Some(csvp) = &args.csv {
        let mut text = String::from("lambda,alpha,bad_nodes,c_b,c_c,c_e,prop_a_exact\n");
        for row in &rows {
            let c_c = match &row["c_c"] {
                serde_json::Value::Null => String::new(),
                v => v.to_string(),
            };
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row["lambda"], row["alpha"], row["bad_nodes"], row["c_b"], c_c, row["c_e"],
                row["prop_a_exact"],
            ));
        }
        std::fs::write(csvp, text).map_err(cfg)?;
    }
    let report = json!({
        "schema": SCHEMA,
        "command": "sweep",
        "threads": threads,
        "seed": args.seed,
        "phi": args.phi,
        "rows": rows,
    });
    write_report(&args.report, &report)
}
