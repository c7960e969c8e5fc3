//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns the process exit code: 0 on success, 1 when verification
//! fails, 2 on usage, parse or input errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::condexp::{objective, ObjectiveReport};
use crate::dist::{feasibility_check, parse_atomic, parse_noise, NoiseBudget, SignalSpec};
use crate::error::{Error, Result};
use crate::mc::{estimate_objective, refine_bins, write_csv};
use crate::quad::QuadratureConfig;
use crate::solve::{
    eps_grid, optimize_gaussian_mixture, optimize_support_and_weights, trace_l_curve,
    write_curve_csv, write_curve_dat, OptimizerConfig, SolveResult, WitnessSource,
};
use crate::verify::{all_passed, render_table, run_all, BatteryPlan, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Mean magnitude above which the signal is re-centred with a warning.
const CENTERING_TOL: f64 = 1e-12;

#[derive(Parser, Debug)]
#[command(
    name = "lfnoise",
    version,
    about = "Least favorable additive noise toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate var E[X | X + Y] for a given signal and noise.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        noise: PathBuf,
        /// Report the noise's feasibility slacks against this budget.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Search for the least favorable noise at one budget.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Trace L_hat over a grid of budgets (CSV plus a .dat companion).
    Curve {
        #[command(flatten)]
        common: Common,
        /// `a:b:step`
        #[arg(long = "eps-grid")]
        eps_grid: Option<String>,
    },
    /// Binned Monte Carlo estimate of the objective.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        /// One bin count, or a comma-separated increasing schedule.
        #[arg(long, value_delimiter = ',')]
        bins: Option<Vec<usize>>,
    },
    /// Run a verification battery.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        battery: Option<String>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Signal file, `{"atoms": [[value, mass], ...]}`.
    #[arg(long, required = false)]
    signal: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Gauss-Legendre nodes per panel.
    #[arg(long = "quad-nodes")]
    quad_nodes: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// JSON file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Contents of a `--config` file. Present entries win over flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub eps_grid: Option<String>,
    pub restarts: Option<usize>,
    pub quad_nodes: Option<usize>,
    pub samples: Option<usize>,
    pub bins: Option<Vec<usize>>,
    pub battery: Option<String>,
    pub optimizer: Option<OptimizerConfig>,
    pub quadrature: Option<QuadratureConfig>,
}

/// Everything a command needs after flags and config are merged.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub quadrature: QuadratureConfig,
    pub out: Option<PathBuf>,
    pub file: ConfigFile,
}

impl RunConfig {
    fn build(common: &Common) -> Result<Self> {
        let file: ConfigFile = match &common.config {
            Some(p) => serde_json::from_str(&read(p)?)?,
            None => ConfigFile::default(),
        };
        let seed = file.seed.or(common.seed).unwrap_or(42);
        let mut optimizer = file.optimizer.clone().unwrap_or_default();
        if let Some(r) = file.restarts.or(common.restarts) {
            optimizer.restarts = r;
        }
        optimizer.seed = seed;
        optimizer.validate()?;
        let mut quadrature = file.quadrature.clone().unwrap_or_default();
        if let Some(n) = file.quad_nodes.or(common.quad_nodes) {
            quadrature.nodes_per_panel = n;
        }
        quadrature.validate()?;
        Ok(Self {
            seed,
            optimizer,
            quadrature,
            out: common.out.clone(),
            file,
        })
    }

    fn emit(&self, bytes: &[u8]) -> Result<()> {
        match &self.out {
            Some(p) => fs::write(p, bytes)?,
            None => std::io::stdout().write_all(bytes)?,
        }
        Ok(())
    }
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
}

fn load_signal(common: &Common) -> Result<SignalSpec> {
    let path = common
        .signal
        .as_ref()
        .ok_or_else(|| Error::Parse("--signal is required".into()))?;
    let dist = parse_atomic(&read(path)?)?;
    let mean = dist.mean();
    if mean.abs() > CENTERING_TOL {
        eprintln!("warning: signal mean {mean} re-centred to 0");
    }
    SignalSpec::new(dist)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    source: WitnessSource,
    #[serde(flatten)]
    result: &'a SolveResult,
}

/// Best of the atomic search and one- and two-component mixtures.
fn solve_best(
    x: &SignalSpec,
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
    quad: &QuadratureConfig,
) -> Result<(WitnessSource, SolveResult)> {
    let mut best = (
        WitnessSource::Atomic,
        optimize_support_and_weights(x, eps, cfg)?,
    );
    if eps.epsilon() > 0.0 {
        for (k, src) in [(1, WitnessSource::MixtureK1), (2, WitnessSource::MixtureK2)] {
            match optimize_gaussian_mixture(x, eps, k, cfg, quad) {
                Ok(r) if r.report.j < best.1.report.j => best = (src, r),
                Ok(_) | Err(Error::QuadratureBudgetExceeded { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(best)
}

fn cmd_eval(common: &Common, noise: &Path, epsilon: Option<f64>) -> Result<i32> {
    let cfg = RunConfig::build(common)?;
    let x = load_signal(common)?;
    let y = parse_noise(&read(noise)?)?;
    if let Some(e) = cfg.file.epsilon.or(epsilon) {
        let f = feasibility_check(&y, NoiseBudget::new(e)?, cfg.optimizer.tol_feas);
        eprintln!(
            "feasible={} mean_slack={} var_slack={}",
            f.feasible, f.mean_slack, f.var_slack
        );
    }
    let report: ObjectiveReport = objective(&x, &y, &cfg.quadrature)?;
    cfg.emit(&json_bytes(&report)?)?;
    Ok(EXIT_OK)
}

fn cmd_solve(common: &Common, epsilon: Option<f64>) -> Result<i32> {
    let cfg = RunConfig::build(common)?;
    let x = load_signal(common)?;
    let e = cfg
        .file
        .epsilon
        .or(epsilon)
        .ok_or_else(|| Error::Parse("--epsilon is required".into()))?;
    let (source, result) = solve_best(&x, NoiseBudget::new(e)?, &cfg.optimizer, &cfg.quadrature)?;
    cfg.emit(&json_bytes(&SolveOutput {
        source,
        result: &result,
    })?)?;
    Ok(EXIT_OK)
}

fn cmd_curve(common: &Common, grid: Option<&str>) -> Result<i32> {
    let cfg = RunConfig::build(common)?;
    let x = load_signal(common)?;
    let spec = cfg
        .file
        .eps_grid
        .as_deref()
        .or(grid)
        .ok_or_else(|| Error::Parse("--eps-grid is required".into()))?;
    let curve = trace_l_curve(&x, &eps_grid(spec)?, &cfg.optimizer, &cfg.quadrature)?;
    let mut csv = Vec::new();
    write_curve_csv(&curve, &mut csv)?;
    cfg.emit(&csv)?;
    if let Some(out) = &cfg.out {
        write_curve_dat(&curve, fs::File::create(out.with_extension("dat"))?)?;
    }
    Ok(EXIT_OK)
}

fn cmd_mc(
    common: &Common,
    noise: &Path,
    samples: Option<usize>,
    bins: Option<&[usize]>,
) -> Result<i32> {
    let cfg = RunConfig::build(common)?;
    let x = load_signal(common)?;
    let y = parse_noise(&read(noise)?)?;
    let n = cfg.file.samples.or(samples).unwrap_or(1_000_000);
    let schedule: Vec<usize> = cfg
        .file
        .bins
        .clone()
        .or_else(|| bins.map(<[usize]>::to_vec))
        .unwrap_or_else(|| vec![256]);
    let estimates = match schedule.as_slice() {
        [b] => vec![estimate_objective(&x, &y, n, *b, cfg.seed)?],
        s => refine_bins(&x, &y, s, n, cfg.seed)?,
    };
    let mut csv = Vec::new();
    write_csv(&estimates, &mut csv)?;
    cfg.emit(&csv)?;
    Ok(EXIT_OK)
}

fn cmd_verify(common: &Common, battery: Option<&str>) -> Result<i32> {
    let cfg = RunConfig::build(common)?;
    let name = cfg
        .file
        .battery
        .as_deref()
        .or(battery)
        .unwrap_or("standard");
    let plan = BatteryPlan::by_name(name)?;
    let vcfg = VerifyConfig {
        optimizer: cfg.optimizer.clone(),
        quadrature: cfg.quadrature.clone(),
        ..Default::default()
    };
    let reports = run_all(&plan, &vcfg, cfg.seed);
    let table = render_table(&reports);
    match &cfg.out {
        Some(p) => {
            fs::write(p, json_bytes(&reports)?)?;
            print!("{table}");
        }
        None => cfg.emit(table.as_bytes())?,
    }
    Ok(if all_passed(&reports) {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Eval {
            common,
            noise,
            epsilon,
        } => cmd_eval(common, noise, *epsilon),
        Command::Solve { common, epsilon } => cmd_solve(common, *epsilon),
        Command::Curve { common, eps_grid } => cmd_curve(common, eps_grid.as_deref()),
        Command::Mc {
            common,
            noise,
            samples,
            bins,
        } => cmd_mc(common, noise, *samples, bins.as_deref()),
        Command::Verify { common, battery } => cmd_verify(common, battery.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
