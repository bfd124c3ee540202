//! The `bdp` command line.
//!
//! Exit codes: 0 success, 2 usage or parse errors, 3 infeasible privacy
//! budget, 4 numeric failure.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::accountant::{attack_success_probability, default_lambda_grid, Ledger, Mode, PrivacyReport};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, DEFAULT_GAMMA};
use crate::mechanisms::MechanismConfig;
use crate::pipeline::{joint_reports, DualAccountant};
use crate::simulator::{
    format_sig, load_dataset, preset_plan, read_distance_stream, run_logreg_dpsgd, run_simulation, sweep_sigma,
    write_trace_csv, LogRegConfig, Preset, PrivacyTrace, SimulationPlan, TraceRecord,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "bdp", version, about = "Bayesian and moments accounting for subsampled Gaussian mechanisms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Account over a recorded JSON-lines stream of neighbour distances.
    Account(AccountArgs),
    /// Run a synthetic experiment and write its ε trace as CSV.
    Simulate(SimulateArgs),
    /// Convert a saved ledger between fixed-δ and fixed-ε reports.
    Convert(ConvertArgs),
    /// Attacker success probability 1/(1+e^-ε).
    AttackProb(AttackArgs),
    /// Train logistic regression with DP-SGD on a CSV dataset.
    Logreg(LogregArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Ma,
    Bdp,
    Both,
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    /// Distance stream, `-` for standard input.
    #[arg(long)]
    pub input: String,
    /// JSON file of defaults; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Use orders 1..=N instead of the default grid.
    #[arg(long)]
    pub lambda_max: Option<u32>,
    #[arg(long)]
    pub noise_factor: Option<f64>,
    /// Do not cap Bayesian costs at the worst-case cost.
    #[arg(long)]
    pub no_clamp: bool,
    /// Report JSON destination, `-` for standard output.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Optional per-step trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Save the ledger; with `--mode both` the mode is inserted before the extension.
    #[arg(long)]
    pub ledger_out: Option<PathBuf>,
}

/// Account settings as read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccountFile {
    sigma: Option<f64>,
    q: Option<f64>,
    delta: Option<f64>,
    clip: Option<f64>,
    gamma: Option<f64>,
    mode: Option<ModeArg>,
    lambda_max: Option<u32>,
    noise_factor: Option<f64>,
    clamp_to_ma: Option<bool>,
}

/// Fully resolved account configuration, echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccountConfig {
    pub input: String,
    pub sigma: f64,
    pub q: f64,
    pub delta: f64,
    pub clip: Option<f64>,
    pub gamma: f64,
    pub mode: ModeArg,
    pub noise_factor: f64,
    pub clamp_to_ma: bool,
    pub lambda_grid: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// One of fig1a, fig1b, fig1c, fig2a, fig2b, fig2c, fig3, fig6.
    #[arg(long, conflicts_with = "plan")]
    pub preset: Option<String>,
    /// JSON simulation plan.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Comma-separated noise multipliers; writes one final-step row per value.
    #[arg(long, value_delimiter = ',', conflicts_with = "sigma")]
    pub sigma_grid: Option<Vec<f64>>,
    /// Clip bound and distance for the fig6 preset.
    #[arg(long, default_value_t = 1.0)]
    pub fig6_clip: f64,
    /// Use orders 1..=N instead of the plan's grid.
    #[arg(long)]
    pub lambda_max: Option<u32>,
    /// Trace CSV destination, `-` for standard output; files get a `.meta.json` sidecar.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Write final ε per order as CSV.
    #[arg(long)]
    pub lambda_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["delta", "epsilon"])))]
pub struct ConvertArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct LogregArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "label")]
    pub label: String,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 40)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    /// Omit to train without noise or accounting.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub noise_factor: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub lambda_max: Option<u32>,
    /// Summary JSON destination, `-` for standard output.
    #[arg(long, default_value = "-")]
    pub out: String,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

/// A report together with the ledger length it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    #[serde(flatten)]
    pub report: PrivacyReport,
    pub steps: u64,
}

impl StepReport {
    fn new(report: PrivacyReport, ledger: &Ledger) -> Self {
        Self {
            report,
            steps: ledger.steps(),
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::BudgetExhausted { .. } => EXIT_BUDGET,
        Error::Numeric { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Account(a) => cmd_account(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Convert(a) => cmd_convert(&a),
        Command::AttackProb(a) => cmd_attack_prob(&a),
        Command::Logreg(a) => cmd_logreg(&a),
    }
}

fn open_output(dest: &str) -> Result<Box<dyn Write>> {
    if dest == "-" {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        Ok(Box::new(BufWriter::new(File::create(dest)?)))
    }
}

fn open_input(src: &str) -> Result<Box<dyn BufRead>> {
    if src == "-" {
        Ok(Box::new(BufReader::new(io::stdin().lock())))
    } else {
        Ok(Box::new(BufReader::new(File::open(src)?)))
    }
}

fn write_json<T: Serialize>(dest: &str, value: &T) -> Result<()> {
    let mut w = open_output(dest)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn grid_for(lambda_max: Option<u32>) -> Result<Vec<u32>> {
    match lambda_max {
        Some(0) => Err(Error::config("--lambda-max must be at least 1")),
        Some(n) => Ok((1..=n).collect()),
        None => Ok(default_lambda_grid()),
    }
}

fn summarize(report: &PrivacyReport) {
    eprintln!(
        "{}: epsilon={} at delta={} (lambda={}), attack success {}",
        report.mode,
        format_sig(report.epsilon, 4),
        report.delta,
        report.lambda_star,
        format_sig(report.attack_success, 4)
    );
}

pub fn resolve_account(args: &AccountArgs) -> Result<AccountConfig> {
    let file: AccountFile = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                msg: format!("{}: {e}", path.display()),
            })?
        }
        None => AccountFile::default(),
    };
    let need = |flag: Option<f64>, fallback: Option<f64>, name: &str| {
        flag.or(fallback)
            .ok_or_else(|| Error::config(format!("--{name} is required")))
    };
    let clip = args.clip.or(file.clip);
    let mode = args
        .mode
        .or(file.mode)
        .unwrap_or(if clip.is_some() { ModeArg::Both } else { ModeArg::Bdp });
    Ok(AccountConfig {
        input: args.input.clone(),
        sigma: need(args.sigma, file.sigma, "sigma")?,
        q: need(args.q, file.q, "q")?,
        delta: need(args.delta, file.delta, "delta")?,
        clip,
        gamma: args.gamma.or(file.gamma).unwrap_or(DEFAULT_GAMMA),
        mode,
        noise_factor: args.noise_factor.or(file.noise_factor).unwrap_or(1.0),
        clamp_to_ma: !args.no_clamp && file.clamp_to_ma.unwrap_or(true),
        lambda_grid: grid_for(args.lambda_max.or(file.lambda_max))?,
    })
}

#[derive(Serialize)]
struct AccountOutput<'a> {
    config: &'a AccountConfig,
    reports: Vec<StepReport>,
}

fn suffixed(path: &Path, mode: Mode) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{mode}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{mode}"),
    };
    path.with_file_name(name)
}

fn cmd_account(args: &AccountArgs) -> Result<()> {
    let cfg = resolve_account(args)?;
    let mech = MechanismConfig::with_noise_factor(cfg.sigma, cfg.q, cfg.clip, cfg.noise_factor)?;
    let (want_ma, want_bdp) = match cfg.mode {
        ModeArg::Ma => (true, false),
        ModeArg::Bdp => (false, true),
        ModeArg::Both => (true, true),
    };
    if want_ma && cfg.clip.is_none() {
        return Err(Error::config("the moments accountant needs --clip"));
    }
    let estimator = EstimatorConfig {
        m: 2,
        gamma: cfg.gamma,
        clamp_to_ma: cfg.clamp_to_ma,
    };
    let mut acc = DualAccountant::new(
        cfg.lambda_grid.clone(),
        want_ma.then_some(mech),
        want_bdp.then_some(mech),
        estimator,
    )?;
    let stream = read_distance_stream(open_input(&cfg.input)?)?;
    let mut trace = Vec::new();
    for rec in &stream {
        acc.record(&rec.distances).map_err(|e| e.at_step(rec.step))?;
        if args.trace.is_some() {
            let (dp, bdp) = acc.reports(cfg.delta).map_err(|e| e.at_step(rec.step))?;
            trace.push(TraceRecord {
                step: rec.step,
                epsilon_dp: dp.map(|r| r.epsilon),
                epsilon_bdp: bdp.map(|r| r.epsilon),
                delta: cfg.delta,
                lambda_star_dp: dp.map(|r| r.lambda_star),
                lambda_star_bdp: bdp.map(|r| r.lambda_star),
            });
        }
    }
    let ledgers: Vec<&Ledger> = [acc.dp_ledger(), acc.bdp_ledger()].into_iter().flatten().collect();
    let (dp, bdp) = acc.reports(cfg.delta)?;
    let mut reports = Vec::new();
    for (r, ledger) in [dp, bdp].into_iter().flatten().zip(&ledgers) {
        summarize(&r);
        reports.push(StepReport::new(r, ledger));
    }
    if let Some(path) = &args.trace {
        write_trace_csv(BufWriter::new(File::create(path)?), &trace)?;
    }
    if let Some(path) = &args.ledger_out {
        for ledger in &ledgers {
            let dest = if ledgers.len() > 1 {
                suffixed(path, ledger.mode())
            } else {
                path.clone()
            };
            std::fs::write(dest, ledger.to_json())?;
        }
    }
    write_json(
        &args.out,
        &AccountOutput {
            config: &cfg,
            reports,
        },
    )
}

fn simulation_plan(args: &SimulateArgs) -> Result<SimulationPlan> {
    let mut plan = match (&args.preset, &args.plan) {
        (Some(name), None) => {
            let preset: Preset = name.parse()?;
            preset_plan(preset, args.seed.unwrap_or(0), args.fig6_clip)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                msg: format!("{}: {e}", path.display()),
            })?
        }
        _ => {
            return Err(Error::config(format!(
                "give --preset ({}) or --plan",
                Preset::names().join(", ")
            )))
        }
    };
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    if let Some(steps) = args.steps {
        plan.steps = steps;
    }
    if let Some(sigma) = args.sigma {
        plan.sigma = sigma;
    }
    if args.lambda_max.is_some() {
        plan.lambda_grid = Some(grid_for(args.lambda_max)?);
    }
    plan.validate()?;
    Ok(plan)
}

#[derive(Serialize)]
struct SweepMetadata<'a> {
    plan: &'a SimulationPlan,
    sigma_grid: &'a [f64],
    seeds: Vec<u64>,
}

fn write_lambda_csv(path: &Path, trace: &PrivacyTrace) -> Result<()> {
    let delta = trace.metadata.plan.delta;
    let dp = trace.dp_ledger.epsilon_by_lambda(delta)?;
    let bdp = trace.bdp_ledger.epsilon_by_lambda(delta)?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "lambda,epsilon_dp,epsilon_bdp")?;
    for ((l, e_dp), (_, e_bdp)) in dp.iter().zip(&bdp) {
        writeln!(w, "{l},{},{}", format_sig(*e_dp, 10), format_sig(*e_bdp, 10))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let plan = simulation_plan(args)?;
    let sidecar = (args.out != "-").then(|| format!("{}.meta.json", args.out));
    match &args.sigma_grid {
        Some(grid) => {
            // one row per σ: its final step
            let runs = sweep_sigma(&plan, grid)?;
            let mut w = open_output(&args.out)?;
            writeln!(w, "sigma,epsilon_dp,epsilon_bdp,delta,lambda_star_dp,lambda_star_bdp")?;
            for (sigma, t) in &runs {
                let r = t.last();
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    format_sig(*sigma, 10),
                    format_sig(r.epsilon_dp.expect("both ledgers"), 10),
                    format_sig(r.epsilon_bdp.expect("both ledgers"), 10),
                    format_sig(r.delta, 10),
                    r.lambda_star_dp.expect("both ledgers"),
                    r.lambda_star_bdp.expect("both ledgers")
                )?;
            }
            w.flush()?;
            if let Some(path) = sidecar {
                let meta = SweepMetadata {
                    plan: &plan,
                    sigma_grid: grid,
                    seeds: runs.iter().map(|(_, t)| t.metadata.seed).collect(),
                };
                write_json(&path, &meta)?;
            }
        }
        None => {
            let trace = run_simulation(&plan)?;
            write_trace_csv(open_output(&args.out)?, &trace.records)?;
            if let Some(path) = sidecar {
                write_json(&path, &trace.metadata)?;
            }
            if let Some(path) = &args.lambda_out {
                write_lambda_csv(path, &trace)?;
            }
        }
    }
    Ok(())
}

fn cmd_convert(args: &ConvertArgs) -> Result<()> {
    let ledger = Ledger::from_json(&std::fs::read_to_string(&args.ledger)?)?;
    let report = match (args.delta, args.epsilon) {
        (Some(d), None) => ledger.epsilon_at(d)?,
        (None, Some(e)) => ledger.delta_at(e)?,
        _ => return Err(Error::config("give exactly one of --delta and --epsilon")),
    };
    summarize(&report);
    write_json("-", &StepReport::new(report, &ledger))
}

fn cmd_attack_prob(args: &AttackArgs) -> Result<()> {
    if args.epsilon.is_nan() {
        return Err(Error::domain("epsilon must be a number"));
    }
    println!("{}", format_sig(attack_success_probability(args.epsilon), 4));
    Ok(())
}

#[derive(Serialize)]
struct LogregOutput<'a> {
    config: &'a LogRegConfig,
    history: &'a [crate::simulator::EpochAccuracy],
    reports: Vec<StepReport>,
}

fn cmd_logreg(args: &LogregArgs) -> Result<()> {
    let data = load_dataset(&args.data, &args.label)?;
    let cfg = LogRegConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        clip: Some(args.clip),
        sigma: args.sigma,
        noise_factor: args.noise_factor,
        estimator: EstimatorConfig {
            gamma: args.gamma,
            ..Default::default()
        },
        delta: args.delta,
        lambda_grid: args.lambda_max.map(|n| (1..=n.max(1)).collect()),
        seed: args.seed,
        train_fraction: 0.8,
    };
    let out = run_logreg_dpsgd(&data, &cfg)?;
    // both ledgers account the same clipped mechanism
    let (dp, bdp) = joint_reports(out.dp_ledger.as_ref(), out.bdp_ledger.as_ref(), true, args.delta)?;
    let mut reports = Vec::new();
    for (r, ledger) in [(dp, &out.dp_ledger), (bdp, &out.bdp_ledger)] {
        if let (Some(r), Some(ledger)) = (r, ledger) {
            summarize(&r);
            reports.push(StepReport::new(r, ledger));
        }
    }
    let acc = out.final_accuracy();
    eprintln!(
        "final accuracy: train {}, test {}",
        format_sig(acc.train, 4),
        format_sig(acc.test, 4)
    );
    if let Some(path) = &args.trace {
        write_trace_csv(BufWriter::new(File::create(path)?), &out.records)?;
    }
    write_json(
        &args.out,
        &LogregOutput {
            config: &cfg,
            history: &out.history,
            reports,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("bdp").chain(args.iter().copied()))
    }

    #[test]
    fn convert_needs_exactly_one_target() {
        assert!(parse(&["convert", "--ledger", "x.json"]).is_err());
        assert!(parse(&["convert", "--ledger", "x.json", "--delta", "1e-5", "--epsilon", "1"]).is_err());
        assert!(parse(&["convert", "--ledger", "x.json", "--epsilon", "1"]).is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::BudgetExhausted { min_delta: 1e-3 }), EXIT_BUDGET);
        assert_eq!(exit_code(&Error::BudgetExhausted { min_delta: 1e-3 }.at_step(4)), EXIT_BUDGET);
        assert_eq!(
            exit_code(&Error::Numeric {
                msg: "x".into(),
                lo: 0.0,
                hi: 1.0
            }),
            EXIT_NUMERIC
        );
        assert_eq!(exit_code(&Error::Parse { line: 3, msg: "x".into() }), EXIT_USAGE);
    }

    #[test]
    fn account_flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"sigma": 2.0, "q": 0.1, "delta": 1e-5, "clip": 1.0}"#).unwrap();
        let cli = parse(&["account", "--input", "-", "--config", path.to_str().unwrap(), "--sigma", "3"]).unwrap();
        let Command::Account(a) = cli.command else { panic!() };
        let cfg = resolve_account(&a).unwrap();
        assert_eq!(cfg.sigma, 3.0);
        assert_eq!(cfg.q, 0.1);
        assert_eq!(cfg.mode, ModeArg::Both);
        assert_eq!(cfg.gamma, DEFAULT_GAMMA);
        let cli = parse(&["account", "--input", "-", "--sigma", "1"]).unwrap();
        let Command::Account(a) = cli.command else { panic!() };
        assert!(resolve_account(&a).is_err());
    }

    #[test]
    fn ledger_suffix() {
        assert_eq!(suffixed(Path::new("/t/run.json"), Mode::Ma), PathBuf::from("/t/run.ma.json"));
        assert_eq!(suffixed(Path::new("run"), Mode::Bdp), PathBuf::from("run.bdp"));
    }
}
