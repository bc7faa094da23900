//! Command-line interface.
//!
//! Exit status is 0 on success, 1 when a run fails (invalid table, accounting
//! precondition, I/O) and 2 for usage errors. Every command that writes an
//! output file also writes `<output>.manifest.json` beside it.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;

use crate::accountant::{
    eps_prime, fisher_sup, l2_round_rdp, scaled_domain, AccountingReport, Certification, LedgerMode,
    PrivacyLedger, DEFAULT_ALPHAS, DEFAULT_DELTA, FISHER_TOL,
};
use crate::baselines::{BaselineConfig, BaselineKind};
use crate::designer::{design_mvu, DesignSpec};
use crate::dme::{dme_mse, sweep_bias_variance, uniform_points, DmeMechanism, InputDist, SWEEP_POINTS};
use crate::error::Error;
use crate::fl::{train_fl, FlConfig, FlMechanism};
use crate::format::{self, FORMAT_VERSION};
use crate::mechanism::{ClipConfig, InterpolatedMechanism, NormKind};
use crate::rng;

#[derive(Debug, Parser)]
#[command(name = "imvu", version, about = "Interpolated MVU mechanism design, accounting and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design an MVU table and write a mechanism file.
    Design(DesignArgs),
    /// Check every invariant of a mechanism file.
    Validate(ValidateArgs),
    /// Compute the privacy cost of running a mechanism for several rounds.
    Account(AccountArgs),
    /// Bias and variance of I-MVU and MVU dithering across input grids.
    Sweep(SweepArgs),
    /// Distributed mean estimation error.
    Dme(DmeArgs),
    /// Private federated training on synthetic data.
    Train(TrainArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pure,
    Rdp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MechanismArg {
    Identity,
    Imvu,
    Laplace,
    Gaussian,
    Signsgd,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Output bits per coordinate; the alphabet has 2^bits values.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=12))]
    pub bits: u32,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub b_in: u64,
    /// L1-metric-DP parameter of the design.
    #[arg(long)]
    pub eps: f64,
    #[arg(long, value_enum, default_value = "l1")]
    pub metric: MetricArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value = "l2")]
    pub clip_norm: NormKind,
    #[arg(long, default_value_t = 1.0)]
    pub clip_c: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub lp_tol: f64,
    /// Skip anadromic averaging of the LP solution.
    #[arg(long)]
    pub no_symmetrize: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub mech: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    #[arg(long)]
    pub mech: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub clip_norm: NormKind,
    #[arg(long)]
    pub clip_c: f64,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub rounds: u64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Sensitivity in scaled space. Defaults to beta.
    #[arg(long)]
    pub c_sens: Option<f64>,
    /// RDP orders, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..=12))]
    pub bits: u32,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    pub b_in_list: Vec<usize>,
    #[arg(long, default_value_t = SWEEP_POINTS)]
    pub points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MechanismSelect {
    #[arg(long, value_enum)]
    pub mechanism: MechanismArg,
    /// Mechanism file, required for imvu.
    #[arg(long)]
    pub mech: Option<PathBuf>,
    /// Epsilon for laplace, noise multiplier for gaussian and signsgd.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Clipping norm for baselines and identity. Defaults to l1 for laplace
    /// and l2 otherwise. I-MVU uses the clipping stored in its file.
    #[arg(long)]
    pub clip_norm: Option<NormKind>,
    #[arg(long, default_value_t = 1.0)]
    pub clip_c: f64,
}

#[derive(Debug, Args)]
pub struct DmeArgs {
    #[command(flatten)]
    pub select: MechanismSelect,
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    pub clients: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Client coordinates are drawn uniformly from [input-lo, input-hi).
    #[arg(long, default_value_t = -0.1, allow_negative_numbers = true)]
    pub input_lo: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub input_hi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub select: MechanismSelect,
    #[arg(long, default_value_t = 50)]
    pub rounds: usize,
    #[arg(long, default_value_t = 100)]
    pub cohort: usize,
    #[arg(long, default_value_t = 600)]
    pub clients: usize,
    #[arg(long, default_value_t = 20)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 2000)]
    pub test_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.01)]
    pub signsgd_lr: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-round CSV; a summary is written to `<out>.summary.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command_line: &'a [String],
    subcommand: &'a str,
    seed: Option<u64>,
    version: &'a str,
    format_version: u32,
    timestamp: String,
    outputs: Vec<String>,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_manifest(argv: &[String], subcommand: &str, seed: Option<u64>, outputs: &[&Path]) -> anyhow::Result<()> {
    let Some(primary) = outputs.first() else {
        return Ok(());
    };
    let manifest = Manifest {
        command_line: argv,
        subcommand,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        format_version: FORMAT_VERSION,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = sibling(primary, ".manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path) -> anyhow::Result<InterpolatedMechanism> {
    format::load(path).with_context(|| format!("loading {}", path.display()))
}

fn design(args: &DesignArgs) -> anyhow::Result<()> {
    let mut spec = DesignSpec::new(args.b_in as usize, 1usize << args.bits, args.eps);
    spec.lp_tol = args.lp_tol;
    spec.symmetrize = !args.no_symmetrize;
    let table = design_mvu(&spec)?;
    let clip = ClipConfig::new(args.clip_norm, args.clip_c)?;
    let mech = InterpolatedMechanism::new(table, args.beta, clip)?.with_accounting()?;
    format::save(&mech, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} (b_in={}, b_out={}, eps_prime={:?}, fisher_m={:?})",
        args.out.display(),
        mech.table().b_in(),
        mech.table().b_out(),
        mech.eps_prime(),
        mech.fisher_m()
    );
    Ok(())
}

fn validate(args: &ValidateArgs) -> anyhow::Result<()> {
    let mech = load(&args.mech)?;
    let report = mech.table().validate(args.tol);
    print!("{report}");
    if let Some(check) = report.first_failure() {
        return Err(Error::invariant(check.name, check.to_string()).into());
    }
    Ok(())
}

fn account(args: &AccountArgs) -> anyhow::Result<AccountingReport> {
    let stored = load(&args.mech)?;
    let table = stored.table().clone();
    let clip = ClipConfig::new(args.clip_norm, args.clip_c)?;
    let mech = InterpolatedMechanism::new(table, args.beta, clip)?;
    let c_sens = args.c_sens.unwrap_or(args.beta);
    let alphas = args.alphas.clone().unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());

    let (ledger, per_round, eps_p, fisher_m, certification) = match args.mode {
        ModeArg::Pure => {
            if args.clip_norm != NormKind::L1 {
                return Err(Error::input("pure accounting bounds L1 distances; use --clip-norm l1").into());
            }
            let e = eps_prime(mech.table(), scaled_domain(args.beta))?;
            let per_round = (mech.table().design_eps() + e.value) * c_sens;
            let cert = Certification {
                grid_points: e.grid_points_per_interval,
                pad: e.lipschitz_pad,
            };
            (PrivacyLedger::pure(args.delta)?, vec![per_round], Some(e.value), None, cert)
        }
        ModeArg::Rdp => {
            if mech.table().b_in() != 2 {
                return Err(Error::State(format!(
                    "RDP accounting uses the Fisher bound, which requires b_in = 2 (table has b_in = {})",
                    mech.table().b_in()
                ))
                .into());
            }
            if args.clip_norm != NormKind::L2 {
                return Err(Error::input("RDP accounting bounds L2 distances; use --clip-norm l2").into());
            }
            let eta = mech.table().natural_params();
            let f = fisher_sup(&eta[0], &eta[1], FISHER_TOL)?;
            let per_round = l2_round_rdp(f.m, c_sens, &alphas)?;
            let cert = Certification {
                grid_points: f.evaluations,
                pad: f.m - f.grid_max,
            };
            (PrivacyLedger::rdp(alphas.clone(), args.delta)?, per_round, None, Some(f.m), cert)
        }
    };
    let mut ledger = ledger;
    ledger.record(&per_round, args.rounds)?;
    let (eps_dp, argmin_alpha) = ledger.epsilon()?;
    Ok(AccountingReport {
        mechanism_file: args.mech.display().to_string(),
        mode: ledger.mode,
        eps_prime: eps_p,
        fisher_m,
        c_sens,
        rounds: args.rounds,
        alphas: (ledger.mode == LedgerMode::Rdp).then_some(alphas),
        per_round,
        composed: ledger.compose(),
        delta: args.delta,
        eps_dp,
        argmin_alpha,
        certification,
    })
}

fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let b_out = 1usize << args.bits;
    let tables = args
        .b_in_list
        .iter()
        .map(|b| design_mvu(&DesignSpec::new(*b, b_out, args.eps)))
        .collect::<crate::Result<Vec<_>>>()?;
    let report = sweep_bias_variance(&tables, &uniform_points(args.points), args.eps)?;
    write(&args.out, &report.to_csv())
}

enum Selected {
    Identity(ClipConfig),
    Imvu(InterpolatedMechanism),
    Baseline(BaselineConfig),
}

fn select(sel: &MechanismSelect) -> anyhow::Result<Selected> {
    let default_norm = if sel.mechanism == MechanismArg::Laplace { NormKind::L1 } else { NormKind::L2 };
    let clip = ClipConfig::new(sel.clip_norm.unwrap_or(default_norm), sel.clip_c)?;
    let noise = || sel.noise.context("--noise is required for this mechanism");
    Ok(match sel.mechanism {
        MechanismArg::Identity => Selected::Identity(clip),
        MechanismArg::Imvu => {
            let Some(path) = &sel.mech else {
                bail!("--mech is required for the imvu mechanism");
            };
            Selected::Imvu(load(path)?)
        }
        MechanismArg::Laplace => Selected::Baseline(BaselineConfig::new(BaselineKind::Laplace, clip, noise()?)?),
        MechanismArg::Gaussian => Selected::Baseline(BaselineConfig::new(BaselineKind::Gaussian, clip, noise()?)?),
        MechanismArg::Signsgd => Selected::Baseline(BaselineConfig::new(BaselineKind::SignSgd, clip, noise()?)?),
    })
}

fn dme(args: &DmeArgs) -> anyhow::Result<()> {
    let selected = select(&args.select)?;
    let mech = match &selected {
        Selected::Identity(_) => DmeMechanism::Identity,
        Selected::Imvu(m) => DmeMechanism::Imvu(m),
        Selected::Baseline(c) => DmeMechanism::Baseline(*c),
    };
    let dist = InputDist::Uniform {
        lo: args.input_lo,
        hi: args.input_hi,
    };
    let root: u64 = rng::named(args.seed, "dme").random();
    let mut out = String::from("n_clients,mse,bits_per_coord\n");
    for (k, n) in args.clients.iter().enumerate() {
        let mut stream = rng::substream(root, k as u64);
        let (mse, bits) = dme_mse(*n, args.d, dist, mech, &mut stream, args.trials)?;
        out.push_str(&format!("{n},{mse},{bits}\n"));
    }
    write(&args.out, &out)
}

fn train(args: &TrainArgs) -> anyhow::Result<PathBuf> {
    let selected = select(&args.select)?;
    let (mechanism, clip) = match selected {
        Selected::Identity(c) => (FlMechanism::Identity, c),
        Selected::Imvu(m) => {
            let c = *m.clip_config();
            (FlMechanism::Imvu(m), c)
        }
        Selected::Baseline(b) => (FlMechanism::Baseline(b), b.clip),
    };
    let mut cfg = FlConfig::new(mechanism);
    cfg.rounds = args.rounds;
    cfg.cohort = args.cohort;
    cfg.n_clients = args.clients;
    cfg.d = args.d;
    cfg.n_classes = args.classes;
    cfg.separation = args.separation;
    cfg.test_size = args.test_size;
    cfg.lr = args.lr;
    cfg.momentum = args.momentum;
    cfg.signsgd_lr = args.signsgd_lr;
    cfg.clip = clip;
    cfg.seed = args.seed;
    cfg.delta = args.delta;
    if let Some(a) = &args.alphas {
        cfg.alphas = a.clone();
    }
    let result = train_fl(&cfg)?;
    write(&args.out, &result.to_csv())?;
    let summary_path = sibling(&args.out, ".summary.json");
    write(&summary_path, &(serde_json::to_string_pretty(&result.summary(cfg.delta)?)? + "\n"))?;
    println!("final accuracy {:.4}", result.final_accuracy);
    Ok(summary_path)
}

fn execute(cli: &Cli, argv: &[String]) -> anyhow::Result<()> {
    match &cli.command {
        Command::Design(a) => {
            design(a)?;
            write_manifest(argv, "design", None, &[&a.out])
        }
        Command::Validate(a) => validate(a),
        Command::Account(a) => {
            let report = account(a)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            print!("{text}");
            match &a.out {
                Some(path) => {
                    write(path, &text)?;
                    write_manifest(argv, "account", None, &[path])
                }
                None => Ok(()),
            }
        }
        Command::Sweep(a) => {
            sweep(a)?;
            write_manifest(argv, "sweep", None, &[&a.out])
        }
        Command::Dme(a) => {
            dme(a)?;
            write_manifest(argv, "dme", Some(a.seed), &[&a.out])
        }
        Command::Train(a) => {
            let summary = train(a)?;
            write_manifest(argv, "train", Some(a.seed), &[&a.out, &summary])
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let text: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &text) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
