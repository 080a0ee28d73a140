use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use macprecode::channel::decoding_order;
use macprecode::fixed_point::wsr_objective;
use macprecode::harness::config::parse_snr_list;
use macprecode::harness::sweep::{format_count_table, point_optimizer};
use macprecode::harness::{
    count_table, load_precoders, mc_exact_wsr, run_sweep, ConstellationSpec, ExperimentConfig, Mode,
    OracleOptions, SweepOutcome,
};
use macprecode::noise::derive_seed;
use macprecode::optimizer::report_bank;
use macprecode::{Error, Result};

#[derive(Parser)]
#[command(name = "macprecode", version, about = "Precoder design for the MIMO multiple access channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize precoders over the SNR grid and compare with no precoding.
    Optimize(Common),
    /// Asymptotic sum rate of no precoding over the grid, or of saved precoders.
    Evaluate(WithPrecoders),
    /// Monte Carlo exact sum rate of no precoding over the grid, or of saved precoders.
    Oracle(WithPrecoders),
    /// Summation counts of the design for statistical and instantaneous CSI.
    Count(CountArgs),
    /// Run the sweep in the mode given by the config file.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated SNR grid in dB, e.g. `-10,0,10`.
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<String>,
    #[arg(long)]
    starts: Option<usize>,
    /// Noise samples per user for the objective.
    #[arg(long)]
    mc_objective: Option<usize>,
    /// Noise samples per user for reported values.
    #[arg(long)]
    mc_report: Option<usize>,
    #[arg(long, env = "MACPRECODE_THREADS")]
    threads: Option<usize>,
    /// Repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args)]
struct WithPrecoders {
    #[command(flatten)]
    common: Common,
    /// Precoder document to evaluate instead of the no-precoding baseline.
    #[arg(long)]
    precoders: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    /// Config whose users and signal sets are counted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    n_t: Option<u32>,
    /// Signal set label (bpsk, qpsk, 8psk, 16qam, ...); repeatable.
    #[arg(long = "constellation")]
    constellations: Vec<String>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        2 => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?;
    }
    Ok(())
}

fn load_config(common: &Common, mode: Option<Mode>) -> Result<ExperimentConfig> {
    init_logging(common.verbose);
    init_threads(common.threads)?;
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(grid) = &common.snr_db {
        cfg.snr_db = parse_snr_list(grid)?;
    }
    if let Some(n) = common.starts {
        cfg.optimizer.n_starts = n;
    }
    if let Some(n) = common.mc_objective {
        cfg.optimizer.mc_objective = n;
    }
    if let Some(n) = common.mc_report {
        cfg.optimizer.mc_report = n;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn print_outcome(outcome: &SweepOutcome) {
    println!(
        "{:>8} {:>10} {:>10} {:>10} {:>8} {:>10} {:>5} {:>8}",
        "snr_db", "wsr_opt", "wsr_np", "mc_exact", "mc_se", "residual", "conv", "seconds"
    );
    for r in &outcome.rows {
        println!(
            "{:>8.2} {:>10} {:>10.4} {:>10} {:>8} {:>10.2e} {:>5} {:>8.1}",
            r.snr_db,
            fmt_opt(r.wsr_opt_bits),
            r.wsr_np_bits,
            fmt_opt(r.mc_exact_bits),
            fmt_opt(r.mc_se_bits),
            r.residual,
            r.converged,
            r.seconds
        );
        if let Some(e) = &r.error {
            println!("         error: {e}");
        }
    }
    if let Some(path) = &outcome.csv_path {
        println!("results written to {}", path.display());
    }
}

fn sweep(common: &Common, mode: Option<Mode>) -> Result<()> {
    let cfg = load_config(common, mode)?;
    if cfg.mode == Mode::Count {
        let model = cfg.model()?;
        let n_t = model.n_t() as u32;
        let outcome = run_sweep(&cfg, None)?;
        print!("{}", format_count_table(&outcome.counts, model.n_users(), n_t));
        return Ok(());
    }
    let outcome = run_sweep(&cfg, Some(&cfg.out_dir))?;
    print_outcome(&outcome);
    Ok(())
}

/// Evaluates a saved precoder document against the config's channel.
fn saved(args: &WithPrecoders, oracle: bool, path: &Path) -> Result<()> {
    let cfg = load_config(&args.common, None)?;
    let (set, provenance) = load_precoders(path)?;
    let order = provenance.user_order.clone().unwrap_or_else(|| decoding_order(&cfg.weights));
    let model = cfg.model()?.permuted(&order);
    if set.len() != model.n_users() || set.n_t() != model.n_t() {
        return Err(Error::Validation(format!(
            "{} holds {} users with N_t = {}, config has {} users with N_t = {}",
            path.display(),
            set.len(),
            set.n_t(),
            model.n_users(),
            model.n_t()
        )));
    }
    let opt = point_optimizer(&cfg, 0);
    if oracle {
        let opts = OracleOptions {
            n_channels: cfg.oracle.n_channels,
            n_noise: cfg.oracle.n_noise,
            seed: derive_seed(cfg.seed, 0x4f52),
            alphabet_cap: cfg.oracle.alphabet_cap,
        };
        let est = mc_exact_wsr(model.stats(), &model, &set, &opts)?;
        println!("mc exact WSR: {:.4} ± {:.4} bits", est.bits, est.std_error);
    } else {
        let ev = wsr_objective(&model, &set, &report_bank(&model, &opt), &opt.fixed_point, None)?;
        println!(
            "asymptotic WSR: {:.4} bits (residual {:.2e}, converged {})",
            ev.value,
            ev.max_residual(),
            ev.converged()
        );
    }
    Ok(())
}

fn count(args: &CountArgs) -> Result<()> {
    init_logging(args.verbose);
    let (mut users, mut n_t, mut specs) = (4usize, 4u32, Vec::new());
    if let Some(path) = &args.config {
        let cfg = ExperimentConfig::load(path)?;
        users = cfg.users.len();
        n_t = cfg.model()?.n_t() as u32;
        for u in &cfg.users {
            if !specs.contains(&u.constellation) {
                specs.push(u.constellation);
            }
        }
    }
    if !args.constellations.is_empty() {
        specs = args
            .constellations
            .iter()
            .map(|s| s.parse::<ConstellationSpec>())
            .collect::<Result<_>>()?;
    }
    if specs.is_empty() {
        specs = ["qpsk", "8psk", "16qam"].iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    users = args.users.unwrap_or(users);
    n_t = args.n_t.unwrap_or(n_t);
    print!("{}", format_count_table(&count_table(&specs, users, n_t), users, n_t));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Optimize(c) => sweep(c, Some(Mode::Optimize)),
        Command::Sweep(c) => sweep(c, None),
        Command::Evaluate(a) => match &a.precoders {
            Some(p) => saved(a, false, p),
            None => sweep(&a.common, Some(Mode::Evaluate)),
        },
        Command::Oracle(a) => match &a.precoders {
            Some(p) => saved(a, true, p),
            None => sweep(&a.common, Some(Mode::Oracle)),
        },
        Command::Count(a) => count(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
