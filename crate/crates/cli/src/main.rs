use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mselab_cli::runs;
use mselab_cli::{ExperimentConfig, RunManifest};

#[derive(Parser)]
#[command(name = "mselab", version, about = "Minimal surface equation experiments on CTA metrics")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized families (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "MSE_LAB_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct RecoverArgs {
    /// Metric preset name or `custom`.
    #[arg(long)]
    metric: Option<String>,
    /// Manufactured coefficient `K=EXPR` for `∂^K c̃(·, 0)`; repeatable.
    #[arg(long = "ctilde", value_name = "K=EXPR")]
    ctilde: Vec<String>,
    /// `3`, or a range `3..K`.
    #[arg(long)]
    orders: Option<String>,
    #[arg(long)]
    pairs: Option<usize>,
    /// `all`, a side, or `arc:i0:i1:side`.
    #[arg(long)]
    gamma: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Dirichlet problem for `data`.
    Forward,
    /// DN map of the configured family.
    Dn,
    /// First linearization and its finite-difference consistency.
    Linearize,
    /// Integral identity defect over the configured grids.
    IdentityCheck,
    /// Recover Taylor coefficients of `c̃` from synthetic DN data.
    Recover(RecoverArgs),
    /// Convergence study (`study` key) with observed rates.
    Convergence,
    /// DN data, surface gradient, and coefficient recovery end to end.
    Pipeline,
}

fn parse_orders(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty order range {s}");
        }
        return Ok((a..=b).collect());
    }
    Ok(vec![s.parse()?])
}

fn apply_recover_args(cfg: &mut ExperimentConfig, args: &RecoverArgs) -> Result<()> {
    if let Some(m) = &args.metric {
        cfg.metric = m.clone();
    }
    for item in &args.ctilde {
        let (k, e) = item.split_once('=').with_context(|| format!("expected K=EXPR, got '{item}'"))?;
        match k.trim() {
            "0" => cfg.ctilde0 = e.to_owned(),
            "3" => cfg.ctilde3 = Some(e.to_owned()),
            "4" => cfg.ctilde4 = Some(e.to_owned()),
            other => bail!("--ctilde supports orders 0, 3 and 4, got {other}"),
        }
    }
    if let Some(o) = &args.orders {
        cfg.orders = parse_orders(o).with_context(|| format!("bad --orders '{o}'"))?;
    }
    if let Some(p) = args.pairs {
        cfg.pairs = p;
    }
    if let Some(g) = &args.gamma {
        cfg.gamma = g.clone();
    }
    Ok(())
}

fn run(cli: Cli) -> Result<RunManifest> {
    let mut cfg = match &cli.common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.common.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Command::Recover(args) = &cli.command {
        apply_recover_args(&mut cfg, args)?;
    }
    cfg.validate()?;
    if let Some(t) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Forward => runs::run_forward(&cfg),
        Command::Dn => runs::run_dn(&cfg),
        Command::Linearize => runs::run_linearize(&cfg),
        Command::IdentityCheck => runs::run_identity_check(&cfg),
        Command::Recover(_) => runs::run_recover(&cfg),
        Command::Convergence => runs::run_convergence(&cfg),
        Command::Pipeline => runs::run_pipeline(&cfg).map(|p| p.manifest),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(m) => {
            println!("{}: wrote {} files (config {})", m.command, m.outputs.len() + 1, &m.config_hash[..12]);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
