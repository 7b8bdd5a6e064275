use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use hsgs::basis::{build_or_load, cache_dir, TensorBasis};
use hsgs::check::{run_suite, SUITES};
use hsgs::estimates::CalibrationFixture;
use hsgs::galerkin::{initial_state, run_ensemble, run_path, SimConfig, Stepper};
use hsgs::io::{
    config_hash, export_fields, parse_config, parse_config_str, read_checkpoint, smallness_warnings, write_checkpoint,
    write_ledger_csv, ExportField, RunManifest,
};
use hsgs::HsgsError;

#[derive(Parser)]
#[command(name = "hsgs", version, about = "Stochastic hydrostatic Galerkin simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set constants.nu_v=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or load) the cached basis for a configuration.
    Basis(ConfigArgs),
    /// Integrate one path, writing the ledger, checkpoints and manifest.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Rerun exactly the configuration recorded in a manifest.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        #[arg(short, long, default_value = "hsgs-out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        path: u64,
    },
    /// Run independent paths in parallel and report moments.
    Ensemble {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short = 'n', long, default_value_t = 8)]
        paths: usize,
        #[arg(short, long, default_value = "hsgs-out")]
        out: PathBuf,
    },
    /// Run verification suites; exit code 3 when any check fails.
    Check {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Suite name or `all`.
        #[arg(short, long, default_value = "all")]
        suite: String,
        /// Calibration fixture for the inequality suite.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    /// Dump grid fields of a checkpoint as CSV.
    Export {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated subset of v,T,w,p_s,p,vbar,vtilde.
        #[arg(long, default_value = "v,T,w,p_s,p,vbar,vtilde")]
        what: String,
        #[arg(short, long, default_value = "hsgs-export")]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Numerical(String),
    Suite,
}

impl From<HsgsError> for Failure {
    fn from(e: HsgsError) -> Self {
        match e {
            HsgsError::NonConvergence { .. }
            | HsgsError::NonFinite(_)
            | HsgsError::Consistency(_)
            | HsgsError::DivergenceContamination(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn load_config(args: &ConfigArgs) -> Result<SimConfig, HsgsError> {
    match &args.config {
        Some(p) => parse_config(p, &args.overrides),
        None => parse_config_str("", &args.overrides, None),
    }
}

fn load_basis(cfg: &SimConfig) -> Result<Arc<TensorBasis>, HsgsError> {
    let (b, path) = build_or_load(&cfg.domain, cfg.n, cfg.n_z, &cache_dir())?;
    info!("basis {}", path.display());
    Ok(Arc::new(b))
}

fn stepper(cfg: &SimConfig) -> Result<Stepper, HsgsError> {
    let st = Stepper::from_config(cfg.clone(), load_basis(cfg)?)?;
    for w in smallness_warnings(cfg, st.noise.eta()) {
        warn!("{w}");
    }
    Ok(st)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_run(cfg: SimConfig, out: &Path, path: u64) -> Result<(), Failure> {
    let started = Instant::now();
    let st = stepper(&cfg)?;
    let mut manifest = RunManifest::new(&cfg, 1, vec!["ledger.csv".into(), "final.ckp".into()]);
    manifest.paths[0].path = path;
    let hash = manifest.hash()?;
    let chash = config_hash(&cfg)?;
    let u0 = initial_state(st.basis(), &cfg.initial)?;
    let ckp_dir = out.join("checkpoints");
    let r = run_path(&st, &u0, path, &mut |step, s| write_checkpoint(&ckp_dir.join(format!("step-{step:08}.ckp")), s, &chash))?;
    let mut csv = Vec::new();
    write_ledger_csv(&mut csv, &r.ledger, &hash)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("ledger.csv"), csv)?;
    write_checkpoint(&out.join("final.ckp"), &r.state, &chash)?;
    manifest.steps = r.steps;
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    write_text(&out.join("manifest.toml"), &manifest.to_toml()?)?;
    println!("{} steps, final time {:.6e}, manifest {hash}", r.steps, r.state.time);
    if let Some(t) = r.ledger.stop_time {
        println!("stopped at t = {t:.6e}");
    }
    if r.ledger.nonfinite {
        return Err(Failure::Numerical("state became non-finite".into()));
    }
    Ok(())
}

fn cmd_ensemble(cfg: SimConfig, paths: usize, out: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let st = stepper(&cfg)?;
    let mut manifest = RunManifest::new(&cfg, paths as u64, vec!["ensemble.json".into()]);
    let hash = manifest.hash()?;
    let u0 = initial_state(st.basis(), &cfg.initial)?;
    let rep = run_ensemble(&st, paths, &|_| Ok(u0.clone()))?;
    let mut json = serde_json::to_value(&rep).map_err(|e| Failure::Usage(e.to_string()))?;
    json["manifest"] = serde_json::Value::String(hash.clone());
    write_text(&out.join("ensemble.json"), &serde_json::to_string_pretty(&json).map_err(|e| Failure::Usage(e.to_string()))?)?;
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    write_text(&out.join("manifest.toml"), &manifest.to_toml()?)?;
    println!(
        "{paths} paths, {} failed, {} stopped; mean sup |U|_H1^2 = {:.6e}, mean int |A_H U|^2 = {:.6e}",
        rep.failures, rep.stopped, rep.sup_h1_sq.mean, rep.int_ah.mean
    );
    Ok(())
}

fn cmd_check(cfg: SimConfig, suite: &str, fixture: Option<&Path>) -> Result<(), Failure> {
    let st = stepper(&cfg)?;
    let fixture: Option<CalibrationFixture> = match fixture {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let mut ok = true;
    for name in names {
        let rep = run_suite(name, &cfg, &st, fixture.as_ref())?;
        for l in &rep.lines {
            println!("{} [{}] {}: {}", if l.pass { "PASS" } else { "FAIL" }, rep.suite, l.label, l.detail);
        }
        ok &= rep.pass();
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Suite)
    }
}

fn cmd_export(cfg: SimConfig, checkpoint: &Path, what: &str, out: &Path) -> Result<(), Failure> {
    let ckp = read_checkpoint(checkpoint)?;
    let chash = config_hash(&cfg)?;
    if ckp.config_hash != chash {
        warn!("checkpoint was written under a different configuration ({} vs {chash})", ckp.config_hash);
    }
    let st = stepper(&cfg)?;
    let fields = what.split(',').map(|s| ExportField::parse(s.trim())).collect::<Result<Vec<_>, _>>()?;
    let files = export_fields(&st.ctx, &ckp.state, &st.forcing, &fields, out, &ckp.config_hash)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Basis(args) => {
            let cfg = load_config(&args)?;
            let (_, path) = build_or_load(&cfg.domain, cfg.n, cfg.n_z, &cache_dir())?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Run { cfg, manifest, out, path } => {
            let config = match manifest {
                Some(m) => RunManifest::read(&m)?.config,
                None => load_config(&cfg)?,
            };
            cmd_run(config, &out, path)
        }
        Command::Ensemble { cfg, paths, out } => cmd_ensemble(load_config(&cfg)?, paths, &out),
        Command::Check { cfg, suite, fixture } => cmd_check(load_config(&cfg)?, &suite, fixture.as_deref()),
        Command::Export { cfg, checkpoint, what, out } => cmd_export(load_config(&cfg)?, &checkpoint, &what, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Suite) => ExitCode::from(3),
    }
}
