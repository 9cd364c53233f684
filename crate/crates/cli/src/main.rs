use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use agrichain_core::chain::payload::FnPayload;
use agrichain_core::chain::{Ledger, Network};
use agrichain_core::config::{ConfigError, ExperimentConfig};
use agrichain_core::credit::CompliancePredicate;
use agrichain_core::experiment::{self, ExperimentError, Preset};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "agrichain", version, about = "Nano-sensor farm monitoring on a dual proof-of-work ledger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mining pipeline and export ledgers, tokens, credits and scores.
    Simulate(Settings),
    /// Dump a ledger export and check its hash chain.
    Inspect {
        path: PathBuf,
        /// Difficulty to validate against; defaults to the genesis value.
        #[arg(long)]
        difficulty: Option<u32>,
    },
    /// Fit the affinity constant to (concentration, rf) samples.
    Calibrate {
        /// CSV with `concentration,rf` rows; seeded synthetic samples if absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run a named experiment: rf-curves, rf-fit, sbu-deviation, sopt-search,
    /// color-tokens, accuracy-compare, traceability, credits.
    Preset {
        name: String,
        #[command(flatten)]
        settings: Settings,
    },
}

/// Layered over the base config in order: file, environment, flags.
#[derive(Args, Default)]
struct Settings {
    /// TOML config file.
    #[arg(long, env = "AGRICHAIN_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "AGRICHAIN_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, visible_alias = "out-dir", env = "AGRICHAIN_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long, env = "AGRICHAIN_N_FARMS")]
    n_farms: Option<usize>,
    #[arg(long, env = "AGRICHAIN_SENSORS_PER_GATEWAY")]
    sensors_per_gateway: Option<u32>,
    #[arg(long, env = "AGRICHAIN_K_A")]
    k_a: Option<f64>,
    #[arg(long, env = "AGRICHAIN_K_D")]
    k_d: Option<f64>,
    #[arg(long, env = "AGRICHAIN_R_MAX")]
    r_max: Option<f64>,
    #[arg(long, env = "AGRICHAIN_EPSILON_R")]
    epsilon_r: Option<f64>,
    /// Affinity constant; overrides k_a as k_d / k_dissociation.
    #[arg(long, env = "AGRICHAIN_K_DISSOCIATION")]
    k_dissociation: Option<f64>,
    /// Two values, `LOW,HIGH`.
    #[arg(long, env = "AGRICHAIN_INTER_FARM_RANGE", value_delimiter = ',', num_args = 2)]
    inter_farm_range: Option<Vec<f64>>,
    #[arg(long, env = "AGRICHAIN_INTRA_SIGMA")]
    intra_sigma: Option<f64>,
    #[arg(long, env = "AGRICHAIN_APPLICATION_SPREAD")]
    application_spread: Option<f64>,
    #[arg(long, env = "AGRICHAIN_TW")]
    tw: Option<u32>,
    #[arg(long, env = "AGRICHAIN_ROUNDS")]
    rounds: Option<u32>,
    #[arg(long, env = "AGRICHAIN_SBU_EPSILON")]
    sbu_epsilon: Option<f64>,
    #[arg(long, env = "AGRICHAIN_ALPHA")]
    alpha: Option<f64>,
    #[arg(long, env = "AGRICHAIN_INITIAL_CREDITS")]
    initial_credits: Option<f64>,
    #[arg(long, env = "AGRICHAIN_DIFFICULTY")]
    difficulty: Option<u32>,
    #[arg(long, env = "AGRICHAIN_FN_COUNT")]
    fn_count: Option<u32>,
    /// `argmax` or `not-e:<threshold>`.
    #[arg(long, env = "AGRICHAIN_COMPLIANCE")]
    compliance: Option<CompliancePredicate>,
    #[arg(long, env = "AGRICHAIN_TRACE_THRESHOLD")]
    trace_threshold: Option<f64>,
    #[arg(long, env = "AGRICHAIN_REPLICATES")]
    replicates: Option<u32>,
}

macro_rules! overlay {
    ($cfg:ident, $s:ident, $($field:ident),*) => {
        $(if let Some(v) = $s.$field.clone() { $cfg.$field = v; })*
    };
}

impl Settings {
    fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => base.load_over(path)?,
            None => base,
        };
        overlay!(
            cfg, self, seed, n_farms, sensors_per_gateway, k_a, k_d, r_max, epsilon_r, intra_sigma,
            application_spread, tw, rounds, sbu_epsilon, alpha, initial_credits, difficulty, fn_count,
            compliance, trace_threshold, replicates
        );
        if let Some(k) = self.k_dissociation {
            cfg.k_dissociation = Some(k);
        }
        if let Some(r) = &self.inter_farm_range {
            cfg.inter_farm_range = [r[0], r[1]];
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Config(String),
    Invalid(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) | ExperimentError::UnknownPreset(_) | ExperimentError::Io { .. } => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn write(run: &str, cfg: &ExperimentConfig, output: &experiment::RunOutput, started: Instant) -> Result<(), Failure> {
    let manifest = experiment::write_run(&cfg.out_dir, run, cfg, output, started)?;
    for (k, v) in &output.summary {
        println!("{k} = {v}");
    }
    println!("wrote {} files, manifest {}", output.artifacts.len(), manifest.display());
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut samples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [a, y, ..] => a.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(pair) => samples.push(pair),
            None if n == 0 => continue,
            None => return Err(Failure::Config(format!("{}:{}: expected `concentration,rf`", path.display(), n + 1))),
        }
    }
    Ok(samples)
}

fn inspect(path: &Path, difficulty: Option<u32>) -> Result<(), Failure> {
    let file = File::open(path).map_err(|e| Failure::Invalid(format!("cannot open {}: {e}", path.display())))?;
    let ledger = Ledger::import(BufReader::new(file)).map_err(|e| Failure::Invalid(e.to_string()))?;
    let difficulty = match difficulty {
        Some(d) => d,
        None => ledger.declared_difficulty().map_err(|e| Failure::Invalid(e.to_string()))?,
    };
    println!(
        "{} ledger, {} blocks, difficulty {difficulty}",
        ledger.network.name(),
        ledger.blocks.len()
    );
    for block in &ledger.blocks {
        println!(
            "height {} hash {} miner {} timestamp {}",
            block.index,
            hex::encode(block.hash),
            block.miner_id,
            block.timestamp
        );
        if ledger.network == Network::Functional && block.index > 0 {
            match FnPayload::decode(&block.payload) {
                Ok(p) => {
                    for f in &p.farms {
                        let token: Vec<String> = f.color_token.iter().map(|x| format!("{x:.4}")).collect();
                        println!(
                            "  farm {} token [{}] credits {:.4} f_E {}{}",
                            f.farm_id,
                            token.join(", "),
                            f.credits,
                            f.f_e,
                            if f.included { "" } else { " (skipped)" }
                        );
                    }
                }
                Err(e) => println!("  payload undecodable: {e}"),
            }
        }
    }
    match ledger.first_invalid(difficulty) {
        None => {
            println!("chain valid");
            Ok(())
        }
        Some(k) => {
            println!("chain INVALID at height {k}");
            Err(Failure::Invalid(format!("chain INVALID at height {k}")))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let started = Instant::now();
    match cli.command {
        Command::Simulate(settings) => {
            let cfg = settings.resolve(ExperimentConfig::default())?;
            let output = experiment::simulate(&cfg)?;
            write("simulate", &cfg, &output, started)
        }
        Command::Inspect { path, difficulty } => inspect(&path, difficulty),
        Command::Calibrate { input, settings } => {
            let cfg = settings.resolve(ExperimentConfig::default())?;
            let samples = match input {
                Some(path) => read_samples(&path)?,
                None => experiment::rf_fit_experiment(&cfg)?.0,
            };
            let (_, output) = experiment::calibration_output(&samples)?;
            write("calibrate", &cfg, &output, started)
        }
        Command::Preset { name, settings } => {
            let preset: Preset = name.parse()?;
            let cfg = settings.resolve(preset.defaults())?;
            let output = experiment::run_preset(preset, &cfg)?;
            write(preset.name(), &cfg, &output, started)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
