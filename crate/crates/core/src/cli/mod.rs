//! Batch experiment harness behind the `mixsde` binary.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{ConfigError, RunConfig, Validated};

#[derive(Debug, Parser)]
#[command(name = "mixsde", version, about = "Mixed Brownian / fractional SDE experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve paths and write trajectories and terminal values.
    Simulate(CommonArgs),
    /// Malliavin covariance spectra over an ensemble.
    Malliavin(CommonArgs),
    /// Bracket table and rank decision at x0.
    Hormander(CommonArgs),
    /// Two-scale covariation statistics and small-sup events.
    Norris(CommonArgs),
    /// Law of X_t: KDE, Gaussian check, small balls, integrability.
    Density(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `run.threads`.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Malliavin(_) => "malliavin",
            Command::Hormander(_) => "hormander",
            Command::Norris(_) => "norris",
            Command::Density(_) => "density",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a)
            | Command::Malliavin(a)
            | Command::Hormander(a)
            | Command::Norris(a)
            | Command::Density(a) => a,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn run(e: impl std::fmt::Display) -> CliError {
        CliError::Run(e.to_string())
    }

    fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Run(_) => 1,
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> String {
        let (kind, field) = match self {
            CliError::Config(e) => ("config", e.field().map(str::to_string)),
            CliError::Io { path, .. } => ("io", Some(path.clone())),
            CliError::Run(_) => ("run", None),
        };
        json!({ "error": { "kind": kind, "field": field, "message": self.to_string() } }).to_string()
    }
}

/// Files produced by one command, written together with a MANIFEST.
pub struct Artifacts {
    pub command: &'static str,
    pub fingerprint: String,
    pub seed: u64,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(command: &'static str, config: &RunConfig) -> Artifacts {
        Artifacts { command, fingerprint: config.fingerprint(), seed: config.run.seed, files: Vec::new() }
    }

    /// `# key=value` lines prefixed to every CSV.
    pub fn metadata(&self) -> Vec<(&'static str, String)> {
        vec![
            ("command", self.command.to_string()),
            ("fingerprint", self.fingerprint.clone()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json(&mut self, name: impl Into<String>, mut value: serde_json::Value) {
        if let Some(map) = value.as_object_mut() {
            map.insert("command".into(), json!(self.command));
            map.insert("fingerprint".into(), json!(self.fingerprint));
            map.insert("seed".into(), json!(self.seed));
        }
        let mut text = serde_json::to_string_pretty(&value).expect("json values always serialize");
        text.push('\n');
        self.add(name, text.into_bytes());
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut manifest = format!("# command={}\n# fingerprint={}\n# seed={}\n", self.command, self.fingerprint, self.seed);
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
            manifest.push_str(&format!("{}  {name}\n", hex::encode(Sha256::digest(bytes))));
        }
        let path = dir.join("MANIFEST");
        std::fs::write(&path, manifest).map_err(|e| CliError::io(&path, e))
    }
}

pub fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut config = RunConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    Ok(config)
}

/// Runs one subcommand end to end.
pub fn run(command: &Command) -> Result<Artifacts, CliError> {
    let args = command.args();
    let config = load_config(args)?;
    let valid = config.validate()?;
    let threads = args.threads.unwrap_or(config.run.threads);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(CliError::run)?;
    let artifacts = pool.install(|| match command {
        Command::Simulate(_) => commands::simulate(&valid),
        Command::Malliavin(_) => commands::malliavin(&valid),
        Command::Hormander(_) => commands::hormander(&valid),
        Command::Norris(_) => commands::norris(&valid),
        Command::Density(_) => commands::density(&valid),
    })?;
    artifacts.write(&args.out)?;
    Ok(artifacts)
}
