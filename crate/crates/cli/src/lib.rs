//! `fmdt`: config-driven experiments on top of `fmdt-core`.
//!
//! Every invocation reads one JSON or TOML config, writes its results into a
//! fresh run directory `<out>/<command>-<hash>` and records a manifest with
//! the resolved config, the toolkit version and SHA-256 hashes of all inputs
//! and outputs. `fmdt replay <manifest>` reruns a recorded invocation.

pub mod commands;
pub mod model;
pub mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use commands::{
    Command, GenDataConfig, InpaintConfig, LipschitzConfig, PairwiseConfig, PerturbConfig, PsnrConfig,
    SampleConfig, TrainCmdConfig, TwoSampleConfig,
};
use run::{create_run_dir, runtime, schema, write_run, CliError, Inputs, Manifest, MANIFEST_FORMAT};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "FMDT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fmdt", version, about = "Flow matching as denoising: reproducible experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset.
    GenData(RunArgs),
    /// Train a denoiser network (or a ten-member ensemble).
    Train(RunArgs),
    /// Integrate the sampling ODE from latent draws.
    Sample(RunArgs),
    /// Calibrate a denoiser perturbation and report its schedule.
    Perturb(RunArgs),
    /// Denoising PSNR across times.
    Psnr(RunArgs),
    /// Velocity Jacobian spectral norms along trajectories.
    Lipschitz(RunArgs),
    /// Mean paired distances between models' samples from shared latents.
    Pairwise(RunArgs),
    /// Two-sample statistic between two sample files.
    Twosample(RunArgs),
    /// Plug-and-play inpainting.
    Inpaint(RunArgs),
    /// Rerun an invocation from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config, or TOML when the file ends in `.toml`.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads; falls back to FMDT_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Defaults to the directory holding the original run.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn setup_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| schema(format!("{THREADS_ENV}: {v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(schema("--threads: must be positive"));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<PathBuf, CliError> {
    match cmd {
        Cmd::Replay(a) => {
            setup_threads(a.threads)?;
            replay(&a.manifest, a.out.as_deref())
        }
        Cmd::GenData(a) => run_from_file::<GenDataConfig>(a),
        Cmd::Train(a) => run_from_file::<TrainCmdConfig>(a),
        Cmd::Sample(a) => run_from_file::<SampleConfig>(a),
        Cmd::Perturb(a) => run_from_file::<PerturbConfig>(a),
        Cmd::Psnr(a) => run_from_file::<PsnrConfig>(a),
        Cmd::Lipschitz(a) => run_from_file::<LipschitzConfig>(a),
        Cmd::Pairwise(a) => run_from_file::<PairwiseConfig>(a),
        Cmd::Twosample(a) => run_from_file::<TwoSampleConfig>(a),
        Cmd::Inpaint(a) => run_from_file::<InpaintConfig>(a),
    }
}

/// Reads a config file into a JSON tree.
pub fn read_config(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| schema(format!("--config {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| schema(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| schema(format!("{}: {e}", path.display())))
    }
}

pub fn parse_config<T: DeserializeOwned>(value: serde_json::Value) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        schema(format!("field `{path}`: {}", e.inner()))
    })
}

fn run_from_file<C: Command>(args: RunArgs) -> Result<PathBuf, CliError> {
    setup_threads(args.threads)?;
    let value = read_config(&args.config)?;
    let mut cfg: C = parse_config(value)?;
    if let Some(seed) = args.seed {
        *cfg.seed_mut() = seed;
    }
    let base = args
        .config
        .canonicalize()
        .ok()
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    cfg.finalize(&base);
    execute(&cfg, &args.out, None)
}

fn execute<C: Command>(cfg: &C, out: &Path, expected: Option<&[run::FileHash]>) -> Result<PathBuf, CliError> {
    let mut inputs = Inputs::default();
    let outputs = cfg.run(&mut inputs)?;
    if let Some(expected) = expected {
        let strip = |v: &[run::FileHash]| -> Vec<(String, String)> {
            v.iter().map(|h| (h.name.clone(), h.sha256.clone())).collect()
        };
        if strip(expected) != strip(&inputs.records) {
            return Err(runtime("inputs differ from the ones recorded in the manifest"));
        }
    }
    let config = serde_json::to_value(cfg).map_err(runtime)?;
    let dir = create_run_dir(out, C::NAME, &config)?;
    let mut manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        command: C::NAME.to_string(),
        version: VERSION.to_string(),
        config,
        inputs: inputs.records,
        outputs: Vec::new(),
    };
    write_run(&dir, &outputs, &mut manifest)?;
    Ok(dir)
}

fn replay_as<C: Command>(m: &Manifest, out: &Path) -> Result<PathBuf, CliError> {
    let cfg: C = parse_config(m.config.clone())?;
    execute(&cfg, out, Some(&m.inputs))
}

/// Reruns the invocation recorded in `manifest`; the inputs must hash to the
/// recorded values.
pub fn replay(manifest: &Path, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let m = Manifest::load(manifest)?;
    if m.format != MANIFEST_FORMAT {
        return Err(schema(format!("manifest format {:?} is not {MANIFEST_FORMAT}", m.format)));
    }
    let default_out = manifest
        .canonicalize()
        .ok()
        .and_then(|p| p.parent().and_then(Path::parent).map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let out = out.unwrap_or(&default_out);
    match m.command.as_str() {
        GenDataConfig::NAME => replay_as::<GenDataConfig>(&m, out),
        TrainCmdConfig::NAME => replay_as::<TrainCmdConfig>(&m, out),
        SampleConfig::NAME => replay_as::<SampleConfig>(&m, out),
        PerturbConfig::NAME => replay_as::<PerturbConfig>(&m, out),
        PsnrConfig::NAME => replay_as::<PsnrConfig>(&m, out),
        LipschitzConfig::NAME => replay_as::<LipschitzConfig>(&m, out),
        PairwiseConfig::NAME => replay_as::<PairwiseConfig>(&m, out),
        TwoSampleConfig::NAME => replay_as::<TwoSampleConfig>(&m, out),
        InpaintConfig::NAME => replay_as::<InpaintConfig>(&m, out),
        other => Err(schema(format!("manifest command {other:?} is unknown"))),
    }
}
