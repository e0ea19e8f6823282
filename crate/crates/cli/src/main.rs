mod commands;
mod config;
mod error;
mod imageio;
mod outputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{ImageFormat, RunConfig, CATALOG_ENV};
use error::CliResult;

#[derive(Parser)]
#[command(name = "sdnp", version, about = "Synthetic defocus noise pattern toolkit")]
struct Cli {
    /// TOML file with parameter defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// One flag per `RunConfig` field.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    block: Option<usize>,
    #[arg(long, global = true)]
    map_smoothing: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    tau_prime: Option<f64>,
    #[arg(long, global = true)]
    grid_step: Option<f64>,
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    format: Option<ImageFormat>,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(k, block, map_smoothing, beta, alpha, tau, tau_prime, grid_step, window, seed, format);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    /// Portraits with a random subject ellipse in focus.
    Portrait,
    /// Fully blurred portraits.
    Full,
    /// Ordinary photos without bokeh.
    Photo,
    /// Stage-light backgrounds.
    Slm,
    /// Half-flat portraits for natural-light extraction (top_/bottom_ sets).
    Nl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Pipeline {
    Detect,
    VerifyBaseline,
    VerifyBpAware,
}

#[derive(Subcommand)]
enum Command {
    /// Render simulated images, the ground-truth pattern and a catalog.
    Simulate {
        #[arg(long, value_enum)]
        kind: SimKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 512)]
        rows: usize,
        #[arg(long, default_value_t = 512)]
        cols: usize,
        #[arg(long, default_value_t = 5.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.01)]
        prnu_strength: f64,
        /// Sensor noise std.
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        /// Pattern seed; defaults to `--seed`.
        #[arg(long)]
        pattern_seed: Option<u64>,
        /// Sensor fingerprint seed; defaults to `--seed` + 1.
        #[arg(long)]
        device_seed: Option<u64>,
    },
    /// Extract a base pattern from two half-frame image sets.
    ExtractBp {
        #[arg(long, value_parser = ["nl", "slm"])]
        mode: String,
        #[arg(long, num_args = 1.., required = true)]
        top: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        bottom: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        iso: u32,
        /// ISO gain for stage-light extraction; estimated from the first
        /// top image when omitted.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the ISO gain of stage-light backgrounds.
    EstimateIso {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Use exact Gaussian bin masses instead of Monte Carlo.
        #[arg(long)]
        exact: bool,
        /// Keep the zero bin in the divergence.
        #[arg(long)]
        keep_zero_bin: bool,
        /// Record the estimate in this ISO table (one image only).
        #[arg(long, requires = "iso")]
        table: Option<PathBuf>,
        #[arg(long)]
        iso: Option<u32>,
    },
    /// Estimate the brightness curve from flat captures.
    EstimateG {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 256)]
        patch: usize,
        #[arg(long, default_value_t = 0)]
        iso: u32,
        #[arg(long, value_parser = ["eigen", "ls"], default_value = "eigen")]
        method: String,
        /// Pattern file, required by the least-squares method.
        #[arg(long)]
        pattern: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search images for catalog patterns.
    Detect {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long, env = CATALOG_ENV)]
        catalog: PathBuf,
        /// Write every (image, id, pose, ncc) score here.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Local correlation map and exclusion mask of one image.
    Map {
        image: PathBuf,
        #[arg(long, env = CATALOG_ENV)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Estimate a sensor fingerprint, optionally excluding pattern regions.
    ExtractPrnu {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        bp_aware: bool,
        #[arg(long, env = CATALOG_ENV)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Camera verification of test images against a fingerprint.
    Verify {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        fingerprint: PathBuf,
        #[arg(long, env = CATALOG_ENV)]
        catalog: Option<PathBuf>,
        /// Unmasked score against `--tau`.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        search_orientations: bool,
    },
    /// ROC of one pipeline over labelled images.
    Roc {
        #[arg(long, num_args = 1.., required = true)]
        positives: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        negatives: Vec<PathBuf>,
        #[arg(long, value_enum)]
        pipeline: Pipeline,
        #[arg(long, env = CATALOG_ENV)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        fingerprint: Option<PathBuf>,
        /// Downscale factors; one curve per factor.
        #[arg(long, num_args = 1.., default_values_t = [1.0])]
        scale_factors: Vec<f64>,
        #[arg(long, default_value_t = sdnp_core::roc::DEFAULT_PARTIAL_FPR)]
        partial_fpr: f64,
        /// Write `sf threshold tpr fpr` rows here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    use commands as c;
    match cli.command {
        Command::Simulate { kind, out, count, rows, cols, gamma, prnu_strength, theta, pattern_seed, device_seed } => {
            c::simulate(&cfg, &c::SimulateArgs { kind, out, count, rows, cols, gamma, prnu_strength, theta, pattern_seed, device_seed })
        }
        Command::ExtractBp { mode, top, bottom, iso, gamma, id, out } => c::extract_bp(&cfg, &mode, &top, &bottom, iso, gamma, id, &out),
        Command::EstimateIso { images, exact, keep_zero_bin, table, iso } => c::estimate_iso(&cfg, &images, exact, keep_zero_bin, table.as_deref(), iso),
        Command::EstimateG { images, gamma, patch, iso, method, pattern, out } => {
            c::estimate_g(&cfg, &images, gamma, patch, iso, &method, pattern.as_deref(), &out)
        }
        Command::Detect { images, catalog, scores } => c::detect(&cfg, &images, &catalog, scores.as_deref()),
        Command::Map { image, catalog, out, mask } => c::map(&cfg, &image, &catalog, &out, mask.as_deref()),
        Command::ExtractPrnu { images, bp_aware, catalog, out } => c::extract_prnu(&cfg, &images, bp_aware, catalog.as_deref(), &out),
        Command::Verify { images, fingerprint, catalog, baseline, search_orientations } => {
            c::verify(&cfg, &images, &fingerprint, catalog.as_deref(), baseline, search_orientations)
        }
        Command::Roc { positives, negatives, pipeline, catalog, fingerprint, scale_factors, partial_fpr, out } => c::roc(
            &cfg,
            &c::RocArgs { positives, negatives, pipeline, catalog, fingerprint, scale_factors, partial_fpr, out },
        ),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdnp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
