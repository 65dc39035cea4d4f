//! `polnav` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use polnav_core::config::RunConfig;
use polnav_core::io::{read_pgm, write_pgm16, write_text_atomic, IoError};
use polnav_core::polarimetry::{
    demosaic, extract_solar_vector, write_superpixel_csv, MosaicPattern, PolarError,
};
use polnav_core::sim::{
    batch_stats_text, run_batch, run_scenario, summarize, write_run_csv, SimError,
};
use polnav_core::sky::{render_frame, write_truth_sidecar, SkyScene};
use polnav_core::sun::{enu_from_az_el, solar_position};
use polnav_core::Dcm;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_BAD_DIMENSIONS: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "polnav",
    version,
    about = "Polarized-skylight / GNSS / INS navigation toolkit"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config value.
    #[arg(long, global = true, env = "POLNAV_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Parse and check the configuration, then exit.
    #[arg(long, global = true)]
    validate_only: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Recover the bi-directional sun vector from a 16-bit PGM mosaic.
    Extract {
        image: PathBuf,
        /// Mosaic layout: 90-45-135-0 (default), 45-90-0-135, 135-0-90-45 or 0-135-45-90,
        /// listing top-left, top-right, bottom-left, bottom-right.
        #[arg(long, default_value = "90-45-135-0")]
        pattern: String,
        /// Also write per-superpixel Stokes/DOP/AOP to this CSV.
        #[arg(long)]
        superpixels: Option<PathBuf>,
    },
    /// Run one fusion scenario and write the CSV record and summary.
    Run,
    /// Run a Monte-Carlo batch over consecutive seeds.
    Batch {
        /// Number of runs; overrides the config value.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Render a synthetic sky image plus its truth sidecar.
    Synth {
        /// Sun azimuth (clockwise from north); with --elevation-deg overrides the ephemeris.
        #[arg(long, requires = "elevation_deg")]
        azimuth_deg: Option<f64>,
        #[arg(long, requires = "azimuth_deg")]
        elevation_deg: Option<f64>,
        /// Output file stem inside the output directory.
        #[arg(long, default_value = "sky")]
        name: String,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Degenerate(String),
    BadDimensions(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Degenerate(_) => EXIT_DEGENERATE,
            Failure::BadDimensions(_) => EXIT_BAD_DIMENSIONS,
            Failure::Other(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(m) | Failure::Degenerate(m) | Failure::BadDimensions(m) => m.clone(),
            Failure::Other(e) => format!("{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn polar_failure(e: PolarError) -> Failure {
    match e {
        PolarError::BadDimensions { .. } => Failure::BadDimensions(e.to_string()),
        PolarError::DegenerateGeometry { .. } | PolarError::InsufficientSamples(_) => {
            Failure::Degenerate(e.to_string())
        }
        PolarError::BadIntrinsics(_) => Failure::Config(e.to_string()),
        other => Failure::Other(other.into()),
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Invalid(m) => Failure::Config(m),
        other => Failure::Other(other.into()),
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn parse_pattern(text: &str) -> Result<MosaicPattern, Failure> {
    match text {
        "90-45-135-0" => Ok(MosaicPattern::Tl90Tr45Bl135Br0),
        "45-90-0-135" => Ok(MosaicPattern::Tl45Tr90Bl0Br135),
        "135-0-90-45" => Ok(MosaicPattern::Tl135Tr0Bl90Br45),
        "0-135-45-90" => Ok(MosaicPattern::Tl0Tr135Bl45Br90),
        other => Err(Failure::Config(format!("unknown mosaic pattern `{other}`"))),
    }
}

fn cmd_extract(
    cfg: &RunConfig,
    image: &Path,
    pattern: &str,
    superpixels: Option<&Path>,
) -> Result<(), Failure> {
    let pattern = parse_pattern(pattern)?;
    let frame = read_pgm(image, pattern).map_err(|e| match e {
        IoError::Io { .. } => Failure::Other(anyhow::Error::new(e)),
        other => Failure::Config(format!("{}: {other}", image.display())),
    })?;
    let mut camera = cfg.psns.camera.clone();
    camera.width = frame.width;
    camera.height = frame.height;
    let cam = camera.intrinsics();
    let extract = cfg.psns.extract;
    let result = extract_solar_vector(&frame, &cam, &extract).map_err(polar_failure)?;
    if let Some(path) = superpixels {
        let sp = demosaic(&frame).map_err(polar_failure)?;
        write_superpixel_csv(path, &sp, &extract).context("writing superpixel CSV")?;
    }
    let s = result.solar;
    println!(
        "solar_vector_body: {} {} {}",
        s.vector.x, s.vector.y, s.vector.z
    );
    println!("lambda_min: {}", s.min_eigenvalue);
    println!("eigen_gap: {}", s.eigen_gap);
    println!("trace: {}", s.trace);
    println!("sample_count: {}", s.sample_count);
    println!("superpixels: {}", result.superpixels);
    Ok(())
}

fn cmd_run(cfg: &RunConfig) -> Result<(), Failure> {
    let sc = cfg
        .to_scenario()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let record = run_scenario(&sc, cfg.seed).map_err(sim_failure)?;
    let dir = &cfg.output.dir;
    let csv = dir.join(&cfg.output.run_csv);
    write_run_csv(&csv, &record).map_err(sim_failure)?;
    let summary = summarize(&record).to_text(&record);
    write_text_atomic(&dir.join(&cfg.output.summary), &summary).context("writing summary")?;
    print!("{summary}");
    println!("wrote {}", csv.display());
    Ok(())
}

fn cmd_batch(cfg: &RunConfig, runs: Option<usize>) -> Result<(), Failure> {
    let sc = cfg
        .to_scenario()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let n = runs.unwrap_or(cfg.output.batch_runs);
    if n == 0 {
        return Err(Failure::Config("--runs must be at least 1".into()));
    }
    let rows = run_batch(&sc, cfg.seed, n).map_err(sim_failure)?;
    let text = batch_stats_text(&rows);
    let path = cfg.output.dir.join(&cfg.output.batch_stats);
    write_text_atomic(&path, &text).context("writing batch statistics")?;
    println!("runs: {n}");
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, az_el: Option<(f64, f64)>, name: &str) -> Result<(), Failure> {
    let sc = cfg
        .to_scenario()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let sun = match az_el {
        Some((az, el)) => enu_from_az_el(az.to_radians(), el.to_radians()),
        None => solar_position(&sc.start_time, &sc.profile.start).vector,
    };
    let attitude = Dcm::from_euler(&sc.profile.attitude);
    let mut scene = SkyScene::new(sun, attitude, sc.psns.camera);
    scene.max_dop = sc.psns.max_dop;
    scene.base_intensity = sc.psns.base_intensity;
    scene.intensity_noise = sc.psns.intensity_noise;
    scene.aop_noise = sc.psns.aop_noise;
    let frame = render_frame(&scene, cfg.seed);
    let dir = &cfg.output.dir;
    let image = dir.join(format!("{name}.pgm"));
    write_pgm16(&image, &frame).context("writing image")?;
    write_truth_sidecar(&dir.join(format!("{name}.toml")), &scene, cfg.seed)
        .context("writing truth sidecar")?;
    println!("wrote {}", image.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.common)?;
    if cli.common.validate_only {
        cfg.to_scenario()
            .map_err(|e| Failure::Config(e.to_string()))?;
        println!("configuration OK");
        return Ok(());
    }
    match &cli.command {
        Command::Extract {
            image,
            pattern,
            superpixels,
        } => cmd_extract(&cfg, image, pattern, superpixels.as_deref()),
        Command::Run => cmd_run(&cfg),
        Command::Batch { runs } => cmd_batch(&cfg, *runs),
        Command::Synth {
            azimuth_deg,
            elevation_deg,
            name,
        } => cmd_synth(&cfg, azimuth_deg.zip(*elevation_deg), name),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
