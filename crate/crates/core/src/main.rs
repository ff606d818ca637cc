use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use subdoa::eval::{accuracy, run_benchmark, run_pipeline, write_report, ArrayGeometry, BenchmarkConfig, Gating, PipelineConfig, RunOptions, DEFAULT_TOLERANCE_DEG};
use subdoa::eval::pipeline::CovarianceSource;
use subdoa::prototypes::{generate_freefield_set, load_set, save_set, DirectionGrid};
use subdoa::sim::scene::{simulate_scene, ScenarioConfig};
use subdoa::spectra::{Condition, Method};
use subdoa::{wav, Error, Result};

const MIXTURE_FILE: &str = "mixture.wav";
const SCENE_FILE: &str = "scene.json";

#[derive(Parser)]
#[command(name = "subdoa", version, about = "DOA estimation for hearing aids with an external microphone")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene and write the mixture and its description.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate DOAs for a simulated scene directory.
    Run {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        condition: Condition,
        #[arg(long)]
        out: PathBuf,
        /// Pipeline parameters (JSON).
        #[arg(long)]
        pipeline: Option<PathBuf>,
        /// Hearing-aid prototype set written by `protogen`.
        #[arg(long)]
        prototypes: Option<PathBuf>,
        /// Re-simulate the scene truth and gate with it.
        #[arg(long)]
        oracle_gating: bool,
    },
    /// Run the benchmark grid and write CSV, JSON and SVG reports.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        oracle_gating: bool,
        #[arg(long)]
        full_grid: bool,
    },
    /// Generate free-field hearing-aid prototypes.
    Protogen {
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Contents of `scene.json`.
#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    scenario: ScenarioConfig,
    doas_deg: Vec<f64>,
    leading_samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GeometryFile {
    ha_mics: Vec<[f64; 3]>,
    sample_rate: u32,
    frame_len: usize,
    grid_step_deg: f64,
    speed_of_sound: f64,
}

impl Default for GeometryFile {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            ha_mics: subdoa::sim::scene::default_ha_mics(),
            sample_rate: 16000,
            frame_len: p.frame_len,
            grid_step_deg: p.grid_step_deg,
            speed_of_sound: p.speed_of_sound,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn simulate(config: &Path, out: &Path) -> Result<()> {
    let cfg: ScenarioConfig = read_json(config)?;
    let scene = simulate_scene(&cfg, None)?;
    fs::create_dir_all(out)?;
    wav::write_multichannel(out.join(MIXTURE_FILE), &scene.mixture, cfg.sample_rate)?;
    let desc = SceneFile {
        doas_deg: cfg.speaker_doas_deg.clone(),
        leading_samples: scene.truth.leading_samples,
        scenario: cfg,
    };
    fs::write(out.join(SCENE_FILE), serde_json::to_string_pretty(&desc)?)?;
    info!("wrote {}", out.display());
    Ok(())
}

fn run(
    scene_dir: &Path,
    method: Method,
    condition: Condition,
    out: &Path,
    pipeline: Option<&Path>,
    prototypes: Option<&Path>,
    oracle_gating: bool,
) -> Result<()> {
    let desc: SceneFile = read_json(&scene_dir.join(SCENE_FILE))?;
    let (mixture, fs_in) = wav::read_multichannel(scene_dir.join(MIXTURE_FILE))?;
    if fs_in != desc.scenario.sample_rate {
        return Err(Error::Config("mixture sample rate differs from the scene description".into()));
    }
    let cfg: PipelineConfig = match pipeline {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    let geometry = ArrayGeometry {
        ha_mics: desc.scenario.ha_mics.clone(),
        sample_rate: fs_in,
    };
    let truth = if oracle_gating {
        Some(simulate_scene(&desc.scenario, None)?.truth)
    } else {
        None
    };
    let opts = RunOptions {
        gating: if oracle_gating { Gating::Oracle } else { Gating::Estimated },
        covariance: CovarianceSource::Estimated,
        requests: vec![(method, condition)],
        eval_start_frame: desc.leading_samples.div_ceil(cfg.hop()),
        prototypes: prototypes.map(load_set).transpose()?,
    };
    let speakers = desc.doas_deg.len();
    let output = run_pipeline(&mixture, &geometry, speakers, &cfg, &opts, truth.as_ref())?;
    let estimates = &output.estimates[0];

    let mut csv = String::from("frame,time_s");
    for j in 0..speakers {
        let _ = write!(csv, ",doa{}_deg", j + 1);
    }
    csv.push('\n');
    let hop_s = cfg.hop() as f64 / fs_in as f64;
    for e in estimates {
        let _ = write!(csv, "{},{:.4}", e.frame_index, e.frame_index as f64 * hop_s);
        for a in &e.angles {
            match a {
                Some(v) => {
                    let _ = write!(csv, ",{v}");
                }
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out, csv)?;
    let acc = accuracy(estimates, &desc.doas_deg, DEFAULT_TOLERANCE_DEG);
    println!(
        "{method} {}: ACC {:.3} over {} frames ({} without estimate)",
        condition.label(),
        acc.acc,
        acc.frames,
        acc.no_estimate_frames
    );
    Ok(())
}

fn bench(config: Option<&Path>, out: &Path, oracle_gating: bool, full_grid: bool) -> Result<()> {
    let mut cfg: BenchmarkConfig = match config {
        Some(p) => read_json(p)?,
        None => BenchmarkConfig::default(),
    };
    if full_grid {
        cfg = cfg.with_full_grid();
    }
    if oracle_gating {
        cfg.gating = Gating::Oracle;
    }
    let report = run_benchmark(&cfg)?;
    if !report.failures.is_empty() {
        warn!("{} scenarios failed", report.failures.len());
    }
    for p in write_report(&report, out)? {
        info!("wrote {}", p.display());
    }
    for c in &report.summary.conditions {
        println!(
            "{:<5} {:<8} mean ACC {:.3}  min over eMic {:.3}",
            c.method.to_string(),
            c.condition.label(),
            c.mean_acc,
            c.min_emic_mean
        );
    }
    Ok(())
}

fn protogen(geometry: &Path, out: &Path) -> Result<()> {
    let g: GeometryFile = read_json(geometry)?;
    if g.frame_len < 2 || g.frame_len % 2 != 0 {
        return Err(Error::Config("frame_len must be even".into()));
    }
    let grid = DirectionGrid::uniform(g.grid_step_deg)?;
    let set = generate_freefield_set(&g.ha_mics, &grid, g.frame_len / 2 + 1, g.sample_rate, g.speed_of_sound)?;
    save_set(&set, out)?;
    info!("wrote {} directions x {} bins to {}", grid.len(), set.bins, out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, out } => simulate(config, out),
        Command::Run {
            scene,
            method,
            condition,
            out,
            pipeline,
            prototypes,
            oracle_gating,
        } => run(scene, *method, *condition, out, pipeline.as_deref(), prototypes.as_deref(), *oracle_gating),
        Command::Bench {
            config,
            out,
            oracle_gating,
            full_grid,
        } => bench(config.as_deref(), out, *oracle_gating, *full_grid),
        Command::Protogen { geometry, out } => protogen(geometry, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
