//! `autocalib` command-line tool.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autocalib::extrinsics::{ExtrinsicRun, VoteGrid};
use autocalib::io::{
    load_segment_file, read_json, write_json, ExtrinsicFile, IntrinsicFile, TruthFile,
};
use autocalib::oracle::GroundTruth;
use autocalib::topview::{RemapFile, Sampling};
use autocalib::{
    calibrate_extrinsics, calibrate_intrinsics, evaluate_recovery, generate_scene, load_tracks,
    topview_grid, CameraCalibration, ExtrinsicResult, IntrinsicResult, KeypointMatch,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: autocalib::Error,
    },
    #[error("{stage}: {message}")]
    Image {
        stage: &'static str,
        message: String,
    },
}

impl CliError {
    fn to_json(&self) -> serde_json::Value {
        let (stage, kind) = match self {
            CliError::Config(_) => ("config", "ConfigError"),
            CliError::Stage { stage, source } => (*stage, source.kind()),
            CliError::Image { stage, .. } => (*stage, "ImageError"),
        };
        json!({"error": {"stage": stage, "kind": kind, "message": self.to_string()}})
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for autocalib::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "autocalib",
    version,
    about = "Traffic camera calibration from vehicle motion"
)]
struct Cli {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (also the default location of inputs).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene: tracks, segments and ground truth.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        pitch_deg: Option<f64>,
    },
    /// Focal length and distortion from trajectories.
    Intrinsic {
        #[arg(long)]
        tracks: Option<PathBuf>,
    },
    /// Rotation and translation from matched keypoints.
    Extrinsic {
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[command(flatten)]
        extrinsic: ExtrinsicFlags,
    },
    /// Both stages.
    Calibrate {
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        segments: Option<PathBuf>,
        #[command(flatten)]
        extrinsic: ExtrinsicFlags,
    },
    /// Score a calibration against ground truth.
    Evaluate {
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[arg(long)]
        extrinsics: Option<PathBuf>,
    },
    /// Ground-plane remap grid, optionally applied to a PNG frame.
    Topview {
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[arg(long)]
        extrinsics: Option<PathBuf>,
        /// Source frame to warp into `topview.png`.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<f64>,
        #[arg(long)]
        bilinear: bool,
    },
}

#[derive(Debug, Args)]
struct ExtrinsicFlags {
    /// Camera height above the ground plane.
    #[arg(long)]
    height: Option<f64>,
    #[arg(long)]
    k_sigma: Option<f64>,
    #[arg(long)]
    grid_extent: Option<f64>,
    /// Also write the vote accumulators as PNG images.
    #[arg(long)]
    vote_maps: bool,
}

impl ExtrinsicFlags {
    fn apply(&self, config: &mut PipelineConfig) {
        if let Some(h) = self.height {
            config.camera_height = Some(h);
        }
        if let Some(k) = self.k_sigma {
            config.extrinsic.k_sigma = k;
        }
        if let Some(e) = self.grid_extent {
            config.extrinsic.grid.extent_factor = e;
        }
        config.vote_maps |= self.vote_maps;
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AUTOCALIB_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", config.output_dir.display())))?;

    match cli.command {
        Command::Simulate {
            seed,
            noise_sigma,
            pitch_deg,
        } => {
            let scene = &mut config.scene;
            if let Some(s) = seed {
                scene.seed = s;
            }
            if let Some(s) = noise_sigma {
                scene.noise_sigma = s;
            }
            if let Some(p) = pitch_deg {
                scene.pitch_deg = p;
            }
            simulate(&config)
        }
        Command::Intrinsic { tracks } => {
            config.tracks = tracks.or(config.tracks);
            intrinsic(&config).map(|_| ())
        }
        Command::Extrinsic {
            segments,
            intrinsics,
            extrinsic: flags,
        } => {
            flags.apply(&mut config);
            config.segments = segments.or(config.segments);
            config.intrinsics = intrinsics.or(config.intrinsics);
            let height = config.require_height()?;
            let intrinsic_result = load_intrinsics(&config, "extrinsic")?;
            extrinsic(&config, &intrinsic_result, height)
        }
        Command::Calibrate {
            tracks,
            segments,
            extrinsic: flags,
        } => {
            flags.apply(&mut config);
            config.tracks = tracks.or(config.tracks);
            config.segments = segments.or(config.segments);
            let height = config.require_height()?;
            let intrinsic_result = intrinsic(&config)?;
            extrinsic(&config, &intrinsic_result, height)
        }
        Command::Evaluate {
            truth,
            intrinsics,
            extrinsics,
        } => {
            config.truth = truth.or(config.truth);
            config.intrinsics = intrinsics.or(config.intrinsics);
            config.extrinsics = extrinsics.or(config.extrinsics);
            evaluate(&config)
        }
        Command::Topview {
            intrinsics,
            extrinsics,
            image,
            resolution,
            bilinear,
        } => {
            config.intrinsics = intrinsics.or(config.intrinsics);
            config.extrinsics = extrinsics.or(config.extrinsics);
            if let Some(r) = resolution {
                config.topview.resolution = r;
            }
            let sampling = if bilinear {
                Sampling::Bilinear
            } else {
                Sampling::Nearest
            };
            topview(&config, image.as_deref(), sampling)
        }
    }
}

fn write_text(path: &Path, text: &str, stage: &'static str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Stage {
        stage,
        source: e.into(),
    })
}

fn simulate(config: &PipelineConfig) -> Result<(), CliError> {
    let scene = generate_scene(&config.scene).stage("simulate")?;
    write_text(&config.output(TRACKS_FILE), &scene.tracks_json, "simulate")?;
    write_text(
        &config.output(SEGMENTS_FILE),
        &scene.segments_json,
        "simulate",
    )?;
    write_text(&config.output(TRUTH_FILE), &scene.truth_json, "simulate")?;
    log::info!(
        "{} tracks and {} matches written to {}",
        scene.tracks.len(),
        scene.matches.len(),
        config.output_dir.display()
    );
    Ok(())
}

fn intrinsic(config: &PipelineConfig) -> Result<IntrinsicResult, CliError> {
    let path = config.input(&config.tracks, TRACKS_FILE);
    let (meta, tracks) = load_tracks(&path).stage("intrinsic")?;
    let result = calibrate_intrinsics(&meta, &tracks, &config.intrinsic).stage("intrinsic")?;
    write_json(&config.output(INTRINSICS_FILE), &result.to_file()).stage("intrinsic")?;
    log::info!(
        "focal length {:.3} px, mean track sse {:.4} -> {:.4}",
        result.intrinsics.focal(),
        result.mean_sse_before(),
        result.mean_sse_after()
    );
    Ok(result)
}

fn extrinsic(
    config: &PipelineConfig,
    intrinsic_result: &IntrinsicResult,
    height: f64,
) -> Result<(), CliError> {
    let path = config.input(&config.segments, SEGMENTS_FILE);
    let file = load_segment_file(&path).stage("extrinsic")?;
    let mut settings = config.extrinsic;
    if settings.stride != file.stride {
        log::warn!(
            "segment file stride {} overrides configured stride {}",
            file.stride,
            settings.stride
        );
        settings.stride = file.stride;
    }
    let matches: Vec<KeypointMatch> = file
        .matches
        .iter()
        .copied()
        .map(KeypointMatch::from_tuple)
        .collect();
    let run: ExtrinsicRun =
        calibrate_extrinsics(&matches, intrinsic_result, &settings, height).stage("extrinsic")?;
    write_json(&config.output(EXTRINSICS_FILE), &run.result.to_file()).stage("extrinsic")?;
    if config.vote_maps {
        save_vote_map(&run.grids.0, &config.output(VOTES_X_FILE))?;
        save_vote_map(&run.grids.1, &config.output(VOTES_Y_FILE))?;
    }
    Ok(())
}

fn save_vote_map(grid: &VoteGrid, path: &Path) -> Result<(), CliError> {
    let image = image::GrayImage::from_raw(grid.cols() as u32, grid.rows() as u32, grid.to_gray8())
        .expect("vote map buffer matches grid size");
    image.save(path).map_err(|e| CliError::Image {
        stage: "extrinsic",
        message: format!("{}: {e}", path.display()),
    })
}

fn load_extrinsics(
    config: &PipelineConfig,
    stage: &'static str,
) -> Result<ExtrinsicResult, CliError> {
    let path = config.input(&config.extrinsics, EXTRINSICS_FILE);
    let file: ExtrinsicFile = read_json(&path).stage(stage)?;
    ExtrinsicResult::from_file(&file).stage(stage)
}

fn load_intrinsics(
    config: &PipelineConfig,
    stage: &'static str,
) -> Result<IntrinsicResult, CliError> {
    let path = config.input(&config.intrinsics, INTRINSICS_FILE);
    let file: IntrinsicFile = read_json(&path).stage(stage)?;
    IntrinsicResult::from_file(&file).stage(stage)
}

fn evaluate(config: &PipelineConfig) -> Result<(), CliError> {
    let truth_path = config.input(&config.truth, TRUTH_FILE);
    let truth_file: TruthFile = read_json(&truth_path).stage("evaluate")?;
    let truth = GroundTruth::from_file(&truth_file).stage("evaluate")?;
    let intrinsic_result = load_intrinsics(config, "evaluate")?;
    // the extrinsic stage is optional; evaluate whatever is present
    let extrinsic_path = config.input(&config.extrinsics, EXTRINSICS_FILE);
    let extrinsic_result = if config.extrinsics.is_some() || extrinsic_path.exists() {
        Some(load_extrinsics(config, "evaluate")?)
    } else {
        None
    };
    let report = evaluate_recovery(&truth, &intrinsic_result, extrinsic_result.as_ref());
    write_json(&config.output(REPORT_FILE), &report).stage("evaluate")?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn topview(
    config: &PipelineConfig,
    image: Option<&Path>,
    sampling: Sampling,
) -> Result<(), CliError> {
    let intrinsic_result = load_intrinsics(config, "topview")?;
    let extrinsic_result = load_extrinsics(config, "topview")?;
    let calibration = CameraCalibration::from_results(&intrinsic_result, &extrinsic_result);
    let grid = topview_grid(&calibration, &config.topview).stage("topview")?;
    write_json(&config.output(TOPVIEW_GRID_FILE), &RemapFile::from(&grid)).stage("topview")?;
    log::info!(
        "{} of {} top-view cells are visible",
        grid.valid_count(),
        grid.cols * grid.rows
    );
    if let Some(path) = image {
        let image_error = |e: image::ImageError| CliError::Image {
            stage: "topview",
            message: format!("{}: {e}", path.display()),
        };
        let frame = image::open(path).map_err(image_error)?.to_rgb8();
        let k = intrinsic_result.intrinsics;
        if frame.dimensions() != (k.width(), k.height()) {
            return Err(CliError::Image {
                stage: "topview",
                message: format!(
                    "{} is {}x{}, calibration is for {}x{}",
                    path.display(),
                    frame.width(),
                    frame.height(),
                    k.width(),
                    k.height()
                ),
            });
        }
        let warped = grid.apply(
            frame.as_raw(),
            k.width() as usize,
            k.height() as usize,
            3,
            sampling,
        );
        image::RgbImage::from_raw(grid.cols as u32, grid.rows as u32, warped)
            .expect("warp buffer matches grid size")
            .save(config.output(TOPVIEW_IMAGE_FILE))
            .map_err(image_error)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> Result<(), CliError> {
        run(Cli::try_parse_from(std::iter::once("autocalib").chain(args.iter().copied())).unwrap())
    }

    #[test]
    fn extrinsic_without_height_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let err = run_args(&["extrinsic", "-o", out]).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert_eq!(err.to_json()["error"]["kind"], "ConfigError");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn empty_tracks_file_is_a_stage_error() {
        let dir = tempfile::tempdir().unwrap();
        let tracks = dir.path().join("empty.json");
        std::fs::write(
            &tracks,
            r#"{"schema":"autocalib-tracks/1","video":{"width":1280,"height":720,"frame_count":10,"fps":30.0},"tracks":[]}"#,
        )
        .unwrap();
        let err = run_args(&[
            "intrinsic",
            "-o",
            dir.path().to_str().unwrap(),
            "--tracks",
            tracks.to_str().unwrap(),
        ])
        .unwrap_err();
        let json = err.to_json();
        assert_eq!(json["error"]["kind"], "NoTracks");
        assert_eq!(json["error"]["stage"], "intrinsic");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn missing_input_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_args(&["evaluate", "-o", dir.path().to_str().unwrap()]).unwrap_err();
        assert_eq!(err.to_json()["error"]["stage"], "evaluate");
        assert!(err.to_string().contains("truth.json"), "{err}");
    }

    #[test]
    fn bad_config_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, "{\"camera_height\": \"tall\"}").unwrap();
        let err = run_args(&["simulate", "--config", path.to_str().unwrap()]).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(
            &path,
            r#"{"camera_height": 4.0, "extrinsic": {"k_sigma": 1.0}}"#,
        )
        .unwrap();
        let cli = Cli::try_parse_from([
            "autocalib",
            "--config",
            path.to_str().unwrap(),
            "calibrate",
            "--height",
            "7.5",
        ])
        .unwrap();
        let mut config = PipelineConfig::load(cli.config.as_ref().unwrap()).unwrap();
        let Command::Calibrate { extrinsic, .. } = cli.command else {
            panic!("wrong subcommand")
        };
        extrinsic.apply(&mut config);
        assert_eq!(config.camera_height, Some(7.5));
        assert_eq!(config.extrinsic.k_sigma, 1.0);
    }
}
