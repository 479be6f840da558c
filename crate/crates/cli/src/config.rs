use std::path::{Path, PathBuf};

use autocalib::{ExtrinsicConfig, IntrinsicConfig, SceneSpec, TopviewSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run needs; loaded from one JSON file, then overridden by
/// command-line flags. Relative input paths default to the stable file names
/// inside the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tracks: Option<PathBuf>,
    pub segments: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
    pub extrinsics: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Camera height above the ground; the only metric input.
    pub camera_height: Option<f64>,
    pub intrinsic: IntrinsicConfig,
    pub extrinsic: ExtrinsicConfig,
    pub scene: SceneSpec,
    pub topview: TopviewSpec,
    pub output_dir: PathBuf,
    pub vote_maps: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tracks: None,
            segments: None,
            intrinsics: None,
            extrinsics: None,
            truth: None,
            camera_height: None,
            intrinsic: IntrinsicConfig::default(),
            extrinsic: ExtrinsicConfig::default(),
            scene: SceneSpec::default(),
            topview: TopviewSpec {
                x_min: -20.0,
                x_max: 20.0,
                y_min: -20.0,
                y_max: 20.0,
                resolution: 10.0,
            },
            output_dir: PathBuf::from("out"),
            vote_maps: false,
        }
    }
}

pub const TRACKS_FILE: &str = "tracks.json";
pub const SEGMENTS_FILE: &str = "segments.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const INTRINSICS_FILE: &str = "intrinsics.json";
pub const EXTRINSICS_FILE: &str = "extrinsics.json";
pub const REPORT_FILE: &str = "report.json";
pub const TOPVIEW_GRID_FILE: &str = "topview_grid.json";
pub const TOPVIEW_IMAGE_FILE: &str = "topview.png";
pub const VOTES_X_FILE: &str = "votes_x.png";
pub const VOTES_Y_FILE: &str = "votes_y.png";

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn input(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.output_dir.join(default_name))
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn require_height(&self) -> Result<f64, CliError> {
        match self.camera_height {
            Some(h) if h > 0.0 && h.is_finite() => Ok(h),
            Some(h) => Err(CliError::Config(format!(
                "camera height {h} must be positive"
            ))),
            None => Err(CliError::Config(
                "the extrinsic stage needs the camera height (--height or camera_height)".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let config: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(config, PipelineConfig::default());
        assert_eq!(config.extrinsic.stride, 6);
        assert_eq!(config.intrinsic.track_count, 10);
    }

    #[test]
    fn nested_overrides_keep_other_defaults() {
        let config: PipelineConfig = serde_json::from_str(
            r#"{"camera_height": 12.5, "extrinsic": {"k_sigma": 3.0, "grid": {"extent_factor": 5.0}}}"#,
        )
        .unwrap();
        assert_eq!(config.require_height().unwrap(), 12.5);
        assert_eq!(config.extrinsic.k_sigma, 3.0);
        assert_eq!(config.extrinsic.grid.extent_factor, 5.0);
        assert_eq!(config.extrinsic.half_width_deg, 5.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"hieght": 3}"#).is_err());
    }

    #[test]
    fn missing_or_bad_height_is_a_config_error() {
        let mut config = PipelineConfig::default();
        assert!(matches!(config.require_height(), Err(CliError::Config(_))));
        config.camera_height = Some(-1.0);
        assert!(matches!(config.require_height(), Err(CliError::Config(_))));
    }

    #[test]
    fn inputs_default_to_the_output_directory() {
        let config = PipelineConfig {
            output_dir: PathBuf::from("/tmp/run"),
            ..Default::default()
        };
        assert_eq!(
            config.input(&None, TRACKS_FILE),
            PathBuf::from("/tmp/run/tracks.json")
        );
        let explicit = Some(PathBuf::from("a.json"));
        assert_eq!(
            config.input(&explicit, TRACKS_FILE),
            PathBuf::from("a.json")
        );
    }
}
