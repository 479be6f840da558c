use thiserror::Error;

/// Every failure the calibration pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive depth {depth} in the camera frame")]
    NonPositiveDepth { depth: f64 },
    #[error("radius {ratio} focal lengths is beyond the equidistant hemisphere limit")]
    BeyondHemisphere { ratio: f64 },
    #[error("ground-plane homography is degenerate (relative determinant {rel_det:e})")]
    DegenerateHomography { rel_det: f64 },
    #[error("pixel maps to the horizon line of the ground plane")]
    PointAtHorizon,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },
    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersionMismatch { expected: String, found: String },
    #[error("line fit needs at least two distinct points")]
    DegeneratePoints,

    #[error("no tracks available")]
    NoTracks,
    #[error("straightness objective is flat over the search range (spread {spread:e})")]
    DegenerateObjective { spread: f64 },
    #[error("distortion design matrix is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("invalid focal search configuration: {0}")]
    InvalidSearch(String),

    #[error("orientation histogram is unimodal")]
    Unimodal,
    #[error("no segment within {half_width_deg} degrees of peak {peak_deg}")]
    EmptyCluster { peak_deg: f64, half_width_deg: f64 },
    #[error("vote grid has no votes")]
    EmptyGrid,
    #[error("vanishing points are inconsistent with orthogonal directions (radicand {radicand})")]
    InconsistentVps { radicand: f64 },
    #[error("vanishing directions are nearly parallel (cosine {cosine})")]
    ParallelVps { cosine: f64 },
    #[error("matrix is singular")]
    SingularInput,
    #[error("camera optical axis is parallel to the ground (r33 = {r33})")]
    HorizontalCamera { r33: f64 },
    #[error("not enough segments: {0}")]
    NotEnoughSegments(usize),
    #[error("invalid extrinsic configuration: {0}")]
    InvalidExtrinsicConfig(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("no trajectory projects inside the image")]
    CameraSeesNothing,

    #[error("invalid top-view spec: {0}")]
    InvalidTopview(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonPositiveDepth { .. } => "NonPositiveDepth",
            Error::BeyondHemisphere { .. } => "BeyondHemisphere",
            Error::DegenerateHomography { .. } => "DegenerateHomography",
            Error::PointAtHorizon => "PointAtHorizon",
            Error::InvalidIntrinsics(_) => "InvalidIntrinsics",
            Error::Parse { .. } => "ParseError",
            Error::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
            Error::DegeneratePoints => "DegeneratePoints",
            Error::NoTracks => "NoTracks",
            Error::DegenerateObjective { .. } => "DegenerateObjective",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::InvalidSearch(_) => "InvalidSearch",
            Error::Unimodal => "Unimodal",
            Error::EmptyCluster { .. } => "EmptyCluster",
            Error::EmptyGrid => "EmptyGrid",
            Error::InconsistentVps { .. } => "InconsistentVPs",
            Error::ParallelVps { .. } => "ParallelVPs",
            Error::SingularInput => "SingularInput",
            Error::HorizontalCamera { .. } => "HorizontalCamera",
            Error::NotEnoughSegments(_) => "NotEnoughSegments",
            Error::InvalidExtrinsicConfig(_) => "InvalidExtrinsicConfig",
            Error::InvalidScene(_) => "InvalidScene",
            Error::CameraSeesNothing => "CameraSeesNothing",
            Error::InvalidTopview(_) => "InvalidTopview",
            Error::Io(_) => "Io",
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
