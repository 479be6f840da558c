//! Keypoint trajectories: loading, the coverage and straightness filters,
//! selection of the calibration set, and orthogonal line fitting.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelPoint;
use crate::io::{self, TrackFile, TrackRecord, VideoMeta, TRACKS_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub frame: i64,
    pub point: PixelPoint,
}

/// Pixel positions of one keypoint over strictly increasing frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    id: i64,
    samples: Vec<TrackSample>,
}

impl Track {
    pub fn new(id: i64, samples: Vec<TrackSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::parse(
                format!("track {id}"),
                format!("needs at least 2 samples, found {}", samples.len()),
            ));
        }
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].frame <= pair[0].frame {
                return Err(Error::parse(
                    format!("track {id} sample {}", i + 1),
                    format!(
                        "frame indices must strictly increase ({} after {})",
                        pair[1].frame, pair[0].frame
                    ),
                ));
            }
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.point.u.is_finite() && s.point.v.is_finite()))
        {
            return Err(Error::parse(
                format!("track {id} sample {i}"),
                format!("non-finite position ({}, {})", s.point.u, s.point.v),
            ));
        }
        Ok(Self { id, samples })
    }

    pub fn from_points(
        id: i64,
        points: impl IntoIterator<Item = (i64, PixelPoint)>,
    ) -> Result<Self> {
        Self::new(
            id,
            points
                .into_iter()
                .map(|(frame, point)| TrackSample { frame, point })
                .collect(),
        )
    }

    pub fn id(&self) -> i64 {
        self.id
    }

    pub fn samples(&self) -> &[TrackSample] {
        &self.samples
    }

    pub fn points(&self) -> impl Iterator<Item = PixelPoint> + '_ {
        self.samples.iter().map(|s| s.point)
    }

    /// Sum of consecutive-sample distances.
    pub fn path_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[0].point.distance(w[1].point))
            .sum()
    }

    /// First-to-last distance.
    pub fn displacement(&self) -> f64 {
        let first = self.samples[0].point;
        let last = self.samples[self.samples.len() - 1].point;
        first.distance(last)
    }

    /// Number of frames between the first and last sample, inclusive.
    pub fn frame_span(&self) -> i64 {
        self.samples[self.samples.len() - 1].frame - self.samples[0].frame + 1
    }

    /// Path length over displacement; infinite for a stationary track.
    pub fn tortuosity(&self) -> f64 {
        let d = self.displacement();
        if d < 1e-6 {
            f64::INFINITY
        } else {
            self.path_length() / d
        }
    }

    fn to_record(&self) -> TrackRecord {
        TrackRecord {
            id: self.id,
            points: self
                .samples
                .iter()
                .map(|s| (s.frame, s.point.u, s.point.v))
                .collect(),
        }
    }
}

/// Parses and validates a trajectory document.
pub fn parse_tracks(text: &str, context: &str) -> Result<(VideoMeta, Vec<Track>)> {
    io::check_schema(text, TRACKS_SCHEMA, context)?;
    let file: TrackFile = io::from_json_str(text, context)?;
    let meta = file.video;
    if meta.width == 0 || meta.height == 0 || meta.frame_count == 0 || !(meta.fps > 0.0) {
        return Err(Error::parse(
            format!("{context}: video"),
            "width, height, frame_count and fps must be positive",
        ));
    }
    let tracks = file
        .tracks
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            Track::from_points(
                rec.id,
                rec.points
                    .into_iter()
                    .map(|(frame, u, v)| (frame, PixelPoint::new(u, v))),
            )
            .map_err(|e| match e {
                Error::Parse {
                    context: c,
                    message,
                } => Error::parse(format!("{context}: tracks[{i}] ({c})"), message),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, tracks))
}

pub fn load_tracks(path: &Path) -> Result<(VideoMeta, Vec<Track>)> {
    let text = crate::io::read_text(path)?;
    parse_tracks(&text, &path.display().to_string())
}

pub fn tracks_to_file(meta: VideoMeta, tracks: &[Track]) -> TrackFile {
    TrackFile {
        schema: TRACKS_SCHEMA.to_string(),
        video: meta,
        tracks: tracks.iter().map(Track::to_record).collect(),
    }
}

/// Thresholds of the two track-rejection rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRules {
    /// Minimum fraction of the clip a track must span.
    pub coverage_min: f64,
    /// Maximum path length over displacement.
    pub tortuosity_max: f64,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            coverage_min: 0.8,
            tortuosity_max: 1.2,
        }
    }
}

/// Keeps tracks that cover enough of the clip and are nearly straight.
pub fn filter_tracks(tracks: &[Track], meta: &VideoMeta, rules: &FilterRules) -> Vec<Track> {
    let frames = meta.frame_count.max(1) as f64;
    tracks
        .iter()
        .filter(|t| t.frame_span() as f64 / frames >= rules.coverage_min)
        .filter(|t| t.tortuosity() <= rules.tortuosity_max)
        .cloned()
        .collect()
}

/// The `n` tracks with the longest pixel path, lower id first on ties.
pub fn select_calibration_tracks(tracks: &[Track], n: usize) -> Vec<Track> {
    let mut ranked: Vec<(f64, &Track)> = tracks.iter().map(|t| (t.path_length(), t)).collect();
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.id.cmp(&b.1.id))
    });
    ranked.into_iter().take(n).map(|(_, t)| t.clone()).collect()
}

/// Line `normal . p = offset` with the summed squared orthogonal residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub normal: (f64, f64),
    pub offset: f64,
    pub sse: f64,
}

impl LineFit {
    pub fn distance(&self, p: PixelPoint) -> f64 {
        self.normal.0 * p.u + self.normal.1 * p.v - self.offset
    }

    /// Line direction angle in radians, in `[0, pi)`.
    pub fn direction_angle(&self) -> f64 {
        let a = (-self.normal.0).atan2(self.normal.1);
        a.rem_euclid(std::f64::consts::PI)
    }
}

/// Total least-squares line through the points.
pub fn fit_line(points: &[PixelPoint]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::DegeneratePoints);
    }
    let n = points.len() as f64;
    let (su, sv) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.u, b + p.v));
    let (cu, cv) = (su / n, sv / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.u - cu, p.v - cv);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let scale = 1.0 + cu.abs().max(cv.abs());
    if sxx + syy <= (1e-12 * scale).powi(2) * n {
        return Err(Error::DegeneratePoints);
    }
    // direction of largest spread
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let normal = (-theta.sin(), theta.cos());
    let offset = normal.0 * cu + normal.1 * cv;
    let sse = points
        .iter()
        .map(|p| {
            let d = normal.0 * (p.u - cu) + normal.1 * (p.v - cv);
            d * d
        })
        .sum();
    Ok(LineFit {
        normal,
        offset,
        sse,
    })
}
