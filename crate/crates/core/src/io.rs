//! On-disk JSON formats shared by the pipeline stages and the tracker
//! front end, plus a deterministic writer.
//!
//! Floats are always written with 17 significant digits in exponent form so
//! that identical inputs give byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACKS_SCHEMA: &str = "autocalib-tracks/1";
pub const SEGMENTS_SCHEMA: &str = "autocalib-segments/1";

/// Clip metadata carried by a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFile {
    pub schema: String,
    pub video: VideoMeta,
    pub tracks: Vec<TrackRecord>,
}

/// One track: `[frame, u, v]` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: i64,
    pub points: Vec<(i64, f64, f64)>,
}

/// Matched keypoints between frame pairs: `[frame_a, frame_b, u1, v1, u2, v2]`
/// in distorted pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFile {
    pub schema: String,
    pub stride: u32,
    pub matches: Vec<(i64, i64, f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResidual {
    pub track: i64,
    pub before: f64,
    pub after: f64,
}

/// Output of the intrinsic stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicFile {
    pub f: f64,
    #[serde(rename = "K")]
    pub k: [[f64; 3]; 3],
    pub dist: [f64; 3],
    #[serde(default)]
    pub curve: Vec<(f64, f64)>,
    #[serde(default)]
    pub residuals: Vec<TrackResidual>,
}

/// Output of the extrinsic stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicFile {
    pub f_new: f64,
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
    pub vp_x: [f64; 2],
    pub vp_y: [f64; 2],
    pub height: f64,
}

/// Ground truth written by the scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub f: f64,
    pub dist_model: String,
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
    pub height: f64,
    pub width: u32,
    pub image_height: u32,
    pub degenerate_vps: bool,
}

struct FixedFloatFormatter;

impl serde_json::ser::Formatter for FixedFloatFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + Write,
    {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes with the fixed float format and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloatFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::parse("serialize", e.to_string()))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| with_path(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?).map_err(|e| with_path(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    from_json_str(&text, &path.display().to_string())
}

pub fn from_json_str<T: for<'de> Deserialize<'de>>(text: &str, context: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::parse(
            format!("{context}:{}:{}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

#[derive(Deserialize)]
struct SchemaHeader {
    schema: Option<String>,
}

/// Checks the `schema` tag before the full parse so that a version mismatch
/// is reported as such rather than as a field error.
pub(crate) fn check_schema(text: &str, expected: &str, context: &str) -> Result<()> {
    let header: SchemaHeader = from_json_str(text, context)?;
    match header.schema {
        Some(found) if found == expected => Ok(()),
        Some(found) => Err(Error::SchemaVersionMismatch {
            expected: expected.to_string(),
            found,
        }),
        None => Err(Error::parse(context, "missing field `schema`")),
    }
}

pub fn parse_segment_file(text: &str, context: &str) -> Result<SegmentFile> {
    check_schema(text, SEGMENTS_SCHEMA, context)?;
    from_json_str(text, context)
}

pub fn load_segment_file(path: &Path) -> Result<SegmentFile> {
    let text = read_text(path)?;
    parse_segment_file(&text, &path.display().to_string())
}

pub fn matrix_to_rows(m: &nalgebra::Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

pub fn rows_to_matrix(rows: &[[f64; 3]; 3]) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::from_fn(|i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_use_seventeen_significant_digits() {
        let s = to_json_string(&vec![0.1f64, 800.0, -2.5e-7]).unwrap();
        assert_eq!(
            s,
            "[1.0000000000000001e-1,8.0000000000000000e2,-2.4999999999999999e-7]\n"
        );
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 800.0, -2.5e-7]);
    }

    #[test]
    fn segment_schema_mismatch() {
        let text = r#"{"schema":"autocalib-segments/2","stride":6,"matches":[]}"#;
        assert!(matches!(
            parse_segment_file(text, "mem"),
            Err(Error::SchemaVersionMismatch { .. })
        ));
        let text = r#"{"schema":"autocalib-segments/1","stride":6,"matches":[[0,6,1,2,3,4]]}"#;
        let file = parse_segment_file(text, "mem").unwrap();
        assert_eq!(file.matches, vec![(0, 6, 1.0, 2.0, 3.0, 4.0)]);
    }
}
