//! Ground-plane rectification: a remap grid from a bird's-eye raster of the
//! `Z = 0` plane back into the original (distorted) camera image.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrinsics::ExtrinsicResult;
use crate::geometry::{
    denormalize_point, homography_with_focal, invert_polynomial_undistortion, normalize_pixel,
    pixel_to_ground, DistortionCoefficients, GroundPoint, Intrinsics, PixelPoint, Pose,
};
use crate::intrinsics::{undistort_pixel, IntrinsicResult};

/// Region of the ground plane to render and its sampling density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopviewSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Output pixels per height unit.
    pub resolution: f64,
}

impl TopviewSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::InvalidTopview("ground extent is empty".into()));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::InvalidTopview(format!(
                "resolution {} must be positive",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn cols(&self) -> usize {
        ((self.x_max - self.x_min) * self.resolution).ceil() as usize
    }

    pub fn rows(&self) -> usize {
        ((self.y_max - self.y_min) * self.resolution).ceil() as usize
    }

    /// Ground point at the center of output cell (`row`, `col`). Rows run
    /// from `y_max` downward so north is up.
    pub fn cell_center(&self, row: usize, col: usize) -> GroundPoint {
        GroundPoint::new(
            self.x_min + (col as f64 + 0.5) / self.resolution,
            self.y_max - (row as f64 + 0.5) / self.resolution,
        )
    }

    /// Continuous output coordinates `(col, row)` of a ground point; cell
    /// centers sit at half-integers.
    pub fn ground_to_output(&self, g: GroundPoint) -> (f64, f64) {
        (
            (g.x - self.x_min) * self.resolution,
            (self.y_max - g.y) * self.resolution,
        )
    }
}

/// Everything needed to map between the ground and the source image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraCalibration {
    /// Fisheye-stage intrinsics; the polynomial lives in their normalized
    /// coordinates.
    pub intrinsics: Intrinsics,
    pub coefficients: DistortionCoefficients,
    /// Focal length of the undistorted image, used by the homography.
    pub undistorted_focal: f64,
    pub pose: Pose,
}

impl CameraCalibration {
    pub fn from_results(intrinsic: &IntrinsicResult, extrinsic: &ExtrinsicResult) -> Self {
        Self {
            intrinsics: intrinsic.intrinsics,
            coefficients: intrinsic.coefficients,
            undistorted_focal: extrinsic.f_new,
            pose: extrinsic.pose,
        }
    }

    pub fn homography(&self) -> Result<Matrix3<f64>> {
        homography_with_focal(
            self.undistorted_focal,
            self.intrinsics.principal_point(),
            &self.pose,
        )
    }

    fn ground_to_source(&self, h: &Matrix3<f64>, g: GroundPoint) -> Option<PixelPoint> {
        let hp = h * Vector3::new(g.x, g.y, 1.0);
        // the third coordinate is the camera depth
        if hp.z <= 1e-9 * hp.norm() {
            return None;
        }
        let undistorted = PixelPoint::new(hp.x / hp.z, hp.y / hp.z);
        let n = normalize_pixel(&self.intrinsics, undistorted);
        let d = invert_polynomial_undistortion(n, &self.coefficients)?;
        let src = denormalize_point(&self.intrinsics, d);
        let inside = src.u >= 0.0
            && src.v >= 0.0
            && src.u <= (self.intrinsics.width() - 1) as f64
            && src.v <= (self.intrinsics.height() - 1) as f64;
        inside.then_some(src)
    }

    /// Source pixel back to the ground plane.
    pub fn source_to_ground(&self, src: PixelPoint) -> Result<GroundPoint> {
        let undistorted = undistort_pixel(&self.intrinsics, &self.coefficients, src);
        pixel_to_ground(&self.homography()?, undistorted)
    }
}

/// Source pixel per output cell, row-major; `None` where the cell is not
/// seen by the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RemapGrid {
    pub spec: TopviewSpec,
    pub cols: usize,
    pub rows: usize,
    pub source: Vec<Option<PixelPoint>>,
}

pub fn topview_grid(calibration: &CameraCalibration, spec: &TopviewSpec) -> Result<RemapGrid> {
    spec.validate()?;
    let h = calibration.homography()?;
    let (cols, rows) = (spec.cols(), spec.rows());
    let source: Vec<Option<PixelPoint>> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|row| {
            (0..cols).map(move |col| calibration.ground_to_source(&h, spec.cell_center(row, col)))
        })
        .collect();
    Ok(RemapGrid {
        spec: *spec,
        cols,
        rows,
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Nearest,
    Bilinear,
}

impl RemapGrid {
    pub fn get(&self, row: usize, col: usize) -> Option<PixelPoint> {
        self.source[row * self.cols + col]
    }

    pub fn valid_count(&self) -> usize {
        self.source.iter().filter(|s| s.is_some()).count()
    }

    /// Warps an interleaved 8-bit image of `channels` channels. Invalid
    /// cells are black.
    pub fn apply(
        &self,
        image: &[u8],
        width: usize,
        height: usize,
        channels: usize,
        sampling: Sampling,
    ) -> Vec<u8> {
        assert_eq!(image.len(), width * height * channels, "image buffer size");
        let px = |u: usize, v: usize, c: usize| image[(v * width + u) * channels + c] as f64;
        let mut out = vec![0u8; self.cols * self.rows * channels];
        for (cell, src) in self.source.iter().enumerate() {
            let Some(src) = src else { continue };
            let dst = &mut out[cell * channels..(cell + 1) * channels];
            match sampling {
                Sampling::Nearest => {
                    let u = (src.u.round() as usize).min(width - 1);
                    let v = (src.v.round() as usize).min(height - 1);
                    for (c, d) in dst.iter_mut().enumerate() {
                        *d = px(u, v, c) as u8;
                    }
                }
                Sampling::Bilinear => {
                    let u0 = (src.u.floor() as usize).min(width - 1);
                    let v0 = (src.v.floor() as usize).min(height - 1);
                    let u1 = (u0 + 1).min(width - 1);
                    let v1 = (v0 + 1).min(height - 1);
                    let (a, b) = (src.u - u0 as f64, src.v - v0 as f64);
                    for (c, d) in dst.iter_mut().enumerate() {
                        let top = px(u0, v0, c) * (1.0 - a) + px(u1, v0, c) * a;
                        let bottom = px(u0, v1, c) * (1.0 - a) + px(u1, v1, c) * a;
                        *d = (top * (1.0 - b) + bottom * b).round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
        out
    }
}

/// Serializable grid dump: `src` holds `[u, v]` per cell (zeros where
/// invalid) and `valid` the mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemapFile {
    pub cols: usize,
    pub rows: usize,
    pub extent: [f64; 4],
    pub resolution: f64,
    pub src: Vec<[f64; 2]>,
    pub valid: Vec<u8>,
}

impl From<&RemapGrid> for RemapFile {
    fn from(grid: &RemapGrid) -> Self {
        let s = &grid.spec;
        RemapFile {
            cols: grid.cols,
            rows: grid.rows,
            extent: [s.x_min, s.x_max, s.y_min, s.y_max],
            resolution: s.resolution,
            src: grid
                .source
                .iter()
                .map(|p| p.map_or([0.0, 0.0], |p| [p.u, p.v]))
                .collect(),
            valid: grid.source.iter().map(|p| u8::from(p.is_some())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn overhead() -> CameraCalibration {
        CameraCalibration {
            intrinsics: Intrinsics::new(1000.0, 1280, 720).unwrap(),
            coefficients: DistortionCoefficients::default(),
            undistorted_focal: 1000.0,
            pose: Pose::new(
                Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
                Vector3::new(0.0, 0.0, 10.0),
            ),
        }
    }

    fn spec(half: f64, resolution: f64) -> TopviewSpec {
        TopviewSpec {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
            resolution,
        }
    }

    #[test]
    fn overhead_grid_is_affine() {
        let s = spec(2.0, 10.0);
        let grid = topview_grid(&overhead(), &s).unwrap();
        assert_eq!((grid.cols, grid.rows), (40, 40));
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                let g = s.cell_center(row, col);
                let src = grid.get(row, col).unwrap();
                assert_relative_eq!(src.u, 640.0 + 100.0 * g.x, epsilon = 1e-9);
                assert_relative_eq!(src.v, 360.0 - 100.0 * g.y, epsilon = 1e-9);
            }
        }
        // one ground unit spans `resolution` cells, i.e. 100 source pixels
        let a = grid.get(0, 0).unwrap();
        let b = grid.get(0, 10).unwrap();
        let c = grid.get(10, 0).unwrap();
        assert_relative_eq!(b.u - a.u, 100.0, epsilon = 1e-9);
        assert_relative_eq!(c.v - a.v, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn unit_square_covers_resolution_cells() {
        let s = spec(3.0, 7.0);
        let (c0, r0) = s.ground_to_output(GroundPoint::new(0.0, 1.0));
        let (c1, r1) = s.ground_to_output(GroundPoint::new(1.0, 0.0));
        assert_relative_eq!(c1 - c0, 7.0);
        assert_relative_eq!(r1 - r0, 7.0);
    }

    #[test]
    fn cells_outside_the_image_are_invalid() {
        let grid = topview_grid(&overhead(), &spec(10.0, 2.0)).unwrap();
        assert!(grid.valid_count() > 0);
        assert!(grid.valid_count() < grid.cols * grid.rows);
    }

    #[test]
    fn distorted_round_trip_and_monotone_extent() {
        let mut calib = overhead();
        calib.coefficients = DistortionCoefficients::new(0.33, 0.12, 0.09);
        calib.pose = Pose::new(
            *nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), 2.4).matrix(),
            Vector3::new(0.0, 0.0, 10.0 / 0.737),
        );
        let small = spec(4.0, 8.0);
        let grid = topview_grid(&calib, &small).unwrap();
        assert!(grid.valid_count() > 100);
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                if let Some(src) = grid.get(row, col) {
                    let g = calib.source_to_ground(src).unwrap();
                    let (c, r) = small.ground_to_output(g);
                    let err = (c - (col as f64 + 0.5)).hypot(r - (row as f64 + 0.5));
                    assert!(err <= 0.51, "cell ({row},{col}) off by {err}");
                }
            }
        }
        let large = spec(8.0, 8.0);
        let bigger = topview_grid(&calib, &large).unwrap();
        let offset = 32; // 4 units at 8 cells per unit
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                if let Some(src) = grid.get(row, col) {
                    let other = bigger.get(row + offset, col + offset).unwrap();
                    assert!(src.distance(other) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn warp_samples_source() {
        let calib = overhead();
        let s = spec(0.2, 10.0);
        let grid = topview_grid(&calib, &s).unwrap();
        let (w, h) = (1280usize, 720usize);
        let image: Vec<u8> = (0..w * h).map(|i| ((i % w) / 8) as u8).collect();
        let out = grid.apply(&image, w, h, 1, Sampling::Nearest);
        assert_eq!(out.len(), 16);
        let src = grid.get(0, 0).unwrap();
        assert_eq!(out[0], ((src.u.round() as usize) / 8) as u8);
        let bil = grid.apply(&image, w, h, 1, Sampling::Bilinear);
        assert!((bil[0] as i32 - out[0] as i32).abs() <= 1);
    }

    #[test]
    fn empty_extent_is_rejected() {
        let mut s = spec(1.0, 1.0);
        s.x_max = s.x_min;
        assert!(matches!(
            topview_grid(&overhead(), &s),
            Err(Error::InvalidTopview(_))
        ));
    }
}
