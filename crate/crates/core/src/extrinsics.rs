//! Camera rotation and translation from two orthogonal vanishing points.
//!
//! Matched keypoints on moving vehicles give short image segments. In the
//! undistorted image those segments point at the vanishing point of their
//! road direction. The orientation histogram of all segments is bimodal; each
//! mode is clustered, its segments are extended to full lines and voted into
//! a one-pixel accumulator, and the top-voted cells locate the vanishing
//! point. Two orthogonal vanishing points then fix the focal length of the
//! undistorted image, the rotation, and (given the camera height) the
//! translation.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DistortionCoefficients, Intrinsics, PixelPoint, Pose};
use crate::intrinsics::{undistort_pixel, IntrinsicResult};
use crate::io::{matrix_to_rows, rows_to_matrix, ExtrinsicFile};

/// Keypoint correspondence between two frames, in distorted pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointMatch {
    pub frame_a: i64,
    pub frame_b: i64,
    pub from: PixelPoint,
    pub to: PixelPoint,
}

impl KeypointMatch {
    pub fn from_tuple(m: (i64, i64, f64, f64, f64, f64)) -> Self {
        Self {
            frame_a: m.0,
            frame_b: m.1,
            from: PixelPoint::new(m.2, m.3),
            to: PixelPoint::new(m.4, m.5),
        }
    }

    pub fn to_tuple(&self) -> (i64, i64, f64, f64, f64, f64) {
        (
            self.frame_a,
            self.frame_b,
            self.from.u,
            self.from.v,
            self.to.u,
            self.to.v,
        )
    }
}

/// Segment between two undistorted positions of one keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment {
    p1: PixelPoint,
    p2: PixelPoint,
}

impl LineSegment {
    /// `None` for a zero-length segment.
    pub fn new(p1: PixelPoint, p2: PixelPoint) -> Option<Self> {
        if p1.distance(p2) > 0.0 {
            Some(Self { p1, p2 })
        } else {
            None
        }
    }

    pub fn endpoints(&self) -> (PixelPoint, PixelPoint) {
        (self.p1, self.p2)
    }

    /// Orientation in degrees, in `[0, 180)`.
    pub fn orientation_deg(&self) -> f64 {
        let a = (self.p2.v - self.p1.v)
            .atan2(self.p2.u - self.p1.u)
            .to_degrees();
        let a = a.rem_euclid(180.0);
        if a >= 180.0 {
            0.0
        } else {
            a
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.p1.distance(self.p2)
    }

    /// Signed distance of the supporting line from the pixel origin.
    pub fn distance_from_origin(&self) -> f64 {
        let t = self.orientation_deg().to_radians();
        -t.sin() * self.p1.u + t.cos() * self.p1.v
    }

    /// Perpendicular distance from `p` to the supporting line.
    pub fn line_distance(&self, p: PixelPoint) -> f64 {
        let d = self.p2.to_vector() - self.p1.to_vector();
        let w = p.to_vector() - self.p1.to_vector();
        (d.x * w.y - d.y * w.x).abs() / d.norm()
    }
}

/// Smallest angle between two orientations on the half circle, degrees.
pub fn circular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Tunables of the extrinsic stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtrinsicConfig {
    /// Frame gap between matched frames.
    pub stride: u32,
    /// Segments shorter than this (pixels) are dropped.
    pub min_length: f64,
    pub bin_width_deg: f64,
    pub min_separation_deg: f64,
    /// Cluster half-width around each histogram peak.
    pub half_width_deg: f64,
    pub top_fraction: f64,
    pub k_sigma: f64,
    pub grid: GridConfig,
}

impl Default for ExtrinsicConfig {
    fn default() -> Self {
        Self {
            stride: 6,
            min_length: 2.0,
            bin_width_deg: 1.0,
            min_separation_deg: 30.0,
            half_width_deg: 5.0,
            top_fraction: 0.2,
            k_sigma: 2.0,
            grid: GridConfig::default(),
        }
    }
}

impl ExtrinsicConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidExtrinsicConfig(m));
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if !(self.bin_width_deg > 0.0 && self.bin_width_deg <= 90.0) {
            return bad(format!("bin width {} outside (0, 90]", self.bin_width_deg));
        }
        if !(self.half_width_deg >= 0.0) || !(self.min_separation_deg >= 0.0) {
            return bad("angles must be non-negative".into());
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad(format!("top fraction {} outside (0, 1]", self.top_fraction));
        }
        if !(0.0..=3.0).contains(&self.k_sigma) {
            return bad(format!("k_sigma {} outside [0, 3]", self.k_sigma));
        }
        self.grid.validate()
    }
}

/// Accumulator extent and resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Accumulator size as a multiple of the image size, centered on it.
    pub extent_factor: f64,
    /// Pixels per cell; 1 votes at full resolution.
    pub cell_size: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            extent_factor: 3.0,
            cell_size: 1.0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent_factor > 0.0 && self.cell_size > 0.0) {
            return Err(Error::InvalidExtrinsicConfig(format!(
                "grid extent {} and cell size {} must be positive",
                self.extent_factor, self.cell_size
            )));
        }
        Ok(())
    }

    /// Empty accumulator covering the configured region around the image.
    pub fn grid_for(&self, width: u32, height: u32) -> VoteGrid {
        let cols = ((width as f64 * self.extent_factor) / self.cell_size)
            .ceil()
            .max(1.0) as usize;
        let rows = ((height as f64 * self.extent_factor) / self.cell_size)
            .ceil()
            .max(1.0) as usize;
        let (cu, cv) = (width as f64 / 2.0, height as f64 / 2.0);
        let origin = PixelPoint::new(
            cu - (cols as f64 - 1.0) * self.cell_size / 2.0,
            cv - (rows as f64 - 1.0) * self.cell_size / 2.0,
        );
        VoteGrid::new(origin, self.cell_size, cols, rows)
    }
}

/// Undistorts matched keypoints into segments, dropping short ones and
/// pairs whose frame gap is not the configured stride.
pub fn segments_from_matches(
    matches: &[KeypointMatch],
    intrinsics: &Intrinsics,
    coefficients: &DistortionCoefficients,
    stride: u32,
    min_length: f64,
) -> Vec<LineSegment> {
    let mut wrong_stride = 0usize;
    let segments: Vec<LineSegment> = matches
        .iter()
        .filter(|m| {
            let ok = m.frame_b - m.frame_a == stride as i64;
            wrong_stride += usize::from(!ok);
            ok
        })
        .filter_map(|m| {
            let a = undistort_pixel(intrinsics, coefficients, m.from);
            let b = undistort_pixel(intrinsics, coefficients, m.to);
            LineSegment::new(a, b)
        })
        .filter(|s| s.magnitude() >= min_length && s.magnitude().is_finite())
        .collect();
    if wrong_stride > 0 {
        log::warn!("dropped {wrong_stride} matches whose frame gap is not {stride}");
    }
    log::debug!(
        "{} of {} matches kept as segments",
        segments.len(),
        matches.len()
    );
    segments
}

/// Magnitude-weighted orientation histogram; bin `i` is centered on
/// `i * bin_width` degrees and wraps at 180.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationHistogram {
    pub bin_width: f64,
    pub counts: Vec<f64>,
}

impl OrientationHistogram {
    pub fn new(segments: &[LineSegment], bin_width: f64) -> Self {
        let bins = (180.0 / bin_width).round().max(1.0) as usize;
        let mut counts = vec![0.0; bins];
        for s in segments {
            counts[Self::bin_index(s.orientation_deg(), bin_width, bins)] += s.magnitude();
        }
        Self { bin_width, counts }
    }

    fn bin_index(theta: f64, bin_width: f64, bins: usize) -> usize {
        ((theta / bin_width + 0.5).floor() as i64).rem_euclid(bins as i64) as usize
    }

    pub fn center(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }
}

/// Magnitude-weighted mean of orientations within half a bin of `center`,
/// averaged on the doubled angle so that 179 and 1 degrees meet at 0.
fn refine_peak(segments: &[LineSegment], center: f64, bin_width: f64) -> f64 {
    let (mut sx, mut sy) = (0.0, 0.0);
    for s in segments {
        let theta = s.orientation_deg();
        if circular_distance_deg(theta, center) <= bin_width / 2.0 {
            let a = (2.0 * theta).to_radians();
            sx += s.magnitude() * a.cos();
            sy += s.magnitude() * a.sin();
        }
    }
    if sx == 0.0 && sy == 0.0 {
        return center;
    }
    (sy.atan2(sx).to_degrees() / 2.0).rem_euclid(180.0)
}

/// The two dominant motion orientations (degrees), higher peak first.
pub fn orientation_peaks(
    segments: &[LineSegment],
    bin_width: f64,
    min_separation: f64,
) -> Result<(f64, f64)> {
    if segments.len() < 2 {
        return Err(Error::NotEnoughSegments(segments.len()));
    }
    let hist = OrientationHistogram::new(segments, bin_width);
    let argmax = |skip: &dyn Fn(usize) -> bool| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &c) in hist.counts.iter().enumerate() {
            if skip(i) || c <= 0.0 {
                continue;
            }
            if best.is_none_or(|b| c > hist.counts[b]) {
                best = Some(i);
            }
        }
        best
    };
    let first = argmax(&|_| false).ok_or(Error::Unimodal)?;
    let first_center = hist.center(first);
    let second = argmax(&|i| circular_distance_deg(hist.center(i), first_center) < min_separation)
        .filter(|&i| hist.counts[i] >= 0.2 * hist.counts[first])
        .ok_or(Error::Unimodal)?;
    Ok((
        refine_peak(segments, first_center, bin_width),
        refine_peak(segments, hist.center(second), bin_width),
    ))
}

/// Segments within `half_width` degrees of `peak`.
pub fn cluster_segments(
    segments: &[LineSegment],
    peak: f64,
    half_width: f64,
) -> Result<Vec<LineSegment>> {
    let cluster: Vec<LineSegment> = segments
        .iter()
        .filter(|s| circular_distance_deg(s.orientation_deg(), peak) <= half_width + 1e-9)
        .copied()
        .collect();
    if cluster.is_empty() {
        return Err(Error::EmptyCluster {
            peak_deg: peak,
            half_width_deg: half_width,
        });
    }
    Ok(cluster)
}

/// Dense accumulator. Cell `(i, j)` is centered on pixel
/// `origin + (i, j) * cell_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteGrid {
    origin: PixelPoint,
    cell_size: f64,
    cols: usize,
    rows: usize,
    counts: Vec<u32>,
}

impl VoteGrid {
    pub fn new(origin: PixelPoint, cell_size: f64, cols: usize, rows: usize) -> Self {
        Self {
            origin,
            cell_size,
            cols,
            rows,
            counts: vec![0; cols * rows],
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn origin(&self) -> PixelPoint {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, col: usize, row: usize) -> u32 {
        self.counts[row * self.cols + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn cell_center(&self, col: usize, row: usize) -> PixelPoint {
        PixelPoint::new(
            self.origin.u + col as f64 * self.cell_size,
            self.origin.v + row as f64 * self.cell_size,
        )
    }

    /// Cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: PixelPoint) -> Option<(usize, usize)> {
        let i = ((p.u - self.origin.u) / self.cell_size).round();
        let j = ((p.v - self.origin.v) / self.cell_size).round();
        if i >= 0.0 && j >= 0.0 && (i as usize) < self.cols && (j as usize) < self.rows {
            Some((i as usize, j as usize))
        } else {
            None
        }
    }

    /// Cells crossed by the infinite line through the segment: one cell per
    /// column (or row, for steep lines) along the major axis.
    pub fn line_cells(&self, segment: &LineSegment) -> Vec<(usize, usize)> {
        let (p1, p2) = segment.endpoints();
        let (du, dv) = (p2.u - p1.u, p2.v - p1.v);
        let mut cells = Vec::new();
        if du.abs() >= dv.abs() {
            let slope = dv / du;
            for i in 0..self.cols {
                let u = self.origin.u + i as f64 * self.cell_size;
                let v = p1.v + (u - p1.u) * slope;
                let j = ((v - self.origin.v) / self.cell_size).round();
                if j >= 0.0 && (j as usize) < self.rows {
                    cells.push((i, j as usize));
                }
            }
        } else {
            let slope = du / dv;
            for j in 0..self.rows {
                let v = self.origin.v + j as f64 * self.cell_size;
                let u = p1.u + (v - p1.v) * slope;
                let i = ((u - self.origin.u) / self.cell_size).round();
                if i >= 0.0 && (i as usize) < self.cols {
                    cells.push((i as usize, j));
                }
            }
        }
        cells
    }

    fn vote(&mut self, segment: &LineSegment) -> usize {
        let cells = self.line_cells(segment);
        for &(i, j) in &cells {
            self.counts[j * self.cols + i] += 1;
        }
        cells.len()
    }

    /// Counts scaled to 0..=255, row-major.
    pub fn to_gray8(&self) -> Vec<u8> {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        self.counts
            .iter()
            .map(|&c| (c as f64 / max * 255.0).round() as u8)
            .collect()
    }
}

/// Extends every segment to a full line and votes it into `grid`.
pub fn vote_lines(cluster: &[LineSegment], mut grid: VoteGrid) -> VoteGrid {
    let touched: usize = cluster.iter().map(|s| grid.vote(s)).sum();
    log::debug!("{} lines cast {touched} votes", cluster.len());
    grid
}

/// Statistics of the top-voted cells behind a vanishing point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpDiagnostics {
    pub max_votes: u32,
    pub cells: usize,
    pub mean: PixelPoint,
    /// Per-axis standard deviation of the selected cells.
    pub std: (f64, f64),
    /// Standard deviation along the principal axis.
    pub principal_std: f64,
    pub direction: (f64, f64),
}

fn weighted_moments(cells: &[(PixelPoint, f64)]) -> (Vector2<f64>, nalgebra::Matrix2<f64>) {
    let w: f64 = cells.iter().map(|c| c.1).sum();
    let mean = cells
        .iter()
        .fold(Vector2::zeros(), |acc, (p, wt)| acc + p.to_vector() * *wt)
        / w;
    let cov = cells
        .iter()
        .fold(nalgebra::Matrix2::zeros(), |acc, (p, wt)| {
            let d = p.to_vector() - mean;
            acc + d * d.transpose() * *wt
        })
        / w;
    (mean, cov)
}

/// Vanishing point from the top-voted cells: their vote-weighted mean,
/// pushed `k_sigma` standard deviations along the principal axis of the
/// cell cloud toward the densest cells.
///
/// Cells are selected when their count reaches `(1 - top_fraction)` of the
/// maximum count.
pub fn estimate_vanishing_point(
    grid: &VoteGrid,
    top_fraction: f64,
    k_sigma: f64,
) -> Result<(PixelPoint, VpDiagnostics)> {
    let max = grid.counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::EmptyGrid);
    }
    let select = |fraction: f64| -> Vec<(PixelPoint, f64)> {
        let threshold = ((1.0 - fraction) * max as f64).max(1.0);
        grid.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c as f64 >= threshold - 1e-9)
            .map(|(idx, &c)| (grid.cell_center(idx % grid.cols, idx / grid.cols), c as f64))
            .collect()
    };
    let top = select(top_fraction);
    let (mean, cov) = weighted_moments(&top);
    let eig = cov.symmetric_eigen();
    let major = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        0
    } else {
        1
    };
    let sigma = eig.eigenvalues[major].max(0.0).sqrt();
    let mut dir: Vector2<f64> = eig.eigenvectors.column(major).into();

    let (densest, _) = weighted_moments(&select(0.01));
    let lean = (densest - mean).dot(&dir);
    if lean < -1e-12 || (lean.abs() <= 1e-12 && (dir.x < 0.0 || (dir.x == 0.0 && dir.y < 0.0))) {
        dir = -dir;
    }
    let vp = mean + dir * (k_sigma * sigma);
    Ok((
        PixelPoint::from_vector(vp),
        VpDiagnostics {
            max_votes: max,
            cells: top.len(),
            mean: PixelPoint::from_vector(mean),
            std: (cov[(0, 0)].max(0.0).sqrt(), cov[(1, 1)].max(0.0).sqrt()),
            principal_std: sigma,
            direction: (dir.x, dir.y),
        },
    ))
}

/// Focal length of the undistorted image implied by two orthogonal
/// vanishing points.
pub fn refine_focal_from_vps(
    vp_x: PixelPoint,
    vp_y: PixelPoint,
    principal_point: PixelPoint,
) -> Result<f64> {
    let c = principal_point;
    let dot = (vp_x.u - c.u) * (vp_y.u - c.u) + (vp_x.v - c.v) * (vp_y.v - c.v);
    let radicand = -dot;
    if !(radicand > 0.0) {
        return Err(Error::InconsistentVps { radicand });
    }
    Ok(radicand.sqrt())
}

/// Unorthonormalized rotation whose first two columns are the directions of
/// the vanishing points and whose third is their cross product.
pub fn rotation_from_vps(
    vp_x: PixelPoint,
    vp_y: PixelPoint,
    f_new: f64,
    principal_point: PixelPoint,
) -> Result<Matrix3<f64>> {
    if !(f_new > 0.0) {
        return Err(Error::InvalidIntrinsics(format!(
            "focal length {f_new} must be positive"
        )));
    }
    let c = principal_point;
    let direction = |vp: PixelPoint| Vector3::new(vp.u - c.u, vp.v - c.v, f_new).normalize();
    let c1 = direction(vp_x);
    let c2 = direction(vp_y);
    let cosine = c1.dot(&c2);
    if cosine.abs() > 0.5 {
        return Err(Error::ParallelVps { cosine });
    }
    let mut c3 = c1.cross(&c2);
    let m = Matrix3::from_columns(&[c1, c2, c3]);
    if m.determinant() < 0.0 {
        c3 = -c3;
    }
    Ok(Matrix3::from_columns(&[c1, c2, c3]))
}

/// Nearest rotation in Frobenius norm.
pub fn orthonormalize_rotation(raw: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !raw.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularInput);
    }
    let svd = raw.svd(true, true);
    let s = &svd.singular_values;
    if s.min() <= 1e-12 * s.max().max(f64::MIN_POSITIVE) {
        return Err(Error::SingularInput);
    }
    let u = svd.u.ok_or(Error::SingularInput)?;
    let v_t = svd.v_t.ok_or(Error::SingularInput)?;
    let d = (u * v_t).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    Ok(u * fix * v_t)
}

/// Translation placing the world origin on the optical axis with the camera
/// `height` above the ground plane.
pub fn translation_from_height(rotation: &Matrix3<f64>, height: f64) -> Result<Vector3<f64>> {
    let r33 = rotation[(2, 2)];
    if r33.abs() <= 1e-6 {
        return Err(Error::HorizontalCamera { r33 });
    }
    Ok(Vector3::new(0.0, 0.0, -height / r33))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanishingPointPair {
    pub vp_x: PixelPoint,
    pub vp_y: PixelPoint,
    /// Top-cell statistics for `vp_x` and `vp_y`; absent when read from a
    /// result file.
    pub diagnostics: Option<(VpDiagnostics, VpDiagnostics)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrinsicResult {
    /// Focal length of the undistorted image.
    pub f_new: f64,
    pub pose: Pose,
    pub vanishing_points: VanishingPointPair,
    pub height: f64,
}

impl ExtrinsicResult {
    pub fn to_file(&self) -> ExtrinsicFile {
        let vps = &self.vanishing_points;
        ExtrinsicFile {
            f_new: self.f_new,
            r: matrix_to_rows(&self.pose.rotation),
            t: [
                self.pose.translation.x,
                self.pose.translation.y,
                self.pose.translation.z,
            ],
            vp_x: [vps.vp_x.u, vps.vp_x.v],
            vp_y: [vps.vp_y.u, vps.vp_y.v],
            height: self.height,
        }
    }

    pub fn from_file(file: &ExtrinsicFile) -> Result<Self> {
        let pose = Pose::new(rows_to_matrix(&file.r), Vector3::from(file.t));
        if !pose.is_valid() {
            return Err(Error::parse("extrinsics", "R is not a rotation matrix"));
        }
        if !(file.f_new > 0.0 && file.height > 0.0) {
            return Err(Error::parse(
                "extrinsics",
                "f_new and height must be positive",
            ));
        }
        Ok(Self {
            f_new: file.f_new,
            pose,
            vanishing_points: VanishingPointPair {
                vp_x: PixelPoint::new(file.vp_x[0], file.vp_x[1]),
                vp_y: PixelPoint::new(file.vp_y[0], file.vp_y[1]),
                diagnostics: None,
            },
            height: file.height,
        })
    }
}

/// Vote grids kept alongside the result for inspection.
#[derive(Debug, Clone)]
pub struct ExtrinsicRun {
    pub result: ExtrinsicResult,
    pub segments: usize,
    pub peaks_deg: (f64, f64),
    pub grids: (VoteGrid, VoteGrid),
}

/// Full extrinsic stage from keypoint matches.
///
/// Which vanishing point becomes the world `x` axis is decided so that the
/// world `z` axis points up toward the camera, which puts the ground plane in
/// front of it (`t_z > 0`).
pub fn calibrate_extrinsics(
    matches: &[KeypointMatch],
    intrinsics: &IntrinsicResult,
    config: &ExtrinsicConfig,
    height: f64,
) -> Result<ExtrinsicRun> {
    config.validate()?;
    if !(height > 0.0 && height.is_finite()) {
        return Err(Error::InvalidExtrinsicConfig(format!(
            "camera height {height} must be positive"
        )));
    }
    let k = &intrinsics.intrinsics;
    let segments = segments_from_matches(
        matches,
        k,
        &intrinsics.coefficients,
        config.stride,
        config.min_length,
    );
    let peaks = orientation_peaks(&segments, config.bin_width_deg, config.min_separation_deg)?;
    log::info!(
        "{} segments, orientation peaks at {:.2} and {:.2} degrees",
        segments.len(),
        peaks.0,
        peaks.1
    );
    let first = cluster_segments(&segments, peaks.0, config.half_width_deg)?;
    let second = cluster_segments(&segments, peaks.1, config.half_width_deg)?;
    let empty = config.grid.grid_for(k.width(), k.height());
    let grid_a = vote_lines(&first, empty.clone());
    let grid_b = vote_lines(&second, empty);
    let (vp_a, diag_a) = estimate_vanishing_point(&grid_a, config.top_fraction, config.k_sigma)?;
    let (vp_b, diag_b) = estimate_vanishing_point(&grid_b, config.top_fraction, config.k_sigma)?;

    let c = k.principal_point();
    let f_new = refine_focal_from_vps(vp_a, vp_b, c)?;
    let mut vps = VanishingPointPair {
        vp_x: vp_a,
        vp_y: vp_b,
        diagnostics: Some((diag_a, diag_b)),
    };
    let mut raw = rotation_from_vps(vps.vp_x, vps.vp_y, f_new, c)?;
    if raw[(2, 2)] > 0.0 {
        vps = VanishingPointPair {
            vp_x: vp_b,
            vp_y: vp_a,
            diagnostics: Some((diag_b, diag_a)),
        };
        raw = rotation_from_vps(vps.vp_x, vps.vp_y, f_new, c)?;
    }
    let rotation = orthonormalize_rotation(&raw)?;
    let translation = translation_from_height(&rotation, height)?;
    log::info!(
        "undistorted focal length {f_new:.3} px, t_z {:.4}",
        translation.z
    );
    Ok(ExtrinsicRun {
        result: ExtrinsicResult {
            f_new,
            pose: Pose::new(rotation, translation),
            vanishing_points: vps,
            height,
        },
        segments: segments.len(),
        peaks_deg: peaks,
        grids: (grid_a, grid_b),
    })
}
