//! Focal length from trajectory straightening, and the radial polynomial
//! fitted to the equidistant undistortion curve.
//!
//! Vehicles drive along straight lines, so every keypoint track should be a
//! straight line in a rectilinear image. The equidistant undistortion is a
//! one-parameter family in `f`; the focal length that makes the selected
//! tracks straightest wins.

use nalgebra::{DMatrix, DVector, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_polynomial_undistortion, denormalize_point, equidistant_undistort_scale, image_diagonal,
    normalize_pixel, undistort_equidistant, DistortionCoefficients, Intrinsics, PixelPoint,
    HEMISPHERE_MARGIN,
};
use crate::io::{matrix_to_rows, IntrinsicFile, TrackResidual, VideoMeta};
use crate::tracks::{filter_tracks, fit_line, select_calibration_tracks, FilterRules, Track};

/// Multiplier on the raw track sse charged when undistortion leaves the
/// hemisphere at a candidate focal length.
const HEMISPHERE_PENALTY: f64 = 10.0;

/// Condition number above which the distortion fit is rejected.
const MAX_CONDITION: f64 = 1e12;

/// Grid search bounds for the focal length, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalSearchConfig {
    pub f_min: f64,
    /// Defaults to the image diagonal when absent.
    pub f_max: Option<f64>,
    pub step: f64,
    pub refine: bool,
}

impl Default for FocalSearchConfig {
    fn default() -> Self {
        Self {
            f_min: 10.0,
            f_max: None,
            step: 1.0,
            refine: true,
        }
    }
}

impl FocalSearchConfig {
    fn bounds(&self, image_size: (u32, u32)) -> Result<(f64, f64)> {
        let f_max = self
            .f_max
            .unwrap_or_else(|| image_diagonal(image_size.0, image_size.1));
        if !(self.f_min > 0.0 && self.f_min < f_max) {
            return Err(Error::InvalidSearch(format!(
                "need 0 < f_min < f_max, got [{}, {f_max}]",
                self.f_min
            )));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidSearch(format!(
                "step {} must be positive",
                self.step
            )));
        }
        Ok((self.f_min, f_max))
    }
}

/// Everything the intrinsic stage needs besides the tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntrinsicConfig {
    pub filter: FilterRules,
    /// Number of longest tracks kept for calibration.
    pub track_count: usize,
    pub search: FocalSearchConfig,
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        Self {
            filter: FilterRules::default(),
            track_count: 10,
            search: FocalSearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicResult {
    pub intrinsics: Intrinsics,
    pub coefficients: DistortionCoefficients,
    /// `(f, total sse)` at every grid candidate.
    pub objective_curve: Vec<(f64, f64)>,
    pub residuals: Vec<TrackResidual>,
}

impl IntrinsicResult {
    pub fn to_file(&self) -> IntrinsicFile {
        IntrinsicFile {
            f: self.intrinsics.focal(),
            k: matrix_to_rows(&self.intrinsics.matrix()),
            dist: self.coefficients.as_array(),
            curve: self.objective_curve.clone(),
            residuals: self.residuals.clone(),
        }
    }

    /// Rebuilds a result from its file form. The image size is recovered
    /// from the principal point, which sits at the image center.
    pub fn from_file(file: &IntrinsicFile) -> Result<Self> {
        let size = |c: f64, axis: &str| -> Result<u32> {
            let s = (2.0 * c).round();
            if !(s >= 1.0 && s <= u32::MAX as f64) || (2.0 * c - s).abs() > 1e-6 {
                return Err(Error::InvalidIntrinsics(format!(
                    "principal point {axis} = {c} is not the center of an integer-sized image"
                )));
            }
            Ok(s as u32)
        };
        let width = size(file.k[0][2], "cx")?;
        let height = size(file.k[1][2], "cy")?;
        let intrinsics = Intrinsics::new(file.f, width, height)?;
        Ok(Self {
            intrinsics,
            coefficients: DistortionCoefficients::new(file.dist[0], file.dist[1], file.dist[2]),
            objective_curve: file.curve.clone(),
            residuals: file.residuals.clone(),
        })
    }

    pub fn mean_sse_before(&self) -> f64 {
        mean(self.residuals.iter().map(|r| r.before))
    }

    pub fn mean_sse_after(&self) -> f64 {
        mean(self.residuals.iter().map(|r| r.after))
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

fn center(image_size: (u32, u32)) -> Vector2<f64> {
    Vector2::new(image_size.0 as f64 / 2.0, image_size.1 as f64 / 2.0)
}

fn track_sse(points: &[PixelPoint]) -> f64 {
    // fewer than two distinct points are trivially straight
    fit_line(points).map(|fit| fit.sse).unwrap_or(0.0)
}

fn undistorted_track_sse(track: &Track, f: f64, c: Vector2<f64>) -> f64 {
    let undistorted: Option<Vec<PixelPoint>> = track
        .points()
        .map(|p| {
            undistort_equidistant(p.to_vector() - c, f)
                .ok()
                .map(PixelPoint::from_vector)
        })
        .collect();
    match undistorted {
        Some(points) => track_sse(&points),
        None => {
            let raw: Vec<PixelPoint> = track.points().collect();
            HEMISPHERE_PENALTY * track_sse(&raw)
        }
    }
}

/// Total line-fit sse of the tracks after equidistant undistortion at `f`.
pub fn straightness_objective(tracks: &[Track], f: f64, image_size: (u32, u32)) -> Result<f64> {
    if tracks.is_empty() {
        return Err(Error::NoTracks);
    }
    let c = center(image_size);
    Ok(tracks.iter().map(|t| undistorted_track_sse(t, f, c)).sum())
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden_section(mut lo: f64, mut hi: f64, objective: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = objective(x1);
    let mut f2 = objective(x2);
    while hi - lo > 1e-9 * hi.abs().max(1.0) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = objective(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Grid search over the focal range, optionally refined by golden-section
/// search within one step of the best grid point.
pub fn estimate_focal(
    tracks: &[Track],
    image_size: (u32, u32),
    config: &FocalSearchConfig,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if tracks.is_empty() {
        return Err(Error::NoTracks);
    }
    if tracks.len() < 3 || tracks.iter().any(|t| t.samples().len() < 3) {
        log::warn!(
            "focal search on {} tracks; at least 3 tracks of 3+ points are recommended",
            tracks.len()
        );
    }
    let (f_min, f_max) = config.bounds(image_size)?;
    let steps = ((f_max - f_min) / config.step).floor() as usize;
    let mut grid: Vec<f64> = (0..=steps)
        .map(|i| f_min + i as f64 * config.step)
        .collect();
    if f_max - grid[grid.len() - 1] > 1e-9 * f_max {
        grid.push(f_max);
    }
    let c = center(image_size);
    let objective = |f: f64| -> f64 { tracks.iter().map(|t| undistorted_track_sse(t, f, c)).sum() };
    let curve: Vec<(f64, f64)> = grid.par_iter().map(|&f| (f, objective(f))).collect();

    let (lowest, highest) = curve
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
            (lo.min(v), hi.max(v))
        });
    if highest - lowest < 1e-12 {
        return Err(Error::DegenerateObjective {
            spread: highest - lowest,
        });
    }
    // first minimum: ties go to the lowest focal length
    let (best_f, best_v) = curve
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |acc, (f, v)| {
            if v < acc.1 {
                (f, v)
            } else {
                acc
            }
        });

    let mut f_hat = best_f;
    if config.refine {
        let lo = (best_f - config.step).max(f_min);
        let hi = (best_f + config.step).min(f_max);
        let (f_ref, v_ref) = golden_section(lo, hi, objective);
        if v_ref < best_v {
            f_hat = f_ref;
        }
    }
    Ok((f_hat, curve))
}

/// Least-squares `[k1, k2, k3]` reproducing the equidistant undistortion
/// scale `tan(theta) / theta` at every observed track point.
///
/// Points are normalized by `intrinsics`; the fisheye angle of a point is its
/// pixel radius over `f_hat`. With `intrinsics.focal() == f_hat` the angle is
/// the normalized radius itself.
pub fn fit_distortion_coefficients(
    tracks: &[Track],
    f_hat: f64,
    intrinsics: &Intrinsics,
) -> Result<DistortionCoefficients> {
    if !(f_hat > 0.0) {
        return Err(Error::InvalidIntrinsics(format!(
            "focal length {f_hat} must be positive"
        )));
    }
    let ratio = intrinsics.focal() / f_hat;
    let limit = std::f64::consts::FRAC_PI_2 * (1.0 - HEMISPHERE_MARGIN);
    let mut rows: Vec<[f64; 3]> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for p in tracks.iter().flat_map(Track::points) {
        let r = normalize_pixel(intrinsics, p).radius();
        let theta = r * ratio;
        if r <= 1e-3 || theta >= limit {
            continue;
        }
        let r2 = r * r;
        rows.push([r2, r2 * r2, r2 * r2 * r2]);
        targets.push(equidistant_undistort_scale(theta) - 1.0);
    }
    if rows.len() < 3 {
        return Err(Error::RankDeficient {
            condition: f64::INFINITY,
        });
    }
    let design = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
    let rhs = DVector::from_vec(targets);
    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let condition = if s_min > 0.0 {
        s_max / s_min
    } else {
        f64::INFINITY
    };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    let k = svd
        .solve(&rhs, 0.0)
        .map_err(|_| Error::RankDeficient { condition })?;
    Ok(DistortionCoefficients::new(k[0], k[1], k[2]))
}

pub fn build_intrinsics(f_hat: f64, image_size: (u32, u32)) -> Result<Intrinsics> {
    Intrinsics::new(f_hat, image_size.0, image_size.1)
}

/// Pixel-space polynomial undistortion with the calibrated intrinsics.
pub fn undistort_pixel(
    intrinsics: &Intrinsics,
    coefficients: &DistortionCoefficients,
    p: PixelPoint,
) -> PixelPoint {
    let n = normalize_pixel(intrinsics, p);
    denormalize_point(intrinsics, apply_polynomial_undistortion(n, coefficients))
}

/// Per-track line-fit sse before and after polynomial undistortion.
pub fn residual_report(
    tracks: &[Track],
    intrinsics: &Intrinsics,
    coefficients: &DistortionCoefficients,
) -> Vec<TrackResidual> {
    tracks
        .iter()
        .map(|t| {
            let raw: Vec<PixelPoint> = t.points().collect();
            let fixed: Vec<PixelPoint> = raw
                .iter()
                .map(|&p| undistort_pixel(intrinsics, coefficients, p))
                .collect();
            TrackResidual {
                track: t.id(),
                before: track_sse(&raw),
                after: track_sse(&fixed),
            }
        })
        .collect()
}

/// Filter, select, search the focal length, and fit the polynomial.
pub fn calibrate_intrinsics(
    meta: &VideoMeta,
    tracks: &[Track],
    config: &IntrinsicConfig,
) -> Result<IntrinsicResult> {
    let kept = filter_tracks(tracks, meta, &config.filter);
    let selected = select_calibration_tracks(&kept, config.track_count);
    log::info!(
        "{} tracks loaded, {} pass the filters, {} selected",
        tracks.len(),
        kept.len(),
        selected.len()
    );
    let image_size = (meta.width, meta.height);
    let (f_hat, curve) = estimate_focal(&selected, image_size, &config.search)?;
    let intrinsics = build_intrinsics(f_hat, image_size)?;
    let coefficients = fit_distortion_coefficients(&selected, f_hat, &intrinsics)?;
    log::info!(
        "focal length {f_hat:.3} px, distortion {:?}",
        coefficients.as_array()
    );
    let residuals = residual_report(&selected, &intrinsics, &coefficients);
    Ok(IntrinsicResult {
        intrinsics,
        coefficients,
        objective_curve: curve,
        residuals,
    })
}
