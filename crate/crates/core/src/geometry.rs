//! Camera model primitives.
//!
//! Pinhole projection with a square-pixel, zero-skew intrinsic matrix whose
//! principal point sits at the image center, the equidistant fisheye
//! mapping and its rectilinear inverse, the even radial polynomial used to
//! approximate it, and the homography between the `Z = 0` ground plane and
//! the undistorted image.
//!
//! Conventions: pixel origin at the top-left corner, `u` right, `v` down.
//! Camera coordinates are `R * X_world + t` with the optical axis along `+z`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the quarter turn kept clear of the `tan` singularity.
pub const HEMISPHERE_MARGIN: f64 = 1e-3;

/// Tolerance used when checking rotation invariants.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Image-plane point in pixels. May lie outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self { u: v.x, v: v.y }
    }

    pub fn distance(self, other: PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Point with the intrinsic matrix removed (dimensionless).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub x: f64,
    pub y: f64,
}

impl NormalizedPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn radius_squared(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn radius(self) -> f64 {
        self.radius_squared().sqrt()
    }
}

/// Point on the `Z = 0` world plane, in camera-height units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    pub x: f64,
    pub y: f64,
}

impl GroundPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Square-pixel, zero-skew intrinsics with the principal point at the
/// image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    f: f64,
    width: u32,
    height: u32,
}

impl Intrinsics {
    /// Validates `0 < f <= diagonal` and a non-empty image.
    pub fn new(f: f64, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidIntrinsics(format!(
                "image size {width}x{height} must be positive"
            )));
        }
        let diagonal = image_diagonal(width, height);
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal length {f} must be positive"
            )));
        }
        // one ulp of slack so that `f == diagonal` computed elsewhere passes
        if f > diagonal * (1.0 + f64::EPSILON) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal length {f} exceeds image diagonal {diagonal}"
            )));
        }
        Ok(Self { f, width, height })
    }

    /// Same image size, different focal length.
    pub fn with_focal(&self, f: f64) -> Result<Self> {
        Self::new(f, self.width, self.height)
    }

    pub fn focal(&self) -> f64 {
        self.f
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn principal_point(&self) -> PixelPoint {
        PixelPoint::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        image_diagonal(self.width, self.height)
    }

    /// The 3x3 intrinsic matrix `K`.
    pub fn matrix(&self) -> Matrix3<f64> {
        camera_matrix(self.f, self.principal_point())
    }
}

pub fn image_diagonal(width: u32, height: u32) -> f64 {
    (width as f64).hypot(height as f64)
}

pub(crate) fn camera_matrix(f: f64, c: PixelPoint) -> Matrix3<f64> {
    Matrix3::new(f, 0.0, c.u, 0.0, f, c.v, 0.0, 0.0, 1.0)
}

/// Radial polynomial `1 + k1 r^2 + k2 r^4 + k3 r^6` taking distorted
/// normalized coordinates to undistorted ones.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistortionCoefficients {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl DistortionCoefficients {
    pub fn new(k1: f64, k2: f64, k3: f64) -> Self {
        Self { k1, k2, k3 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.k1, self.k2, self.k3]
    }

    /// Radial scale at squared radius `r2`.
    pub fn scale(&self, r2: f64) -> f64 {
        1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
    }

    /// d(r * scale(r^2)) / dr.
    fn radial_derivative(&self, r: f64) -> f64 {
        let r2 = r * r;
        1.0 + r2 * (3.0 * self.k1 + r2 * (5.0 * self.k2 + r2 * 7.0 * self.k3))
    }
}

/// Camera extrinsics: `X_cam = rotation * X_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Largest entry of `R R^T - I` and `|det R - 1|`.
    pub fn rotation_defect(&self) -> (f64, f64) {
        rotation_defect(&self.rotation)
    }

    pub fn is_valid(&self) -> bool {
        let (orth, det) = self.rotation_defect();
        orth <= ROTATION_TOLERANCE && det <= ROTATION_TOLERANCE
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

pub fn rotation_defect(r: &Matrix3<f64>) -> (f64, f64) {
    let orth = (r * r.transpose() - Matrix3::identity()).amax();
    let det = (r.determinant() - 1.0).abs();
    (orth, det)
}

/// Projects a world point; returns the pixel and the projective depth.
pub fn project_world_to_pixel(
    intrinsics: &Intrinsics,
    pose: &Pose,
    world: &Vector3<f64>,
) -> Result<(PixelPoint, f64)> {
    let cam = pose.rotation * world + pose.translation;
    let depth = cam.z;
    if depth <= 0.0 {
        return Err(Error::NonPositiveDepth { depth });
    }
    let c = intrinsics.principal_point();
    let f = intrinsics.focal();
    Ok((
        PixelPoint::new(f * cam.x / depth + c.u, f * cam.y / depth + c.v),
        depth,
    ))
}

pub fn normalize_pixel(intrinsics: &Intrinsics, p: PixelPoint) -> NormalizedPoint {
    let c = intrinsics.principal_point();
    let f = intrinsics.focal();
    NormalizedPoint::new((p.u - c.u) / f, (p.v - c.v) / f)
}

pub fn denormalize_point(intrinsics: &Intrinsics, n: NormalizedPoint) -> PixelPoint {
    let c = intrinsics.principal_point();
    let f = intrinsics.focal();
    PixelPoint::new(f * n.x + c.u, f * n.y + c.v)
}

/// `tan(theta) / theta`, the rectilinear-over-equidistant radial scale.
pub fn equidistant_undistort_scale(theta: f64) -> f64 {
    if theta.abs() < 1e-6 {
        1.0 + theta * theta / 3.0
    } else {
        theta.tan() / theta
    }
}

/// Maps a fisheye (equidistant) offset from the principal point to the
/// rectilinear offset with the same focal length: `r_u = f tan(r_d / f)`.
pub fn undistort_equidistant(p_centered: Vector2<f64>, f: f64) -> Result<Vector2<f64>> {
    let theta = p_centered.norm() / f;
    if theta >= std::f64::consts::FRAC_PI_2 * (1.0 - HEMISPHERE_MARGIN) || !theta.is_finite() {
        return Err(Error::BeyondHemisphere { ratio: theta });
    }
    Ok(p_centered * equidistant_undistort_scale(theta))
}

/// Inverse of [`undistort_equidistant`]: `r_d = f atan(r_u / f)`.
pub fn distort_equidistant(p_centered: Vector2<f64>, f: f64) -> Vector2<f64> {
    let rho = p_centered.norm() / f;
    let scale = if rho < 1e-6 {
        1.0 - rho * rho / 3.0
    } else {
        rho.atan() / rho
    };
    p_centered * scale
}

pub fn apply_polynomial_undistortion(
    n: NormalizedPoint,
    k: &DistortionCoefficients,
) -> NormalizedPoint {
    let s = k.scale(n.radius_squared());
    NormalizedPoint::new(n.x * s, n.y * s)
}

/// Numerical inverse of [`apply_polynomial_undistortion`].
///
/// Newton iteration on the radius. Returns `None` when the polynomial is not
/// monotone up to the requested radius, so that no unique preimage exists.
pub fn invert_polynomial_undistortion(
    n: NormalizedPoint,
    k: &DistortionCoefficients,
) -> Option<NormalizedPoint> {
    let target = n.radius();
    if target == 0.0 {
        return Some(n);
    }
    let mut r = target;
    for _ in 0..100 {
        let value = r * k.scale(r * r) - target;
        let slope = k.radial_derivative(r);
        if slope <= 0.0 {
            return None;
        }
        let step = value / slope;
        r -= step;
        if r <= 0.0 {
            return None;
        }
        if step.abs() <= 1e-15 * r.max(1.0) {
            break;
        }
    }
    if (r * k.scale(r * r) - target).abs() > 1e-10 * target.max(1.0) {
        return None;
    }
    // the preimage must sit on the increasing branch
    let samples = 32;
    for i in 1..=samples {
        if k.radial_derivative(r * i as f64 / samples as f64) <= 0.0 {
            return None;
        }
    }
    let s = r / target;
    Some(NormalizedPoint::new(n.x * s, n.y * s))
}

/// `H = K [r1 | r2 | t]`, mapping homogeneous ground coordinates to
/// homogeneous pixels.
pub fn ground_plane_homography(intrinsics: &Intrinsics, pose: &Pose) -> Result<Matrix3<f64>> {
    homography_with_focal(intrinsics.focal(), intrinsics.principal_point(), pose)
}

pub(crate) fn homography_with_focal(
    f: f64,
    principal_point: PixelPoint,
    pose: &Pose,
) -> Result<Matrix3<f64>> {
    let r = &pose.rotation;
    let plane = Matrix3::from_columns(&[r.column(0).into(), r.column(1).into(), pose.translation]);
    let h = camera_matrix(f, principal_point) * plane;
    let scale = h.norm();
    let rel_det = if scale > 0.0 {
        h.determinant() / scale.powi(3)
    } else {
        0.0
    };
    if rel_det.abs() < 1e-12 {
        return Err(Error::DegenerateHomography { rel_det });
    }
    Ok(h)
}

fn dehomogenize(h: Vector3<f64>) -> Option<Vector2<f64>> {
    if h.z.abs() < 1e-9 * h.norm() || h.z == 0.0 {
        None
    } else {
        Some(Vector2::new(h.x / h.z, h.y / h.z))
    }
}

/// Applies a ground homography; negative homogeneous scale is accepted.
pub fn ground_to_pixel(h: &Matrix3<f64>, g: GroundPoint) -> Result<PixelPoint> {
    dehomogenize(h * Vector3::new(g.x, g.y, 1.0))
        .map(PixelPoint::from_vector)
        .ok_or(Error::PointAtHorizon)
}

pub fn pixel_to_ground(h: &Matrix3<f64>, p: PixelPoint) -> Result<GroundPoint> {
    let inv = h
        .try_inverse()
        .ok_or(Error::DegenerateHomography { rel_det: 0.0 })?;
    dehomogenize(inv * Vector3::new(p.u, p.v, 1.0))
        .map(|g| GroundPoint::new(g.x, g.y))
        .ok_or(Error::PointAtHorizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn overhead_pose() -> Pose {
        Pose::new(
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
            Vector3::new(0.0, 0.0, 10.0),
        )
    }

    fn hd(f: f64) -> Intrinsics {
        Intrinsics::new(f, 1280, 720).unwrap()
    }

    #[test]
    fn projects_overhead_camera() {
        let k = hd(1000.0);
        let (p, depth) =
            project_world_to_pixel(&k, &overhead_pose(), &Vector3::new(0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(p.u, 640.0);
        assert_relative_eq!(p.v, 360.0);
        assert_relative_eq!(depth, 10.0);
        let (p, _) =
            project_world_to_pixel(&k, &overhead_pose(), &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(p.u, 740.0);
        assert_relative_eq!(p.v, 360.0);
    }

    #[test]
    fn zero_depth_is_rejected() {
        let pose = Pose::new(Matrix3::identity(), Vector3::zeros());
        let err = project_world_to_pixel(&hd(1000.0), &pose, &Vector3::new(3.0, -2.0, 0.0));
        assert!(matches!(err, Err(Error::NonPositiveDepth { .. })));
    }

    #[test]
    fn normalization_pair() {
        let k = hd(500.0);
        let n = normalize_pixel(&k, PixelPoint::new(640.0, 360.0));
        assert_eq!((n.x, n.y), (0.0, 0.0));
        let n = normalize_pixel(&k, PixelPoint::new(1140.0, 360.0));
        assert_relative_eq!(n.x, 1.0);
        assert_relative_eq!(n.y, 0.0);
        let p = denormalize_point(&k, NormalizedPoint::new(1.0, 0.0));
        assert_relative_eq!(p.u, 1140.0);
        assert_relative_eq!(p.v, 360.0);
        let p = denormalize_point(&k, NormalizedPoint::new(0.0, 0.0));
        assert_eq!(p, k.principal_point());
    }

    #[test]
    fn intrinsics_bounds() {
        let diag = image_diagonal(1280, 720);
        assert!(Intrinsics::new(diag, 1280, 720).is_ok());
        assert!(Intrinsics::new(0.0, 1280, 720).is_err());
        assert!(Intrinsics::new(diag * 1.01, 1280, 720).is_err());
        assert!(Intrinsics::new(100.0, 0, 720).is_err());
        let k = hd(500.0).matrix();
        assert_eq!(
            k,
            Matrix3::new(500.0, 0.0, 640.0, 0.0, 500.0, 360.0, 0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn equidistant_examples() {
        let zero = undistort_equidistant(Vector2::zeros(), 700.0).unwrap();
        assert_eq!(zero, Vector2::zeros());
        assert_eq!(
            distort_equidistant(Vector2::zeros(), 700.0),
            Vector2::zeros()
        );

        let quarter = 500.0 * PI / 4.0;
        let u = undistort_equidistant(Vector2::new(392.699, 0.0), 500.0).unwrap();
        assert!((u.x - 500.0).abs() < 1e-3, "{}", u.x);
        let u = undistort_equidistant(Vector2::new(quarter, 0.0), 500.0).unwrap();
        assert_relative_eq!(u.x, 500.0, epsilon = 1e-9);

        let d = distort_equidistant(Vector2::new(500.0, 0.0), 500.0);
        assert!((d.x - 392.699).abs() < 1e-3);
        assert_eq!(d.y, 0.0);
    }

    #[test]
    fn hemisphere_guard() {
        let f = 400.0;
        let limit = PI / 2.0 * (1.0 - HEMISPHERE_MARGIN) * f;
        assert!(undistort_equidistant(Vector2::new(limit * 0.999, 0.0), f).is_ok());
        assert!(matches!(
            undistort_equidistant(Vector2::new(0.0, limit), f),
            Err(Error::BeyondHemisphere { .. })
        ));
        assert!(undistort_equidistant(Vector2::new(f * 2.0, 0.0), f).is_err());
    }

    #[test]
    fn small_angle_distortion_is_negligible() {
        for &f in &[100.0, 800.0, 2000.0] {
            let p = Vector2::new(0.006 * f, -0.008 * f);
            let d = distort_equidistant(p, f);
            assert!((d - p).norm() / p.norm() <= 1e-4);
        }
    }

    #[test]
    fn polynomial_examples() {
        let n = NormalizedPoint::new(0.3, -0.7);
        assert_eq!(
            apply_polynomial_undistortion(n, &DistortionCoefficients::default()),
            n
        );
        let u = apply_polynomial_undistortion(
            NormalizedPoint::new(0.5, 0.0),
            &DistortionCoefficients::new(0.1, 0.0, 0.0),
        );
        assert_relative_eq!(u.x, 0.5125, epsilon = 1e-15);
        assert_eq!(u.y, 0.0);
    }

    #[test]
    fn polynomial_inverse() {
        let k = DistortionCoefficients::new(0.335, 0.116, 0.095);
        let d = NormalizedPoint::new(0.4, -0.55);
        let u = apply_polynomial_undistortion(d, &k);
        let back = invert_polynomial_undistortion(u, &k).unwrap();
        assert_relative_eq!(back.x, d.x, epsilon = 1e-12);
        assert_relative_eq!(back.y, d.y, epsilon = 1e-12);
        // strongly negative k1 folds over: no unique preimage far out
        let fold = DistortionCoefficients::new(-1.0, 0.0, 0.0);
        assert!(invert_polynomial_undistortion(NormalizedPoint::new(0.5, 0.0), &fold).is_none());
    }

    #[test]
    fn homography_example() {
        let k = hd(1000.0);
        let pose = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -10.0));
        let h = ground_plane_homography(&k, &pose).unwrap();
        let expected = Matrix3::new(1000.0, 0.0, -6400.0, 0.0, 1000.0, -3600.0, 0.0, 0.0, -10.0);
        assert_relative_eq!(h, expected, epsilon = 1e-9);
        let p = ground_to_pixel(&h, GroundPoint::new(0.0, 0.0)).unwrap();
        assert_relative_eq!(p.u, 640.0);
        assert_relative_eq!(p.v, 360.0);
        let g = pixel_to_ground(&h, PixelPoint::new(640.0, 360.0)).unwrap();
        assert!(g.x.abs() < 1e-12 && g.y.abs() < 1e-12);
    }

    #[test]
    fn degenerate_homography() {
        let pose = Pose::new(Matrix3::identity(), Vector3::zeros());
        assert!(matches!(
            ground_plane_homography(&hd(1000.0), &pose),
            Err(Error::DegenerateHomography { .. })
        ));
    }

    #[test]
    fn horizon_pixel_has_no_ground_point() {
        // camera tilted 45 degrees down: the horizon is the image of the
        // vanishing line of the ground plane
        let k = hd(1000.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rotation = Matrix3::new(1.0, 0.0, 0.0, 0.0, -s, -s, 0.0, s, -s);
        let pose = Pose::new(rotation, Vector3::new(0.0, 0.0, 10.0 / s));
        assert!(pose.is_valid());
        let h = ground_plane_homography(&k, &pose).unwrap();
        // direction (0, 1, 0) vanishes at K * r2
        let r2 = rotation.column(1);
        let vp = PixelPoint::new(1000.0 * r2.x / r2.z + 640.0, 1000.0 * r2.y / r2.z + 360.0);
        assert!(matches!(
            pixel_to_ground(&h, vp),
            Err(Error::PointAtHorizon)
        ));
    }

    fn rotation_from_angles(a: f64, b: f64, c: f64) -> Matrix3<f64> {
        *nalgebra::Rotation3::from_euler_angles(a, b, c).matrix()
    }

    proptest! {
        #[test]
        fn equidistant_round_trip(f in 100.0f64..2000.0, ratio in 0.0f64..1.4, phi in 0.0f64..(2.0 * PI)) {
            let p = Vector2::new(phi.cos(), phi.sin()) * ratio * f;
            let back = distort_equidistant(undistort_equidistant(p, f).unwrap(), f);
            prop_assert!((back - p).norm() <= 1e-9 * f);
        }

        #[test]
        fn undistort_scale_grows_with_radius(a in 0.0f64..1.5, b in 0.0f64..1.5) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(equidistant_undistort_scale(lo) >= 1.0);
            prop_assert!(equidistant_undistort_scale(hi) > equidistant_undistort_scale(lo));
        }

        #[test]
        fn homography_matches_projection(
            yaw in -PI..PI, tilt in 0.3f64..1.3, roll in -0.3f64..0.3,
            x in -5.0f64..5.0, y in -5.0f64..5.0,
        ) {
            let rotation = rotation_from_angles(roll, tilt + PI / 2.0, yaw);
            let pose = Pose::new(rotation, Vector3::new(0.3, -0.2, 12.0));
            let k = hd(900.0);
            let h = ground_plane_homography(&k, &pose).unwrap();
            let via_h = ground_to_pixel(&h, GroundPoint::new(x, y)).unwrap();
            let cam = rotation * Vector3::new(x, y, 0.0) + pose.translation;
            let f = k.focal();
            let c = k.principal_point();
            let direct = PixelPoint::new(f * cam.x / cam.z + c.u, f * cam.y / cam.z + c.v);
            prop_assert!(via_h.distance(direct) <= 1e-9 * (1.0 + direct.u.abs().max(direct.v.abs())));
            let back = pixel_to_ground(&h, via_h).unwrap();
            prop_assert!((back.x - x).abs() <= 1e-9 && (back.y - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn mappings_commute_with_rotation_about_center() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let f = 640.0;
        for _ in 0..100 {
            let angle = rng.gen_range(0.0..2.0 * PI);
            let rot = nalgebra::Rotation2::new(angle);
            let p = Vector2::new(rng.gen_range(-700.0..700.0), rng.gen_range(-500.0..500.0));
            let a = rot * undistort_equidistant(p, f).unwrap();
            let b = undistort_equidistant(rot * p, f).unwrap();
            assert!((a - b).norm() <= 1e-9 * a.norm().max(1.0));
            let a = rot * distort_equidistant(p, f);
            let b = distort_equidistant(rot * p, f);
            assert!((a - b).norm() <= 1e-9 * a.norm().max(1.0));
        }
    }

    #[test]
    fn pose_invariants() {
        let pose = Pose::new(
            rotation_from_angles(0.2, -1.1, 2.5),
            Vector3::new(0.0, 0.0, 3.0),
        );
        assert!(pose.is_valid());
        let bad = Pose::new(Matrix3::identity() * 1.001, Vector3::zeros());
        assert!(!bad.is_valid());
    }
}
