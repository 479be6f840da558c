//! Synthetic traffic scenes with known calibration, and scoring of a
//! recovered calibration against them.
//!
//! Vehicles are rigid clouds of keypoints driving along two perpendicular
//! world directions on the ground plane. Keypoints are projected through an
//! ideal pinhole camera, bent by an equidistant fisheye of the same focal
//! length, perturbed by isotropic Gaussian noise, and written out in the
//! trajectory and segment file formats.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrinsics::{ExtrinsicResult, KeypointMatch};
use crate::geometry::{distort_equidistant, Intrinsics, PixelPoint, Pose};
use crate::intrinsics::IntrinsicResult;
use crate::io::{
    matrix_to_rows, rows_to_matrix, to_json_string, SegmentFile, TruthFile, VideoMeta,
    SEGMENTS_SCHEMA,
};
use crate::tracks::{tracks_to_file, Track};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    /// Heading of the optical axis from world `+x` toward `+y`, degrees.
    pub yaw_deg: f64,
    /// Depression of the optical axis below the horizon, degrees.
    pub pitch_deg: f64,
    pub roll_deg: f64,
    /// Camera height above the ground plane.
    pub camera_height: f64,
    pub vehicles_per_direction: usize,
    /// Speed range in height units per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    pub keypoints_per_vehicle: usize,
    /// Lanes are offset at most this far from the world origin.
    pub lane_spread: f64,
    pub frame_count: u32,
    pub fps: f64,
    pub stride: u32,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            focal: 800.0,
            width: 1280,
            height: 720,
            yaw_deg: 45.0,
            pitch_deg: 45.0,
            roll_deg: 0.0,
            camera_height: 10.0,
            vehicles_per_direction: 8,
            speed_min: 0.05,
            speed_max: 0.12,
            keypoints_per_vehicle: 4,
            lane_spread: 8.0,
            frame_count: 150,
            fps: 30.0,
            stride: 6,
            noise_sigma: 0.0,
            seed: 42,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScene(m.to_string()));
        if !(self.camera_height > 0.0) {
            return bad("camera height must be positive");
        }
        if !(self.pitch_deg > 0.0 && self.pitch_deg <= 90.0) {
            return bad("pitch must lie in (0, 90] degrees");
        }
        if self.vehicles_per_direction == 0 || self.keypoints_per_vehicle == 0 {
            return bad("need at least one vehicle and one keypoint per vehicle");
        }
        if !(self.speed_min > 0.0 && self.speed_min <= self.speed_max) {
            return bad("need 0 < speed_min <= speed_max");
        }
        if self.frame_count < 2 || self.stride == 0 {
            return bad("need at least 2 frames and a positive stride");
        }
        if !(self.noise_sigma >= 0.0) || !(self.lane_spread >= 0.0) || !(self.fps > 0.0) {
            return bad("noise, lane spread and fps must be non-negative");
        }
        Intrinsics::new(self.focal, self.width, self.height)?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(self.focal, self.width, self.height)
    }

    /// World-to-camera pose; the optical axis meets the ground at the world
    /// origin.
    pub fn pose(&self) -> Pose {
        let (yaw, pitch, roll) = (
            self.yaw_deg.to_radians(),
            self.pitch_deg.to_radians(),
            self.roll_deg.to_radians(),
        );
        let forward = Vector3::new(
            pitch.cos() * yaw.cos(),
            pitch.cos() * yaw.sin(),
            -pitch.sin(),
        );
        let right0 = Vector3::new(yaw.sin(), -yaw.cos(), 0.0);
        let down0 = forward.cross(&right0);
        let right = right0 * roll.cos() + down0 * roll.sin();
        let down = -right0 * roll.sin() + down0 * roll.cos();
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let range = self.camera_height / pitch.sin();
        Pose::new(rotation, Vector3::new(0.0, 0.0, range))
    }
}

/// Relabels the ground axes so that both road directions point away from
/// the camera and `z` points up toward it; the same convention the
/// extrinsic stage produces.
pub fn canonical_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let mut c1: Vector3<f64> = r.column(0).into();
    let mut c2: Vector3<f64> = r.column(1).into();
    if c1.z < 0.0 {
        c1 = -c1;
    }
    if c2.z < 0.0 {
        c2 = -c2;
    }
    if c1.cross(&c2).z > 0.0 {
        std::mem::swap(&mut c1, &mut c2);
    }
    Matrix3::from_columns(&[c1, c2, c1.cross(&c2)])
}

/// Vanishing point of a world direction in the undistorted image, `None`
/// when it lies at infinity.
pub fn vanishing_point(
    intrinsics: &Intrinsics,
    rotation: &Matrix3<f64>,
    axis: usize,
) -> Option<PixelPoint> {
    let d = rotation.column(axis);
    if d.z.abs() < 1e-9 {
        return None;
    }
    let c = intrinsics.principal_point();
    let f = intrinsics.focal();
    Some(PixelPoint::new(c.u + f * d.x / d.z, c.v + f * d.y / d.z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub camera_height: f64,
    pub vp_x: Option<PixelPoint>,
    pub vp_y: Option<PixelPoint>,
}

impl GroundTruth {
    pub fn from_pose(intrinsics: Intrinsics, pose: &Pose, camera_height: f64) -> Self {
        let rotation = canonical_rotation(&pose.rotation);
        Self {
            intrinsics,
            pose: Pose::new(rotation, pose.translation),
            camera_height,
            vp_x: vanishing_point(&intrinsics, &rotation, 0),
            vp_y: vanishing_point(&intrinsics, &rotation, 1),
        }
    }

    pub fn degenerate_vps(&self) -> bool {
        self.vp_x.is_none() || self.vp_y.is_none()
    }

    pub fn to_file(&self) -> TruthFile {
        let t = self.pose.translation;
        TruthFile {
            f: self.intrinsics.focal(),
            dist_model: "equidistant".to_string(),
            r: matrix_to_rows(&self.pose.rotation),
            t: [t.x, t.y, t.z],
            height: self.camera_height,
            width: self.intrinsics.width(),
            image_height: self.intrinsics.height(),
            degenerate_vps: self.degenerate_vps(),
        }
    }

    pub fn from_file(file: &TruthFile) -> Result<Self> {
        let intrinsics = Intrinsics::new(file.f, file.width, file.image_height)?;
        let pose = Pose::new(rows_to_matrix(&file.r), Vector3::from(file.t));
        Ok(Self::from_pose(intrinsics, &pose, file.height))
    }
}

/// Generated files plus the truth they were generated from.
#[derive(Debug, Clone)]
pub struct Scene {
    pub tracks_json: String,
    pub segments_json: String,
    pub truth_json: String,
    pub truth: GroundTruth,
    pub meta: VideoMeta,
    pub tracks: Vec<Track>,
    pub matches: Vec<KeypointMatch>,
}

struct Vehicle {
    /// Body-frame keypoints: along-track, cross-track, height.
    keypoints: Vec<Vector3<f64>>,
    start: Vector2<f64>,
    velocity: Vector2<f64>,
}

impl Vehicle {
    fn keypoint_at(&self, k: usize, frame: u32) -> Vector3<f64> {
        let heading = self.velocity.normalize();
        let side = Vector2::new(-heading.y, heading.x);
        let kp = self.keypoints[k];
        let ground = self.start + self.velocity * frame as f64 + heading * kp.x + side * kp.y;
        Vector3::new(ground.x, ground.y, kp.z)
    }
}

struct Camera {
    intrinsics: Intrinsics,
    pose: Pose,
}

impl Camera {
    /// Noiseless fisheye pixel of a world point, if it lands in the image.
    fn observe(&self, world: &Vector3<f64>) -> Option<PixelPoint> {
        let cam = self.pose.rotation * world + self.pose.translation;
        if cam.z <= 1e-6 {
            return None;
        }
        let f = self.intrinsics.focal();
        let c = self.intrinsics.principal_point().to_vector();
        let p = distort_equidistant(Vector2::new(f * cam.x / cam.z, f * cam.y / cam.z), f) + c;
        let inside = p.x >= 0.0
            && p.y >= 0.0
            && p.x < self.intrinsics.width() as f64
            && p.y < self.intrinsics.height() as f64;
        inside.then(|| PixelPoint::from_vector(p))
    }
}

const PLACEMENT_ATTEMPTS: usize = 2000;

fn place_vehicle(
    spec: &SceneSpec,
    camera: &Camera,
    along_x: bool,
    rng: &mut ChaCha8Rng,
) -> Option<Vehicle> {
    for _ in 0..PLACEMENT_ATTEMPTS {
        let speed = rng.gen_range(spec.speed_min..=spec.speed_max);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let lane = rng.gen_range(-spec.lane_spread..=spec.lane_spread);
        let travel = speed * (spec.frame_count - 1) as f64;
        // start so that the midpoint of the drive falls within the spread
        let mid = rng.gen_range(-2.0 * spec.lane_spread..=2.0 * spec.lane_spread);
        let along0 = mid - sign * travel / 2.0;
        let (start, velocity) = if along_x {
            (Vector2::new(along0, lane), Vector2::new(sign * speed, 0.0))
        } else {
            (Vector2::new(lane, along0), Vector2::new(0.0, sign * speed))
        };
        let keypoints = (0..spec.keypoints_per_vehicle)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(0.0..1.4),
                )
            })
            .collect();
        let vehicle = Vehicle {
            keypoints,
            start,
            velocity,
        };
        let visible = (0..spec.keypoints_per_vehicle).all(|k| {
            (0..spec.frame_count)
                .all(|frame| camera.observe(&vehicle.keypoint_at(k, frame)).is_some())
        });
        if visible {
            return Some(vehicle);
        }
    }
    None
}

/// Generates a scene; identical specs give byte-identical files.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let camera = Camera {
        intrinsics: spec.intrinsics()?,
        pose: spec.pose(),
    };
    let truth = GroundTruth::from_pose(camera.intrinsics, &camera.pose, spec.camera_height);
    if truth.degenerate_vps() {
        log::warn!("road directions are parallel to the image plane: vanishing points at infinity");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidScene(e.to_string()))?;

    let mut vehicles = Vec::new();
    for along_x in [true, false] {
        for _ in 0..spec.vehicles_per_direction {
            match place_vehicle(spec, &camera, along_x, &mut rng) {
                Some(v) => vehicles.push(v),
                None => log::warn!("could not keep a vehicle in view for the whole clip"),
            }
        }
    }
    if vehicles.is_empty() {
        return Err(Error::CameraSeesNothing);
    }

    let mut jitter = |p: PixelPoint| -> PixelPoint {
        if spec.noise_sigma > 0.0 {
            PixelPoint::new(p.u + noise.sample(&mut rng), p.v + noise.sample(&mut rng))
        } else {
            p
        }
    };
    let mut tracks = Vec::new();
    let mut observations: Vec<Vec<PixelPoint>> = Vec::new();
    for (vi, vehicle) in vehicles.iter().enumerate() {
        for k in 0..spec.keypoints_per_vehicle {
            let seen: Vec<PixelPoint> = (0..spec.frame_count)
                .map(|frame| {
                    let clean = camera
                        .observe(&vehicle.keypoint_at(k, frame))
                        .expect("placement guarantees visibility");
                    jitter(clean)
                })
                .collect();
            let id = (vi * spec.keypoints_per_vehicle + k) as i64;
            tracks.push(Track::from_points(
                id,
                seen.iter().enumerate().map(|(f, &p)| (f as i64, p)),
            )?);
            observations.push(seen);
        }
    }

    let stride = spec.stride as usize;
    let mut matches = Vec::new();
    let mut a = 0usize;
    while a + stride < spec.frame_count as usize {
        for seen in &observations {
            matches.push(KeypointMatch {
                frame_a: a as i64,
                frame_b: (a + stride) as i64,
                from: seen[a],
                to: seen[a + stride],
            });
        }
        a += stride;
    }

    let meta = VideoMeta {
        width: spec.width,
        height: spec.height,
        frame_count: spec.frame_count,
        fps: spec.fps,
    };
    let segment_file = SegmentFile {
        schema: SEGMENTS_SCHEMA.to_string(),
        stride: spec.stride,
        matches: matches.iter().map(KeypointMatch::to_tuple).collect(),
    };
    Ok(Scene {
        tracks_json: to_json_string(&tracks_to_file(meta, &tracks))?,
        segments_json: to_json_string(&segment_file)?,
        truth_json: to_json_string(&truth.to_file())?,
        truth,
        meta,
        tracks,
        matches,
    })
}

/// Calibration errors against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub focal_error_pct: f64,
    pub undistorted_focal_error_pct: Option<f64>,
    pub rotation_error_deg: Option<f64>,
    pub vp_x_error_px: Option<f64>,
    pub vp_y_error_px: Option<f64>,
    pub translation_error_pct: Option<f64>,
    pub mean_sse_before: f64,
    pub mean_sse_after: f64,
}

pub fn focal_error_percent(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs() / truth * 100.0
}

/// Angle of the relative rotation `a^T b`, degrees.
pub fn rotation_angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a.transpose() * b;
    let axis = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    axis.norm().atan2(m.trace() - 1.0).to_degrees()
}

pub fn evaluate_recovery(
    truth: &GroundTruth,
    intrinsic: &IntrinsicResult,
    extrinsic: Option<&ExtrinsicResult>,
) -> RecoveryReport {
    let f_true = truth.intrinsics.focal();
    let vp_error = |est: PixelPoint, t: Option<PixelPoint>| t.map(|t| est.distance(t));
    RecoveryReport {
        focal_error_pct: focal_error_percent(intrinsic.intrinsics.focal(), f_true),
        undistorted_focal_error_pct: extrinsic.map(|e| focal_error_percent(e.f_new, f_true)),
        rotation_error_deg: extrinsic
            .map(|e| rotation_angle_deg(&e.pose.rotation, &truth.pose.rotation)),
        vp_x_error_px: extrinsic.and_then(|e| vp_error(e.vanishing_points.vp_x, truth.vp_x)),
        vp_y_error_px: extrinsic.and_then(|e| vp_error(e.vanishing_points.vp_y, truth.vp_y)),
        translation_error_pct: extrinsic.map(|e| {
            let tz = truth.pose.translation.z;
            (e.pose.translation.z - tz).abs() / tz.abs() * 100.0
        }),
        mean_sse_before: intrinsic.mean_sse_before(),
        mean_sse_after: intrinsic.mean_sse_after(),
    }
}
