use autocalib::extrinsics::LineSegment;
use autocalib::geometry::undistort_equidistant;
use autocalib::intrinsics::estimate_focal;
use autocalib::intrinsics::FocalSearchConfig;
use autocalib::oracle::focal_error_percent;
use autocalib::tracks::fit_line;
use autocalib::{generate_scene, Intrinsics, PixelPoint, SceneSpec};

fn undistort_with_truth(k: &Intrinsics, p: PixelPoint) -> PixelPoint {
    let c = k.principal_point();
    let centered = nalgebra::Vector2::new(p.u - c.u, p.v - c.v);
    let u = undistort_equidistant(centered, k.focal()).unwrap();
    PixelPoint::new(u.x + c.u, u.y + c.v)
}

#[test]
fn noiseless_tracks_undistort_to_straight_lines() {
    let scene = generate_scene(&SceneSpec::default()).unwrap();
    let k = scene.truth.intrinsics;
    for track in &scene.tracks {
        let pts: Vec<PixelPoint> = track
            .points()
            .map(|p| undistort_with_truth(&k, p))
            .collect();
        let fit = fit_line(&pts).unwrap();
        assert!(fit.sse <= 1e-6, "track {} sse {}", track.id(), fit.sse);
        // and visibly bent before undistortion
    }
    let bent = scene
        .tracks
        .iter()
        .map(|t| fit_line(&t.points().collect::<Vec<_>>()).unwrap().sse)
        .fold(0.0, f64::max);
    assert!(bent > 1.0);
}

#[test]
fn segment_extensions_meet_true_vanishing_points() {
    for pitch in [30.0, 45.0, 60.0] {
        let spec = SceneSpec {
            pitch_deg: pitch,
            ..Default::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let k = scene.truth.intrinsics;
        let vps = [scene.truth.vp_x.unwrap(), scene.truth.vp_y.unwrap()];
        for m in &scene.matches {
            let seg = LineSegment::new(
                undistort_with_truth(&k, m.from),
                undistort_with_truth(&k, m.to),
            )
            .unwrap();
            let d = vps
                .iter()
                .map(|&vp| seg.line_distance(vp).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(
                d <= 1.0,
                "pitch {pitch}: segment misses both vanishing points by {d}"
            );
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = SceneSpec {
        noise_sigma: 0.7,
        seed: 9,
        ..Default::default()
    };
    let a = generate_scene(&spec).unwrap();
    let b = generate_scene(&spec).unwrap();
    assert_eq!(a.tracks_json, b.tracks_json);
    assert_eq!(a.segments_json, b.segments_json);
    assert_eq!(a.truth_json, b.truth_json);
    let c = generate_scene(&SceneSpec { seed: 10, ..spec }).unwrap();
    assert_ne!(a.tracks_json, c.tracks_json);
}

#[test]
fn generated_files_load_back() {
    let scene = generate_scene(&SceneSpec::default()).unwrap();
    let (meta, tracks) =
        autocalib::tracks::parse_tracks(&scene.tracks_json, "tracks.json").unwrap();
    assert_eq!(meta, scene.meta);
    assert_eq!(tracks, scene.tracks);
    let segments =
        autocalib::io::parse_segment_file(&scene.segments_json, "segments.json").unwrap();
    assert_eq!(segments.stride, 6);
    assert_eq!(segments.matches.len(), scene.matches.len());
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn focal_error_grows_with_noise() {
    let mut medians = Vec::new();
    for sigma in [0.0, 0.5, 1.0] {
        let errors: Vec<f64> = (0..20)
            .map(|seed| {
                let spec = SceneSpec {
                    noise_sigma: sigma,
                    seed,
                    ..Default::default()
                };
                let scene = generate_scene(&spec).unwrap();
                let result = autocalib::calibrate_intrinsics(
                    &scene.meta,
                    &scene.tracks,
                    &Default::default(),
                )
                .unwrap();
                focal_error_percent(result.intrinsics.focal(), spec.focal)
            })
            .collect();
        medians.push(median(errors));
    }
    assert!(
        medians[0] <= medians[1] && medians[1] <= medians[2],
        "{medians:?}"
    );
}

#[test]
fn doubling_resolution_doubles_focal() {
    let base = SceneSpec::default();
    let double = SceneSpec {
        focal: 2.0 * base.focal,
        width: 2 * base.width,
        height: 2 * base.height,
        ..base.clone()
    };
    let mut estimates = Vec::new();
    for spec in [&base, &double] {
        let scene = generate_scene(spec).unwrap();
        let (f, _) = estimate_focal(
            &scene.tracks,
            (spec.width, spec.height),
            &FocalSearchConfig::default(),
        )
        .unwrap();
        estimates.push(f);
    }
    let ratio = estimates[1] / estimates[0];
    assert!((ratio - 2.0).abs() <= 0.02, "{estimates:?}");
}
