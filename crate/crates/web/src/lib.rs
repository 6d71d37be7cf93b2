//! Browser bindings: single-frame pose exploration, scenario timelines and
//! timeseries analysis. Every export returns a JSON string.

use drowsy_core::config::PipelineConfig;
use drowsy_core::events::{analyze, window_stats, DrowsinessEvent, WindowStats};
use drowsy_core::geometry::{
    derive_chin_from, eye_roi, mouth_roi, BBox, EyeSide, FaceObservation, ImageSize, Landmarks5, Point2, RoiRect,
};
use drowsy_core::pipeline::run;
use drowsy_core::pose::{default_camera, euler_to_rotation, project_points, ChinModel, FaceModel3D, PnpSolver, SolverParams};
use drowsy_core::recorder::{read_timeseries, Format, FrameRecord};
use drowsy_core::synth::{generate, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;

fn pt(p: Point2) -> Value {
    json!([p.x, p.y])
}

fn rect(r: Result<RoiRect, impl std::fmt::Display>) -> Value {
    match r {
        Ok(r) => json!([r.x0, r.y0, r.x1, r.y1]),
        Err(_) => Value::Null,
    }
}

/// Projects the face model at the given pose, perturbs the five detector
/// landmarks, re-derives the chin and estimates the pose back.
pub fn pose_explorer_json(
    yaw: f64,
    pitch: f64,
    roll: f64,
    distance_mm: f64,
    noise_px: f64,
    seed: u64,
) -> Result<Value, String> {
    if !(noise_px >= 0.0 && noise_px.is_finite()) {
        return Err("noise must be a non-negative number of pixels".into());
    }
    let image = ImageSize::new(WIDTH, HEIGHT);
    let cam = default_camera(WIDTH, HEIGHT).map_err(|e| e.to_string())?;
    let model = FaceModel3D::canonical();
    let r = euler_to_rotation(yaw, pitch, roll);
    let px = project_points(&model.points(), &r, &nalgebra::Vector3::new(0.0, 0.0, distance_mm), &cam)
        .map_err(|e| e.to_string())?;
    let noise = Normal::new(0.0, noise_px).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |p: Point2| Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng));
    let lm = Landmarks5 {
        left_eye: jitter(px[0]),
        right_eye: jitter(px[1]),
        nose: jitter(px[2]),
        mouth_left: jitter(px[3]),
        mouth_right: jitter(px[4]),
    };
    let six = derive_chin_from(&lm, PipelineConfig::default().chin_k).map_err(|e| e.to_string())?;

    let (x0, x1) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.x), a.1.max(p.x)));
    let (y0, y1) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.y), a.1.max(p.y)));
    let (w, h) = (x1 - x0, y1 - y0);
    let bbox = [x0 - 0.25 * w, y0 - 0.25 * h, 1.5 * w, 1.5 * h];
    let rois = FaceObservation::new(
        BBox::new(bbox[0], bbox[1], bbox[2], bbox[3]),
        lm,
        0.99,
        0,
        0,
        image,
    )
    .map(|obs| {
        json!({
            "left_eye": rect(eye_roi(&obs, EyeSide::Left, image)),
            "mouth": rect(mouth_roi(&obs, image)),
        })
    })
    .unwrap_or(Value::Null);

    let estimate = PnpSolver::new(SolverParams::default(), ChinModel::Derived { k: PipelineConfig::default().chin_k })
        .solve(&six, &model, &cam)
        .map(|p| {
            json!({
                "yaw": p.yaw_deg, "pitch": p.pitch_deg, "roll": p.roll_deg,
                "rms": p.reproj_rms_px, "tvec": p.tvec, "iterations": p.iterations,
            })
        })
        .map_err(|e| e.to_string());
    Ok(json!({
        "image": [WIDTH, HEIGHT],
        "true_points": px.iter().map(|&p| pt(p)).collect::<Vec<_>>(),
        "landmarks": six.points().iter().map(|&p| pt(p)).collect::<Vec<_>>(),
        "bbox": bbox,
        "roi": rois,
        "estimate": match estimate {
            Ok(v) => v,
            Err(e) => json!({"error": e}),
        },
    }))
}

fn record_json(r: &FrameRecord) -> Value {
    json!({
        "t": r.timestamp_ms,
        "detected": r.face_detected,
        "held": r.held,
        "eye": r.eye_state.as_str(),
        "mouth": r.mouth_state.as_str(),
        "yaw": r.pose.map(|p| p.angles.yaw_deg),
        "pitch": r.pose.map(|p| p.angles.pitch_deg),
        "roll": r.pose.map(|p| p.angles.roll_deg),
    })
}

fn event_json(e: &DrowsinessEvent) -> Value {
    json!({"kind": e.kind.as_str(), "start_ms": e.start_ms, "end_ms": e.end_ms, "magnitude": e.magnitude})
}

fn stats_json(s: &WindowStats) -> Value {
    json!({
        "start_ms": s.window_start_ms, "end_ms": s.window_end_ms,
        "blinks": s.blink_count, "yawns": s.yawn_count, "nods": s.nod_count,
        "closed_frac": s.closed_fraction, "held_frac": s.held_fraction,
        "valid_frac": s.valid_fraction, "mean_pitch": s.mean_pitch_deg,
    })
}

fn summarize(records: &[FrameRecord], cfg: &PipelineConfig, window_ms: u64) -> Result<Value, String> {
    let events = analyze(records, &cfg.events);
    let stats = window_stats(records, &events, window_ms, window_ms).map_err(|e| e.to_string())?;
    Ok(json!({
        "records": records.iter().map(record_json).collect::<Vec<_>>(),
        "events": events.iter().map(event_json).collect::<Vec<_>>(),
        "stats": stats.iter().map(stats_json).collect::<Vec<_>>(),
    }))
}

/// Renders a scenario, runs the extraction pipeline over it and reports the
/// per-frame trace, events and windowed statistics.
pub fn drowsiness_timeline_json(scenario: &str, window_ms: u64) -> Result<Value, String> {
    let scn = Scenario::from_json(scenario).map_err(|e| e.to_string())?;
    let out = generate(&scn).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        image_size: scn.image_size,
        camera: scn.camera.clone(),
        ..PipelineConfig::default()
    };
    let records = run(&cfg, &out.detections).map_err(|e| e.to_string())?;
    let mut v = summarize(&records, &cfg, window_ms)?;
    v["truth"] = out.truth.iter().map(|t| json!({"t": t.t_ms, "yaw": t.yaw, "pitch": t.pitch})).collect();
    Ok(v)
}

/// Parses a CSV or JSON-lines timeseries and reports events and statistics.
pub fn analyze_timeseries_json(text: &str, format: &str, window_ms: u64) -> Result<Value, String> {
    let format: Format = format.parse()?;
    let records = read_timeseries(text.as_bytes(), format).map_err(|e| e.to_string())?;
    if records.is_empty() {
        return Err("timeseries is empty".into());
    }
    summarize(&records, &PipelineConfig::default(), window_ms)
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn pose_explorer(yaw: f64, pitch: f64, roll: f64, distance_mm: f64, noise_px: f64, seed: u32) -> Result<String, JsError> {
    to_js(pose_explorer_json(yaw, pitch, roll, distance_mm, noise_px, seed as u64))
}

#[wasm_bindgen]
pub fn drowsiness_timeline(scenario: &str, window_ms: u32) -> Result<String, JsError> {
    to_js(drowsiness_timeline_json(scenario, window_ms as u64))
}

#[wasm_bindgen]
pub fn analyze_timeseries(text: &str, format: &str, window_ms: u32) -> Result<String, JsError> {
    to_js(analyze_timeseries_json(text, format, window_ms as u64))
}
