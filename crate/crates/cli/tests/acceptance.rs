//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use drowsy_core::classify::{
    compute_metrics, format_model_comparison, ConfusionMatrix, ModelReportRow, OpenState, StateVerdict,
};
use drowsy_core::config::PipelineConfig;
use drowsy_core::events::{frame_durations, segment_episodes, Channel, Episode};
use drowsy_core::geometry::{
    eye_roi_unclamped, mouth_roi_unclamped, BBox, EyeSide, FaceObservation, ImageSize, LandmarkSet6, Landmarks5, Point2,
};
use drowsy_core::pipeline::run;
use drowsy_core::pose::{default_camera, euler_to_rotation, project_points, solve_pnp, EulerAngles, FaceModel3D};
use drowsy_core::recorder::{
    read_timeseries, write_timeseries, Format, FrameRecord, FrameResult, HoldPolicy, PoseSample, Recorder,
};
use drowsy_core::synth::{generate, Scenario};
use nalgebra::Vector3;
use num_rational::Ratio;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn six(px: &[Point2]) -> LandmarkSet6 {
    LandmarkSet6::from_points([px[0], px[1], px[2], px[3], px[4], px[5]])
}

fn criterion_1() -> Outcome {
    let cam = default_camera(640, 480).unwrap();
    let model = FaceModel3D::canonical();
    let pts = model.points();
    let start = Instant::now();
    let (mut max_err, mut max_rms, mut n) = (0.0f64, 0.0f64, 0);
    for yaw in (-45..=45).step_by(15) {
        for pitch in (-30..=30).step_by(15) {
            for roll in [-20, 0, 20] {
                for z in [600.0, 1000.0, 1500.0] {
                    let (y, p, r) = (yaw as f64, pitch as f64, roll as f64);
                    let px = project_points(&pts, &euler_to_rotation(y, p, r), &Vector3::new(0.0, 0.0, z), &cam)
                        .map_err(|e| format!("projection at ({y}, {p}, {r}, {z}): {e}"))?;
                    let pose = solve_pnp(&six(&px), &model, &cam).map_err(|e| format!("({y}, {p}, {r}, {z}): {e}"))?;
                    let err = (pose.yaw_deg - y).abs().max((pose.pitch_deg - p).abs()).max((pose.roll_deg - r).abs());
                    max_err = max_err.max(err);
                    max_rms = max_rms.max(pose.reproj_rms_px);
                    n += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(n == 315, || format!("{n} cases"))?;
    check(max_err <= 0.01, || format!("max angle error {max_err:.3e} deg"))?;
    check(max_rms <= 1e-6, || format!("max rms {max_rms:.3e} px"))?;
    check(secs < 2.0, || format!("grid took {secs:.3} s"))?;
    Ok(format!("{n} grid poses, max error {max_err:.2e} deg, max rms {max_rms:.2e} px, {secs:.3} s"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn criterion_2() -> Outcome {
    let cam = default_camera(640, 480).unwrap();
    let model = FaceModel3D::canonical();
    let (y, p, r) = (20.0, -10.0, 5.0);
    let clean = project_points(&model.points(), &euler_to_rotation(y, p, r), &Vector3::new(0.0, 0.0, 1000.0), &cam).unwrap();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut errs = [Vec::new(), Vec::new(), Vec::new()];
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let px: Vec<Point2> = clean
            .iter()
            .map(|q| Point2::new(q.x + noise.sample(&mut rng), q.y + noise.sample(&mut rng)))
            .collect();
        let pose = solve_pnp(&six(&px), &model, &cam).map_err(|e| format!("trial {trial}: {e}"))?;
        errs[0].push((pose.yaw_deg - y).abs());
        errs[1].push((pose.pitch_deg - p).abs());
        errs[2].push((pose.roll_deg - r).abs());
    }
    let [my, mp, mr] = errs.map(median);
    check(my <= 2.0 && mp <= 2.0 && mr <= 2.0, || format!("median errors yaw {my:.3} pitch {mp:.3} roll {mr:.3}"))?;
    Ok(format!("median |error| yaw {my:.3}, pitch {mp:.3}, roll {mr:.3} deg over 100 trials"))
}

fn criterion_3() -> Outcome {
    let scn = Scenario::from_json(
        r#"{"fps": 30, "duration_ms": 2000, "segments": [{"start_ms": 0, "end_ms": 2000, "yaw": [-30, 30]}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let out = generate(&scn).map_err(|e| e.to_string())?;
    let recs = run(&PipelineConfig::default(), &out.detections).map_err(|e| e.to_string())?;
    check(recs.len() == out.truth.len() && recs.len() == 60, || format!("{} records", recs.len()))?;
    let mut worst = 0.0f64;
    for (r, t) in recs.iter().zip(&out.truth) {
        let pose = r.pose.ok_or_else(|| format!("frame {} has no pose", r.frame_index))?;
        worst = worst.max((pose.angles.yaw_deg - t.yaw).abs());
    }
    check(worst <= 0.5, || format!("worst yaw error {worst:.4} deg"))?;
    Ok(format!("60 frames, worst yaw error {worst:.2e} deg"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let image = ImageSize::new(1920, 1080);
    let cases = 2000;
    for i in 0..cases {
        let w: f64 = rng.random_range(10.0..900.0);
        let h: f64 = rng.random_range(10.0..900.0);
        let x: f64 = rng.random_range(-200.0..1800.0);
        let y: f64 = rng.random_range(-200.0..1000.0);
        let mut pt = || Point2::new(x + rng.random_range(0.0..w), y + rng.random_range(0.0..h));
        let lm = Landmarks5 {
            left_eye: pt(),
            right_eye: pt(),
            nose: pt(),
            mouth_left: pt(),
            mouth_right: pt(),
        };
        let obs = FaceObservation::new(BBox::new(x, y, w, h), lm, 0.9, i, 0, image).map_err(|e| e.to_string())?;
        for (rect, fw, fh) in [
            (eye_roi_unclamped(&obs, EyeSide::Left), 0.20, 0.15),
            (eye_roi_unclamped(&obs, EyeSide::Right), 0.20, 0.15),
            (mouth_roi_unclamped(&obs), 0.30, 0.15),
        ] {
            let dw = (rect.width() as f64 - fw * w).abs();
            let dh = (rect.height() as f64 - fh * h).abs();
            check(dw <= 1.0 && dh <= 1.0, || {
                format!("case {i}: {:?} {}x{} for box {w}x{h}", rect.kind, rect.width(), rect.height())
            })?;
        }
    }
    Ok(format!("{cases} random faces, all ROI sides within 1 px"))
}

fn criterion_5() -> Outcome {
    let scn = Scenario::from_json(
        r#"{"fps": 10, "duration_ms": 6000, "dropout": [[1000, 4500]],
            "segments": [{"start_ms": 0, "end_ms": 6000, "yaw": [-10, 10], "eye": "closed"}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    check(cfg.hold.enabled && cfg.hold.max_hold_ms == 2000, || "unexpected default hold".into())?;
    let recs = run(&cfg, &scn_detections(&scn)?).map_err(|e| e.to_string())?;
    let last_valid = recs.iter().rfind(|r| r.timestamp_ms < 1000).ok_or("no valid frame before dropout")?;
    let (mut held, mut unknown) = (0, 0);
    for r in &recs {
        let t = r.timestamp_ms;
        if (1000..=2900).contains(&t) {
            check(r.held && !r.face_detected && r.same_payload(last_valid), || format!("t={t} not a held copy: {r:?}"))?;
            held += 1;
        } else if (3000..4500).contains(&t) {
            let empty = FrameRecord::empty(r.frame_index, t);
            check(*r == empty, || format!("t={t} should be unknown: {r:?}"))?;
            unknown += 1;
        } else {
            check(r.face_detected && !r.held, || format!("t={t} should be detected"))?;
        }
    }
    check(held == 20 && unknown == 15, || format!("{held} held, {unknown} unknown"))?;
    Ok(format!("{held} held copies of frame {} then {unknown} unknown frames", last_valid.frame_index))
}

fn scn_detections(scn: &Scenario) -> Result<Vec<drowsy_core::detections::DetectionFrame>, String> {
    Ok(generate(scn).map_err(|e| e.to_string())?.detections)
}

/// Brute force: relabel unknowns, then repeatedly flip the shortest short run.
fn reference_episodes(records: &[FrameRecord], debounce: u64) -> Vec<(OpenState, u64, u64, u64, u64)> {
    let d = frame_durations(records);
    let states: Vec<OpenState> = records.iter().map(|r| r.eye_state).collect();
    let Some(lo) = states.iter().position(|s| s.is_known()) else {
        return Vec::new();
    };
    let hi = states.iter().rposition(|s| s.is_known()).unwrap();
    let mut lab: Vec<OpenState> = Vec::new();
    for s in &states[lo..=hi] {
        lab.push(if s.is_known() { *s } else { *lab.last().unwrap() });
    }
    let runs = |lab: &[OpenState]| {
        let mut v: Vec<(usize, usize)> = Vec::new();
        for i in 0..lab.len() {
            if i > 0 && lab[i] == lab[i - 1] {
                v.last_mut().unwrap().1 = i;
            } else {
                v.push((i, i));
            }
        }
        v
    };
    let dur = |a: usize, b: usize| (a..=b).map(|i| d[lo + i]).sum::<u64>();
    loop {
        let rs = runs(&lab);
        if rs.len() < 2 {
            break;
        }
        let Some(&(a, b)) = rs.iter().filter(|&&(a, b)| dur(a, b) < debounce).min_by_key(|&&(a, b)| (dur(a, b), a)) else {
            break;
        };
        let flip = if lab[a] == OpenState::Open { OpenState::Closed } else { OpenState::Open };
        lab[a..=b].fill(flip);
    }
    runs(&lab)
        .into_iter()
        .map(|(a, b)| {
            let (ra, rb) = (&records[lo + a], &records[lo + b]);
            (lab[a], ra.timestamp_ms, rb.timestamp_ms + d[lo + b], ra.frame_index, rb.frame_index)
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cases = 2000;
    let mut episodes = 0;
    for case in 0..cases {
        let len = rng.random_range(0..=200usize);
        let mut t = 0u64;
        let recs: Vec<FrameRecord> = (0..len)
            .map(|i| {
                let mut r = FrameRecord::empty(i as u64, t);
                t += rng.random_range(20..=60);
                r.eye_state = match rng.random_range(0..10) {
                    0..=3 => OpenState::Open,
                    4..=7 => OpenState::Closed,
                    _ => OpenState::Unknown,
                };
                r
            })
            .collect();
        let debounce = rng.random_range(0..=250);
        let got: Vec<(OpenState, u64, u64, u64, u64)> = segment_episodes(&recs, Channel::Eye, debounce)
            .iter()
            .map(|e: &Episode| (e.state, e.start_ms, e.end_ms, e.first_frame, e.last_frame))
            .collect();
        let want = reference_episodes(&recs, debounce);
        check(got == want, || format!("case {case} (len {len}, debounce {debounce}) differs"))?;
        episodes += want.len();
    }
    Ok(format!("{cases} random sequences, {episodes} episodes, zero mismatches"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..50 {
        let cm = ConfusionMatrix {
            tp: rng.random_range(0..5000),
            fp: rng.random_range(0..5000),
            tn: rng.random_range(0..5000),
            fn_: rng.random_range(0..5000),
        };
        let m = compute_metrics(&cm).map_err(|e| format!("case {case}: {e}"))?;
        let exact = |num: u64, den: u64| (den > 0).then(|| Ratio::new(num, den).to_f64().unwrap());
        let want = (exact(cm.tp + cm.tn, cm.total()).unwrap(), exact(cm.tp, cm.tp + cm.fp), exact(cm.tp, cm.tp + cm.fn_));
        check((m.accuracy, m.precision, m.recall) == want, || format!("case {case}: {m:?} vs {want:?}"))?;
    }
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/table1.jsonl");
    let rows: Vec<ModelReportRow> = std::fs::read_to_string(&fixture)
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let table = format_model_comparison(&rows);
    let names: Vec<&str> = table.lines().skip(1).filter_map(|l| l.split_whitespace().next()).collect();
    check(names.first() == Some(&"Resnet") && names.last() == Some(&"Alexnet"), || format!("order {names:?}"))?;
    Ok(format!("50 matrices exact; table order {}", names.join(" > ")))
}

fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<FrameRecord> {
    let mut rec = Recorder::new(HoldPolicy::default());
    let state = |rng: &mut ChaCha8Rng| match rng.random_range(0..3) {
        0 => OpenState::Open,
        1 => OpenState::Closed,
        _ => OpenState::Unknown,
    };
    let mut t = 0;
    (0..n as u64)
        .map(|i| {
            t += rng.random_range(0..400);
            let result = if rng.random_bool(0.2) {
                FrameResult::NoDetection
            } else {
                let pose = rng.random_bool(0.8).then(|| PoseSample {
                    angles: EulerAngles::new(
                        rng.random_range(-90.0..90.0),
                        rng.random_range(-90.0..90.0),
                        rng.random_range(-180.0..180.0),
                    ),
                    reproj_rms_px: rng.random_bool(0.9).then(|| rng.random_range(0.0..50.0)),
                });
                let eye = StateVerdict::new(state(rng), rng.random_range(0.0..=1.0));
                let mouth = StateVerdict::new(state(rng), rng.random_range(0.0..=1.0));
                FrameResult::Detected { eye, mouth, pose }
            };
            rec.record(i, t, result).expect("monotonic input")
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let recs = random_records(&mut rng, 1000);
    let mut detail = Vec::new();
    for format in [Format::Csv, Format::Jsonl] {
        let mut bytes = Vec::new();
        write_timeseries(&recs, &mut bytes, format).map_err(|e| e.to_string())?;
        let back = read_timeseries(bytes.as_slice(), format).map_err(|e| format!("{format:?}: {e}"))?;
        check(back == recs, || format!("{format:?} round trip differs"))?;

        let header = usize::from(format == Format::Csv);
        let line_starts: Vec<usize> = std::iter::once(0)
            .chain(bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i + 1))
            .collect();
        for _ in 0..50 {
            let k = rng.random_range(0..recs.len());
            let start = line_starts[header + k];
            let cut = rng.random_range(start + 1..line_starts[header + k + 1]);
            let err = read_timeseries(&bytes[..cut], format).expect_err("truncated input must fail");
            check(err.records == recs[..k], || format!("{format:?}: cut in record {k} kept {} records", err.records.len()))?;
            let line = match err.error {
                drowsy_core::recorder::RecorderError::Parse { line, .. } => line,
                other => return Err(format!("{format:?}: unexpected error {other}")),
            };
            check(line == header + k + 1, || format!("{format:?}: cut in record {k} reported line {line}"))?;
        }
        detail.push(format!("{format:?} {} bytes", bytes.len()));
    }
    Ok(format!("1000 records round-trip exactly ({}); 100 truncations located", detail.join(", ")))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let scn = dir.path().join("scn.json");
    std::fs::write(
        &scn,
        r#"{"fps": 30, "duration_ms": 200000, "noise_px": 0.5, "seed": 9, "dropout": [[60000, 61000]],
            "segments": [
              {"start_ms": 0, "end_ms": 100000, "yaw": [-30, 30], "pitch": [-10, 10]},
              {"start_ms": 100000, "end_ms": 200000, "yaw": [30, -30], "roll": [-15, 15], "eye": "closed", "mouth": "open"}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let det = dir.path().join("det.jsonl");
    let ts = dir.path().join("ts.csv");
    let bin = env!("CARGO_BIN_EXE_drowsy");
    let st = Command::new(bin)
        .args(["synth", "--in", scn.to_str().unwrap(), "--out", det.to_str().unwrap()])
        .status()
        .map_err(|e| e.to_string())?;
    check(st.success(), || "synth failed".into())?;
    let frames = std::fs::read_to_string(&det).map_err(|e| e.to_string())?.lines().count();
    let start = Instant::now();
    let st = Command::new(bin)
        .args(["extract", "--in", det.to_str().unwrap(), "--out", ts.to_str().unwrap()])
        .status()
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(st.success(), || "extract failed".into())?;
    let rows = std::fs::read_to_string(&ts).map_err(|e| e.to_string())?.lines().count() - 1;
    check(rows == frames, || format!("{rows} rows for {frames} frames"))?;
    let fps = frames as f64 / secs;
    check(fps >= 1000.0, || format!("{fps:.0} frames/s"))?;
    Ok(format!("{frames} frames in {secs:.3} s = {fps:.0} frames/s"))
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL ({detail})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
