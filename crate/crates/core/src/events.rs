//! Episode segmentation, drowsiness events and windowed statistics.
//!
//! Each record lasts until the next record's timestamp; the final record
//! lasts the median positive frame gap (1 ms if there is none).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::OpenState;
use crate::recorder::FrameRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventsError {
    #[error("timeseries is empty")]
    EmptyStream,
    #[error("invalid window: window_ms must be ≥ stride_ms > 0")]
    InvalidWindow,
    #[error("invalid event thresholds: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Eye,
    Mouth,
}

impl Channel {
    fn state(self, r: &FrameRecord) -> OpenState {
        match self {
            Channel::Eye => r.eye_state,
            Channel::Mouth => r.mouth_state,
        }
    }
}

/// A maximal run of one state on one channel, `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episode {
    pub channel: Channel,
    pub state: OpenState,
    pub start_ms: u64,
    pub end_ms: u64,
    pub first_frame: u64,
    pub last_frame: u64,
}

impl Episode {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Blink,
    ProlongedClosure,
    Yawn,
    Nod,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Blink => "blink",
            EventKind::ProlongedClosure => "prolonged_closure",
            EventKind::Yawn => "yawn",
            EventKind::Nod => "nod",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrowsinessEvent {
    pub kind: EventKind,
    pub start_ms: u64,
    pub end_ms: u64,
    /// Duration in ms for closures and yawns; pitch drop in degrees for nods.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventConfig {
    pub blink_max_ms: u64,
    pub closure_min_ms: u64,
    pub yawn_min_ms: u64,
    pub nod_delta_deg: f64,
    pub nod_fall_max_ms: u64,
    pub nod_recover_max_ms: u64,
    pub debounce_ms: u64,
    pub baseline_window_ms: u64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            blink_max_ms: 500,
            closure_min_ms: 2000,
            yawn_min_ms: 2000,
            nod_delta_deg: 15.0,
            nod_fall_max_ms: 1000,
            nod_recover_max_ms: 2000,
            debounce_ms: 100,
            baseline_window_ms: 30_000,
        }
    }
}

impl EventConfig {
    pub fn validate(&self) -> Result<(), EventsError> {
        let bad = |m: &str| Err(EventsError::InvalidConfig(m.into()));
        if self.blink_max_ms >= self.closure_min_ms {
            return bad("blink_max_ms must be below closure_min_ms");
        }
        if self.blink_max_ms == 0 || self.yawn_min_ms == 0 {
            return bad("duration thresholds must be positive");
        }
        if !(self.nod_delta_deg > 0.0 && self.nod_delta_deg.is_finite()) {
            return bad("nod_delta_deg must be positive");
        }
        if self.nod_fall_max_ms == 0 || self.nod_recover_max_ms == 0 || self.baseline_window_ms == 0 {
            return bad("nod timings and baseline window must be positive");
        }
        Ok(())
    }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Duration of each record, ms.
pub fn frame_durations(records: &[FrameRecord]) -> Vec<u64> {
    let mut gaps: Vec<u64> = records
        .windows(2)
        .map(|w| w[1].timestamp_ms - w[0].timestamp_ms)
        .collect();
    let mut positive: Vec<f64> = gaps.iter().filter(|&&g| g > 0).map(|&g| g as f64).collect();
    let last = median(&mut positive).map_or(1, |m| m.round() as u64);
    if !records.is_empty() {
        gaps.push(last);
    }
    gaps
}

#[derive(Debug, Clone, Copy)]
struct Run {
    state: OpenState,
    first: usize,
    last: usize,
    duration: u64,
    prev: Option<usize>,
    next: Option<usize>,
}

/// Splits one channel into episodes.
///
/// Unknown frames extend the episode before them; leading and trailing
/// unknown frames belong to no episode. Runs shorter than `debounce_ms` are
/// absorbed by their neighbours, shortest first (ties: earliest first).
pub fn segment_episodes(records: &[FrameRecord], channel: Channel, debounce_ms: u64) -> Vec<Episode> {
    let durations = frame_durations(records);
    let known: Vec<usize> = (0..records.len())
        .filter(|&i| channel.state(&records[i]).is_known())
        .collect();
    let (Some(&lo), Some(&hi)) = (known.first(), known.last()) else {
        return Vec::new();
    };

    let mut runs: Vec<Run> = Vec::new();
    let mut state = channel.state(&records[lo]);
    for i in lo..=hi {
        let s = channel.state(&records[i]);
        if s.is_known() {
            state = s;
        }
        match runs.last_mut() {
            Some(r) if r.state == state => {
                r.last = i;
                r.duration += durations[i];
            }
            _ => {
                let id = runs.len();
                if let Some(prev) = runs.last_mut() {
                    prev.next = Some(id);
                }
                runs.push(Run {
                    state,
                    first: i,
                    last: i,
                    duration: durations[i],
                    prev: id.checked_sub(1),
                    next: None,
                });
            }
        }
    }

    let mut alive = runs.len();
    let mut dead = vec![false; runs.len()];
    let mut queue: BTreeSet<(u64, usize)> = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.duration < debounce_ms)
        .map(|(i, r)| (r.duration, i))
        .collect();
    // run ids are in frame order, so (duration, id) orders ties by first frame
    while alive > 1 {
        let Some(&(d, id)) = queue.iter().next() else { break };
        queue.remove(&(d, id));
        let Run { prev, next, .. } = runs[id];
        let keep = prev.or(next).expect("more than one run remains");
        let mut group = vec![id];
        group.extend(prev);
        group.extend(next);
        for &g in &group {
            if g != keep {
                queue.remove(&(runs[g].duration, g));
                dead[g] = true;
            }
        }
        queue.remove(&(runs[keep].duration, keep));
        let first = group.iter().map(|&g| runs[g].first).min().unwrap_or(runs[keep].first);
        let last = group.iter().map(|&g| runs[g].last).max().unwrap_or(runs[keep].last);
        let duration: u64 = group.iter().map(|&g| runs[g].duration).sum();
        let new_prev = group.iter().filter_map(|&g| runs[g].prev).find(|p| !group.contains(p));
        let new_next = group.iter().filter_map(|&g| runs[g].next).find(|n| !group.contains(n));
        let k = &mut runs[keep];
        k.first = first;
        k.last = last;
        k.duration = duration;
        k.prev = new_prev;
        k.next = new_next;
        if let Some(p) = new_prev {
            runs[p].next = Some(keep);
        }
        if let Some(n) = new_next {
            runs[n].prev = Some(keep);
        }
        alive -= group.len() - 1;
        if duration < debounce_ms {
            queue.insert((duration, keep));
        }
    }

    let head = (0..runs.len())
        .find(|&i| !dead[i] && runs[i].prev.is_none())
        .expect("one run survives");
    let mut out = Vec::with_capacity(alive);
    let mut cur = Some(head);
    while let Some(i) = cur {
        let r = &runs[i];
        out.push(Episode {
            channel,
            state: r.state,
            start_ms: records[r.first].timestamp_ms,
            end_ms: records[r.last].timestamp_ms + durations[r.last],
            first_frame: records[r.first].frame_index,
            last_frame: records[r.last].frame_index,
        });
        cur = r.next;
    }
    out
}

/// Pitch drops below a rolling-median baseline followed by a quick return.
fn detect_nods(records: &[FrameRecord], cfg: &EventConfig) -> Vec<DrowsinessEvent> {
    let samples: Vec<(u64, f64)> = records
        .iter()
        .filter(|r| r.face_detected)
        .filter_map(|r| r.pose.map(|p| (r.timestamp_ms, p.angles.pitch_deg)))
        .collect();
    let delta = cfg.nod_delta_deg;
    let mut events = Vec::new();
    let mut window_lo = 0;
    // (time, baseline) of the last in-band sample
    let mut onset: Option<(u64, f64)> = None;
    // (onset time, baseline, time the drop reached delta, deepest drop)
    let mut down: Option<(u64, f64, u64, f64)> = None;
    let mut scratch = Vec::new();
    for (i, &(t, pitch)) in samples.iter().enumerate() {
        while t - samples[window_lo].0 >= cfg.baseline_window_ms {
            window_lo += 1;
        }
        scratch.clear();
        scratch.extend(samples[window_lo..=i].iter().map(|s| s.1));
        let baseline = median(&mut scratch).expect("window holds the current sample");

        if let Some((t0, b, t_reach, deepest)) = down {
            let drop = b - pitch;
            if drop <= delta / 2.0 {
                if t - t_reach <= cfg.nod_recover_max_ms {
                    events.push(DrowsinessEvent {
                        kind: EventKind::Nod,
                        start_ms: t0,
                        end_ms: t,
                        magnitude: deepest,
                    });
                }
                down = None;
                onset = Some((t, baseline));
            } else if t - t_reach > cfg.nod_recover_max_ms {
                down = None;
                onset = None;
            } else {
                down = Some((t0, b, t_reach, deepest.max(drop)));
            }
            continue;
        }
        if baseline - pitch <= delta / 2.0 {
            onset = Some((t, baseline));
        } else if let Some((t0, b)) = onset {
            let drop = b - pitch;
            if drop >= delta {
                if t - t0 <= cfg.nod_fall_max_ms {
                    down = Some((t0, b, t, drop));
                } else {
                    onset = None;
                }
            }
        }
    }
    events
}

/// Classifies episodes and pitch motion into events, ordered by start time.
pub fn detect_events(
    eye: &[Episode],
    mouth: &[Episode],
    records: &[FrameRecord],
    cfg: &EventConfig,
) -> Vec<DrowsinessEvent> {
    let mut events = Vec::new();
    for e in eye.iter().filter(|e| e.state == OpenState::Closed) {
        let d = e.duration_ms();
        let kind = if d <= cfg.blink_max_ms {
            EventKind::Blink
        } else if d >= cfg.closure_min_ms {
            EventKind::ProlongedClosure
        } else {
            continue;
        };
        events.push(DrowsinessEvent {
            kind,
            start_ms: e.start_ms,
            end_ms: e.end_ms,
            magnitude: d as f64,
        });
    }
    for e in mouth.iter().filter(|e| e.state == OpenState::Open) {
        if e.duration_ms() >= cfg.yawn_min_ms {
            events.push(DrowsinessEvent {
                kind: EventKind::Yawn,
                start_ms: e.start_ms,
                end_ms: e.end_ms,
                magnitude: e.duration_ms() as f64,
            });
        }
    }
    events.extend(detect_nods(records, cfg));
    events.sort_by_key(|e| (e.start_ms, e.kind, e.end_ms));
    events
}

/// Segments both channels and detects events in one call.
pub fn analyze(records: &[FrameRecord], cfg: &EventConfig) -> Vec<DrowsinessEvent> {
    let eye = segment_episodes(records, Channel::Eye, cfg.debounce_ms);
    let mouth = segment_episodes(records, Channel::Mouth, cfg.debounce_ms);
    detect_events(&eye, &mouth, records, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub blink_count: usize,
    pub yawn_count: usize,
    pub nod_count: usize,
    /// Closed share of known-eye time; `None` if no eye state is known.
    pub closed_fraction: Option<f64>,
    pub held_fraction: f64,
    /// Share of frames whose eye and mouth states are both known.
    pub valid_fraction: f64,
    pub mean_pitch_deg: Option<f64>,
}

fn stats_over(
    records: &[FrameRecord],
    durations: &[u64],
    events: &[DrowsinessEvent],
    start: u64,
    end: u64,
) -> WindowStats {
    let idx: Vec<usize> = (0..records.len())
        .filter(|&i| (start..end).contains(&records[i].timestamp_ms))
        .collect();
    let (mut known_ms, mut closed_ms) = (0u64, 0u64);
    let (mut held, mut valid) = (0usize, 0usize);
    let (mut pitch_sum, mut pitch_n) = (0.0, 0usize);
    for &i in &idx {
        let r = &records[i];
        if r.eye_state.is_known() {
            known_ms += durations[i];
            if r.eye_state == OpenState::Closed {
                closed_ms += durations[i];
            }
        }
        held += r.held as usize;
        valid += (r.eye_state.is_known() && r.mouth_state.is_known()) as usize;
        if let Some(p) = r.pose {
            pitch_sum += p.angles.pitch_deg;
            pitch_n += 1;
        }
    }
    let frac = |k: usize| if idx.is_empty() { 0.0 } else { k as f64 / idx.len() as f64 };
    let count = |kind| {
        events
            .iter()
            .filter(|e| e.kind == kind && (start..end).contains(&e.start_ms))
            .count()
    };
    WindowStats {
        window_start_ms: start,
        window_end_ms: end,
        blink_count: count(EventKind::Blink),
        yawn_count: count(EventKind::Yawn),
        nod_count: count(EventKind::Nod),
        closed_fraction: (known_ms > 0).then(|| closed_ms as f64 / known_ms as f64),
        held_fraction: frac(held),
        valid_fraction: frac(valid),
        mean_pitch_deg: (pitch_n > 0).then(|| pitch_sum / pitch_n as f64),
    }
}

/// Span covered by the stream, `[first timestamp, last timestamp + last duration)`.
pub fn stream_span(records: &[FrameRecord]) -> Option<(u64, u64)> {
    let durations = frame_durations(records);
    let first = records.first()?;
    let last = records.last()?;
    Some((first.timestamp_ms, last.timestamp_ms + durations[durations.len() - 1]))
}

/// Sliding windows `[t0 + k·stride, t0 + k·stride + window)` for every start
/// inside the stream.
pub fn window_stats(
    records: &[FrameRecord],
    events: &[DrowsinessEvent],
    window_ms: u64,
    stride_ms: u64,
) -> Result<Vec<WindowStats>, EventsError> {
    if stride_ms == 0 || window_ms < stride_ms {
        return Err(EventsError::InvalidWindow);
    }
    let (t0, t1) = stream_span(records).ok_or(EventsError::EmptyStream)?;
    let durations = frame_durations(records);
    let mut out = Vec::new();
    let mut start = t0;
    while start < t1 {
        out.push(stats_over(records, &durations, events, start, start + window_ms));
        start += stride_ms;
    }
    Ok(out)
}

pub const STATS_HEADER: &str = "win_start_ms,win_end_ms,blinks,yawns,nods,closed_frac,held_frac,valid_frac,mean_pitch";

fn opt_real(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

pub fn stats_csv(stats: &[WindowStats]) -> String {
    let mut s = String::from(STATS_HEADER);
    s.push('\n');
    for w in stats {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6},{:.6},{}",
            w.window_start_ms,
            w.window_end_ms,
            w.blink_count,
            w.yawn_count,
            w.nod_count,
            opt_real(w.closed_fraction),
            w.held_fraction,
            w.valid_fraction,
            opt_real(w.mean_pitch_deg)
        );
    }
    s
}

pub fn event_line(e: &DrowsinessEvent) -> String {
    format!(
        "{{\"kind\":\"{}\",\"start_ms\":{},\"end_ms\":{},\"magnitude\":{:.6}}}\n",
        e.kind.as_str(),
        e.start_ms,
        e.end_ms,
        e.magnitude
    )
}
