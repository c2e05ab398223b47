//! Movement detection from box displacement and optical flow.

use serde::{Deserialize, Serialize};

use crate::fusion::ObjectTrack;
use crate::numerics::BBox;
use crate::registry::ObjectEntry;
use crate::signals::SignalsOptions;
use crate::stream::Episode;

/// 8-way compass direction in image coordinates (y points down).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
    UpLeft,
    UpRight,
    DownLeft,
    DownRight,
}

impl Direction {
    /// Sector of the displacement vector; boundaries at odd multiples of
    /// 22.5 degrees belong to the counter-clockwise neighbor.
    pub fn from_displacement(dx: f64, dy: f64) -> Direction {
        let angle = dy.atan2(dx).to_degrees();
        let sector = (((angle + 22.5).rem_euclid(360.0)) / 45.0).floor() as usize % 8;
        [
            Direction::Right,
            Direction::DownRight,
            Direction::Down,
            Direction::DownLeft,
            Direction::Left,
            Direction::UpLeft,
            Direction::Up,
            Direction::UpRight,
        ][sector]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::UpLeft => "up left",
            Direction::UpRight => "up right",
            Direction::DownLeft => "down left",
            Direction::DownRight => "down right",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        Some(match s {
            "left" => Direction::Left,
            "right" => Direction::Right,
            "up" => Direction::Up,
            "down" => Direction::Down,
            "up left" => Direction::UpLeft,
            "up right" => Direction::UpRight,
            "down left" => Direction::DownLeft,
            "down right" => Direction::DownRight,
            _ => return None,
        })
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One contiguous span of motion for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct MovementEvent {
    pub object_id: u32,
    /// Positions into the episode's frame sequence.
    pub start_pos: usize,
    pub end_pos: usize,
    /// Stream frame indices.
    pub start_frame: u64,
    pub end_frame: u64,
    pub start_box: BBox,
    pub end_box: BBox,
    pub direction: Direction,
    pub confidence: f64,
    /// True when only the flow condition fired (small displacements).
    pub via_flow: bool,
}

/// Flow magnitude per frame position for one object, resolved through the
/// stream's mask-declared object ids.
pub fn per_frame_flow(ep: &Episode, entry: &ObjectEntry) -> Vec<Option<f64>> {
    let stream_id = stream_object_id(ep, entry);
    ep.frames
        .iter()
        .map(|f| {
            let flow = f.flow.as_ref()?;
            let id = stream_id?;
            flow.get(&id).copied()
        })
        .collect()
}

/// The stream-local object id declared for a registry entry via named mask
/// records, when any exists.
pub fn stream_object_id(ep: &Episode, entry: &ObjectEntry) -> Option<u32> {
    for f in &ep.frames {
        for m in &f.masks {
            if let (Some(id), Some(name)) = (m.object_id, m.name.as_deref()) {
                if entry.matches_name(name) {
                    return Some(id);
                }
            }
        }
    }
    None
}

/// Detects movement events: a maximal run of present frames where either
/// the smoothed box center steps at least `step_eps` pixels per frame or
/// the flow magnitude reaches `flow_thresh`, kept when the net
/// displacement reaches `disp_thresh * width` or the flow condition held
/// for `min_flow_frames` consecutive frames. Centers are averaged over
/// `smooth_window` neighboring present frames first, so detection-box
/// jitter does not read as motion; pauses shorter than the window merge
/// into one event. The event starts at the last stationary frame before
/// the run and ends at the run's last frame.
pub fn detect_movement(
    track: &ObjectTrack,
    frame_indices: &[u64],
    flow: &[Option<f64>],
    image_width: u32,
    options: &SignalsOptions,
) -> Vec<MovementEvent> {
    // present frames with a box
    let present: Vec<(usize, [f64; 2], BBox)> = track
        .frames
        .iter()
        .enumerate()
        .filter_map(|(pos, tf)| tf.bbox.map(|b| (pos, b.center(), b)))
        .collect();
    if present.len() < 2 {
        return Vec::new();
    }

    let n = present.len();
    let half = options.smooth_window.max(1) / 2;
    let smoothed: Vec<[f64; 2]> = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(n - 1);
            let m = (hi - lo + 1) as f64;
            let (sx, sy) = present[lo..=hi]
                .iter()
                .fold((0.0, 0.0), |(ax, ay), p| (ax + p.1[0], ay + p.1[1]));
            [sx / m, sy / m]
        })
        .collect();

    let flow_on = |pos: usize| flow.get(pos).copied().flatten().is_some_and(|m| m >= options.flow_thresh);
    let mut in_motion = vec![false; n];
    for k in 0..n {
        let by_flow = flow_on(present[k].0);
        let by_step = k > 0 && {
            let gap = (present[k].0 - present[k - 1].0) as f64;
            let dx = smoothed[k][0] - smoothed[k - 1][0];
            let dy = smoothed[k][1] - smoothed[k - 1][1];
            (dx * dx + dy * dy).sqrt() >= options.step_eps * gap
        };
        in_motion[k] = by_flow || by_step;
    }

    let disp_threshold = options.disp_thresh * image_width as f64;
    let mut events = Vec::new();
    let mut k = 0;
    while k < n {
        if !in_motion[k] {
            k += 1;
            continue;
        }
        let run_start = k;
        while k < n && in_motion[k] {
            k += 1;
        }
        let run_end = k - 1;
        let anchor = run_start.saturating_sub(1);
        let (dx, dy) = (
            smoothed[run_end][0] - smoothed[anchor][0],
            smoothed[run_end][1] - smoothed[anchor][1],
        );
        let displacement = (dx * dx + dy * dy).sqrt();
        let mut max_flow_streak = 0usize;
        let mut streak = 0usize;
        for item in present.iter().take(run_end + 1).skip(run_start) {
            if flow_on(item.0) {
                streak += 1;
                max_flow_streak = max_flow_streak.max(streak);
            } else {
                streak = 0;
            }
        }
        let by_displacement = displacement >= disp_threshold;
        let by_flow = max_flow_streak >= options.min_flow_frames;
        if by_displacement || by_flow {
            let confidence = if options.graded_movement {
                (displacement / disp_threshold).min(1.0)
            } else {
                1.0
            };
            events.push(MovementEvent {
                object_id: track.object_id,
                start_pos: present[anchor].0,
                end_pos: present[run_end].0,
                start_frame: frame_indices[present[anchor].0],
                end_frame: frame_indices[present[run_end].0],
                start_box: present[anchor].2,
                end_box: present[run_end].2,
                direction: Direction::from_displacement(dx, dy),
                confidence,
                via_flow: !by_displacement,
            });
        }
    }
    events
}
