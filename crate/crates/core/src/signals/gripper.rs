//! Gripper proximity and gripper open/close signals.

use crate::fusion::ObjectTrack;
use crate::numerics::{BBox, Mask};
use crate::registry::ObjectRegistry;
use crate::signals::SignalsOptions;
use crate::stream::Episode;

/// Gripper stayed within an object's proximity threshold for the required
/// run of frames; fired at the run's third frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GripperNearEvent {
    pub object_id: u32,
    pub frame_index: u64,
    pub frame_pos: usize,
}

/// A previously closed gripper opened.
#[derive(Debug, Clone, PartialEq)]
pub struct GripperCloseEvent {
    pub frame_index: u64,
    pub frame_pos: usize,
    /// Nearest object at the transition frame, when any is present.
    pub object_id: Option<u32>,
}

/// The robot manipulator mask per frame: the stream mask with the
/// configured robot name, falling back to the gripper's end-effector box.
pub fn robot_masks(ep: &Episode, robot_name: &str) -> Vec<Option<Mask>> {
    ep.frames
        .iter()
        .map(|f| {
            f.masks
                .iter()
                .find(|m| {
                    m.name
                        .as_deref()
                        .is_some_and(|n| n.eq_ignore_ascii_case(robot_name))
                })
                .map(|m| m.mask.clone())
                .or_else(|| {
                    f.gripper
                        .as_ref()
                        .and_then(|g| g.end_effector_box.as_ref())
                        .map(|b| Mask::from_box(ep.width, ep.height, b))
                })
        })
        .collect()
}

/// Minimum pixel distance between two masks: zero when they intersect,
/// otherwise the minimum over boundary pixel pairs.
pub fn mask_min_distance(a: &Mask, b: &Mask) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    if let (Some(ba), Some(bb)) = (a.bounding_box(), b.bounding_box()) {
        if ba.gap_distance(&bb) == 0.0 {
            if let Ok(area) = a.intersection_area(b) {
                if area > 0 {
                    return 0.0;
                }
            }
        }
    }
    let pa = a.boundary_pixels();
    let pb = b.boundary_pixels();
    let mut best = f64::INFINITY;
    for &(x1, y1) in &pa {
        for &(x2, y2) in &pb {
            let dx = x1 as f64 - x2 as f64;
            let dy = y1 as f64 - y2 as f64;
            best = best.min((dx * dx + dy * dy).sqrt());
        }
    }
    best
}

/// Inflates a pixel distance by the ratio of the two median depths. Two
/// regions at the same relative depth keep their pixel distance; a depth
/// gap inflates it, suppressing false proximity between regions that only
/// look close in the image plane. This is the single point where relative
/// depth is traded against pixel distance.
pub fn depth_scaled_distance(pixel_distance: f64, z_a: Option<f64>, z_b: Option<f64>) -> f64 {
    match (z_a, z_b) {
        (Some(a), Some(b)) if a > 1e-9 && b > 1e-9 => {
            let ratio = (a / b).max(b / a);
            pixel_distance * ratio
        }
        _ => pixel_distance,
    }
}

/// Per-object proximity threshold: a base fraction of the image diagonal,
/// scaled by object size via sqrt(area) / (0.1 * diagonal), clamped to
/// [0.5, 2].
pub fn proximity_threshold(image_diag: f64, box_area: f64, base_frac: f64) -> f64 {
    let size_scale = (box_area.sqrt() / (0.1 * image_diag)).clamp(0.5, 2.0);
    base_frac * image_diag * size_scale
}

/// Scans gripper-object distances and fires one event per contiguous
/// below-threshold run, at the run's `near_min_frames`-th frame. Frames
/// with unknown distance break the run.
pub fn gripper_near_events(
    ep: &Episode,
    registry: &ObjectRegistry,
    tracks: &[ObjectTrack],
    robot_masks: &[Option<Mask>],
    options: &SignalsOptions,
) -> Vec<GripperNearEvent> {
    let diag = ep.image_diagonal();
    let mut events = Vec::new();
    for entry in &registry.entries {
        if entry.is_surface {
            continue;
        }
        let track = &tracks[entry.object_id as usize];
        let mut run = 0usize;
        for (pos, frame) in ep.frames.iter().enumerate() {
            let d = object_gripper_distance(ep, frame, track, pos, robot_masks);
            let below = match d {
                Some(d) => {
                    let area = track.frames[pos].bbox.map_or(0.0, |b| b.area());
                    d < proximity_threshold(diag, area, options.near_base_frac)
                }
                None => false,
            };
            if below {
                run += 1;
                if run == options.near_min_frames {
                    events.push(GripperNearEvent {
                        object_id: entry.object_id,
                        frame_index: frame.frame_index,
                        frame_pos: pos,
                    });
                }
            } else {
                run = 0;
            }
        }
    }
    events.sort_by_key(|e| (e.frame_index, e.object_id));
    events
}

fn object_gripper_distance(
    ep: &Episode,
    frame: &crate::stream::FrameRecord,
    track: &ObjectTrack,
    pos: usize,
    robot_masks: &[Option<Mask>],
) -> Option<f64> {
    let tf = &track.frames[pos];
    if !tf.present {
        return None;
    }
    let robot = robot_masks.get(pos)?.as_ref()?;
    let robot_box = robot.bounding_box()?;
    let obj_box = tf.bbox?;
    // the box gap lower-bounds the mask distance; compute masks only when
    // the pair could plausibly be near
    let gap = robot_box.gap_distance(&obj_box);
    let pixel = if gap > 0.25 * ep.image_diagonal() {
        gap
    } else {
        let obj_mask = match &tf.mask {
            Some(m) => m.clone(),
            None => Mask::from_box(ep.width, ep.height, &obj_box),
        };
        mask_min_distance(robot, &obj_mask)
    };
    let depth = frame.depth.as_ref();
    let (zg, zo) = match depth {
        Some(d) => {
            let zo = match &tf.mask {
                Some(m) => d.median_over(m),
                None => d.median_over(&Mask::from_box(ep.width, ep.height, &obj_box)),
            };
            (d.median_over(robot), zo)
        }
        None => (None, None),
    };
    Some(depth_scaled_distance(pixel, zg, zo))
}

/// A keystate candidate at every closed-to-open transition of the gripper
/// signal, attached to the nearest present object.
pub fn gripper_close_events(
    ep: &Episode,
    registry: &ObjectRegistry,
    tracks: &[ObjectTrack],
    robot_masks: &[Option<Mask>],
) -> Vec<GripperCloseEvent> {
    let mut events = Vec::new();
    let mut last_closed: Option<bool> = None;
    for (pos, frame) in ep.frames.iter().enumerate() {
        let Some(g) = &frame.gripper else { continue };
        if last_closed == Some(true) && !g.closed {
            let object_id = nearest_object(ep, registry, tracks, pos, robot_masks);
            events.push(GripperCloseEvent { frame_index: frame.frame_index, frame_pos: pos, object_id });
        }
        last_closed = Some(g.closed);
    }
    events
}

fn nearest_object(
    ep: &Episode,
    registry: &ObjectRegistry,
    tracks: &[ObjectTrack],
    pos: usize,
    robot_masks: &[Option<Mask>],
) -> Option<u32> {
    let robot_box: Option<BBox> = robot_masks
        .get(pos)
        .and_then(|m| m.as_ref())
        .and_then(|m| m.bounding_box())
        .or_else(|| ep.frames[pos].gripper.as_ref().and_then(|g| g.end_effector_box));
    let rb = robot_box?;
    registry
        .entries
        .iter()
        .filter(|e| !e.is_surface)
        .filter_map(|e| {
            let tf = &tracks[e.object_id as usize].frames[pos];
            tf.bbox.map(|b| (e.object_id, rb.gap_distance(&b)))
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
}
