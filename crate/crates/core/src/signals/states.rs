//! Object state changes from per-frame state scores, with occlusion
//! skipping and majority smoothing.

use std::collections::{BTreeMap, VecDeque};

use crate::fusion::ObjectTrack;
use crate::numerics::{mask_iou, BBox, Mask};
use crate::registry::ObjectRegistry;
use crate::signals::{movement::stream_object_id, SignalsOptions};
use crate::stream::Episode;

/// A confirmed transition between two declared states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEvent {
    pub object_id: u32,
    pub frame_index: u64,
    pub frame_pos: usize,
    pub from_state: String,
    pub to_state: String,
}

/// Detects state transitions for one object. Per frame the state is the
/// argmax score over the declared states; frames flagged occluded are
/// skipped entirely; the smoothed state is the strict majority over the
/// last `window` valid frames, and an event fires at the frame where a new
/// majority is confirmed.
pub fn detect_state_changes(
    object_id: u32,
    states: &[String],
    scores: &[Option<&BTreeMap<String, f64>>],
    occluded: &[bool],
    frame_indices: &[u64],
    window: usize,
) -> Vec<StateEvent> {
    assert!(window >= 1);
    if states.len() < 2 {
        return Vec::new();
    }
    let mut events = Vec::new();
    let mut recent: VecDeque<usize> = VecDeque::with_capacity(window);
    let mut smoothed: Option<usize> = None;
    for (pos, maybe_scores) in scores.iter().enumerate() {
        if occluded.get(pos).copied().unwrap_or(false) {
            continue;
        }
        let Some(score_map) = maybe_scores else { continue };
        // argmax over declared states; first declaration wins ties
        let mut best: Option<(usize, f64)> = None;
        for (si, state) in states.iter().enumerate() {
            if let Some(&s) = score_map.get(state) {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((si, s));
                }
            }
        }
        let Some((current, _)) = best else { continue };
        if recent.len() == window {
            recent.pop_front();
        }
        recent.push_back(current);
        let mut counts = vec![0usize; states.len()];
        for &s in &recent {
            counts[s] += 1;
        }
        let majority = (0..states.len()).find(|&s| counts[s] * 2 > recent.len());
        if let Some(m) = majority {
            match smoothed {
                None => smoothed = Some(m),
                Some(prev) if prev != m => {
                    events.push(StateEvent {
                        object_id,
                        frame_index: frame_indices[pos],
                        frame_pos: pos,
                        from_state: states[prev].clone(),
                        to_state: states[m].clone(),
                    });
                    smoothed = Some(m);
                }
                _ => {}
            }
        }
    }
    events
}

/// Occlusion flags for one object: true where the robot mask's IOU with
/// the padded crop box exceeds the cutoff.
pub fn occlusion_flags(
    ep: &Episode,
    track: &ObjectTrack,
    robot_masks: &[Option<Mask>],
    options: &SignalsOptions,
) -> Vec<bool> {
    track
        .frames
        .iter()
        .enumerate()
        .map(|(pos, tf)| {
            let (Some(bbox), Some(Some(robot))) = (tf.bbox, robot_masks.get(pos)) else {
                return false;
            };
            let pad_x = bbox.width() * options.crop_pad_frac;
            let pad_y = bbox.height() * options.crop_pad_frac;
            let crop = BBox {
                x1: (bbox.x1 - pad_x).max(0.0),
                y1: (bbox.y1 - pad_y).max(0.0),
                x2: (bbox.x2 + pad_x).min(ep.width as f64),
                y2: (bbox.y2 + pad_y).min(ep.height as f64),
            };
            let crop_mask = Mask::from_box(ep.width, ep.height, &crop);
            mask_iou(robot, &crop_mask).is_ok_and(|v| v > options.occlusion_iou)
        })
        .collect()
}

/// Runs state detection for every registry entry with at least two
/// declared states.
pub fn extract_state_events(
    ep: &Episode,
    registry: &ObjectRegistry,
    tracks: &[ObjectTrack],
    robot_masks: &[Option<Mask>],
    options: &SignalsOptions,
) -> Vec<StateEvent> {
    let frame_indices: Vec<u64> = ep.frames.iter().map(|f| f.frame_index).collect();
    let mut events = Vec::new();
    for entry in &registry.entries {
        if entry.properties.states.len() < 2 {
            continue;
        }
        let Some(stream_id) = stream_object_id(ep, entry) else { continue };
        let track = &tracks[entry.object_id as usize];
        let scores: Vec<Option<&BTreeMap<String, f64>>> = ep
            .frames
            .iter()
            .map(|f| f.state_scores.as_ref().and_then(|m| m.get(&stream_id)))
            .collect();
        let occluded = occlusion_flags(ep, track, robot_masks, options);
        events.extend(detect_state_changes(
            entry.object_id,
            &entry.properties.states,
            &scores,
            &occluded,
            &frame_indices,
            options.state_window,
        ));
    }
    events.sort_by_key(|e| (e.frame_index, e.object_id));
    events
}
