//! Stage 2a: temporally robust per-object tracks.
//!
//! Detections arrive noisy and gappy. This module binds each frame's
//! detections and masks to registry entries, cleans mask fragments,
//! resolves each track's class from its score history, and replaces the
//! per-frame boxes of static objects with one refined consensus box.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{connected_components, dbscan, BBox, ClusterLabel, Mask};
use crate::registry::{combine_alignment, ObjectRegistry};
use crate::stream::Episode;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no boxes to refine")]
    EmptyInput,
    #[error(transparent)]
    Geometry(#[from] crate::numerics::GeometryError),
}

/// The consensus box of a non-moving object.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticBox {
    pub object_id: u32,
    pub bbox: BBox,
    /// Number of contributing frames.
    pub support: usize,
    pub confidence: f64,
}

/// Per-frame state of one tracked object, aligned with the episode's
/// frame sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackFrame {
    pub present: bool,
    pub bbox: Option<BBox>,
    pub mask: Option<Mask>,
    /// Detection confidence per name observed this frame.
    pub class_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub object_id: u32,
    pub frames: Vec<TrackFrame>,
    pub static_box: Option<StaticBox>,
    /// Most confident class over the track, with its mean score.
    pub resolved_class: Option<(String, f64)>,
}

impl ObjectTrack {
    pub fn presence_count(&self) -> usize {
        self.frames.iter().filter(|f| f.present).count()
    }
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[(values.len() - 1) / 2]
}

/// Refines repeated detections of a static object into one box:
/// centers more than `mad_factor` median-absolute-deviations from the
/// median center are dropped, the survivors are clustered by DBSCAN over
/// their `(x1, y1, x2, y2)` vectors, the cluster with the highest summed
/// confidence wins, and its coordinate-wise mean box is returned. A single
/// surviving box is returned as-is.
pub fn refine_static_box(
    object_id: u32,
    boxes: &[(BBox, f64)],
    eps: f64,
    mad_factor: f64,
) -> Result<StaticBox, FusionError> {
    if boxes.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let centers: Vec<[f64; 2]> = boxes.iter().map(|(b, _)| b.center()).collect();
    let med = [
        median_of(centers.iter().map(|c| c[0]).collect()),
        median_of(centers.iter().map(|c| c[1]).collect()),
    ];
    let deviations: Vec<f64> = centers
        .iter()
        .map(|c| ((c[0] - med[0]).powi(2) + (c[1] - med[1]).powi(2)).sqrt())
        .collect();
    let mad = median_of(deviations.clone());
    let survivors: Vec<usize> =
        (0..boxes.len()).filter(|&i| deviations[i] <= mad_factor * mad).collect();
    debug_assert!(!survivors.is_empty(), "the median box always survives");

    if survivors.len() == 1 {
        let (b, c) = boxes[survivors[0]];
        return Ok(StaticBox { object_id, bbox: b, support: 1, confidence: c });
    }

    let points: Vec<Vec<f64>> = survivors.iter().map(|&i| boxes[i].0.as_vec4()).collect();
    let labels = dbscan(&points, eps, 2);
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, label) in labels.iter().enumerate() {
        if let ClusterLabel::Cluster(c) = label {
            clusters.entry(*c).or_default().push(survivors[pos]);
        }
    }
    // all noise: every surviving box stands alone
    let candidate_sets: Vec<Vec<usize>> = if clusters.is_empty() {
        survivors.iter().map(|&i| vec![i]).collect()
    } else {
        clusters.into_values().collect()
    };

    let mean_box = |members: &[usize]| -> BBox {
        let n = members.len() as f64;
        let sum = members.iter().fold([0.0; 4], |acc, &i| {
            let b = boxes[i].0;
            [acc[0] + b.x1, acc[1] + b.y1, acc[2] + b.x2, acc[3] + b.y2]
        });
        BBox { x1: sum[0] / n, y1: sum[1] / n, x2: sum[2] / n, y2: sum[3] / n }
    };
    let winner = candidate_sets
        .iter()
        .max_by(|a, b| {
            let sa: f64 = a.iter().map(|&i| boxes[i].1).sum();
            let sb: f64 = b.iter().map(|&i| boxes[i].1).sum();
            sa.partial_cmp(&sb).unwrap().then_with(|| {
                // tie-break on the mean box itself for permutation invariance
                let ba = mean_box(a).as_vec4();
                let bb = mean_box(b).as_vec4();
                bb.partial_cmp(&ba).unwrap()
            })
        })
        .expect("at least one candidate set");
    let bbox = mean_box(winner);
    let confidence = winner.iter().map(|&i| boxes[i].1).sum::<f64>() / winner.len() as f64;
    Ok(StaticBox { object_id, bbox, support: winner.len(), confidence })
}

/// Drops mask components smaller than `min_area_frac` of the largest
/// component. An empty mask stays empty; never grows a mask; idempotent.
pub fn clean_mask(m: &Mask, min_area_frac: f64) -> Mask {
    if m.is_empty() {
        return m.clone();
    }
    let comps = connected_components(m);
    let largest = comps[0].1 as f64;
    let mut kept = Mask::empty(m.width, m.height);
    for (comp, area) in &comps {
        if (*area as f64) >= min_area_frac * largest {
            kept = kept.union(comp).expect("components share dimensions");
        }
    }
    kept
}

/// Pixelwise union of masks per class. Errors on dimension mismatch.
pub fn merge_same_class(
    masks: &[(Mask, String)],
) -> Result<BTreeMap<String, Mask>, FusionError> {
    let mut out: BTreeMap<String, Mask> = BTreeMap::new();
    for (mask, class) in masks {
        match out.get_mut(class) {
            Some(existing) => *existing = existing.union(mask)?,
            None => {
                out.insert(class.clone(), mask.clone());
            }
        }
    }
    Ok(out)
}

/// Most confident class over a score history: highest mean score across
/// the frames where the class was observed; ties go to the
/// lexicographically smaller name.
pub fn resolve_track_class(history: &BTreeMap<String, Vec<f64>>) -> Option<(String, f64)> {
    history
        .iter()
        .filter(|(_, scores)| !scores.is_empty())
        .map(|(name, scores)| (name, scores.iter().sum::<f64>() / scores.len() as f64))
        .fold(None::<(&String, f64)>, |best, (name, mean)| match best {
            Some((_, bm)) if bm >= mean => best,
            _ => Some((name, mean)),
        })
        .map(|(n, m)| (n.clone(), m))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionOptions {
    /// Component area floor as a fraction of the largest component.
    pub min_area_frac: f64,
    /// DBSCAN eps for static-box refinement, as a fraction of the image
    /// diagonal so behavior is resolution-invariant.
    pub static_eps_frac: f64,
    /// Center-outlier cutoff in median-absolute-deviations.
    pub mad_factor: f64,
}

impl Default for FusionOptions {
    fn default() -> Self {
        FusionOptions { min_area_frac: 0.2, static_eps_frac: 0.05, mad_factor: 2.5 }
    }
}

/// Builds one track per registry entry. Per frame, the matching detection
/// with the highest fused score binds the box (falling back to the mask's
/// bounding box), masks are cleaned and merged, and non-movable entries
/// carry their refined static box on every frame. Absent frames are marked
/// not present.
pub fn build_tracks(
    ep: &Episode,
    registry: &ObjectRegistry,
    options: &FusionOptions,
) -> Vec<ObjectTrack> {
    let eps = options.static_eps_frac * ep.image_diagonal();
    registry
        .entries
        .iter()
        .map(|entry| {
            let mut history: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut frames: Vec<TrackFrame> = Vec::with_capacity(ep.frames.len());
            for frame in &ep.frames {
                let mut tf = TrackFrame::default();
                let mut best: Option<(f64, &crate::stream::RawDetection)> = None;
                for det in &frame.detections {
                    if entry.matches_name(&det.name) {
                        let fused = combine_alignment(det.confidence, None);
                        let name = det.name.trim().to_lowercase();
                        let slot = tf.class_scores.entry(name.clone()).or_insert(0.0);
                        *slot = slot.max(fused);
                        history.entry(name).or_default().push(fused);
                        if best.is_none_or(|(b, _)| fused > b) {
                            best = Some((fused, det));
                        }
                    }
                }
                if let Some((_, det)) = best {
                    tf.bbox = Some(det.bbox);
                }
                let mut entry_masks: Vec<Mask> = Vec::new();
                for mr in &frame.masks {
                    if mr.name.as_deref().is_some_and(|n| entry.matches_name(n)) {
                        entry_masks.push(clean_mask(&mr.mask, options.min_area_frac));
                    }
                }
                if !entry_masks.is_empty() {
                    let mut merged = entry_masks[0].clone();
                    for m in &entry_masks[1..] {
                        merged = merged.union(m).expect("episode masks share dimensions");
                    }
                    if tf.bbox.is_none() {
                        tf.bbox = merged.bounding_box();
                    }
                    tf.mask = Some(merged);
                }
                tf.present = tf.bbox.is_some() || tf.mask.is_some();
                frames.push(tf);
            }

            let mut static_box = None;
            if !entry.properties.movable {
                let boxes: Vec<(BBox, f64)> = frames
                    .iter()
                    .filter_map(|tf| {
                        tf.bbox.map(|b| {
                            let conf = tf
                                .class_scores
                                .values()
                                .copied()
                                .fold(f64::NEG_INFINITY, f64::max);
                            (b, if conf.is_finite() { conf } else { entry.representative_confidence })
                        })
                    })
                    .collect();
                if !boxes.is_empty() {
                    if let Ok(sb) =
                        refine_static_box(entry.object_id, &boxes, eps, options.mad_factor)
                    {
                        for tf in &mut frames {
                            tf.bbox = Some(sb.bbox);
                            tf.present = true;
                        }
                        static_box = Some(sb);
                    }
                }
            }

            ObjectTrack {
                object_id: entry.object_id,
                resolved_class: resolve_track_class(&history),
                frames,
                static_box,
            }
        })
        .collect()
}
