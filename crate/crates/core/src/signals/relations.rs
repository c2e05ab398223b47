//! Surface-aligned coordinate frames, per-frame scene graphs, and
//! relation-change events.
//!
//! Spatial language needs a frame anchored to the support surface: the
//! surface plane's camera-facing normal is "up", the camera direction
//! projected off the normal is "front", and their cross product is
//! "right". Object positions expressed in that frame drive the eight
//! relations; positions projected through the surface quadrilateral's
//! homography drive the 3x3 grid cells.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::fusion::ObjectTrack;
use crate::numerics::{
    backproject, fit_plane, fit_quadrilateral, grid_cell, homography_from_corners,
    remove_statistical_outliers, BBox, DepthMap, GridCell, Homography, Intrinsics, Mask,
    UNIT_SQUARE,
};
use crate::registry::ObjectRegistry;
use crate::signals::{SignalError, SignalsOptions};
use crate::stream::Episode;

/// Depth slack when testing whether a subject sits within a container's
/// depth span, normalized depth units.
const INSIDE_DEPTH_SLACK: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    OnTopOf,
    Below,
    Inside,
    NextTo,
}

impl Relation {
    pub const ALL: [Relation; 8] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::InFrontOf,
        Relation::Behind,
        Relation::OnTopOf,
        Relation::Below,
        Relation::Inside,
        Relation::NextTo,
    ];

    /// The phrase used in observation templates.
    pub fn phrase(&self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::InFrontOf => "in front of",
            Relation::Behind => "behind",
            Relation::OnTopOf => "on top of",
            Relation::Below => "below",
            Relation::Inside => "inside",
            Relation::NextTo => "next to",
        }
    }

    /// The relation seen from the other endpoint; `Inside` has none (it is
    /// asymmetric), `NextTo` is its own inverse.
    pub fn inverse(&self) -> Option<Relation> {
        Some(match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::InFrontOf => Relation::Behind,
            Relation::Behind => Relation::InFrontOf,
            Relation::OnTopOf => Relation::Below,
            Relation::Below => Relation::OnTopOf,
            Relation::NextTo => Relation::NextTo,
            Relation::Inside => return None,
        })
    }
}

/// Directed spatial relations between the objects of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGraph {
    pub frame_index: u64,
    pub nodes: Vec<u32>,
    pub edges: Vec<(u32, Relation, u32)>,
}

impl SceneGraph {
    pub fn has_edge(&self, subject: u32, relation: Relation, object: u32) -> bool {
        self.edges.contains(&(subject, relation, object))
    }
}

/// Surface-aligned coordinate frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFrame {
    pub origin: Vector3<f64>,
    pub up: Vector3<f64>,
    pub front: Vector3<f64>,
    pub right: Vector3<f64>,
}

impl SurfaceFrame {
    /// Expresses a camera-frame point as (right, front, up) offsets.
    pub fn local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.origin;
        Vector3::new(d.dot(&self.right), d.dot(&self.front), d.dot(&self.up))
    }
}

/// Builds the surface frame from the surface's mask and the frame's depth
/// map: backproject, drop outliers, fit the plane, then derive the axes.
/// The camera's viewing direction projected off the normal yields "front";
/// a top-down view (normal parallel to the optical axis) falls back to the
/// image-up convention.
pub fn surface_frame(
    mask: &Mask,
    depth: Option<&DepthMap>,
    intrinsics: &Intrinsics,
    options: &SignalsOptions,
) -> Result<SurfaceFrame, SignalError> {
    let depth = depth.ok_or_else(|| {
        SignalError::DepthRequired("surface frame needs a depth map".into())
    })?;
    let cloud = backproject(depth, intrinsics, Some(mask), options.cloud_stride)?;
    let cloud = remove_statistical_outliers(&cloud, 8, 2.0);
    let plane = fit_plane(&cloud.points, options.plane_inlier)?;
    let up = plane.normal;
    let toward_camera = Vector3::new(0.0, 0.0, -1.0);
    let mut front = toward_camera - up * toward_camera.dot(&up);
    if front.norm() < 1e-9 {
        front = up.cross(&Vector3::x());
    }
    front.normalize_mut();
    let right = front.cross(&up).normalize();
    let origin = cloud.centroid().expect("non-empty surface cloud");
    Ok(SurfaceFrame { origin, up, front, right })
}

/// Per-frame geometric state of one object, ready for relation rules.
#[derive(Debug, Clone)]
pub struct ObjectPose {
    pub object_id: u32,
    /// (right, front, up) offsets in the surface frame, or the 2-D
    /// fallback coordinates when no depth is available.
    pub position: Vector3<f64>,
    pub bbox: BBox,
    pub is_container: bool,
    pub median_depth: Option<f64>,
    pub depth_span: Option<(f64, f64)>,
}

/// Emits the relation edges among one frame's objects. Ordered pairs
/// within `neighbor_radius` get directional edges past `tau_rel` along
/// each axis; `inside` takes precedence for a pair and is never
/// bidirectional; `next-to` is the residual relation.
pub fn build_relation_graph(
    frame_index: u64,
    poses: &[ObjectPose],
    options: &SignalsOptions,
) -> SceneGraph {
    let mut edges: Vec<(u32, Relation, u32)> = Vec::new();
    let tau = options.tau_rel;
    for i in 0..poses.len() {
        for j in (i + 1)..poses.len() {
            let (a, b) = (&poses[i], &poses[j]);
            let delta = a.position - b.position;
            if delta.norm() > options.neighbor_radius {
                continue;
            }
            let inside_ab = is_inside(a, b, options);
            let inside_ba = is_inside(b, a, options);
            if inside_ab || inside_ba {
                if inside_ab {
                    edges.push((a.object_id, Relation::Inside, b.object_id));
                } else {
                    edges.push((b.object_id, Relation::Inside, a.object_id));
                }
                continue;
            }
            let mut directional = false;
            if delta.x > tau {
                edges.push((a.object_id, Relation::RightOf, b.object_id));
                edges.push((b.object_id, Relation::LeftOf, a.object_id));
                directional = true;
            } else if delta.x < -tau {
                edges.push((a.object_id, Relation::LeftOf, b.object_id));
                edges.push((b.object_id, Relation::RightOf, a.object_id));
                directional = true;
            }
            if delta.y > tau {
                edges.push((a.object_id, Relation::InFrontOf, b.object_id));
                edges.push((b.object_id, Relation::Behind, a.object_id));
                directional = true;
            } else if delta.y < -tau {
                edges.push((a.object_id, Relation::Behind, b.object_id));
                edges.push((b.object_id, Relation::InFrontOf, a.object_id));
                directional = true;
            }
            let overlap = a.bbox.overlap_ratio(&b.bbox);
            if overlap >= options.vertical_overlap {
                if delta.z > tau {
                    edges.push((a.object_id, Relation::OnTopOf, b.object_id));
                    edges.push((b.object_id, Relation::Below, a.object_id));
                    directional = true;
                } else if delta.z < -tau {
                    edges.push((a.object_id, Relation::Below, b.object_id));
                    edges.push((b.object_id, Relation::OnTopOf, a.object_id));
                    directional = true;
                }
            }
            if !directional {
                edges.push((a.object_id, Relation::NextTo, b.object_id));
                edges.push((b.object_id, Relation::NextTo, a.object_id));
            }
        }
    }
    edges.sort();
    let mut nodes: Vec<u32> = poses.iter().map(|p| p.object_id).collect();
    nodes.sort_unstable();
    SceneGraph { frame_index, nodes, edges }
}

fn is_inside(subject: &ObjectPose, container: &ObjectPose, options: &SignalsOptions) -> bool {
    if !container.is_container {
        return false;
    }
    if !subject.bbox.contained_in_scaled(&container.bbox, options.inside_scale) {
        return false;
    }
    match (subject.median_depth, container.depth_span) {
        (Some(z), Some((lo, hi))) => {
            z >= lo - INSIDE_DEPTH_SLACK && z <= hi + INSIDE_DEPTH_SLACK
        }
        _ => true,
    }
}

/// Projects a box's bottom-center through the surface quadrilateral's
/// rectifying homography and returns the clamped 3x3 grid cell.
pub fn surface_grid_position(
    obj: &BBox,
    quad: &[[f64; 2]; 4],
) -> Result<GridCell, SignalError> {
    let h = homography_from_corners(quad, &UNIT_SQUARE)?;
    let p = h.project_point(obj.bottom_center())?;
    Ok(grid_cell(p))
}

/// A relation edge that newly appeared and persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationEvent {
    pub frame_index: u64,
    pub frame_pos: usize,
    pub subject: u32,
    pub relation: Relation,
    pub object: u32,
}

pub(crate) struct RelationExtraction {
    pub graphs: Vec<SceneGraph>,
    pub events: Vec<RelationEvent>,
    pub grid_cells: Vec<BTreeMap<u32, GridCell>>,
}

/// Per-frame relation graphs, grid cells, and appearance events for a full
/// episode. Frames without depth are skipped in 3-D mode; without any
/// depth at all the episode runs in a 2-D fallback (image-plane axes, no
/// front/behind). Relation changes for a pair are confirmed only on frames
/// where the robot mask occludes neither endpoint: while the manipulator
/// holds or covers an object its relations are in flux, and the settled
/// relation appears once the gripper clears it.
pub(crate) fn extract_relations(
    ep: &Episode,
    registry: &ObjectRegistry,
    tracks: &[ObjectTrack],
    robot_masks: &[Option<crate::numerics::Mask>],
    options: &SignalsOptions,
) -> RelationExtraction {
    let intrinsics = Intrinsics::default_for(ep.width, ep.height);
    let surface_track = registry.surface_id.map(|id| &tracks[id as usize]);

    // one surface frame and quad for the episode, from the first frame
    // carrying both surface mask and depth
    let mut frame_axes: Option<SurfaceFrame> = None;
    let mut quad_homography: Option<Homography> = None;
    if let Some(st) = surface_track {
        for (pos, tf) in st.frames.iter().enumerate() {
            if let Some(mask) = &tf.mask {
                if frame_axes.is_none() {
                    if let Some(depth) = ep.frames[pos].depth.as_ref() {
                        frame_axes =
                            surface_frame(mask, Some(depth), &intrinsics, options).ok();
                    }
                }
                if quad_homography.is_none() {
                    quad_homography = fit_quadrilateral(mask)
                        .ok()
                        .and_then(|q| homography_from_corners(&q, &UNIT_SQUARE).ok());
                }
                if frame_axes.is_some() && quad_homography.is_some() {
                    break;
                }
            }
        }
    }
    let three_d = frame_axes.is_some();

    let mut graphs: Vec<SceneGraph> = Vec::with_capacity(ep.frames.len());
    let mut available: Vec<bool> = Vec::with_capacity(ep.frames.len());
    let mut grid_cells: Vec<BTreeMap<u32, GridCell>> = Vec::with_capacity(ep.frames.len());

    for (pos, frame) in ep.frames.iter().enumerate() {
        let mut cells = BTreeMap::new();
        let depth = frame.depth.as_ref();
        let usable = !three_d || depth.is_some();
        let mut poses: Vec<ObjectPose> = Vec::new();
        for track in tracks {
            let entry = registry.entry(track.object_id).expect("track ids from registry");
            if entry.is_surface {
                continue;
            }
            let tf = &track.frames[pos];
            let Some(bbox) = tf.bbox else { continue };
            if let Some(h) = &quad_homography {
                if let Ok(p) = h.project_point(bbox.bottom_center()) {
                    cells.insert(track.object_id, grid_cell(p));
                }
            }
            if !usable {
                continue;
            }
            let (median_depth, depth_span) = match (depth, tf.mask.as_ref()) {
                (Some(d), Some(m)) => (d.median_over(m), d.span_over(m)),
                (Some(d), None) => {
                    let filled = Mask::from_box(ep.width, ep.height, &bbox);
                    (d.median_over(&filled), d.span_over(&filled))
                }
                _ => (None, None),
            };
            let position = match (&frame_axes, median_depth) {
                (Some(axes), Some(z)) => {
                    let [cx, cy] = bbox.center();
                    let p = Vector3::new(
                        (cx - intrinsics.cx) / intrinsics.fx * z,
                        (cy - intrinsics.cy) / intrinsics.fy * z,
                        z,
                    );
                    axes.local(&p)
                }
                _ => {
                    // 2-D fallback: right = +x, up = -y, front disabled
                    let [cx, cy] = bbox.center();
                    Vector3::new(cx / ep.width as f64, 0.0, -cy / ep.width as f64)
                }
            };
            poses.push(ObjectPose {
                object_id: track.object_id,
                position,
                bbox,
                is_container: entry.properties.is_container,
                median_depth,
                depth_span,
            });
        }
        grid_cells.push(cells);
        if usable {
            graphs.push(build_relation_graph(frame.frame_index, &poses, options));
            available.push(true);
        } else {
            graphs.push(SceneGraph { frame_index: frame.frame_index, ..Default::default() });
            available.push(false);
        }
    }

    // appearance events per object pair, restricted to frames where the
    // robot mask occludes neither endpoint: an edge whose endpoints were
    // both already present counts once it persists for
    // `relation_stability` consecutive clear frames
    let occluded: BTreeMap<u32, Vec<bool>> = tracks
        .iter()
        .map(|t| {
            (
                t.object_id,
                crate::signals::states::occlusion_flags(ep, t, robot_masks, options),
            )
        })
        .collect();
    let mut events = Vec::new();
    let ids: Vec<u32> = tracks
        .iter()
        .map(|t| t.object_id)
        .filter(|id| registry.surface_id != Some(*id))
        .collect();
    for &s in &ids {
        for &o in &ids {
            if s == o {
                continue;
            }
            let clear: Vec<usize> = (0..graphs.len())
                .filter(|&i| {
                    available[i]
                        && !occluded.get(&s).is_some_and(|f| f[i])
                        && !occluded.get(&o).is_some_and(|f| f[i])
                })
                .collect();
            for w in 1..clear.len() {
                let (prev, cur) = (clear[w - 1], clear[w]);
                if !(graphs[prev].nodes.contains(&s) && graphs[prev].nodes.contains(&o)) {
                    continue;
                }
                for &(es, r, eo) in &graphs[cur].edges {
                    if es != s || eo != o || graphs[prev].has_edge(s, r, o) {
                        continue;
                    }
                    let stable = w + options.relation_stability <= clear.len()
                        && (w..w + options.relation_stability)
                            .all(|k| graphs[clear[k]].has_edge(s, r, o));
                    if stable {
                        events.push(RelationEvent {
                            frame_index: graphs[cur].frame_index,
                            frame_pos: cur,
                            subject: s,
                            relation: r,
                            object: o,
                        });
                    }
                }
            }
        }
    }
    events.sort_by_key(|e| (e.frame_index, e.subject, e.object, e.relation));

    RelationExtraction { graphs, events, grid_cells }
}
