//! Stage 2b: object-centric change signals and templated observations.
//!
//! Five signal families feed the keystate heuristics: object movement
//! (box displacement or optical flow), spatial relation changes from the
//! per-frame scene graph, object state changes, gripper-object proximity,
//! and gripper closing/opening. Every event renders through a fixed
//! sentence template; the templates are the wire format that later stages
//! and the language model consume, so they are bit-exact.

pub mod gripper;
pub mod movement;
pub mod relations;
pub mod states;

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gripper::{gripper_close_events, gripper_near_events, GripperCloseEvent, GripperNearEvent};
pub use movement::{detect_movement, Direction, MovementEvent};
pub use relations::{
    build_relation_graph, surface_frame, surface_grid_position, ObjectPose, Relation,
    RelationEvent, SceneGraph, SurfaceFrame,
};
pub use states::{detect_state_changes, StateEvent};

use crate::fusion::ObjectTrack;
use crate::numerics::GridCell;
use crate::registry::{ObjectEntry, ObjectRegistry};
use crate::stream::Episode;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("depth required: {0}")]
    DepthRequired(String),
    #[error(transparent)]
    Geometry(#[from] crate::numerics::GeometryError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// What kind of change an observation describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    Movement,
    RelationChange,
    StateChange,
    GripperNear,
    GripperClose,
    SurfacePosition,
}

impl ObservationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObservationKind::Movement => "movement",
            ObservationKind::RelationChange => "relation_change",
            ObservationKind::StateChange => "state_change",
            ObservationKind::GripperNear => "gripper_near",
            ObservationKind::GripperClose => "gripper_close",
            ObservationKind::SurfacePosition => "surface_position",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "movement" => ObservationKind::Movement,
            "relation_change" => ObservationKind::RelationChange,
            "state_change" => ObservationKind::StateChange,
            "gripper_near" => ObservationKind::GripperNear,
            "gripper_close" => ObservationKind::GripperClose,
            "surface_position" => ObservationKind::SurfacePosition,
            _ => return None,
        })
    }
}

impl fmt::Display for ObservationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One templated, time-stamped sentence about one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame_index: u64,
    pub object_id: u32,
    pub kind: ObservationKind,
    pub text: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationLog {
    pub observations: Vec<Observation>,
}

// ---------------------------------------------------------------------------
// templates
//
// movement: "{obj} moved to the {dir} of {other}"
//           "{obj} moved {dir}"
//           "{obj} moved from {cell} to {cell} of the {surface}"
// state:    "{obj} changed from {s1} to {s2}."
// gripper:  "The gripper was close to {obj}" / "The gripper opened."
// relation: "{obj} is {relation} {other}"
// position: "{obj} is at the {cell} of the {surface}"

pub fn render_movement_relation(obj: &str, dir: &str, other: &str) -> String {
    format!("{obj} moved to the {dir} of {other}")
}

pub fn render_movement_plain(obj: &str, dir: &Direction) -> String {
    format!("{obj} moved {dir}")
}

pub fn render_movement_cells(obj: &str, from: &GridCell, to: &GridCell, surface: &str) -> String {
    format!("{obj} moved from {from} to {to} of the {surface}")
}

pub fn render_state_change(obj: &str, from: &str, to: &str) -> String {
    format!("{obj} changed from {from} to {to}.")
}

pub fn render_gripper_near(obj: &str) -> String {
    format!("The gripper was close to {obj}")
}

pub const GRIPPER_OPENED_TEXT: &str = "The gripper opened.";

pub fn render_relation(obj: &str, relation: &Relation, other: &str) -> String {
    format!("{obj} is {} {other}", relation.phrase())
}

pub fn render_surface_position(obj: &str, cell: &GridCell, surface: &str) -> String {
    format!("{obj} is at the {cell} of the {surface}")
}

/// Fields recovered from an observation's text; the inverse of the
/// renderers above, used to verify templates stay parseable.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedObservation {
    MovementRelation { obj: String, dir: String, other: String },
    MovementPlain { obj: String, dir: String },
    MovementCells { obj: String, from: GridCell, to: GridCell, surface: String },
    StateChange { obj: String, from: String, to: String },
    GripperNear { obj: String },
    GripperOpened,
    Relation { obj: String, relation: Relation, other: String },
    SurfacePosition { obj: String, cell: GridCell, surface: String },
}

/// Parses an observation text back into its fields.
pub fn parse_observation(kind: ObservationKind, text: &str) -> Option<ParsedObservation> {
    match kind {
        ObservationKind::Movement => {
            if let Some((obj, rest)) = text.split_once(" moved to the ") {
                let (dir, other) = rest.split_once(" of ")?;
                return Some(ParsedObservation::MovementRelation {
                    obj: obj.into(),
                    dir: dir.into(),
                    other: other.into(),
                });
            }
            if let Some((obj, rest)) = text.split_once(" moved from ") {
                let (cells, surface) = rest.split_once(" of the ")?;
                let (from, to) = cells.split_once(" to ")?;
                return Some(ParsedObservation::MovementCells {
                    obj: obj.into(),
                    from: GridCell::parse(from)?,
                    to: GridCell::parse(to)?,
                    surface: surface.into(),
                });
            }
            let (obj, dir) = text.split_once(" moved ")?;
            Direction::parse(dir)?;
            Some(ParsedObservation::MovementPlain { obj: obj.into(), dir: dir.into() })
        }
        ObservationKind::StateChange => {
            let (obj, rest) = text.split_once(" changed from ")?;
            let rest = rest.strip_suffix('.')?;
            let (from, to) = rest.split_once(" to ")?;
            Some(ParsedObservation::StateChange {
                obj: obj.into(),
                from: from.into(),
                to: to.into(),
            })
        }
        ObservationKind::GripperNear => {
            let obj = text.strip_prefix("The gripper was close to ")?;
            Some(ParsedObservation::GripperNear { obj: obj.into() })
        }
        ObservationKind::GripperClose => {
            (text == GRIPPER_OPENED_TEXT).then_some(ParsedObservation::GripperOpened)
        }
        ObservationKind::RelationChange => {
            let (obj, rest) = text.split_once(" is ")?;
            for rel in Relation::ALL {
                if let Some(other) = rest.strip_prefix(rel.phrase()) {
                    let other = other.strip_prefix(' ')?;
                    return Some(ParsedObservation::Relation {
                        obj: obj.into(),
                        relation: rel,
                        other: other.into(),
                    });
                }
            }
            None
        }
        ObservationKind::SurfacePosition => {
            let (obj, rest) = text.split_once(" is at the ")?;
            let (cell, surface) = rest.split_once(" of the ")?;
            Some(ParsedObservation::SurfacePosition {
                obj: obj.into(),
                cell: GridCell::parse(cell)?,
                surface: surface.into(),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// extraction options and the per-episode signal bundle

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalsOptions {
    /// Movement displacement threshold as a fraction of image width.
    pub disp_thresh: f64,
    /// Flow-magnitude threshold in pixels/frame.
    pub flow_thresh: f64,
    /// Minimum per-frame smoothed-center step (pixels) that counts as
    /// motion.
    pub step_eps: f64,
    /// Present frames averaged per center before step detection.
    pub smooth_window: usize,
    /// Consecutive flow frames required for a flow-only movement event.
    pub min_flow_frames: usize,
    /// Directional-relation offset threshold in surface-frame units.
    pub tau_rel: f64,
    /// Pair radius for relation edges, surface-frame units.
    pub neighbor_radius: f64,
    /// Box overlap required for on-top-of/below.
    pub vertical_overlap: f64,
    /// Container scale slack for inside.
    pub inside_scale: f64,
    /// Frames an appearing edge must persist before it counts.
    pub relation_stability: usize,
    /// Majority-vote window for state smoothing.
    pub state_window: usize,
    /// Robot-mask-vs-crop IOU above which state frames are skipped.
    pub occlusion_iou: f64,
    /// Crop padding fraction for the occlusion test.
    pub crop_pad_frac: f64,
    /// Gripper proximity base threshold as a fraction of the image
    /// diagonal, scaled per object by sqrt(box area) / (0.1 * diagonal),
    /// clamped to [0.5, 2].
    pub near_base_frac: f64,
    /// Consecutive below-threshold frames required for a proximity event.
    pub near_min_frames: usize,
    /// Stream mask name that identifies the robot manipulator.
    pub robot_mask_name: String,
    /// Grade movement confidence by displacement/threshold ratio.
    pub graded_movement: bool,
    /// Render object names as uniformly sampled synonyms.
    pub synonym_diversity: bool,
    /// Seed for synonym sampling.
    pub diversity_seed: u64,
    /// Backprojection stride for the surface cloud.
    pub cloud_stride: u32,
    /// Plane-fit inlier distance, normalized depth units.
    pub plane_inlier: f64,
}

impl Default for SignalsOptions {
    fn default() -> Self {
        SignalsOptions {
            disp_thresh: 0.05,
            flow_thresh: 5.0,
            step_eps: 1.5,
            smooth_window: 3,
            min_flow_frames: 3,
            tau_rel: 0.05,
            neighbor_radius: 0.35,
            vertical_overlap: 0.3,
            inside_scale: 1.05,
            relation_stability: 3,
            state_window: 5,
            occlusion_iou: 0.15,
            crop_pad_frac: 0.1,
            near_base_frac: 0.04,
            near_min_frames: 3,
            robot_mask_name: "robot".into(),
            graded_movement: false,
            synonym_diversity: false,
            diversity_seed: 0,
            cloud_stride: 2,
            plane_inlier: 0.05,
        }
    }
}

/// Everything Stage 2b extracted from one episode.
#[derive(Debug, Clone, Default)]
pub struct EpisodeSignals {
    pub movements: Vec<MovementEvent>,
    pub relation_events: Vec<RelationEvent>,
    pub state_events: Vec<StateEvent>,
    pub near_events: Vec<GripperNearEvent>,
    pub close_events: Vec<GripperCloseEvent>,
    /// Scene graph per frame position (empty graph when skipped).
    pub graphs: Vec<SceneGraph>,
    /// Grid cell per object per frame position, when a surface quad exists.
    pub grid_cells: Vec<std::collections::BTreeMap<u32, GridCell>>,
}

/// Runs the full Stage-2b extraction over prepared tracks.
pub fn extract_signals(
    ep: &Episode,
    registry: &ObjectRegistry,
    tracks: &[ObjectTrack],
    options: &SignalsOptions,
) -> EpisodeSignals {
    let robot_masks = gripper::robot_masks(ep, &options.robot_mask_name);
    let frame_indices: Vec<u64> = ep.frames.iter().map(|f| f.frame_index).collect();

    let mut signals = EpisodeSignals::default();

    // movement per movable object
    for track in tracks {
        let entry = registry.entry(track.object_id).expect("track ids come from the registry");
        if entry.is_surface || !entry.properties.movable {
            continue;
        }
        let flow = movement::per_frame_flow(ep, entry);
        signals.movements.extend(detect_movement(
            track,
            &frame_indices,
            &flow,
            ep.width,
            options,
        ));
    }

    // relations, grids
    let rel = relations::extract_relations(ep, registry, tracks, &robot_masks, options);
    signals.relation_events = rel.events;
    signals.graphs = rel.graphs;
    signals.grid_cells = rel.grid_cells;

    // state changes
    signals.state_events = states::extract_state_events(ep, registry, tracks, &robot_masks, options);

    // gripper proximity and closing
    signals.near_events =
        gripper::gripper_near_events(ep, registry, tracks, &robot_masks, options);
    signals.close_events = gripper::gripper_close_events(ep, registry, tracks, &robot_masks);

    signals
}

fn display_name<'a>(
    entry: &'a ObjectEntry,
    rng: &mut Option<rand_chacha::ChaCha8Rng>,
) -> &'a str {
    if let Some(rng) = rng.as_mut() {
        if !entry.synonyms.is_empty() {
            let mut pool: Vec<&str> = Vec::with_capacity(entry.synonyms.len() + 1);
            pool.push(entry.canonical_name.as_str());
            pool.extend(entry.synonyms.iter().map(String::as_str));
            return pool.choose(rng).unwrap();
        }
    }
    entry.canonical_name.as_str()
}

/// Renders every extracted event through its template, in deterministic
/// (frame, object, kind) order. Object names are lowercase canonical names
/// unless synonym diversity is enabled, in which case a seeded uniform
/// synonym is sampled per observation.
pub fn emit_observations(
    signals: &EpisodeSignals,
    registry: &ObjectRegistry,
    options: &SignalsOptions,
) -> ObservationLog {
    let mut rng = options
        .synonym_diversity
        .then(|| rand_chacha::ChaCha8Rng::seed_from_u64(options.diversity_seed));
    let name = |id: u32, rng: &mut Option<rand_chacha::ChaCha8Rng>| -> String {
        registry
            .entry(id)
            .map(|e| display_name(e, rng).to_string())
            .unwrap_or_else(|| format!("object {id}"))
    };
    let surface_name = registry
        .surface()
        .map(|e| e.canonical_name.clone())
        .unwrap_or_else(|| "surface".to_string());

    let mut out: Vec<Observation> = Vec::new();

    for ev in &signals.movements {
        let obj = name(ev.object_id, &mut rng);
        // relation form first, then grid-cell form, then plain direction
        let text = if let Some((dir, other_id)) = movement_relation_target(ev, signals, options) {
            render_movement_relation(&obj, dir, &name(other_id, &mut rng))
        } else if let Some((from, to)) = movement_cells(ev, signals) {
            render_movement_cells(&obj, &from, &to, &surface_name)
        } else {
            render_movement_plain(&obj, &ev.direction)
        };
        out.push(Observation {
            frame_index: ev.end_frame,
            object_id: ev.object_id,
            kind: ObservationKind::Movement,
            text,
            confidence: ev.confidence,
        });
        if let Some((_, to)) = movement_cells(ev, signals) {
            out.push(Observation {
                frame_index: ev.end_frame,
                object_id: ev.object_id,
                kind: ObservationKind::SurfacePosition,
                text: render_surface_position(&obj, &to, &surface_name),
                confidence: ev.confidence,
            });
        }
    }

    for ev in &signals.relation_events {
        let obj = name(ev.subject, &mut rng);
        let other = name(ev.object, &mut rng);
        out.push(Observation {
            frame_index: ev.frame_index,
            object_id: ev.subject,
            kind: ObservationKind::RelationChange,
            text: render_relation(&obj, &ev.relation, &other),
            confidence: 1.0,
        });
    }

    for ev in &signals.state_events {
        let obj = name(ev.object_id, &mut rng);
        out.push(Observation {
            frame_index: ev.frame_index,
            object_id: ev.object_id,
            kind: ObservationKind::StateChange,
            text: render_state_change(&obj, &ev.from_state, &ev.to_state),
            confidence: 1.0,
        });
    }

    for ev in &signals.near_events {
        let obj = name(ev.object_id, &mut rng);
        out.push(Observation {
            frame_index: ev.frame_index,
            object_id: ev.object_id,
            kind: ObservationKind::GripperNear,
            text: render_gripper_near(&obj),
            confidence: 1.0,
        });
    }

    for ev in &signals.close_events {
        if let Some(object_id) = ev.object_id {
            out.push(Observation {
                frame_index: ev.frame_index,
                object_id,
                kind: ObservationKind::GripperClose,
                text: GRIPPER_OPENED_TEXT.to_string(),
                confidence: 1.0,
            });
        }
    }

    out.sort_by(|a, b| {
        (a.frame_index, a.object_id, a.kind, &a.text).cmp(&(
            b.frame_index,
            b.object_id,
            b.kind,
            &b.text,
        ))
    });
    out.dedup();
    ObservationLog { observations: out }
}

/// A new left/right edge gained by the moved object near the event end,
/// rendered as "moved to the left/right of".
fn movement_relation_target<'a>(
    ev: &MovementEvent,
    signals: &'a EpisodeSignals,
    options: &SignalsOptions,
) -> Option<(&'a str, u32)> {
    let horizon = ev.end_frame + options.relation_stability as u64;
    signals
        .relation_events
        .iter()
        .filter(|re| {
            re.subject == ev.object_id
                && re.frame_index >= ev.start_frame
                && re.frame_index <= horizon
                && matches!(re.relation, Relation::LeftOf | Relation::RightOf)
        })
        .min_by_key(|re| (re.frame_index, re.object))
        .map(|re| {
            let dir = match re.relation {
                Relation::LeftOf => "left",
                _ => "right",
            };
            (dir, re.object)
        })
}

fn movement_cells(ev: &MovementEvent, signals: &EpisodeSignals) -> Option<(GridCell, GridCell)> {
    let from = *signals.grid_cells.get(ev.start_pos)?.get(&ev.object_id)?;
    let to = *signals.grid_cells.get(ev.end_pos)?.get(&ev.object_id)?;
    (from != to).then_some((from, to))
}

// ---------------------------------------------------------------------------
// observation log file: frame_index, object_id, kind, confidence, text

pub fn save_observations(log: &ObservationLog, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let path = path.as_ref();
    let mut out = String::new();
    for o in &log.observations {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            o.frame_index, o.object_id, o.kind, o.confidence, o.text
        ));
    }
    std::fs::write(path, out).map_err(|source| SignalError::Io { path: path.into(), source })
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<ObservationLog, SignalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| SignalError::Io { path: path.into(), source })?;
    let mut observations = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| SignalError::Parse { path: path.into(), line: i + 1, message };
        let fields: Vec<&str> = line.splitn(5, '\t').collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        }
        observations.push(Observation {
            frame_index: fields[0].parse().map_err(|e| err(format!("bad frame: {e}")))?,
            object_id: fields[1].parse().map_err(|e| err(format!("bad object: {e}")))?,
            kind: ObservationKind::parse(fields[2])
                .ok_or_else(|| err(format!("unknown kind {:?}", fields[2])))?,
            confidence: fields[3].parse().map_err(|e| err(format!("bad confidence: {e}")))?,
            text: fields[4].to_string(),
        });
    }
    Ok(ObservationLog { observations })
}
