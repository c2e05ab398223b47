//! Perception-stream data model and its on-disk format.
//!
//! An episode is stored as a line-delimited UTF-8 index file: the first
//! line is a header (`episode_id`, `width`, `height`, `fps`), every
//! following line one frame record. Depth maps and masks live in binary
//! sidecar files referenced by relative path, which keeps the index
//! human-inspectable and streamable for long episodes.
//!
//! Sidecar formats, all little-endian:
//! - mask: `width u32, height u32, count u32`, then `count` RLE runs as
//!   `(start u32, len u32)` pairs over row-major pixel order
//! - depth: `width u32, height u32`, then `width * height` `f32` values
//!   in `[0, 1]`, row-major
//!
//! Ingestion validates every declared invariant and never silently
//! repairs. Missing optional signals are permitted; downstream heuristics
//! that need an absent signal are disabled for that episode.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{BBox, DepthMap, Mask, Run};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invariant violation at frame {frame_index}: {what}")]
    Invariant { frame_index: u64, what: String },
    #[error("invalid episode: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StreamError + '_ {
    move |source| StreamError::Io { path: path.to_path_buf(), source }
}

/// Open-vocabulary detector output for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub name: String,
    #[serde(rename = "box", with = "box_array")]
    pub bbox: BBox,
    pub confidence: f64,
}

/// A segmentation mask, either bound to a declared object (id plus name)
/// or class-agnostic (neither set).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub object_id: Option<u32>,
    pub name: Option<String>,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperRecord {
    pub closed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_box_array")]
    pub end_effector_box: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmProposal {
    pub name: String,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectnessBox {
    #[serde(rename = "box", with = "box_array")]
    pub bbox: BBox,
    pub objectness: f64,
}

/// All raw signals for one video frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub detections: Vec<RawDetection>,
    pub masks: Vec<MaskRecord>,
    pub depth: Option<DepthMap>,
    /// Per-object mean optical-flow magnitude, pixels/frame.
    pub flow: Option<BTreeMap<u32, f64>>,
    pub gripper: Option<GripperRecord>,
    pub vlm_proposals: Option<Vec<VlmProposal>>,
    /// object id -> state name -> score in [0, 1].
    pub state_scores: Option<BTreeMap<u32, BTreeMap<String, f64>>>,
    pub objectness_boxes: Option<Vec<ObjectnessBox>>,
}

/// A validated, immutable episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub frames: Vec<FrameRecord>,
}

impl Episode {
    pub fn image_diagonal(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt()
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.episode_id.is_empty() {
            return Err(StreamError::Invalid("episode_id must be non-empty".into()));
        }
        if self.episode_id.contains(|c: char| c.is_control() || c == '\t' || c == '/') {
            return Err(StreamError::Invalid("episode_id contains control, tab, or '/'".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(StreamError::Invalid("image size must be positive".into()));
        }
        if self.frames.is_empty() {
            return Err(StreamError::Invalid("frame sequence must be non-empty".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(StreamError::Invalid("fps must be positive".into()));
        }
        let mut prev: Option<u64> = None;
        for f in &self.frames {
            if let Some(p) = prev {
                if f.frame_index <= p {
                    return Err(StreamError::Invariant {
                        frame_index: f.frame_index,
                        what: format!("frame_index not increasing (previous {p})"),
                    });
                }
            }
            prev = Some(f.frame_index);
            self.validate_frame(f)?;
        }
        Ok(())
    }

    fn validate_frame(&self, f: &FrameRecord) -> Result<(), StreamError> {
        let inv = |what: String| StreamError::Invariant { frame_index: f.frame_index, what };
        let check_box = |b: &BBox, ctx: &str| -> Result<(), StreamError> {
            b.validate().map_err(|e| inv(format!("{ctx}: {e}")))?;
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > self.width as f64 || b.y2 > self.height as f64 {
                return Err(inv(format!(
                    "{ctx}: box ({}, {}, {}, {}) outside image bounds {}x{}",
                    b.x1, b.y1, b.x2, b.y2, self.width, self.height
                )));
            }
            Ok(())
        };
        let check_score = |s: f64, ctx: &str| -> Result<(), StreamError> {
            if !(s.is_finite() && (0.0..=1.0).contains(&s)) {
                return Err(inv(format!("{ctx}: score {s} not in [0, 1]")));
            }
            Ok(())
        };
        for d in &f.detections {
            if d.name.is_empty() || d.name.contains(|c: char| c.is_control() || c == '\t') {
                return Err(inv(format!("detection name {:?} empty or unprintable", d.name)));
            }
            check_box(&d.bbox, &format!("detection {:?}", d.name))?;
            check_score(d.confidence, &format!("detection {:?} confidence", d.name))?;
        }
        for (i, m) in f.masks.iter().enumerate() {
            m.mask
                .validate()
                .map_err(|e| inv(format!("mask {i}: {e}")))?;
            if m.mask.width != self.width || m.mask.height != self.height {
                return Err(inv(format!(
                    "mask {i}: dimensions {}x{} differ from image {}x{}",
                    m.mask.width, m.mask.height, self.width, self.height
                )));
            }
            if let (Some(id), None) = (m.object_id, &m.name) {
                return Err(inv(format!(
                    "mask {i}: object_id {id} has no declared name (class-agnostic masks carry neither)"
                )));
            }
        }
        if let Some(depth) = &f.depth {
            if depth.width != self.width || depth.height != self.height {
                return Err(inv(format!(
                    "depth dimensions {}x{} differ from image {}x{}",
                    depth.width, depth.height, self.width, self.height
                )));
            }
        }
        if let Some(flow) = &f.flow {
            for (id, mag) in flow {
                if !(mag.is_finite() && *mag >= 0.0) {
                    return Err(inv(format!("flow magnitude for object {id} is {mag}")));
                }
            }
        }
        if let Some(g) = &f.gripper {
            if let Some(b) = &g.end_effector_box {
                check_box(b, "end_effector_box")?;
            }
        }
        if let Some(scores) = &f.state_scores {
            for (id, per_state) in scores {
                for (state, s) in per_state {
                    check_score(*s, &format!("state score {state:?} of object {id}"))?;
                }
            }
        }
        if let Some(boxes) = &f.objectness_boxes {
            for (i, ob) in boxes.iter().enumerate() {
                check_box(&ob.bbox, &format!("objectness box {i}"))?;
                check_score(ob.objectness, &format!("objectness box {i}"))?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// wire representation

mod box_array {
    use super::BBox;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
        [b.x1, b.y1, b.x2, b.y2].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BBox, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(d)?;
        Ok(BBox { x1, y1, x2, y2 })
    }
}

mod opt_box_array {
    use super::BBox;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &Option<BBox>, s: S) -> Result<S::Ok, S::Error> {
        b.map(|b| [b.x1, b.y1, b.x2, b.y2]).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BBox>, D::Error> {
        Ok(Option::<[f64; 4]>::deserialize(d)?
            .map(|[x1, y1, x2, y2]| BBox { x1, y1, x2, y2 }))
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    episode_id: String,
    width: u32,
    height: u32,
    fps: f64,
}

#[derive(Serialize, Deserialize)]
struct MaskLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    object_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    mask_ref: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    frame_index: u64,
    detections: Vec<RawDetection>,
    masks: Vec<MaskLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flow: Option<BTreeMap<u32, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gripper: Option<GripperRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vlm_proposals: Option<Vec<VlmProposal>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state_scores: Option<BTreeMap<u32, BTreeMap<String, f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objectness_boxes: Option<Vec<ObjectnessBox>>,
}

fn sidecar_dir_name(index_path: &Path) -> PathBuf {
    let stem = index_path.file_stem().unwrap_or_default().to_string_lossy();
    index_path.with_file_name(format!("{stem}.sidecar"))
}

fn read_mask_sidecar(path: &Path) -> Result<Mask, StreamError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut rd = bytes.as_slice();
    let mut u32le = |ctx: &str| -> Result<u32, StreamError> {
        let mut buf = [0u8; 4];
        rd.read_exact(&mut buf).map_err(|_| StreamError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("truncated mask sidecar at {ctx}"),
        })?;
        Ok(u32::from_le_bytes(buf))
    };
    let width = u32le("width")?;
    let height = u32le("height")?;
    let count = u32le("count")?;
    let mut runs = Vec::with_capacity(count as usize);
    for i in 0..count {
        let start = u32le(&format!("run {i} start"))?;
        let len = u32le(&format!("run {i} len"))?;
        runs.push(Run { start, len });
    }
    let mask = Mask { width, height, runs };
    mask.validate().map_err(|e| StreamError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(mask)
}

fn write_mask_sidecar(mask: &Mask, path: &Path) -> Result<(), StreamError> {
    let mut buf = Vec::with_capacity(12 + mask.runs.len() * 8);
    buf.extend_from_slice(&mask.width.to_le_bytes());
    buf.extend_from_slice(&mask.height.to_le_bytes());
    buf.extend_from_slice(&(mask.runs.len() as u32).to_le_bytes());
    for r in &mask.runs {
        buf.extend_from_slice(&r.start.to_le_bytes());
        buf.extend_from_slice(&r.len.to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

fn read_depth_sidecar(path: &Path) -> Result<DepthMap, StreamError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let parse = |msg: &str| StreamError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: msg.to_string(),
    };
    if bytes.len() < 8 {
        return Err(parse("truncated depth sidecar header"));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let expected = 8 + (width as usize) * (height as usize) * 4;
    if bytes.len() != expected {
        return Err(parse(&format!("depth sidecar has {} bytes, expected {expected}", bytes.len())));
    }
    let values: Vec<f32> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DepthMap::new(width, height, values).map_err(|e| parse(&e.to_string()))
}

fn write_depth_sidecar(depth: &DepthMap, path: &Path) -> Result<(), StreamError> {
    let mut buf = Vec::with_capacity(8 + depth.values.len() * 4);
    buf.extend_from_slice(&depth.width.to_le_bytes());
    buf.extend_from_slice(&depth.height.to_le_bytes());
    for v in &depth.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Loads and validates an episode from its index file. Fails on the first
/// malformed line (with line number) or violated invariant.
pub fn load_episode(path: impl AsRef<Path>) -> Result<Episode, StreamError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = lines.next().ok_or_else(|| StreamError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty file, expected header line".into(),
    })?;
    let header_line = header_line.map_err(io_err(path))?;
    let header: HeaderLine = serde_json::from_str(&header_line).map_err(|e| StreamError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: format!("bad header: {e}"),
    })?;

    let mut frames = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let fl: FrameLine = serde_json::from_str(&line).map_err(|e| StreamError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let masks = fl
            .masks
            .into_iter()
            .map(|m| {
                Ok(MaskRecord {
                    object_id: m.object_id,
                    name: m.name,
                    mask: read_mask_sidecar(&base.join(&m.mask_ref))?,
                })
            })
            .collect::<Result<Vec<_>, StreamError>>()?;
        let depth = fl
            .depth_ref
            .map(|r| read_depth_sidecar(&base.join(&r)))
            .transpose()?;
        frames.push(FrameRecord {
            frame_index: fl.frame_index,
            detections: fl.detections,
            masks,
            depth,
            flow: fl.flow,
            gripper: fl.gripper,
            vlm_proposals: fl.vlm_proposals,
            state_scores: fl.state_scores,
            objectness_boxes: fl.objectness_boxes,
        });
    }

    let episode = Episode {
        episode_id: header.episode_id,
        width: header.width,
        height: header.height,
        fps: header.fps,
        frames,
    };
    episode.validate()?;
    Ok(episode)
}

/// Writes an episode as index plus sidecars. Sidecar names are derived
/// deterministically from frame and mask indices, so re-saving a loaded
/// episode reproduces the files byte for byte.
pub fn save_episode(ep: &Episode, path: impl AsRef<Path>) -> Result<(), StreamError> {
    let path = path.as_ref();
    ep.validate()?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let sidecar_dir = sidecar_dir_name(path);
    let needs_sidecars =
        ep.frames.iter().any(|f| !f.masks.is_empty() || f.depth.is_some());
    if needs_sidecars {
        fs::create_dir_all(&sidecar_dir).map_err(io_err(&sidecar_dir))?;
    }
    let rel_dir = sidecar_dir.file_name().unwrap().to_string_lossy().to_string();

    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let header = HeaderLine {
        episode_id: ep.episode_id.clone(),
        width: ep.width,
        height: ep.height,
        fps: ep.fps,
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| StreamError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;

    for f in &ep.frames {
        let mut mask_lines = Vec::with_capacity(f.masks.len());
        for (mi, m) in f.masks.iter().enumerate() {
            let name = format!("f{:06}_m{:02}.rle", f.frame_index, mi);
            write_mask_sidecar(&m.mask, &sidecar_dir.join(&name))?;
            mask_lines.push(MaskLine {
                object_id: m.object_id,
                name: m.name.clone(),
                mask_ref: format!("{rel_dir}/{name}"),
            });
        }
        let depth_ref = match &f.depth {
            Some(d) => {
                let name = format!("f{:06}.depth", f.frame_index);
                write_depth_sidecar(d, &sidecar_dir.join(&name))?;
                Some(format!("{rel_dir}/{name}"))
            }
            None => None,
        };
        let line = FrameLine {
            frame_index: f.frame_index,
            detections: f.detections.clone(),
            masks: mask_lines,
            depth_ref,
            flow: f.flow.clone(),
            gripper: f.gripper.clone(),
            vlm_proposals: f.vlm_proposals.clone(),
            state_scores: f.state_scores.clone(),
            objectness_boxes: f.objectness_boxes.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| StreamError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
