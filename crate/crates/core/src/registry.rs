//! Stage 1: canonical object registry from multi-frame proposals.
//!
//! Proposals for the same object arrive under different names in different
//! frames. Detections are grouped within each frame by bounding-box IOU
//! (co-occurrence), groups are matched across frames by shared names or
//! median-box overlap, and each cross-frame cluster becomes one registry
//! entry: the member name with the highest mean detector confidence is
//! canonical, the rest become synonyms.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeler::LabelClient;
use crate::numerics::{iou, BBox};
use crate::stream::{Episode, ObjectnessBox, RawDetection};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry is empty")]
    Empty,
    #[error("label client failed: {0}")]
    Client(String),
    #[error("unparseable properties response: {message}; raw payload: {raw}")]
    BadResponse { message: String, raw: String },
    #[error("invalid registry: {0}")]
    Invalid(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// LLM-assigned object properties used to filter invalid interactions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectProperties {
    pub movable: bool,
    pub is_container: bool,
    #[serde(default)]
    pub states: Vec<String>,
    pub interactable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub object_id: u32,
    pub canonical_name: String,
    pub synonyms: Vec<String>,
    pub color: String,
    pub properties: ObjectProperties,
    pub is_surface: bool,
    pub representative_confidence: f64,
}

impl ObjectEntry {
    /// Canonical name plus synonyms.
    pub fn all_names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str())
            .chain(self.synonyms.iter().map(String::as_str))
    }

    pub fn matches_name(&self, name: &str) -> bool {
        let name = name.trim().to_lowercase();
        self.all_names().any(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectRegistry {
    pub entries: Vec<ObjectEntry>,
    pub surface_id: Option<u32>,
}

impl ObjectRegistry {
    pub fn entry(&self, id: u32) -> Option<&ObjectEntry> {
        self.entries.get(id as usize)
    }

    pub fn surface(&self) -> Option<&ObjectEntry> {
        self.surface_id.and_then(|id| self.entry(id))
    }

    /// Entry whose canonical name or synonyms contain `name`.
    pub fn find_by_name(&self, name: &str) -> Option<&ObjectEntry> {
        self.entries.iter().find(|e| e.matches_name(name))
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let mut seen = BTreeSet::new();
        let mut surfaces = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.object_id != i as u32 {
                return Err(RegistryError::Invalid(format!(
                    "object ids must be dense from 0, entry {i} has id {}",
                    e.object_id
                )));
            }
            for name in e.all_names() {
                if !seen.insert(name.to_string()) {
                    return Err(RegistryError::Invalid(format!(
                        "name {name:?} appears in more than one entry"
                    )));
                }
            }
            if e.is_surface {
                surfaces += 1;
                if e.properties.movable {
                    return Err(RegistryError::Invalid(format!(
                        "surface entry {:?} must not be movable",
                        e.canonical_name
                    )));
                }
            }
        }
        if surfaces > 1 {
            return Err(RegistryError::Invalid("at most one surface entry allowed".into()));
        }
        match self.surface_id {
            Some(id) if self.entry(id).map(|e| e.is_surface) != Some(true) => Err(
                RegistryError::Invalid(format!("surface_id {id} does not point at a surface")),
            ),
            None if surfaces > 0 => {
                Err(RegistryError::Invalid("surface entry present but surface_id unset".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `n` frame positions equally spaced over the episode, first and last
/// included.
pub fn sample_query_frames(ep: &Episode, n: usize) -> Vec<usize> {
    assert!(n >= 1, "need at least one query frame");
    let len = ep.frames.len();
    if n == 1 || len == 1 {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..n)
        .map(|i| ((i as f64) * ((len - 1) as f64) / ((n - 1) as f64)).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Single-linkage grouping of one frame's detections by pairwise IOU:
/// detections land in the same group whenever a chain of pairs with
/// `iou >= iou_thresh` connects them. Returns groups of indices, each
/// group and the group list sorted ascending.
pub fn group_cooccurring(dets: &[RawDetection], iou_thresh: f64) -> Vec<Vec<usize>> {
    let n = dets.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if iou(&dets[i].bbox, &dets[j].bbox) >= iou_thresh {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    for g in &mut out {
        g.sort_unstable();
    }
    out.sort();
    out
}

/// Keeps a detection only when some class-agnostic box overlaps it with
/// `iou >= min_iou` and objectness at least `floor`. Frames without an
/// objectness signal pass through unchanged.
pub fn filter_objectness(
    dets: &[RawDetection],
    objectness_boxes: Option<&[ObjectnessBox]>,
    min_iou: f64,
    floor: f64,
) -> Vec<RawDetection> {
    let Some(boxes) = objectness_boxes else {
        return dets.to_vec();
    };
    dets.iter()
        .filter(|d| {
            boxes
                .iter()
                .any(|ob| ob.objectness >= floor && iou(&d.bbox, &ob.bbox) >= min_iou)
        })
        .cloned()
        .collect()
}

/// Fuses detector confidence with an optional text-image alignment score
/// by arithmetic mean; absent alignment leaves the confidence unchanged.
pub fn combine_alignment(detector_conf: f64, alignment: Option<f64>) -> f64 {
    match alignment {
        Some(a) => (detector_conf + a) / 2.0,
        None => detector_conf,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[(values.len() - 1) / 2]
}

fn median_box(boxes: &[BBox]) -> BBox {
    let mut x1: Vec<f64> = boxes.iter().map(|b| b.x1).collect();
    let mut y1: Vec<f64> = boxes.iter().map(|b| b.y1).collect();
    let mut x2: Vec<f64> = boxes.iter().map(|b| b.x2).collect();
    let mut y2: Vec<f64> = boxes.iter().map(|b| b.y2).collect();
    BBox {
        x1: median(&mut x1),
        y1: median(&mut y1),
        x2: median(&mut x2),
        y2: median(&mut y2),
    }
}

/// Matches within-frame groups across frames (shared name, or median-box
/// IOU at least `cross_iou`) and derives one entry per cluster. The member
/// name with the highest mean detector confidence becomes canonical; ties
/// go to the lexicographically smaller name. Names are normalized to
/// lowercase. Deterministic: same input, same registry including ids.
pub fn consensus_names(
    frame_groups: &[Vec<Vec<RawDetection>>],
    cross_iou: f64,
) -> ObjectRegistry {
    struct GroupInfo {
        names: BTreeSet<String>,
        median: Option<BBox>,
        // name -> (sum of confidences, count)
        confidences: BTreeMap<String, (f64, usize)>,
        support: usize,
    }
    let mut infos: Vec<GroupInfo> = Vec::new();
    for groups in frame_groups {
        for group in groups {
            if group.is_empty() {
                continue;
            }
            let mut names = BTreeSet::new();
            let mut confidences: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            let boxes: Vec<BBox> = group.iter().map(|d| d.bbox).collect();
            for d in group {
                let name = d.name.trim().to_lowercase();
                names.insert(name.clone());
                let e = confidences.entry(name).or_insert((0.0, 0));
                e.0 += d.confidence;
                e.1 += 1;
            }
            infos.push(GroupInfo {
                names,
                median: Some(median_box(&boxes)),
                confidences,
                support: group.len(),
            });
        }
    }

    let n = infos.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let shares_name = !infos[i].names.is_disjoint(&infos[j].names);
            let boxes_agree = match (&infos[i].median, &infos[j].median) {
                (Some(a), Some(b)) => iou(a, b) >= cross_iou,
                _ => false,
            };
            if shares_name || boxes_agree {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }

    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        clusters.entry(root).or_default().push(i);
    }

    struct Candidate {
        canonical: String,
        synonyms: Vec<String>,
        confidence: f64,
        support: usize,
    }
    let mut candidates: Vec<Candidate> = clusters
        .into_values()
        .map(|members| {
            let mut confs: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            let mut support = 0;
            for &m in &members {
                support += infos[m].support;
                for (name, (sum, count)) in &infos[m].confidences {
                    let e = confs.entry(name.clone()).or_insert((0.0, 0));
                    e.0 += sum;
                    e.1 += count;
                }
            }
            let means: BTreeMap<String, f64> =
                confs.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
            // highest mean confidence wins; BTreeMap iteration breaks ties
            // toward the lexicographically smaller name
            let (canonical, confidence) = means
                .iter()
                .fold(None::<(&String, f64)>, |best, (name, &m)| match best {
                    Some((_, bm)) if bm >= m => best,
                    _ => Some((name, m)),
                })
                .map(|(n, m)| (n.clone(), m))
                .expect("cluster has at least one name");
            let mut synonyms: Vec<(String, f64)> = means
                .into_iter()
                .filter(|(n, _)| *n != canonical)
                .collect();
            synonyms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            Candidate {
                canonical,
                synonyms: synonyms.into_iter().map(|(n, _)| n).collect(),
                confidence,
                support,
            }
        })
        .collect();

    candidates.sort_by(|a, b| b.support.cmp(&a.support).then(a.canonical.cmp(&b.canonical)));
    let entries = candidates
        .into_iter()
        .enumerate()
        .map(|(i, c)| ObjectEntry {
            object_id: i as u32,
            canonical_name: c.canonical,
            synonyms: c.synonyms,
            color: "unknown".into(),
            properties: ObjectProperties::default(),
            is_surface: false,
            representative_confidence: c.confidence,
        })
        .collect();
    ObjectRegistry { entries, surface_id: None }
}

/// Prompt template for property assignment; `[OBJECT_LIST]` is replaced by
/// the comma-joined canonical names.
pub const PROPERTIES_PROMPT: &str = "You will be provided with a list of objects a robot observed in its environment.\n\
For each object, output whether it can be moved by a robot arm (movable), whether other objects can be placed inside it (is_container), the discrete states it can be in such as \"open\" and \"closed\" (states, an empty list if the object has no discrete states), and whether a robot can interact with it at all (interactable).\n\
Output valid json mapping each object name to an object with the keys \"movable\", \"is_container\", \"states\", and \"interactable\".\n\
The objects are: [OBJECT_LIST]";

pub fn build_properties_prompt(registry: &ObjectRegistry) -> String {
    let names: Vec<&str> =
        registry.entries.iter().map(|e| e.canonical_name.as_str()).collect();
    PROPERTIES_PROMPT.replace("[OBJECT_LIST]", &names.join(", "))
}

fn extract_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_string {
            match c {
                '\\' if !escaped => escaped = true,
                '"' if !escaped => in_string = false,
                _ => escaped = false,
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Queries the label client once for all four properties of every entry
/// and returns the enriched registry. The surface entry is forced
/// non-movable. Fails when the reply cannot be parsed or lacks an entry;
/// the raw payload is attached for debugging.
pub fn assign_properties(
    registry: &ObjectRegistry,
    client: &dyn LabelClient,
) -> Result<ObjectRegistry, RegistryError> {
    if registry.entries.is_empty() {
        return Err(RegistryError::Empty);
    }
    let prompt = build_properties_prompt(registry);
    let raw = client
        .complete(&prompt)
        .map_err(|e| RegistryError::Client(e.to_string()))?;
    let json = extract_json_object(&raw).ok_or_else(|| RegistryError::BadResponse {
        message: "no JSON object found".into(),
        raw: raw.clone(),
    })?;
    let props: BTreeMap<String, ObjectProperties> =
        serde_json::from_str(json).map_err(|e| RegistryError::BadResponse {
            message: e.to_string(),
            raw: raw.clone(),
        })?;
    let mut out = registry.clone();
    for entry in &mut out.entries {
        let assigned = props
            .get(&entry.canonical_name)
            .or_else(|| {
                // tolerate replies keyed by a synonym
                entry.synonyms.iter().find_map(|s| props.get(s))
            })
            .ok_or_else(|| RegistryError::BadResponse {
                message: format!("no properties for object {:?}", entry.canonical_name),
                raw: raw.clone(),
            })?;
        entry.properties = assigned.clone();
        for s in &mut entry.properties.states {
            *s = s.trim().to_lowercase();
        }
        if entry.is_surface {
            entry.properties.movable = false;
        }
    }
    Ok(out)
}

/// Full Stage-1 pass over an episode: query-frame sampling, objectness
/// filtering, co-occurrence grouping, cross-frame consensus, surface
/// marking from the first proposal of each query frame, colors from
/// proposals, then property assignment through the client.
pub fn build_registry(
    ep: &Episode,
    client: &dyn LabelClient,
    options: &RegistryOptions,
) -> Result<ObjectRegistry, RegistryError> {
    let query = sample_query_frames(ep, options.query_frames);
    let mut surface_names: BTreeSet<String> = BTreeSet::new();
    let mut colors: BTreeMap<String, String> = BTreeMap::new();
    let mut frame_groups = Vec::with_capacity(query.len());
    for &qi in &query {
        let frame = &ep.frames[qi];
        if let Some(proposals) = &frame.vlm_proposals {
            for (pi, p) in proposals.iter().enumerate() {
                let name = p.name.trim().to_lowercase();
                if pi == 0 {
                    surface_names.insert(name.clone());
                }
                colors.entry(name).or_insert_with(|| p.color.trim().to_lowercase());
            }
        }
        let dets = filter_objectness(
            &frame.detections,
            frame.objectness_boxes.as_deref(),
            options.objectness_iou,
            options.objectness_floor,
        );
        let groups = group_cooccurring(&dets, options.iou_thresh);
        frame_groups
            .push(groups.into_iter().map(|g| g.into_iter().map(|i| dets[i].clone()).collect()).collect());
    }

    let mut registry = consensus_names(&frame_groups, options.cross_frame_iou);
    if registry.entries.is_empty() {
        return Err(RegistryError::Empty);
    }

    // surface: the cluster containing a proposed surface name; highest
    // support (list order) wins when several match
    let surface_pos = registry
        .entries
        .iter()
        .position(|e| e.all_names().any(|n| surface_names.contains(n)));
    if let Some(pos) = surface_pos {
        let mut e = registry.entries.remove(pos);
        e.is_surface = true;
        registry.entries.insert(0, e);
        registry.surface_id = Some(0);
    }
    for (i, e) in registry.entries.iter_mut().enumerate() {
        e.object_id = i as u32;
        let color = e.all_names().find_map(|n| colors.get(n)).cloned();
        if let Some(color) = color {
            e.color = color;
        }
    }

    let registry = assign_properties(&registry, client)?;
    registry.validate()?;
    Ok(registry)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistryOptions {
    /// Number of equally spaced query frames.
    pub query_frames: usize,
    /// Within-frame co-occurrence IOU threshold.
    pub iou_thresh: f64,
    /// Cross-frame group matching IOU on median boxes.
    pub cross_frame_iou: f64,
    /// Minimum IOU against a class-agnostic box.
    pub objectness_iou: f64,
    /// Minimum objectness of the matching class-agnostic box.
    pub objectness_floor: f64,
}

impl Default for RegistryOptions {
    fn default() -> Self {
        RegistryOptions {
            query_frames: 8,
            iou_thresh: 0.5,
            cross_frame_iou: 0.5,
            objectness_iou: 0.5,
            objectness_floor: 0.1,
        }
    }
}

// ---------------------------------------------------------------------------
// on-disk format: one tab-separated entry per line
// id, canonical, synonyms (| joined), color, movable, is_container,
// states (| joined), interactable, is_surface

pub fn save_registry(registry: &ObjectRegistry, path: impl AsRef<Path>) -> Result<(), RegistryError> {
    let path = path.as_ref();
    registry.validate()?;
    let mut out = String::new();
    for e in &registry.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.object_id,
            e.canonical_name,
            e.synonyms.join("|"),
            e.color,
            e.properties.movable,
            e.properties.is_container,
            e.properties.states.join("|"),
            e.properties.interactable,
            e.is_surface,
        ));
    }
    fs::write(path, out).map_err(|source| RegistryError::Io { path: path.into(), source })
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<ObjectRegistry, RegistryError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| RegistryError::Io { path: path.into(), source })?;
    let mut entries = Vec::new();
    let mut surface_id = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| RegistryError::Parse {
            path: path.into(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 9 {
            return Err(parse_err(format!("expected 9 fields, got {}", fields.len())));
        }
        let split_list = |s: &str| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split('|').map(str::to_string).collect()
            }
        };
        let parse_bool = |s: &str| -> Result<bool, RegistryError> {
            s.parse().map_err(|_| parse_err(format!("expected bool, got {s:?}")))
        };
        let entry = ObjectEntry {
            object_id: fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad id {:?}", fields[0])))?,
            canonical_name: fields[1].to_string(),
            synonyms: split_list(fields[2]),
            color: fields[3].to_string(),
            properties: ObjectProperties {
                movable: parse_bool(fields[4])?,
                is_container: parse_bool(fields[5])?,
                states: split_list(fields[6]),
                interactable: parse_bool(fields[7])?,
            },
            is_surface: parse_bool(fields[8])?,
            representative_confidence: 0.0,
        };
        if entry.is_surface {
            surface_id = Some(entry.object_id);
        }
        entries.push(entry);
    }
    let registry = ObjectRegistry { entries, surface_id };
    registry.validate()?;
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::FrameRecord;

    fn det(name: &str, bbox: (f64, f64, f64, f64), conf: f64) -> RawDetection {
        RawDetection {
            name: name.into(),
            bbox: BBox::new(bbox.0, bbox.1, bbox.2, bbox.3).unwrap(),
            confidence: conf,
        }
    }

    fn episode_with_frames(n: usize) -> Episode {
        Episode {
            episode_id: "t".into(),
            width: 100,
            height: 100,
            fps: 30.0,
            frames: (0..n)
                .map(|i| FrameRecord { frame_index: i as u64, ..Default::default() })
                .collect(),
        }
    }

    #[test]
    fn query_frames_cover_endpoints() {
        let ep = episode_with_frames(100);
        assert_eq!(sample_query_frames(&ep, 2), vec![0, 99]);
    }

    #[test]
    fn query_frames_all_when_episode_matches() {
        let ep = episode_with_frames(8);
        assert_eq!(sample_query_frames(&ep, 8), vec![0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn query_frames_evenly_spaced() {
        let ep = episode_with_frames(701);
        assert_eq!(
            sample_query_frames(&ep, 8),
            vec![0, 100, 200, 300, 400, 500, 600, 700]
        );
    }

    #[test]
    fn grouping_merges_high_iou() {
        let dets = vec![
            det("silver pot", (10.0, 10.0, 30.0, 30.0), 0.8),
            det("metal saucepan", (11.0, 10.0, 31.0, 30.0), 0.6),
        ];
        assert!(iou(&dets[0].bbox, &dets[1].bbox) > 0.5);
        assert_eq!(group_cooccurring(&dets, 0.5), vec![vec![0, 1]]);
    }

    #[test]
    fn grouping_keeps_low_iou_apart() {
        let dets = vec![
            det("pot", (10.0, 10.0, 30.0, 30.0), 0.8),
            det("fork", (28.0, 28.0, 60.0, 60.0), 0.6),
        ];
        assert!(iou(&dets[0].bbox, &dets[1].bbox) < 0.5);
        assert_eq!(group_cooccurring(&dets, 0.5), vec![vec![0], vec![1]]);
    }

    #[test]
    fn grouping_is_single_linkage() {
        // a~b and b~c above threshold, a~c far below: one group of three
        let dets = vec![
            det("a", (0.0, 0.0, 10.0, 10.0), 0.5),
            det("b", (4.0, 0.0, 14.0, 10.0), 0.5),
            det("c", (8.0, 0.0, 18.0, 10.0), 0.5),
        ];
        let ab = iou(&dets[0].bbox, &dets[1].bbox);
        let ac = iou(&dets[0].bbox, &dets[2].bbox);
        assert!(ab > 0.4 && ac < 0.2, "ab={ab} ac={ac}");
        assert_eq!(group_cooccurring(&dets, 0.4), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn lowering_threshold_never_splits_groups() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let dets: Vec<RawDetection> = (0..rng.gen_range(1..10))
                .map(|i| {
                    let x = rng.gen_range(0.0..50.0);
                    let y = rng.gen_range(0.0..50.0);
                    det(
                        &format!("o{i}"),
                        (x, y, x + rng.gen_range(5.0..20.0), y + rng.gen_range(5.0..20.0)),
                        0.5,
                    )
                })
                .collect();
            let hi = rng.gen_range(0.3..0.9);
            let lo = hi * rng.gen_range(0.1..1.0);
            assert!(
                group_cooccurring(&dets, lo).len() <= group_cooccurring(&dets, hi).len(),
                "lo={lo} hi={hi}"
            );
        }
    }

    #[test]
    fn consensus_picks_highest_mean_confidence() {
        let frames = vec![vec![vec![
            det("silver pot", (10.0, 10.0, 30.0, 30.0), 0.8),
            det("metal saucepan", (11.0, 10.0, 31.0, 30.0), 0.6),
        ]]];
        let reg = consensus_names(&frames, 0.5);
        assert_eq!(reg.entries.len(), 1);
        assert_eq!(reg.entries[0].canonical_name, "silver pot");
        assert_eq!(reg.entries[0].synonyms, vec!["metal saucepan"]);
        assert!((reg.entries[0].representative_confidence - 0.8).abs() < 1e-12);
    }

    #[test]
    fn consensus_single_name_has_no_synonyms() {
        let frames: Vec<Vec<Vec<RawDetection>>> = (0..8)
            .map(|_| vec![vec![det("mug", (5.0, 5.0, 15.0, 15.0), 0.7)]])
            .collect();
        let reg = consensus_names(&frames, 0.5);
        assert_eq!(reg.entries.len(), 1);
        assert_eq!(reg.entries[0].canonical_name, "mug");
        assert!(reg.entries[0].synonyms.is_empty());
    }

    #[test]
    fn consensus_tie_breaks_lexicographically() {
        let frames = vec![vec![vec![
            det("zebra cup", (10.0, 10.0, 30.0, 30.0), 0.7),
            det("apple cup", (10.0, 10.0, 30.0, 30.0), 0.7),
        ]]];
        let reg = consensus_names(&frames, 0.5);
        assert_eq!(reg.entries[0].canonical_name, "apple cup");
    }

    #[test]
    fn consensus_merges_across_frames_by_box_overlap() {
        // same object, disjoint name sets, overlapping boxes across frames
        let frames = vec![
            vec![vec![det("red mug", (10.0, 10.0, 30.0, 30.0), 0.9)]],
            vec![vec![det("crimson cup", (11.0, 10.0, 31.0, 30.0), 0.5)]],
        ];
        let reg = consensus_names(&frames, 0.5);
        assert_eq!(reg.entries.len(), 1);
        assert_eq!(reg.entries[0].canonical_name, "red mug");
        assert_eq!(reg.entries[0].synonyms, vec!["crimson cup"]);
    }

    #[test]
    fn consensus_is_deterministic() {
        let frames = vec![
            vec![
                vec![det("pot", (10.0, 10.0, 30.0, 30.0), 0.9), det("pan", (12.0, 10.0, 32.0, 30.0), 0.7)],
                vec![det("fork", (60.0, 60.0, 70.0, 70.0), 0.8)],
            ],
            vec![vec![det("pan", (10.0, 10.0, 30.0, 30.0), 0.6)]],
        ];
        let a = consensus_names(&frames, 0.5);
        let b = consensus_names(&frames, 0.5);
        assert_eq!(a, b);
    }

    #[test]
    fn every_surviving_name_lands_in_exactly_one_entry() {
        let frames = vec![
            vec![
                vec![det("pot", (10.0, 10.0, 30.0, 30.0), 0.9), det("pan", (12.0, 10.0, 32.0, 30.0), 0.7)],
                vec![det("fork", (60.0, 60.0, 70.0, 70.0), 0.8)],
            ],
            vec![vec![det("pan", (10.0, 10.0, 30.0, 30.0), 0.6)], vec![det("fork", (61.0, 60.0, 71.0, 70.0), 0.8)]],
        ];
        let reg = consensus_names(&frames, 0.5);
        let mut seen = BTreeSet::new();
        for e in &reg.entries {
            for n in e.all_names() {
                assert!(seen.insert(n.to_string()), "{n} duplicated");
            }
        }
        for name in ["pot", "pan", "fork"] {
            assert!(seen.contains(name), "{name} missing");
        }
        reg.validate().unwrap();
    }

    #[test]
    fn objectness_filter_rules() {
        let dets = vec![det("pot", (10.0, 10.0, 30.0, 30.0), 0.9)];
        let matching = vec![ObjectnessBox {
            bbox: BBox::new(11.0, 10.0, 31.0, 30.0).unwrap(),
            objectness: 0.4,
        }];
        let weak = vec![ObjectnessBox {
            bbox: BBox::new(25.0, 25.0, 60.0, 60.0).unwrap(),
            objectness: 0.4,
        }];
        assert_eq!(filter_objectness(&dets, Some(&matching), 0.5, 0.1).len(), 1);
        assert_eq!(filter_objectness(&dets, Some(&weak), 0.5, 0.1).len(), 0);
        assert_eq!(filter_objectness(&dets, None, 0.5, 0.1).len(), 1);
    }

    #[test]
    fn alignment_fusion_is_mean_or_passthrough() {
        assert!((combine_alignment(0.8, Some(0.6)) - 0.7).abs() < 1e-15);
        assert_eq!(combine_alignment(0.37, Some(0.37)), 0.37);
        assert_eq!(combine_alignment(0.37, None), 0.37);
    }

    #[test]
    fn registry_file_round_trips() {
        let reg = ObjectRegistry {
            entries: vec![
                ObjectEntry {
                    object_id: 0,
                    canonical_name: "table".into(),
                    synonyms: vec!["wooden table".into()],
                    color: "brown".into(),
                    properties: ObjectProperties {
                        movable: false,
                        is_container: false,
                        states: vec![],
                        interactable: false,
                    },
                    is_surface: true,
                    representative_confidence: 0.0,
                },
                ObjectEntry {
                    object_id: 1,
                    canonical_name: "drawer".into(),
                    synonyms: vec![],
                    color: "red".into(),
                    properties: ObjectProperties {
                        movable: false,
                        is_container: true,
                        states: vec!["open".into(), "closed".into()],
                        interactable: true,
                    },
                    is_surface: false,
                    representative_confidence: 0.0,
                },
            ],
            surface_id: Some(0),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("registry.tsv");
        save_registry(&reg, &p).unwrap();
        assert_eq!(load_registry(&p).unwrap(), reg);
    }

    #[test]
    fn duplicate_names_fail_validation() {
        let mk = |id: u32, name: &str| ObjectEntry {
            object_id: id,
            canonical_name: name.into(),
            synonyms: vec![],
            color: "x".into(),
            properties: ObjectProperties::default(),
            is_surface: false,
            representative_confidence: 0.0,
        };
        let reg = ObjectRegistry {
            entries: vec![mk(0, "pot"), mk(1, "pot")],
            surface_id: None,
        };
        assert!(reg.validate().is_err());
    }
}
