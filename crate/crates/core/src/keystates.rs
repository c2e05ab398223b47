//! Stage 3a: heuristic-consensus keystate scoring.
//!
//! Each heuristic contributes an object-centric confidence; a candidate
//! keystate's score is the weighted sum over heuristics, with equal
//! weights across the enabled heuristics by default. Scores at or above
//! the threshold survive, and nearby survivors collapse onto the
//! highest-scoring one.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signals::EpisodeSignals;
use crate::stream::Episode;

#[derive(Debug, Error)]
pub enum KeystateError {
    #[error("heuristic weights sum to {0}, expected 1 within 1e-9")]
    BadWeights(f64),
    #[error("no heuristics enabled")]
    NoHeuristics,
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// The five keystate heuristics, in representative-frame priority order:
/// when pooled candidates tie on confidence, the earlier variant wins the
/// representative frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    GripperClose,
    StateChange,
    RelationChange,
    ObjectMovement,
    GripperNear,
}

impl Heuristic {
    pub const ALL: [Heuristic; 5] = [
        Heuristic::GripperClose,
        Heuristic::StateChange,
        Heuristic::RelationChange,
        Heuristic::ObjectMovement,
        Heuristic::GripperNear,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Heuristic::GripperClose => "gripper_close",
            Heuristic::StateChange => "state_change",
            Heuristic::RelationChange => "relation_change",
            Heuristic::ObjectMovement => "object_movement",
            Heuristic::GripperNear => "gripper_near",
        }
    }

    pub fn parse(s: &str) -> Option<Heuristic> {
        Some(match s {
            "gripper_close" => Heuristic::GripperClose,
            "state_change" => Heuristic::StateChange,
            "relation_change" => Heuristic::RelationChange,
            "object_movement" => Heuristic::ObjectMovement,
            "gripper_near" => Heuristic::GripperNear,
            _ => return None,
        })
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One heuristic firing for one object at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeystateCandidate {
    pub object_id: u32,
    pub frame_index: u64,
    pub heuristic: Heuristic,
    pub confidence: f64,
}

/// A scored consensus keystate.
#[derive(Debug, Clone, PartialEq)]
pub struct Keystate {
    pub frame_index: u64,
    pub object_id: u32,
    pub score: f64,
    /// Contributing heuristics with the pooled confidence each supplied.
    pub contributions: Vec<(Heuristic, f64)>,
}

/// Final keystates plus the effective weights they were scored with.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeystateSet {
    pub keystates: Vec<Keystate>,
    pub weights: BTreeMap<Heuristic, f64>,
}

/// Equal weights over the given heuristics.
pub fn equal_weights(enabled: &[Heuristic]) -> BTreeMap<Heuristic, f64> {
    let k = enabled.len() as f64;
    enabled.iter().map(|&h| (h, 1.0 / k)).collect()
}

fn check_weights(weights: &BTreeMap<Heuristic, f64>) -> Result<(), KeystateError> {
    if weights.is_empty() {
        return Err(KeystateError::NoHeuristics);
    }
    let sum: f64 = weights.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(KeystateError::BadWeights(sum));
    }
    Ok(())
}

/// Turns raw signal events into per-heuristic candidates. Movement events
/// land on their end frame (where the motion settles); everything else on
/// its own frame. Gripper-open transitions without a nearby object are
/// dropped (keystates are object-centric).
pub fn candidates_from_signals(signals: &EpisodeSignals) -> Vec<KeystateCandidate> {
    let mut out = Vec::new();
    for ev in &signals.movements {
        out.push(KeystateCandidate {
            object_id: ev.object_id,
            frame_index: ev.end_frame,
            heuristic: Heuristic::ObjectMovement,
            confidence: ev.confidence,
        });
    }
    for ev in &signals.relation_events {
        out.push(KeystateCandidate {
            object_id: ev.subject,
            frame_index: ev.frame_index,
            heuristic: Heuristic::RelationChange,
            confidence: 1.0,
        });
    }
    for ev in &signals.state_events {
        out.push(KeystateCandidate {
            object_id: ev.object_id,
            frame_index: ev.frame_index,
            heuristic: Heuristic::StateChange,
            confidence: 1.0,
        });
    }
    for ev in &signals.near_events {
        out.push(KeystateCandidate {
            object_id: ev.object_id,
            frame_index: ev.frame_index,
            heuristic: Heuristic::GripperNear,
            confidence: 1.0,
        });
    }
    for ev in &signals.close_events {
        if let Some(object_id) = ev.object_id {
            out.push(KeystateCandidate {
                object_id,
                frame_index: ev.frame_index,
                heuristic: Heuristic::GripperClose,
                confidence: 1.0,
            });
        }
    }
    out.sort_by_key(|c| (c.object_id, c.frame_index, c.heuristic));
    out
}

/// Pools candidates per object into time clusters (a gap above
/// `merge_window` starts a new cluster), takes the maximum confidence per
/// heuristic within a cluster, and scores each cluster as the weighted
/// sum. Candidates of heuristics without a weight are ignored. The
/// representative frame is the highest-confidence candidate's frame, ties
/// broken by heuristic priority and then the earlier frame.
pub fn score_candidates(
    candidates: &[KeystateCandidate],
    weights: &BTreeMap<Heuristic, f64>,
    merge_window: u64,
) -> Result<Vec<Keystate>, KeystateError> {
    check_weights(weights)?;
    let mut by_object: BTreeMap<u32, Vec<&KeystateCandidate>> = BTreeMap::new();
    for c in candidates {
        if weights.contains_key(&c.heuristic) {
            by_object.entry(c.object_id).or_default().push(c);
        }
    }
    let mut keystates = Vec::new();
    for (object_id, mut cands) in by_object {
        cands.sort_by_key(|c| (c.frame_index, c.heuristic));
        let mut cluster: Vec<&KeystateCandidate> = Vec::new();
        let flush = |cluster: &mut Vec<&KeystateCandidate>, keystates: &mut Vec<Keystate>| {
            if cluster.is_empty() {
                return;
            }
            let mut pooled: BTreeMap<Heuristic, f64> = BTreeMap::new();
            for c in cluster.iter() {
                let slot = pooled.entry(c.heuristic).or_insert(0.0);
                *slot = slot.max(c.confidence);
            }
            let score: f64 = pooled.iter().map(|(h, conf)| weights[h] * conf).sum();
            let representative = cluster
                .iter()
                .min_by(|a, b| {
                    b.confidence
                        .partial_cmp(&a.confidence)
                        .unwrap()
                        .then(a.heuristic.cmp(&b.heuristic))
                        .then(a.frame_index.cmp(&b.frame_index))
                })
                .unwrap();
            keystates.push(Keystate {
                frame_index: representative.frame_index,
                object_id,
                score,
                contributions: pooled.into_iter().collect(),
            });
            cluster.clear();
        };
        for c in cands {
            if let Some(last) = cluster.last() {
                if c.frame_index - last.frame_index > merge_window {
                    flush(&mut cluster, &mut keystates);
                }
            }
            cluster.push(c);
        }
        flush(&mut cluster, &mut keystates);
    }
    keystates.sort_by_key(|k| (k.frame_index, k.object_id));
    Ok(keystates)
}

/// Keeps keystates whose score reaches `theta`.
pub fn threshold(keystates: &[Keystate], theta: f64) -> Vec<Keystate> {
    keystates.iter().filter(|k| k.score >= theta).cloned().collect()
}

/// Greedy suppression by descending score: a selected keystate removes
/// every other candidate (any object) within `window` frames. Ties go to
/// the earlier frame, then the smaller object id. Output sorted by frame;
/// surviving pairs are strictly more than `window` frames apart.
pub fn aggregate(keystates: &[Keystate], window: u64) -> Vec<Keystate> {
    let mut order: Vec<&Keystate> = keystates.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.frame_index.cmp(&b.frame_index))
            .then(a.object_id.cmp(&b.object_id))
    });
    let mut selected: Vec<&Keystate> = Vec::new();
    for k in order {
        if selected
            .iter()
            .all(|s| k.frame_index.abs_diff(s.frame_index) > window)
        {
            selected.push(k);
        }
    }
    let mut out: Vec<Keystate> = selected.into_iter().cloned().collect();
    out.sort_by_key(|k| (k.frame_index, k.object_id));
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeystateOptions {
    pub enabled: Vec<Heuristic>,
    /// Explicit weights; equal weights over the effective heuristics when
    /// absent.
    pub weights: Option<BTreeMap<Heuristic, f64>>,
    /// Acceptance threshold on the consensus score.
    pub keystate_threshold: f64,
    /// Pooling and suppression window, frames.
    pub merge_window: u64,
}

impl Default for KeystateOptions {
    fn default() -> Self {
        KeystateOptions {
            enabled: Heuristic::ALL.to_vec(),
            weights: None,
            keystate_threshold: 0.25,
            merge_window: 8,
        }
    }
}

/// Which heuristics the episode's signals can support at all.
pub fn available_heuristics(ep: &Episode) -> Vec<Heuristic> {
    let has_gripper = ep.frames.iter().any(|f| f.gripper.is_some());
    let has_robot = has_gripper
        || ep.frames.iter().any(|f| {
            f.masks.iter().any(|m| m.name.is_some()) && !f.masks.is_empty()
        });
    let has_states = ep.frames.iter().any(|f| f.state_scores.is_some());
    Heuristic::ALL
        .into_iter()
        .filter(|h| match h {
            Heuristic::GripperClose => has_gripper,
            Heuristic::GripperNear => has_robot,
            Heuristic::StateChange => has_states,
            Heuristic::ObjectMovement | Heuristic::RelationChange => true,
        })
        .collect()
}

/// Full Stage-3a pass: weights renormalized over the enabled heuristics
/// whose signals the episode actually carries (the effective weights are
/// recorded in the returned set), then score, threshold, aggregate.
pub fn detect_keystates(
    ep: &Episode,
    signals: &EpisodeSignals,
    options: &KeystateOptions,
) -> Result<KeystateSet, KeystateError> {
    let available = available_heuristics(ep);
    let effective: Vec<Heuristic> = options
        .enabled
        .iter()
        .copied()
        .filter(|h| available.contains(h))
        .collect();
    if effective.is_empty() {
        return Err(KeystateError::NoHeuristics);
    }
    let weights = match &options.weights {
        Some(w) => {
            let filtered: BTreeMap<Heuristic, f64> = w
                .iter()
                .filter(|(h, _)| effective.contains(h))
                .map(|(h, v)| (*h, *v))
                .collect();
            let sum: f64 = filtered.values().sum();
            if sum <= 0.0 {
                return Err(KeystateError::BadWeights(sum));
            }
            filtered.into_iter().map(|(h, v)| (h, v / sum)).collect()
        }
        None => equal_weights(&effective),
    };
    let candidates = candidates_from_signals(signals);
    let scored = score_candidates(&candidates, &weights, options.merge_window)?;
    let kept = threshold(&scored, options.keystate_threshold);
    let keystates = aggregate(&kept, options.merge_window);
    Ok(KeystateSet { keystates, weights })
}

// ---------------------------------------------------------------------------
// keystate file: '#' metadata header, then
// frame, object_id, score, heuristic:confidence (comma joined)

pub fn save_keystates(set: &KeystateSet, path: impl AsRef<Path>) -> Result<(), KeystateError> {
    let path = path.as_ref();
    let weights: Vec<String> =
        set.weights.iter().map(|(h, w)| format!("{h}={w}")).collect();
    let mut out = format!("# weights {}\n", weights.join(","));
    for k in &set.keystates {
        let contribs: Vec<String> =
            k.contributions.iter().map(|(h, c)| format!("{h}:{c}")).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            k.frame_index,
            k.object_id,
            k.score,
            contribs.join(",")
        ));
    }
    std::fs::write(path, out).map_err(|source| KeystateError::Io { path: path.into(), source })
}

pub fn load_keystates(path: impl AsRef<Path>) -> Result<KeystateSet, KeystateError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| KeystateError::Io { path: path.into(), source })?;
    let mut set = KeystateSet::default();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| KeystateError::Parse {
            path: path.into(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some(spec) = meta.trim().strip_prefix("weights ") {
                for pair in spec.split(',').filter(|s| !s.is_empty()) {
                    let (h, w) = pair
                        .split_once('=')
                        .ok_or_else(|| err(format!("bad weight pair {pair:?}")))?;
                    let h = Heuristic::parse(h)
                        .ok_or_else(|| err(format!("unknown heuristic {h:?}")))?;
                    let w = w.parse().map_err(|e| err(format!("bad weight: {e}")))?;
                    set.weights.insert(h, w);
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        }
        let mut contributions = Vec::new();
        if !fields[3].is_empty() {
            for pair in fields[3].split(',') {
                let (h, c) = pair
                    .split_once(':')
                    .ok_or_else(|| err(format!("bad contribution {pair:?}")))?;
                contributions.push((
                    Heuristic::parse(h).ok_or_else(|| err(format!("unknown heuristic {h:?}")))?,
                    c.parse().map_err(|e| err(format!("bad confidence: {e}")))?,
                ));
            }
        }
        set.keystates.push(Keystate {
            frame_index: fields[0].parse().map_err(|e| err(format!("bad frame: {e}")))?,
            object_id: fields[1].parse().map_err(|e| err(format!("bad object: {e}")))?,
            score: fields[2].parse().map_err(|e| err(format!("bad score: {e}")))?,
            contributions,
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(object_id: u32, frame: u64, heuristic: Heuristic, confidence: f64) -> KeystateCandidate {
        KeystateCandidate { object_id, frame_index: frame, heuristic, confidence }
    }

    #[test]
    fn weighted_sum_matches_hand_arithmetic() {
        // K = 4 heuristics enabled, two fire
        let weights = equal_weights(&[
            Heuristic::GripperClose,
            Heuristic::StateChange,
            Heuristic::ObjectMovement,
            Heuristic::GripperNear,
        ]);
        let cands = vec![
            cand(0, 10, Heuristic::GripperClose, 1.0),
            cand(0, 12, Heuristic::StateChange, 0.8),
        ];
        let scored = score_candidates(&cands, &weights, 8).unwrap();
        assert_eq!(scored.len(), 1);
        assert!((scored[0].score - 0.45).abs() < 1e-12, "{}", scored[0].score);
        assert_eq!(scored[0].frame_index, 10); // highest confidence wins
    }

    #[test]
    fn all_heuristics_at_full_confidence_score_one() {
        let weights = equal_weights(&Heuristic::ALL);
        let cands: Vec<KeystateCandidate> = Heuristic::ALL
            .iter()
            .map(|&h| cand(0, 20, h, 1.0))
            .collect();
        let scored = score_candidates(&cands, &weights, 8).unwrap();
        assert_eq!(scored.len(), 1);
        assert!((scored[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_candidates_no_keystates() {
        let weights = equal_weights(&Heuristic::ALL);
        assert!(score_candidates(&[], &weights, 8).unwrap().is_empty());
    }

    #[test]
    fn repeated_heuristic_counts_once_at_max() {
        let weights = equal_weights(&[Heuristic::ObjectMovement, Heuristic::GripperNear]);
        let cands = vec![
            cand(0, 10, Heuristic::ObjectMovement, 0.4),
            cand(0, 12, Heuristic::ObjectMovement, 0.9),
        ];
        let scored = score_candidates(&cands, &weights, 8).unwrap();
        assert_eq!(scored.len(), 1);
        assert!((scored[0].score - 0.45).abs() < 1e-12);
        assert_eq!(scored[0].frame_index, 12);
    }

    #[test]
    fn distant_candidates_form_separate_clusters() {
        let weights = equal_weights(&Heuristic::ALL);
        let cands = vec![
            cand(0, 10, Heuristic::GripperClose, 1.0),
            cand(0, 40, Heuristic::GripperClose, 1.0),
        ];
        let scored = score_candidates(&cands, &weights, 8).unwrap();
        assert_eq!(scored.len(), 2);
    }

    #[test]
    fn bad_weights_rejected() {
        let mut weights = BTreeMap::new();
        weights.insert(Heuristic::GripperClose, 0.7);
        weights.insert(Heuristic::StateChange, 0.2);
        assert!(matches!(
            score_candidates(&[], &weights, 8),
            Err(KeystateError::BadWeights(_))
        ));
    }

    fn ks(frame: u64, object: u32, score: f64) -> Keystate {
        Keystate { frame_index: frame, object_id: object, score, contributions: vec![] }
    }

    #[test]
    fn threshold_keeps_at_or_above() {
        let all = vec![ks(1, 0, 0.2), ks(2, 0, 0.45), ks(3, 0, 0.9)];
        let kept = threshold(&all, 0.25);
        assert_eq!(kept.len(), 2);
        assert!(threshold(&all, 0.0).len() == 3);
        // the default operating point keeps a two-heuristic firing (0.4)
        assert_eq!(threshold(&[ks(0, 0, 0.4)], 0.25).len(), 1);
    }

    #[test]
    fn aggregation_suppresses_within_window() {
        let kept = aggregate(&[ks(10, 0, 0.9), ks(12, 1, 0.5)], 8);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].frame_index, 10);

        let far = aggregate(&[ks(10, 0, 0.9), ks(30, 1, 0.5)], 8);
        assert_eq!(far.len(), 2);
    }

    #[test]
    fn aggregation_tie_goes_to_earlier_frame() {
        let kept = aggregate(&[ks(13, 1, 0.5), ks(10, 0, 0.5)], 8);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].frame_index, 10);
    }

    #[test]
    fn aggregation_output_gaps_exceed_window() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let ks_list: Vec<Keystate> = (0..rng.gen_range(0..30))
                .map(|_| ks(rng.gen_range(0..200), rng.gen_range(0..4), rng.gen_range(0.0..1.0)))
                .collect();
            let window = rng.gen_range(0..20);
            let out = aggregate(&ks_list, window);
            for i in 0..out.len() {
                for j in (i + 1)..out.len() {
                    assert!(out[i].frame_index.abs_diff(out[j].frame_index) > window);
                }
            }
        }
    }

    #[test]
    fn score_is_linear_in_confidences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let weights = equal_weights(&Heuristic::ALL);
        for _ in 0..100 {
            let c: f64 = rng.gen_range(0.01..1.0);
            let mut cands: Vec<KeystateCandidate> = Vec::new();
            for h in Heuristic::ALL {
                if rng.gen_bool(0.7) {
                    cands.push(cand(0, 10, h, rng.gen_range(0.0..1.0)));
                }
            }
            if cands.is_empty() {
                continue;
            }
            let scaled: Vec<KeystateCandidate> = cands
                .iter()
                .map(|k| KeystateCandidate { confidence: k.confidence * c, ..k.clone() })
                .collect();
            let s1 = score_candidates(&cands, &weights, 8).unwrap()[0].score;
            let s2 = score_candidates(&scaled, &weights, 8).unwrap()[0].score;
            assert!((s2 - c * s1).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_is_monotone_in_theta() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(47);
        let ks_list: Vec<Keystate> =
            (0..200).map(|i| ks(i, 0, rng.gen_range(0.0..1.0))).collect();
        for _ in 0..200 {
            let a: f64 = rng.gen_range(0.0..1.0);
            let b: f64 = rng.gen_range(0.0..1.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let kept_hi = threshold(&ks_list, hi);
            let kept_lo = threshold(&ks_list, lo);
            for k in &kept_hi {
                assert!(kept_lo.contains(k), "threshold {hi} kept a keystate {lo} dropped");
            }
        }
    }

    #[test]
    fn keystate_file_round_trips() {
        let set = KeystateSet {
            keystates: vec![Keystate {
                frame_index: 25,
                object_id: 1,
                score: 0.45,
                contributions: vec![
                    (Heuristic::GripperClose, 1.0),
                    (Heuristic::StateChange, 0.8),
                ],
            }],
            weights: equal_weights(&Heuristic::ALL),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("keystates.tsv");
        save_keystates(&set, &p).unwrap();
        assert_eq!(load_keystates(&p).unwrap(), set);
    }
}
