//! Keystate precision/recall/mAP and grounding-accuracy metrics.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeler::LabeledSegment;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("misaligned inputs: {predictions} predictions vs {ground_truth} ground-truth entries")]
    Misaligned { predictions: usize, ground_truth: usize },
    #[error("need at least one tolerance")]
    NoTolerances,
    #[error("episode sets differ: {0}")]
    EpisodeMismatch(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Keystate matching quality at one frame tolerance.
///
/// Conventions for degenerate inputs, always reported with the counts so
/// they cannot hide: empty predictions score precision 0 (1 when the
/// ground truth is empty too); empty ground truth scores recall 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeystateEvalReport {
    pub tolerance: u64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub matches: Vec<(u64, u64)>,
}

/// One-to-one greedy matching in ascending |pred - gt| distance; a pair is
/// feasible when the distance is at most `tolerance`. The tie order
/// (distance, smaller frame, larger frame) keeps the matched count
/// symmetric under swapping predictions and ground truth.
pub fn match_keystates(pred: &[u64], gt: &[u64], tolerance: u64) -> Vec<(u64, u64)> {
    let mut pairs: Vec<(u64, u64, u64, usize, usize)> = Vec::new();
    for (pi, &p) in pred.iter().enumerate() {
        for (gi, &g) in gt.iter().enumerate() {
            let d = p.abs_diff(g);
            if d <= tolerance {
                pairs.push((d, p.min(g), p.max(g), pi, gi));
            }
        }
    }
    pairs.sort_unstable();
    let mut used_pred = vec![false; pred.len()];
    let mut used_gt = vec![false; gt.len()];
    let mut matches = Vec::new();
    for (_, _, _, pi, gi) in pairs {
        if !used_pred[pi] && !used_gt[gi] {
            used_pred[pi] = true;
            used_gt[gi] = true;
            matches.push((pred[pi], gt[gi]));
        }
    }
    matches.sort_unstable();
    matches
}

/// Precision and recall of predicted keystates at one tolerance.
pub fn evaluate_keystates(pred: &[u64], gt: &[u64], tolerance: u64) -> KeystateEvalReport {
    let matches = match_keystates(pred, gt, tolerance);
    let tp = matches.len();
    let precision = if pred.is_empty() {
        if gt.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / pred.len() as f64
    };
    let recall = if gt.is_empty() { 1.0 } else { tp as f64 / gt.len() as f64 };
    KeystateEvalReport {
        tolerance,
        true_positives: tp,
        false_positives: pred.len() - tp,
        false_negatives: gt.len() - tp,
        precision,
        recall,
        matches,
    }
}

/// Average precision of score-ranked keystate predictions: walk
/// predictions by descending score, match each to the nearest unused
/// ground-truth frame within the tolerance, and sum interpolated precision
/// (the maximum precision at any recall at least as large) times the
/// recall step at every hit.
pub fn keystate_ap(scored_pred: &[(u64, f64)], gt: &[u64], tolerance: u64) -> f64 {
    if gt.is_empty() {
        return if scored_pred.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<(u64, f64)> = scored_pred.to_vec();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut used = vec![false; gt.len()];
    let mut is_tp = Vec::with_capacity(order.len());
    for (frame, _) in &order {
        let nearest = gt
            .iter()
            .enumerate()
            .filter(|(gi, g)| !used[*gi] && frame.abs_diff(**g) <= tolerance)
            .min_by_key(|(_, g)| (frame.abs_diff(**g), **g));
        match nearest {
            Some((gi, _)) => {
                used[gi] = true;
                is_tp.push(true);
            }
            None => is_tp.push(false),
        }
    }
    let mut precision = Vec::with_capacity(is_tp.len());
    let mut tp_count = 0usize;
    for (rank, &hit) in is_tp.iter().enumerate() {
        if hit {
            tp_count += 1;
        }
        precision.push(tp_count as f64 / (rank + 1) as f64);
    }
    // max-precision interpolation from the tail
    let mut running_max = 0.0f64;
    let mut interpolated = vec![0.0; precision.len()];
    for i in (0..precision.len()).rev() {
        running_max = running_max.max(precision[i]);
        interpolated[i] = running_max;
    }
    let recall_step = 1.0 / gt.len() as f64;
    is_tp
        .iter()
        .enumerate()
        .filter(|(_, &hit)| hit)
        .map(|(i, _)| interpolated[i] * recall_step)
        .sum()
}

/// Arithmetic mean of per-tolerance average precision. The averaging set
/// is exactly the given tolerances; every report this feeds states that in
/// its header.
pub fn mean_average_precision(
    scored_pred: &[(u64, f64)],
    gt: &[u64],
    tolerances: &[u64],
) -> Result<f64, EvalError> {
    if tolerances.is_empty() {
        return Err(EvalError::NoTolerances);
    }
    let sum: f64 = tolerances.iter().map(|&t| keystate_ap(scored_pred, gt, t)).sum();
    Ok(sum / tolerances.len() as f64)
}

/// How generated labels are compared against ground truth: `Amb` accepts
/// any candidate matching; `Single` counts ambiguous predictions as wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingMode {
    Amb,
    Single,
}

impl GroundingMode {
    pub fn parse(s: &str) -> Option<GroundingMode> {
        match s.to_ascii_lowercase().as_str() {
            "amb" | "ambiguous" => Some(GroundingMode::Amb),
            "single" => Some(GroundingMode::Single),
            _ => None,
        }
    }
}

impl fmt::Display for GroundingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroundingMode::Amb => "amb",
            GroundingMode::Single => "single",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub mode: GroundingMode,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub verdicts: Vec<bool>,
}

/// Text normalization for label equality: lowercase, trim, collapse
/// whitespace, strip one trailing period.
pub fn normalize_label(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let collapsed: Vec<&str> = lowered.split_whitespace().collect();
    let joined = collapsed.join(" ");
    joined.strip_suffix('.').unwrap_or(&joined).to_string()
}

/// Scores labeled segments against aligned ground-truth tasks. In `Amb`
/// mode a segment is correct when any candidate task matches; in `Single`
/// mode only an unambiguous exact prediction counts.
pub fn grounding_accuracy(
    segments: &[LabeledSegment],
    gt_tasks: &[String],
    mode: GroundingMode,
) -> Result<GroundingReport, EvalError> {
    if segments.len() != gt_tasks.len() {
        return Err(EvalError::Misaligned {
            predictions: segments.len(),
            ground_truth: gt_tasks.len(),
        });
    }
    let verdicts: Vec<bool> = segments
        .iter()
        .zip(gt_tasks)
        .map(|(seg, gt)| {
            let gt = normalize_label(gt);
            match mode {
                GroundingMode::Amb => seg.tasks.iter().any(|t| normalize_label(t) == gt),
                GroundingMode::Single => {
                    seg.tasks.len() == 1 && normalize_label(&seg.tasks[0]) == gt
                }
            }
        })
        .collect();
    let correct = verdicts.iter().filter(|v| **v).count();
    let total = verdicts.len();
    let accuracy = if total == 0 { 1.0 } else { correct as f64 / total as f64 };
    Ok(GroundingReport { mode, accuracy, correct, total, verdicts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn golden_matching_case() {
        // derived by exhaustive matching: (102,100) and (305,300) are the
        // only feasible pairs at tolerance 8; 250 has no partner
        let report = evaluate_keystates(&[102, 250, 305], &[100, 200, 300], 8);
        assert_eq!(report.matches, vec![(102, 100), (305, 300)]);
        assert_abs_diff_eq!(report.precision, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.recall, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_sets_are_perfect() {
        let report = evaluate_keystates(&[10, 20, 30], &[10, 20, 30], 0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
    }

    #[test]
    fn empty_prediction_conventions() {
        let report = evaluate_keystates(&[], &[10, 20], 8);
        assert_eq!(report.precision, 0.0);
        assert_eq!(report.recall, 0.0);
        let both_empty = evaluate_keystates(&[], &[], 8);
        assert_eq!(both_empty.precision, 1.0);
        assert_eq!(both_empty.recall, 1.0);
    }

    #[test]
    fn swapping_pred_and_gt_swaps_precision_and_recall() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(53);
        for _ in 0..100 {
            let pred: Vec<u64> = (0..rng.gen_range(0..10)).map(|_| rng.gen_range(0..100)).collect();
            let gt: Vec<u64> = (0..rng.gen_range(0..10)).map(|_| rng.gen_range(0..100)).collect();
            let eps = rng.gen_range(0..15);
            let a = evaluate_keystates(&pred, &gt, eps);
            let b = evaluate_keystates(&gt, &pred, eps);
            assert_eq!(a.true_positives, b.true_positives);
            if !pred.is_empty() && !gt.is_empty() {
                assert_abs_diff_eq!(a.precision, b.recall, epsilon = 1e-12);
                assert_abs_diff_eq!(a.recall, b.precision, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tolerance_growth_never_hurts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(59);
        for _ in 0..100 {
            let pred: Vec<(u64, f64)> = (0..rng.gen_range(0..8))
                .map(|_| (rng.gen_range(0..120), rng.gen_range(0.0..1.0)))
                .collect();
            let frames: Vec<u64> = pred.iter().map(|p| p.0).collect();
            let gt: Vec<u64> = (0..rng.gen_range(0..8)).map(|_| rng.gen_range(0..120)).collect();
            let e1 = rng.gen_range(0..10);
            let e2 = e1 + rng.gen_range(0..10);
            let r1 = evaluate_keystates(&frames, &gt, e1);
            let r2 = evaluate_keystates(&frames, &gt, e2);
            assert!(r2.precision >= r1.precision - 1e-12);
            assert!(r2.recall >= r1.recall - 1e-12);
            assert!(keystate_ap(&pred, &gt, e2) >= keystate_ap(&pred, &gt, e1) - 1e-12);
        }
    }

    #[test]
    fn golden_average_precision() {
        // rank 1: 100 -> gt 100 hit (p=1, r=1/3)
        // rank 2: 305 -> gt 300 hit (p=1, r=2/3)
        // rank 3: 250 -> no gt within 8 (p=2/3)
        // AP = 1 * 1/3 + 1 * 1/3 = 2/3
        let ap = keystate_ap(&[(100, 0.9), (305, 0.8), (250, 0.5)], &[100, 200, 300], 8);
        assert_abs_diff_eq!(ap, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn perfect_and_hopeless_ap() {
        assert_abs_diff_eq!(
            keystate_ap(&[(10, 0.9), (20, 0.8)], &[10, 20], 0),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(keystate_ap(&[(50, 0.9)], &[10], 8), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ap_matches_naive_recomputation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
        for _ in 0..200 {
            let pred: Vec<(u64, f64)> = (0..rng.gen_range(0..6))
                .map(|_| (rng.gen_range(0..60), rng.gen_range(0.0..1.0)))
                .collect();
            let gt: Vec<u64> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..60)).collect();
            let eps = rng.gen_range(0..12);
            // independent from-definition recomputation
            let mut order = pred.clone();
            order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut used = vec![false; gt.len()];
            let mut hits = Vec::new();
            for (f, _) in &order {
                let mut best: Option<(u64, u64, usize)> = None;
                for (gi, &g) in gt.iter().enumerate() {
                    if used[gi] || f.abs_diff(g) > eps {
                        continue;
                    }
                    let key = (f.abs_diff(g), g, gi);
                    if best.map_or(true, |(d, g0, _)| (key.0, key.1) < (d, g0)) {
                        best = Some(key);
                    }
                }
                if let Some((_, _, gi)) = best {
                    used[gi] = true;
                    hits.push(true);
                } else {
                    hits.push(false);
                }
            }
            let mut want = 0.0;
            let mut tp = 0;
            for i in 0..hits.len() {
                if !hits[i] {
                    continue;
                }
                tp += 1;
                let _ = tp;
                // interpolated precision at this hit
                let mut best_p = 0.0f64;
                let mut tp2 = 0;
                for (j, &h) in hits.iter().enumerate() {
                    if h {
                        tp2 += 1;
                    }
                    if j >= i {
                        best_p = best_p.max(tp2 as f64 / (j + 1) as f64);
                    }
                }
                want += best_p / gt.len() as f64;
            }
            let got = keystate_ap(&pred, &gt, eps);
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn map_is_the_mean_over_tolerances() {
        // tolerances engineered to produce AP 2/3 and 1
        let pred = vec![(100, 0.9), (305, 0.8), (250, 0.5)];
        let gt = vec![100, 200, 300];
        let ap8 = keystate_ap(&pred, &gt, 8);
        let ap50 = keystate_ap(&pred, &gt, 50);
        assert_abs_diff_eq!(ap8, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ap50, 1.0, epsilon = 1e-12);
        let map = mean_average_precision(&pred, &gt, &[8, 50]).unwrap();
        assert_abs_diff_eq!(map, 5.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            mean_average_precision(&pred, &gt, &[8]).unwrap(),
            ap8,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(mean_average_precision(&[], &[], &[8, 16]).unwrap(), 1.0);
        assert!(mean_average_precision(&pred, &gt, &[]).is_err());
    }

    fn seg(tasks: &[&str]) -> LabeledSegment {
        LabeledSegment {
            start_frame: 0,
            end_frame: 10,
            focus_object_id: 0,
            tasks: tasks.iter().map(|s| s.to_string()).collect(),
            confidences: tasks.iter().map(|_| 9.0).collect(),
            ambiguous: tasks.len() > 1,
        }
    }

    #[test]
    fn grounding_modes_differ_on_ambiguity() {
        let segments = vec![seg(&["open the drawer", "pull drawer"])];
        let gt = vec!["Open the drawer.".to_string()];
        let amb = grounding_accuracy(&segments, &gt, GroundingMode::Amb).unwrap();
        let single = grounding_accuracy(&segments, &gt, GroundingMode::Single).unwrap();
        assert_eq!(amb.accuracy, 1.0);
        assert_eq!(single.accuracy, 0.0);
    }

    #[test]
    fn exact_single_match_correct_in_both_modes() {
        let segments = vec![seg(&["Move the  pot LEFT"])];
        let gt = vec!["move the pot left".to_string()];
        for mode in [GroundingMode::Amb, GroundingMode::Single] {
            assert_eq!(grounding_accuracy(&segments, &gt, mode).unwrap().accuracy, 1.0);
        }
    }

    #[test]
    fn empty_tasks_wrong_in_both_modes() {
        let mut s = seg(&[]);
        s.tasks.clear();
        s.confidences.clear();
        let gt = vec!["anything".to_string()];
        for mode in [GroundingMode::Amb, GroundingMode::Single] {
            assert_eq!(grounding_accuracy(&[s.clone()], &gt, mode).unwrap().accuracy, 0.0);
        }
    }

    #[test]
    fn single_accuracy_never_exceeds_amb() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(67);
        let vocab = ["open the drawer", "move the pot", "pick up the fork", "close the oven"];
        for _ in 0..50 {
            let n = rng.gen_range(1..8);
            let segments: Vec<LabeledSegment> = (0..n)
                .map(|_| {
                    let k = rng.gen_range(1..3);
                    let tasks: Vec<&str> =
                        (0..k).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
                    seg(&tasks)
                })
                .collect();
            let gt: Vec<String> =
                (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect();
            let amb = grounding_accuracy(&segments, &gt, GroundingMode::Amb).unwrap();
            let single = grounding_accuracy(&segments, &gt, GroundingMode::Single).unwrap();
            assert!(single.accuracy <= amb.accuracy + 1e-12);
        }
    }

    #[test]
    fn misaligned_counts_error() {
        let segments = vec![seg(&["a"])];
        assert!(matches!(
            grounding_accuracy(&segments, &[], GroundingMode::Amb),
            Err(EvalError::Misaligned { .. })
        ));
    }

    #[test]
    fn label_normalization_rules() {
        assert_eq!(normalize_label("  Open   the Drawer. "), "open the drawer");
        assert_eq!(normalize_label("move left"), "move left");
    }
}
