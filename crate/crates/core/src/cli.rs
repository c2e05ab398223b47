//! Batch orchestration: the command implementations behind the `playlabel`
//! binary. Episode failures isolate (one bad episode never aborts a
//! batch), outputs are ordered by episode id regardless of worker
//! scheduling, and a manifest pins every effective config value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::Config;
use crate::evaluator::{
    evaluate_keystates, grounding_accuracy, keystate_ap, match_keystates, GroundingMode,
};
use crate::labeler::{HttpLabelClient, LabelClient, LabeledSegment};
use crate::pipeline::run_episode;
use crate::stream::load_episode;
use crate::synth::{
    generate, load_ground_truth, load_mock_rules, load_script, mock_label_rules,
    save_ground_truth, save_mock_rules, ScriptedLabelClient,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Eval(#[from] crate::evaluator::EvalError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Episode index files in a directory, sorted by file name. Sidecar
/// directories and auxiliary artifacts are skipped.
pub fn discover_episodes(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().to_string();
        if path.is_file() && name.ends_with(".jsonl") && !name.ends_with(".script.jsonl") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct EpisodeStatus {
    pub episode_id: String,
    pub status: String,
    pub keystates: usize,
    pub segments: usize,
    pub skipped_segments: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub config: toml::Value,
    pub episodes: Vec<EpisodeStatus>,
}

#[derive(Debug)]
pub struct LabelSummary {
    pub processed: usize,
    pub failed: usize,
}

/// Labels every episode in `episodes_dir` into `out_dir`: per episode a
/// registry, observation log, keystate set, and label file, plus
/// `manifest.json` (deterministic) and `timings.tsv` (wall-clock, kept
/// separate so outputs stay byte-reproducible).
pub fn cmd_label(
    episodes_dir: &Path,
    config: &Config,
    out_dir: &Path,
) -> Result<LabelSummary, CliError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let paths = discover_episodes(episodes_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.jobs)
        .build()
        .map_err(|e| CliError::Invalid(format!("worker pool: {e}")))?;

    struct EpisodeResult {
        stem: String,
        status: EpisodeStatus,
        millis: u128,
    }

    let mut results: Vec<EpisodeResult> = pool.install(|| {
        paths
            .par_iter()
            .map(|path| {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_default();
                let started = Instant::now();
                let outcome = label_one(path, config, out_dir);
                let millis = started.elapsed().as_millis();
                let status = match outcome {
                    Ok((id, keystates, segments, skipped)) => EpisodeStatus {
                        episode_id: id,
                        status: "ok".into(),
                        keystates,
                        segments,
                        skipped_segments: skipped,
                    },
                    Err(e) => EpisodeStatus {
                        episode_id: stem.clone(),
                        status: format!("error: {e}"),
                        keystates: 0,
                        segments: 0,
                        skipped_segments: 0,
                    },
                };
                EpisodeResult { stem, status, millis }
            })
            .collect()
    });
    results.sort_by(|a, b| a.stem.cmp(&b.stem));

    let config_toml = config.canonical_toml();
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: hex_sha256(config_toml.as_bytes()),
        config: toml::from_str(&config_toml).expect("canonical config parses"),
        episodes: results.iter().map(|r| clone_status(&r.status)).collect(),
    };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(io_err(&manifest_path))?;

    let mut timings = String::new();
    for r in &results {
        writeln!(timings, "{}\t{}", r.stem, r.millis).unwrap();
    }
    let timings_path = out_dir.join("timings.tsv");
    std::fs::write(&timings_path, timings).map_err(io_err(&timings_path))?;

    let failed = results.iter().filter(|r| r.status.status != "ok").count();
    Ok(LabelSummary { processed: results.len(), failed })
}

fn clone_status(s: &EpisodeStatus) -> EpisodeStatus {
    EpisodeStatus {
        episode_id: s.episode_id.clone(),
        status: s.status.clone(),
        keystates: s.keystates,
        segments: s.segments,
        skipped_segments: s.skipped_segments,
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().fold(String::with_capacity(64), |mut acc, b| {
        write!(acc, "{b:02x}").unwrap();
        acc
    })
}

fn label_one(
    path: &Path,
    config: &Config,
    out_dir: &Path,
) -> Result<(String, usize, usize, usize), CliError> {
    let ep = load_episode(path).map_err(|e| CliError::Invalid(e.to_string()))?;
    let client: Box<dyn LabelClient> = if config.labeler.mock {
        let rules_path = path.with_extension("mock.json");
        let rules = load_mock_rules(&rules_path).map_err(|e| {
            CliError::Invalid(format!("mock mode needs rules next to the episode: {e}"))
        })?;
        Box::new(ScriptedLabelClient::new(rules))
    } else {
        let mut http = HttpLabelClient::new(&config.labeler.endpoint, &config.labeler.model);
        http.temperature = config.labeler.temperature;
        http.timeout = std::time::Duration::from_secs(config.labeler.timeout_secs);
        http.max_attempts = config.labeler.max_attempts;
        Box::new(http)
    };
    let out = run_episode(&ep, client.as_ref(), config)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let id = &ep.episode_id;
    crate::registry::save_registry(&out.registry, out_dir.join(format!("{id}.registry.tsv")))
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    crate::signals::save_observations(
        &out.observations,
        out_dir.join(format!("{id}.observations.tsv")),
    )
    .map_err(|e| CliError::Invalid(e.to_string()))?;
    crate::keystates::save_keystates(&out.keystates, out_dir.join(format!("{id}.keystates.tsv")))
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    crate::labeler::save_segments(&out.segments, out_dir.join(format!("{id}.labels.tsv")))
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok((
        id.clone(),
        out.keystates.keystates.len(),
        out.segments.len(),
        out.skipped_segments.len(),
    ))
}

// ---------------------------------------------------------------------------
// evaluation commands

fn stem_map(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(stem) = name.strip_suffix(suffix) {
            out.insert(stem.to_string(), entry.path());
        }
    }
    Ok(out)
}

/// Evaluation report: a human-readable table plus machine lines
/// `(metric \t tolerance \t value)`.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub header: String,
    pub table: String,
    pub machine: Vec<(String, String, f64)>,
}

impl EvalReport {
    pub fn machine_lines(&self) -> String {
        let mut out = String::new();
        for (metric, eps, value) in &self.machine {
            writeln!(out, "{metric}\t{eps}\t{value:.6}").unwrap();
        }
        out
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.header, self.table)
    }
}

/// Matches per-episode predicted keystates against ground truth at every
/// tolerance: micro-averaged precision/recall (pooled counts) and
/// macro-averaged AP (mean of per-episode AP), with mAP the mean over the
/// tolerance set.
pub fn cmd_eval_keystates(
    pred_dir: &Path,
    gt_dir: &Path,
    tolerances: &[u64],
) -> Result<EvalReport, CliError> {
    if tolerances.is_empty() {
        return Err(CliError::Invalid("need at least one tolerance".into()));
    }
    let preds = stem_map(pred_dir, ".keystates.tsv")?;
    let gts = stem_map(gt_dir, ".gt.tsv")?;
    let pred_ids: Vec<&String> = preds.keys().collect();
    let gt_ids: Vec<&String> = gts.keys().collect();
    if pred_ids != gt_ids {
        return Err(CliError::Invalid(format!(
            "episode sets differ: predictions {pred_ids:?} vs ground truth {gt_ids:?}"
        )));
    }
    if preds.is_empty() {
        return Err(CliError::Invalid("no episodes to evaluate".into()));
    }

    let mut per_eps: BTreeMap<u64, (usize, usize, usize, Vec<f64>)> = BTreeMap::new();
    for (stem, pred_path) in &preds {
        let set = crate::keystates::load_keystates(pred_path)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        let scored: Vec<(u64, f64)> =
            set.keystates.iter().map(|k| (k.frame_index, k.score)).collect();
        let frames: Vec<u64> = scored.iter().map(|s| s.0).collect();
        let gt: Vec<u64> = load_ground_truth(&gts[stem])?.iter().map(|g| g.0).collect();
        for &eps in tolerances {
            let r = evaluate_keystates(&frames, &gt, eps);
            let slot = per_eps.entry(eps).or_insert((0, 0, 0, Vec::new()));
            slot.0 += r.true_positives;
            slot.1 += r.false_positives;
            slot.2 += r.false_negatives;
            slot.3.push(keystate_ap(&scored, &gt, eps));
        }
    }

    let header = format!(
        "keystate evaluation over {} episodes; tolerances {:?}; precision/recall micro-averaged over pooled counts; AP macro-averaged per episode; mAP = mean AP over this tolerance set",
        preds.len(),
        tolerances
    );
    let mut table = format!("{:>10} {:>10} {:>10} {:>10}\n", "tolerance", "precision", "recall", "AP");
    let mut machine = Vec::new();
    let mut ap_means = Vec::new();
    for (&eps, (tp, fp, fneg, aps)) in &per_eps {
        let precision = if tp + fp == 0 { if *fneg == 0 { 1.0 } else { 0.0 } } else { *tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fneg == 0 { 1.0 } else { *tp as f64 / (tp + fneg) as f64 };
        let ap = aps.iter().sum::<f64>() / aps.len() as f64;
        ap_means.push(ap);
        writeln!(table, "{eps:>10} {precision:>10.4} {recall:>10.4} {ap:>10.4}").unwrap();
        machine.push(("precision".to_string(), eps.to_string(), precision));
        machine.push(("recall".to_string(), eps.to_string(), recall));
        machine.push(("ap".to_string(), eps.to_string(), ap));
    }
    let map = ap_means.iter().sum::<f64>() / ap_means.len() as f64;
    writeln!(table, "{:>10} {:>10} {:>10} {map:>10.4}", "mAP", "-", "-").unwrap();
    machine.push(("map".to_string(), "all".to_string(), map));
    Ok(EvalReport { header, table, machine })
}

/// Grounding accuracy: labeled segments are aligned to ground-truth
/// keystates by segment end frame (greedy matching within
/// `align_tolerance`), matched pairs are scored under the given mode, and
/// unmatched entries are reported alongside.
pub fn cmd_eval_grounding(
    labels_dir: &Path,
    gt_dir: &Path,
    mode: GroundingMode,
    align_tolerance: u64,
) -> Result<EvalReport, CliError> {
    let labels = stem_map(labels_dir, ".labels.tsv")?;
    let gts = stem_map(gt_dir, ".gt.tsv")?;
    let label_ids: Vec<&String> = labels.keys().collect();
    let gt_ids: Vec<&String> = gts.keys().collect();
    if label_ids != gt_ids {
        return Err(CliError::Invalid(format!(
            "episode sets differ: labels {label_ids:?} vs ground truth {gt_ids:?}"
        )));
    }
    if labels.is_empty() {
        return Err(CliError::Invalid("no episodes to evaluate".into()));
    }

    let (mut correct, mut total, mut unmatched_pred, mut unmatched_gt) = (0usize, 0usize, 0usize, 0usize);
    for (stem, labels_path) in &labels {
        let segments = crate::labeler::load_segments(labels_path)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        let gt = load_ground_truth(&gts[stem])?;
        let ends: Vec<u64> = segments.iter().map(|s| s.end_frame).collect();
        let gt_frames: Vec<u64> = gt.iter().map(|g| g.0).collect();
        let matches = match_keystates(&ends, &gt_frames, align_tolerance);
        let mut matched_segments: Vec<LabeledSegment> = Vec::new();
        let mut matched_gt: Vec<String> = Vec::new();
        for (end, gt_frame) in &matches {
            let seg = segments.iter().find(|s| s.end_frame == *end).unwrap();
            let (_, _, label) =
                gt.iter().find(|(f, _, _)| f == gt_frame).unwrap();
            matched_segments.push(seg.clone());
            matched_gt.push(label.clone());
        }
        unmatched_pred += segments.len() - matches.len();
        unmatched_gt += gt.len() - matches.len();
        let report = grounding_accuracy(&matched_segments, &matched_gt, mode)?;
        correct += report.correct;
        total += report.total;
    }
    let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    let header = format!(
        "grounding evaluation ({mode} mode) over {} episodes; segments aligned to ground-truth keystates by end frame within {align_tolerance} frames",
        labels.len()
    );
    let mut table = String::new();
    writeln!(table, "accuracy  {accuracy:.4}  ({correct}/{total} matched segments correct)").unwrap();
    writeln!(table, "unmatched predictions {unmatched_pred}, unmatched ground truth {unmatched_gt}").unwrap();
    let machine = vec![
        (format!("grounding_{mode}"), align_tolerance.to_string(), accuracy),
        ("unmatched_pred".to_string(), align_tolerance.to_string(), unmatched_pred as f64),
        ("unmatched_gt".to_string(), align_tolerance.to_string(), unmatched_gt as f64),
    ];
    Ok(EvalReport { header, table, machine })
}

/// Generates `count` episodes from a script file (seed incremented per
/// episode), writing episode index + sidecars, ground truth, and mock
/// rules into `out_dir`.
pub fn cmd_synth(script_path: &Path, out_dir: &Path, count: u64) -> Result<Vec<String>, CliError> {
    let base = load_script(script_path)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut ids = Vec::new();
    for i in 0..count.max(1) {
        let mut script = base.clone();
        script.seed = base.seed + i;
        if count > 1 {
            script.episode_id = format!("{}-s{:03}", base.episode_id, script.seed);
        }
        let (ep, gt) = generate(&script)?;
        let id = &script.episode_id;
        crate::stream::save_episode(&ep, out_dir.join(format!("{id}.jsonl")))
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        save_ground_truth(&gt, out_dir.join(format!("{id}.gt.tsv")))?;
        save_mock_rules(&mock_label_rules(&script), out_dir.join(format!("{id}.mock.json")))?;
        ids.push(id.clone());
    }
    Ok(ids)
}

/// Pretty-prints a summary of any artifact file, sniffing the kind from
/// the name and content.
pub fn cmd_inspect(path: &Path) -> Result<String, CliError> {
    let name = path.file_name().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    let mut out = String::new();
    if name.ends_with(".registry.tsv") {
        let reg = crate::registry::load_registry(path).map_err(|e| CliError::Invalid(e.to_string()))?;
        writeln!(out, "object registry: {} entries", reg.entries.len()).unwrap();
        for e in &reg.entries {
            writeln!(
                out,
                "  [{}] {}{}  color={} movable={} container={} states=[{}]{}",
                e.object_id,
                e.canonical_name,
                if e.synonyms.is_empty() { String::new() } else { format!(" ({})", e.synonyms.join(", ")) },
                e.color,
                e.properties.movable,
                e.properties.is_container,
                e.properties.states.join(", "),
                if e.is_surface { "  [surface]" } else { "" },
            )
            .unwrap();
        }
    } else if name.ends_with(".keystates.tsv") {
        let set = crate::keystates::load_keystates(path).map_err(|e| CliError::Invalid(e.to_string()))?;
        writeln!(out, "keystates: {} accepted", set.keystates.len()).unwrap();
        let weights: Vec<String> = set.weights.iter().map(|(h, w)| format!("{h}={w:.3}")).collect();
        writeln!(out, "  weights: {}", weights.join(", ")).unwrap();
        for k in &set.keystates {
            let contribs: Vec<String> =
                k.contributions.iter().map(|(h, c)| format!("{h}:{c:.2}")).collect();
            writeln!(out, "  frame {:>5}  object {:>3}  score {:.3}  [{}]", k.frame_index, k.object_id, k.score, contribs.join(", ")).unwrap();
        }
    } else if name.ends_with(".labels.tsv") {
        let segments = crate::labeler::load_segments(path).map_err(|e| CliError::Invalid(e.to_string()))?;
        writeln!(out, "labeled segments: {}", segments.len()).unwrap();
        for s in &segments {
            writeln!(
                out,
                "  [{:>5}, {:>5}] object {:>3} ambiguous={}  {}",
                s.start_frame, s.end_frame, s.focus_object_id, s.ambiguous, s.tasks.join(" | ")
            )
            .unwrap();
        }
    } else if name.ends_with(".observations.tsv") {
        let log = crate::signals::load_observations(path).map_err(|e| CliError::Invalid(e.to_string()))?;
        writeln!(out, "observations: {}", log.observations.len()).unwrap();
        for o in &log.observations {
            writeln!(out, "  frame {:>5}  [{}] {}", o.frame_index, o.kind, o.text).unwrap();
        }
    } else if name.ends_with(".gt.tsv") {
        let gt = load_ground_truth(path)?;
        writeln!(out, "ground truth: {} keystates", gt.len()).unwrap();
        for (frame, object, label) in &gt {
            writeln!(out, "  frame {frame:>5}  {object}: {label}").unwrap();
        }
    } else if name.ends_with(".mock.json") {
        let rules = load_mock_rules(path)?;
        writeln!(out, "mock rules for episode {}: {} task rules", rules.episode_id, rules.task_rules.len()).unwrap();
    } else if name.ends_with(".jsonl") {
        // script or episode: scripts carry a meta line
        let first = std::fs::read_to_string(path)
            .map_err(io_err(path))?
            .lines()
            .next()
            .unwrap_or_default()
            .to_string();
        if first.contains("\"kind\":\"meta\"") || first.contains("\"kind\": \"meta\"") {
            let script = load_script(path)?;
            writeln!(
                out,
                "script {}: seed {}, {}x{}, {} objects, {} tasks",
                script.episode_id,
                script.seed,
                script.width,
                script.height,
                script.objects.len(),
                script.tasks.len()
            )
            .unwrap();
        } else {
            let ep = load_episode(path).map_err(|e| CliError::Invalid(e.to_string()))?;
            let with_depth = ep.frames.iter().filter(|f| f.depth.is_some()).count();
            let with_gripper = ep.frames.iter().filter(|f| f.gripper.is_some()).count();
            writeln!(
                out,
                "episode {}: {} frames at {}x{} {}fps; depth on {with_depth}, gripper on {with_gripper}",
                ep.episode_id,
                ep.frames.len(),
                ep.width,
                ep.height,
                ep.fps
            )
            .unwrap();
        }
    } else {
        return Err(CliError::Invalid(format!("unrecognized artifact: {name}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{save_script, NoiseModel, Script};

    fn synth_dir(dir: &Path, n_episodes: u64, n_tasks: usize) -> PathBuf {
        let script = Script::kitchen("ep", 100, n_tasks, NoiseModel::default());
        let script_path = dir.join("ep.script.jsonl");
        save_script(&script, &script_path).unwrap();
        let episodes = dir.join("episodes");
        cmd_synth(&script_path, &episodes, n_episodes).unwrap();
        episodes
    }

    #[test]
    fn label_then_eval_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let episodes = synth_dir(tmp.path(), 2, 3);
        let out = tmp.path().join("out");
        let summary = cmd_label(&episodes, &Config::default(), &out).unwrap();
        assert_eq!(summary.processed, 2);
        assert_eq!(summary.failed, 0);
        assert!(out.join("manifest.json").exists());
        assert!(out.join("timings.tsv").exists());

        let ks = cmd_eval_keystates(&out, &episodes, &[8, 16]).unwrap();
        let precision_8 = ks
            .machine
            .iter()
            .find(|(m, e, _)| m == "precision" && e == "8")
            .unwrap()
            .2;
        assert!(precision_8 > 0.99, "{}", ks.render());

        let g = cmd_eval_grounding(&out, &episodes, GroundingMode::Amb, 8).unwrap();
        assert!(g.machine[0].2 > 0.99, "{}", g.render());
    }

    #[test]
    fn empty_directory_yields_empty_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let episodes = tmp.path().join("episodes");
        std::fs::create_dir_all(&episodes).unwrap();
        let out = tmp.path().join("out");
        let summary = cmd_label(&episodes, &Config::default(), &out).unwrap();
        assert_eq!(summary.processed, 0);
        assert_eq!(summary.failed, 0);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["episodes"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn bad_episode_isolates_and_reports() {
        let tmp = tempfile::tempdir().unwrap();
        let episodes = synth_dir(tmp.path(), 1, 2);
        std::fs::write(episodes.join("broken.jsonl"), "not json\n").unwrap();
        let out = tmp.path().join("out");
        let summary = cmd_label(&episodes, &Config::default(), &out).unwrap();
        assert_eq!(summary.processed, 2);
        assert_eq!(summary.failed, 1);
        // the good episode still produced outputs
        assert!(out.join("ep.labels.tsv").exists());
    }

    #[test]
    fn eval_rejects_mismatched_episode_sets() {
        let tmp = tempfile::tempdir().unwrap();
        let episodes = synth_dir(tmp.path(), 1, 2);
        let out = tmp.path().join("out");
        cmd_label(&episodes, &Config::default(), &out).unwrap();
        std::fs::remove_file(episodes.join("ep.gt.tsv")).unwrap();
        std::fs::write(episodes.join("other.gt.tsv"), "1\tpot\tMove\n").unwrap();
        assert!(matches!(
            cmd_eval_keystates(&out, &episodes, &[8]),
            Err(CliError::Invalid(_))
        ));
    }

    #[test]
    fn mock_mode_outputs_are_byte_identical_across_runs() {
        let tmp = tempfile::tempdir().unwrap();
        let episodes = synth_dir(tmp.path(), 2, 3);
        let out1 = tmp.path().join("out1");
        let out2 = tmp.path().join("out2");
        cmd_label(&episodes, &Config::default(), &out1).unwrap();
        cmd_label(&episodes, &Config::default(), &out2).unwrap();
        for entry in std::fs::read_dir(&out1).unwrap() {
            let name = entry.unwrap().file_name();
            if name == "timings.tsv" {
                continue;
            }
            let a = std::fs::read(out1.join(&name)).unwrap();
            let b = std::fs::read(out2.join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs between runs");
        }
    }

    #[test]
    fn synth_seeds_are_deterministic_and_inspectable() {
        let tmp = tempfile::tempdir().unwrap();
        let episodes = synth_dir(tmp.path(), 1, 2);
        let a = std::fs::read(episodes.join("ep.jsonl")).unwrap();
        let episodes2 = tmp.path().join("episodes2");
        let script_path = tmp.path().join("ep.script.jsonl");
        cmd_synth(&script_path, &episodes2, 1).unwrap();
        let b = std::fs::read(episodes2.join("ep.jsonl")).unwrap();
        assert_eq!(a, b);

        let info = cmd_inspect(&episodes.join("ep.jsonl")).unwrap();
        assert!(info.contains("episode ep"), "{info}");
        let info = cmd_inspect(&script_path).unwrap();
        assert!(info.contains("script ep"), "{info}");
    }
}
