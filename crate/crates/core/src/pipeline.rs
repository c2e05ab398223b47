//! Full per-episode pipeline: registry, tracks, signals, observations,
//! keystates, labeled segments.

use thiserror::Error;

use crate::config::Config;
use crate::fusion::{build_tracks, ObjectTrack};
use crate::keystates::{detect_keystates, KeystateSet};
use crate::labeler::{label_segment, LabelClient, LabelError, LabeledSegment};
use crate::registry::{build_registry, ObjectRegistry, RegistryError};
use crate::signals::{emit_observations, extract_signals, EpisodeSignals, ObservationLog};
use crate::stream::Episode;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Keystates(#[from] crate::keystates::KeystateError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// Everything one episode produces.
#[derive(Debug)]
pub struct EpisodeOutputs {
    pub registry: ObjectRegistry,
    pub tracks: Vec<ObjectTrack>,
    pub signals: EpisodeSignals,
    pub observations: ObservationLog,
    pub keystates: KeystateSet,
    pub segments: Vec<LabeledSegment>,
    /// Segments that could not be labeled, with the reason.
    pub skipped_segments: Vec<(u64, u64, String)>,
}

/// Splits accepted keystates into consecutive `(start, end]` windows: each
/// segment ends at its keystate and starts one frame after the previous
/// one (frame 0 for the first).
pub fn segment_bounds(keystates: &KeystateSet) -> Vec<(u64, u64, u32)> {
    let mut out = Vec::new();
    let mut prev: Option<u64> = None;
    for k in &keystates.keystates {
        let start = prev.map_or(0, |p| p + 1);
        if k.frame_index > start {
            out.push((start, k.frame_index, k.object_id));
        }
        prev = Some(k.frame_index);
    }
    out
}

/// Runs Stage 1 through Stage 3 on a loaded episode.
pub fn run_episode(
    ep: &Episode,
    client: &dyn LabelClient,
    config: &Config,
) -> Result<EpisodeOutputs, PipelineError> {
    let registry = build_registry(ep, client, &config.registry)?;
    let tracks = build_tracks(ep, &registry, &config.fusion);
    let signals = extract_signals(ep, &registry, &tracks, &config.signals);
    let observations = emit_observations(&signals, &registry, &config.signals);
    let keystates = detect_keystates(ep, &signals, &config.keystates)?;

    let mut segments = Vec::new();
    let mut skipped = Vec::new();
    for (start, end, focus) in segment_bounds(&keystates) {
        match label_segment(
            &observations,
            (start, end),
            focus,
            client,
            config.labeler.min_conf,
            config.keystates.merge_window,
        ) {
            Ok(seg) => segments.push(seg),
            Err(e @ (LabelError::EmptyObservations { .. } | LabelError::NoConfidentLabel(_) | LabelError::NoJson { .. })) => {
                skipped.push((start, end, e.to_string()));
            }
            Err(e) => return Err(e.into()),
        }
    }
    segments.sort_by_key(|s| s.start_frame);

    Ok(EpisodeOutputs {
        registry,
        tracks,
        signals,
        observations,
        keystates,
        segments,
        skipped_segments: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, NoiseModel, Script, ScriptedLabelClient};

    #[test]
    fn noise_free_episode_recovers_scripted_tasks() {
        let script = Script::kitchen("pipe", 5, 5, NoiseModel::default());
        let (ep, gt) = generate(&script).unwrap();
        let client = ScriptedLabelClient::for_script(&script);
        let out = run_episode(&ep, &client, &Config::default()).unwrap();

        // registry holds every scripted object
        for name in &gt.object_names {
            assert!(
                out.registry.find_by_name(name).is_some(),
                "registry misses {name}: {:?}",
                out.registry.entries
            );
        }
        assert!(out.registry.surface().is_some());

        // each ground-truth keystate has an accepted keystate within 2
        let pred: Vec<u64> = out.keystates.keystates.iter().map(|k| k.frame_index).collect();
        for &(frame, _) in &gt.keystates {
            assert!(
                pred.iter().any(|p| p.abs_diff(frame) <= 2),
                "no keystate near gt {frame}; got {pred:?}"
            );
        }
        assert_eq!(pred.len(), gt.keystates.len(), "spurious keystates: {pred:?} vs {:?}", gt.keystates);

        // labels equal the scripted instructions, in order
        assert_eq!(out.segments.len(), gt.labels.len(), "skipped: {:?}", out.skipped_segments);
        for (seg, want) in out.segments.iter().zip(&gt.labels) {
            assert_eq!(seg.tasks, vec![want.clone()], "segment {seg:?}");
        }
    }
}
