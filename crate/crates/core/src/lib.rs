//! Batch annotation of long-horizon robot demonstration videos.
//!
//! `playlabel` consumes file-backed perception streams (detections, masks,
//! depth, optical flow, gripper state) and turns them into labeled
//! single-task segments in three passes:
//!
//! 1. [`registry`] builds a canonical object registry from multi-frame
//!    proposals via temporal consensus and co-occurrence grouping.
//! 2. [`fusion`] and [`signals`] derive per-object tracks and templated
//!    natural-language observations (movement, relations, states, gripper
//!    events).
//! 3. [`keystates`] scores task boundaries by heuristic consensus and
//!    [`labeler`] prompts a language model for instruction labels per
//!    segment.
//!
//! [`evaluator`] scores keystate and grounding quality, [`synth`]
//! generates deterministic synthetic episodes with exact ground truth, and
//! [`cli`] orchestrates batch runs. The `book/` directory in the
//! repository walks through each concept with runnable snippets.

pub mod cli;
pub mod config;
pub mod evaluator;
pub mod fusion;
pub mod keystates;
pub mod labeler;
pub mod numerics;
pub mod pipeline;
pub mod registry;
pub mod signals;
pub mod stream;
pub mod synth;

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(stream_format, "../../../book/src/stream-format.md");
    chapter!(geometry, "../../../book/src/geometry.md");
    chapter!(object_registry, "../../../book/src/object-registry.md");
    chapter!(tracks_and_signals, "../../../book/src/tracks-and-signals.md");
    chapter!(keystate_scoring, "../../../book/src/keystate-scoring.md");
    chapter!(labeling, "../../../book/src/labeling.md");
    chapter!(evaluation, "../../../book/src/evaluation.md");
    chapter!(synthetic_episodes, "../../../book/src/synthetic-episodes.md");
    chapter!(cli, "../../../book/src/cli.md");
}
