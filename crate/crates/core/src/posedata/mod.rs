//! Data model, file formats, action-unit image composition, and the
//! synthetic dive generator that supplies ground-truth keyframes and
//! scores.

mod action_unit;
mod corpus;
mod pose;
mod synth;

pub use action_unit::{compose_action_unit, descriptor, ActionUnitImage, GrayImage, DESCRIPTOR_DIM};
pub use corpus::{
    load_corpus, load_item, read_frames, write_corpus, write_frames, Corpus, CorpusEntry,
    LoadedItem, Manifest, VideoItem, FRAMES_MAGIC,
};
pub use pose::{
    joint_angle, load_pose_sequence, pose_vector, write_pose_jsonl, AngleWarning, BBox,
    PoseFrame, PoseLoad, PoseSequence, ANGLE_TRIPLES, DEFAULT_JOINT_COUNT, DEFAULT_ANGLE_COUNT,
    DEFAULT_ROI_JOINTS, JOINT_NAMES,
};
pub use synth::{
    synth_dive, DiveParams, SynthDive, DEFAULT_ANGLE_PENALTY, DEFAULT_SPLASH_PENALTY,
    DEFAULT_SCORE_MAX,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedLine {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invariant violation in `{field}`: {msg}")]
    Invariant { field: String, msg: String },
    #[error("degenerate joint angle: {0}")]
    DegenerateAngle(String),
    #[error("invalid dive parameters: {0}")]
    BadParams(String),
    #[error("corpus has no items")]
    EmptyCorpus,
    #[error("manifest: {0}")]
    Manifest(String),
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
