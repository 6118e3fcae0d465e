//! Corpora, synthetic tasks and training orchestration.

pub mod data;
pub mod experiments;
pub mod farsim;
pub mod manifest;
pub mod metrics;
pub mod synth;
pub mod train;

pub use data::{delay_labels, Dataset, Example, FrontEnd};
pub use farsim::{far_field, FarFieldSpec, NoiseStyle, RoomBank};
pub use manifest::{Manifest, Record};
pub use metrics::{frame_error_rate, kws_report, kws_scores};
pub use synth::{synth_many, synth_utterance, LabelScheme, SynthTaskSpec, SynthUtterance};
pub use train::{adapt, distill, teacher_posteriors, train, Criterion, EpochLog, TrainConfig, TrainOutput};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("`{id}` lacks {what} required by the {criterion} criterion")]
    MissingLabels {
        id: String,
        what: &'static str,
        criterion: &'static str,
    },
    #[error("`{0}` is not a frame-synchronous parallel pair")]
    Unpaired(String),
    #[error("teacher has {teacher} outputs, student has {student}")]
    OutputMismatch { teacher: usize, student: usize },
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Sim(#[from] crate::simkit::SimError),
    #[error(transparent)]
    Feat(#[from] crate::featkit::FeatError),
    #[error(transparent)]
    Net(#[from] crate::netcore::NetError),
    #[error(transparent)]
    Criterion(#[from] crate::criteria::CriterionError),
    #[error(transparent)]
    Kws(#[from] crate::kws::KwsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
