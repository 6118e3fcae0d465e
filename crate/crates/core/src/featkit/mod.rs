//! Log-Mel filterbank front-end, frame stacking, and the binary feature
//! archive format.

mod archive;
mod mel;
mod stack;

pub use archive::{read_archive, write_archive, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use mel::{hz_to_mel, log_mel, mel_to_hz, Fbank, FbankConfig};
pub use stack::{stack_frames, stack_frames_with, StackEdge};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub type Result<T> = std::result::Result<T, FeatError>;

#[derive(Debug, Error)]
pub enum FeatError {
    #[error("waveform has {samples} samples, shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("unsupported sample rate {0} Hz (front-end expects 16000 Hz)")]
    SampleRate(u32),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty feature sequence")]
    Empty,
    #[error("bad feature archive: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `T x D` frames of features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    frames: Matrix<f32>,
    frame_shift_ms: f64,
}

impl FeatureSequence {
    pub fn new(frames: Matrix<f32>, frame_shift_ms: f64) -> Result<Self> {
        if frames.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(FeatError::Format("non-finite feature value".into()));
        }
        Ok(Self {
            frames,
            frame_shift_ms,
        })
    }

    pub fn frames(&self) -> &Matrix<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix<f32> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift_ms
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        self.frames.row(t)
    }
}
