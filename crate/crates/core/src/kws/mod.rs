//! CTC keyword spotting: Viterbi location of the keyword segment,
//! geometric-mean confidence, thresholding and CA/FA evaluation.

mod eval;
mod scores;
mod viterbi;

pub use eval::{evaluate, roc, threshold_at_ca, EvalReport, RocPoint, ScoredUtterance};
pub use scores::{format_scores, parse_scores, read_score_file, write_score_file};
pub use viterbi::viterbi_locate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcore::Posteriorgram;

/// Probability floor before logs in the decoder.
pub const LOG_FLOOR: f64 = 1e-12;

pub type Result<T> = std::result::Result<T, KwsError>;

#[derive(Debug, Error)]
pub enum KwsError {
    #[error("invalid keyword model: {0}")]
    Model(String),
    #[error("posteriorgram has no frames")]
    Empty,
    #[error("posteriorgram has {frames} frames, keyword needs at least {units}")]
    TooShort { frames: usize, units: usize },
    #[error("segment [{m}, {n}] is not inside 0..{frames}")]
    Segment { m: usize, n: usize, frames: usize },
    #[error("no positive utterances to set an operating point")]
    NoPositives,
    #[error("target CA {0} must be in (0, 1]")]
    Target(f64),
    #[error("score file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Output indices of the keyword units and the filler classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordModel {
    /// Keyword units in spoken order.
    pub units: Vec<usize>,
    pub blank: usize,
    pub silence: usize,
    pub garbage: usize,
}

impl KeywordModel {
    pub fn new(units: Vec<usize>, blank: usize, silence: usize, garbage: usize) -> Result<Self> {
        let km = Self {
            units,
            blank,
            silence,
            garbage,
        };
        km.validate(None)?;
        Ok(km)
    }

    /// Five-output layout `blank, hey, cortana, silence, garbage`.
    pub fn two_unit() -> Self {
        Self {
            units: vec![1, 2],
            blank: 0,
            silence: 3,
            garbage: 4,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.all().into_iter().max().map_or(0, |m| m + 1)
    }

    fn all(&self) -> Vec<usize> {
        let mut v = self.units.clone();
        v.extend([self.blank, self.silence, self.garbage]);
        v
    }

    /// Checks distinctness and, when given, that every index fits `classes`.
    pub fn validate(&self, classes: Option<usize>) -> Result<()> {
        if self.units.is_empty() {
            return Err(KwsError::Model("at least one keyword unit is required".into()));
        }
        let mut all = self.all();
        if let Some(n) = classes {
            if let Some(&bad) = all.iter().find(|&&i| i >= n) {
                return Err(KwsError::Model(format!("index {bad} outside a {n}-class output")));
            }
        }
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(KwsError::Model("indices must be distinct".into()));
        }
        Ok(())
    }
}

/// One scored keyword hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordDetection {
    pub score: f64,
    /// Inclusive frame interval `[m, n]`.
    pub segment: (usize, usize),
    /// Per-unit frame of the peak posterior inside the segment.
    pub peak_frames: Vec<usize>,
    pub peak_posteriors: Vec<f64>,
}

/// Geometric mean of each unit's peak posterior inside `[m, n]`. Argmax ties
/// go to the smallest frame index.
pub fn confidence_score(post: &Posteriorgram, segment: (usize, usize), km: &KeywordModel) -> Result<KeywordDetection> {
    let (m, n) = segment;
    if m > n || n >= post.frames() {
        return Err(KwsError::Segment {
            m,
            n,
            frames: post.frames(),
        });
    }
    km.validate(Some(post.classes()))?;
    let mut peak_frames = Vec::with_capacity(km.units.len());
    let mut peak_posteriors = Vec::with_capacity(km.units.len());
    for &u in &km.units {
        let mut best = m;
        for f in m + 1..=n {
            if post.get(f, u) > post.get(best, u) {
                best = f;
            }
        }
        peak_frames.push(best);
        peak_posteriors.push(post.get(best, u));
    }
    let product: f64 = peak_posteriors.iter().product();
    let score = match peak_posteriors.len() {
        1 => product,
        2 => product.sqrt(),
        k => product.powf(1.0 / k as f64),
    };
    Ok(KeywordDetection {
        score: score.clamp(0.0, 1.0),
        segment,
        peak_frames,
        peak_posteriors,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Accepts when the score reaches the threshold.
pub fn decide(d: &KeywordDetection, threshold: f64) -> Decision {
    if d.score >= threshold {
        Decision::Accept
    } else {
        Decision::Reject
    }
}

/// Locate then score.
pub fn spot(post: &Posteriorgram, km: &KeywordModel) -> Result<KeywordDetection> {
    let seg = viterbi_locate(post, km)?;
    confidence_score(post, seg, km)
}
