use serde::{Deserialize, Serialize};

use super::{KwsError, Result};

/// Confidence for one utterance with its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredUtterance {
    pub id: String,
    pub score: f64,
    pub positive: bool,
    /// Audio duration in seconds, when known.
    pub duration_s: Option<f64>,
}

impl ScoredUtterance {
    pub fn new(id: impl Into<String>, score: f64, positive: bool) -> Self {
        Self {
            id: id.into(),
            score,
            positive,
            duration_s: None,
        }
    }

    pub fn with_duration(mut self, secs: f64) -> Self {
        self.duration_s = Some(secs);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub ca: f64,
    pub fa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub ca: f64,
    pub fa: f64,
    pub accepted_positives: usize,
    pub total_positives: usize,
    pub accepted_negatives: usize,
    pub total_negatives: usize,
    /// False accepts per hour of negative audio, when every negative has a
    /// duration.
    pub fa_per_hour: Option<f64>,
    pub roc: Option<Vec<RocPoint>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// CA and FA at `threshold` (accept when `score >= threshold`).
pub fn evaluate(scores: &[ScoredUtterance], threshold: f64) -> EvalReport {
    let (mut ap, mut tp, mut an, mut tn) = (0, 0, 0, 0);
    let mut neg_secs = Some(0.0);
    for s in scores {
        let accepted = s.score >= threshold;
        if s.positive {
            tp += 1;
            ap += accepted as usize;
        } else {
            tn += 1;
            an += accepted as usize;
            neg_secs = neg_secs.zip(s.duration_s).map(|(a, b)| a + b);
        }
    }
    let fa_per_hour = neg_secs.filter(|&s| s > 0.0).map(|s| an as f64 / (s / 3600.0));
    EvalReport {
        threshold,
        ca: ratio(ap, tp),
        fa: ratio(an, tn),
        accepted_positives: ap,
        total_positives: tp,
        accepted_negatives: an,
        total_negatives: tn,
        fa_per_hour,
        roc: None,
    }
}

/// Largest threshold whose CA is at least `target_ca`.
///
/// CA only changes at positive scores, so the answer is the `j`-th highest
/// positive score for the smallest `j` with `j / P >= target_ca`.
pub fn threshold_at_ca(scores: &[ScoredUtterance], target_ca: f64) -> Result<f64> {
    if !(target_ca > 0.0 && target_ca <= 1.0) {
        return Err(KwsError::Target(target_ca));
    }
    let mut pos: Vec<f64> = scores.iter().filter(|s| s.positive).map(|s| s.score).collect();
    if pos.is_empty() {
        return Err(KwsError::NoPositives);
    }
    pos.sort_by(|a, b| b.total_cmp(a));
    let total = pos.len();
    let mut j = ((target_ca * total as f64).ceil() as usize).clamp(1, total);
    while j > 1 && (j - 1) as f64 / total as f64 >= target_ca {
        j -= 1;
    }
    while (j as f64 / total as f64) < target_ca && j < total {
        j += 1;
    }
    Ok(pos[j - 1])
}

/// `(threshold, CA, FA)` at every distinct score, highest threshold first.
pub fn roc(scores: &[ScoredUtterance]) -> Vec<RocPoint> {
    let mut sorted: Vec<&ScoredUtterance> = scores.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let tp = scores.iter().filter(|s| s.positive).count();
    let tn = scores.len() - tp;
    let (mut ap, mut an) = (0, 0);
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let th = sorted[i].score;
        while i < sorted.len() && sorted[i].score == th {
            if sorted[i].positive {
                ap += 1;
            } else {
                an += 1;
            }
            i += 1;
        }
        out.push(RocPoint {
            threshold: th,
            ca: ratio(ap, tp),
            fa: ratio(an, tn),
        });
    }
    out
}

impl EvalReport {
    pub fn with_roc(mut self, scores: &[ScoredUtterance]) -> Self {
        self.roc = Some(roc(scores));
        self
    }

    /// Human-readable summary followed by the ROC table when present.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "threshold {:.6}\nCA {:.4} ({}/{})\nFA {:.4} ({}/{})\n",
            self.threshold,
            self.ca,
            self.accepted_positives,
            self.total_positives,
            self.fa,
            self.accepted_negatives,
            self.total_negatives
        );
        if let Some(h) = self.fa_per_hour {
            s.push_str(&format!("FA per hour {h:.4}\n"));
        }
        if let Some(roc) = &self.roc {
            s.push_str("# threshold ca fa\n");
            for p in roc {
                s.push_str(&format!("{:.6} {:.6} {:.6}\n", p.threshold, p.ca, p.fa));
            }
        }
        s
    }
}
