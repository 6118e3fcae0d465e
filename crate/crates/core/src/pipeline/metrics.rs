use rayon::prelude::*;

use super::data::{delay_labels, Dataset};
use super::{PipelineError, Result};
use crate::kws::{evaluate, spot, threshold_at_ca, EvalReport, KeywordModel, ScoredUtterance};
use crate::netcore::Network;

/// Fraction of frames whose argmax posterior differs from the (delayed)
/// frame label, pooled over the dataset.
pub fn frame_error_rate(net: &Network<f32>, data: &Dataset, label_delay: usize) -> Result<f64> {
    let counts = data
        .examples()
        .par_iter()
        .map(|e| {
            let labels = e.frame_labels.as_ref().ok_or_else(|| PipelineError::MissingLabels {
                id: e.id.clone(),
                what: "frame labels",
                criterion: "frame error rate",
            })?;
            let labels = delay_labels(labels, label_delay);
            let hyp = net.posteriors(&e.features)?.argmax();
            let wrong = hyp.iter().zip(&labels).filter(|(h, l)| h != l).count();
            Ok((wrong, labels.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (wrong, total) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(if total == 0 { 0.0 } else { wrong as f64 / total as f64 })
}

/// Keyword confidence of every example. Examples shorter than the keyword
/// score 0.
pub fn kws_scores(net: &Network<f32>, data: &Dataset, km: &KeywordModel) -> Result<Vec<ScoredUtterance>> {
    data.examples()
        .par_iter()
        .map(|e| {
            let positive = e.positive.ok_or_else(|| PipelineError::MissingLabels {
                id: e.id.clone(),
                what: "a positive flag",
                criterion: "keyword evaluation",
            })?;
            let post = net.posteriors(&e.features)?;
            let score = match spot(&post, km) {
                Ok(d) => d.score,
                Err(crate::kws::KwsError::TooShort { .. }) => 0.0,
                Err(err) => return Err(err.into()),
            };
            let mut s = ScoredUtterance::new(e.id.clone(), score, positive);
            s.duration_s = e.duration_s;
            Ok(s)
        })
        .collect()
}

/// Report at the largest threshold reaching `target_ca`.
pub fn kws_report(scores: &[ScoredUtterance], target_ca: f64) -> Result<EvalReport> {
    let th = threshold_at_ca(scores, target_ca)?;
    Ok(evaluate(scores, th))
}
