//! In-memory datasets: featurized utterances with their optional labels.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Record};
use super::synth::{LabelScheme, SynthUtterance};
use super::{PipelineError, Result};
use crate::criteria::ParallelPair;
use crate::featkit::{read_archive, stack_frames_with, Fbank, FbankConfig, FeatureSequence, StackEdge};
use crate::matrix::Matrix;
use crate::simkit::{wav::read_wav, Waveform};

/// Log-Mel extraction, optional per-utterance mean/variance normalization and
/// optional frame stacking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontEnd {
    pub fbank: FbankConfig,
    #[serde(default = "yes")]
    pub cmvn: bool,
    /// Frames per stacked vector; 1 disables stacking.
    #[serde(default = "one")]
    pub context: usize,
    #[serde(default = "one")]
    pub step: usize,
    #[serde(default)]
    pub edge: StackEdge,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl FrontEnd {
    pub fn new(n_mels: usize, context: usize, step: usize) -> Self {
        Self {
            fbank: FbankConfig::with_mels(n_mels),
            cmvn: true,
            context,
            step,
            edge: StackEdge::Pad,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fbank.n_mels * self.context
    }

    pub fn compute(&self, fb: &Fbank, w: &Waveform) -> Result<FeatureSequence> {
        let mut f = fb.compute(w)?;
        if self.cmvn {
            f = cmvn(&f)?;
        }
        if self.context > 1 || self.step > 1 {
            f = stack_frames_with(&f, self.context, self.step, self.edge)?;
        }
        Ok(f)
    }

    /// Number of output frames for a 10 ms frame count.
    pub fn output_frames(&self, raw: usize) -> usize {
        if self.context == 1 && self.step == 1 {
            return raw;
        }
        match self.edge {
            StackEdge::Pad => raw.div_ceil(self.step),
            StackEdge::Truncate if raw >= self.context => (raw - self.context) / self.step + 1,
            StackEdge::Truncate => 1,
        }
    }

    /// Maps 10 ms frame labels to the output rate: stacked vector `j` takes
    /// the label of raw frame `j * step + context / 2` (clamped).
    pub fn map_labels(&self, raw: &[usize]) -> Vec<usize> {
        let n = self.output_frames(raw.len());
        if raw.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|j| raw[(j * self.step + self.context / 2).min(raw.len() - 1)])
            .collect()
    }
}

/// Per-dimension zero mean and unit variance over the utterance.
pub fn cmvn(f: &FeatureSequence) -> Result<FeatureSequence> {
    let (t, d) = (f.len(), f.dim());
    let mut mean = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    for row in f.frames().iter_rows() {
        for (k, &v) in row.iter().enumerate() {
            mean[k] += v as f64;
            sq[k] += (v as f64) * (v as f64);
        }
    }
    let n = t.max(1) as f64;
    let scale: Vec<f64> = (0..d)
        .map(|k| {
            mean[k] /= n;
            let var = (sq[k] / n - mean[k] * mean[k]).max(0.0);
            1.0 / (var.sqrt() + 1e-3)
        })
        .collect();
    let mut out = Matrix::zeros(t, d);
    for (i, row) in f.frames().iter_rows().enumerate() {
        for (k, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = ((row[k] as f64 - mean[k]) * scale[k]) as f32;
        }
    }
    Ok(FeatureSequence::new(out, f.frame_shift_ms())?)
}

#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub features: FeatureSequence,
    pub transcript: Option<Vec<usize>>,
    /// Frame labels at the feature rate.
    pub frame_labels: Option<Vec<usize>>,
    pub positive: Option<bool>,
    /// Close-talk features of a parallel pair.
    pub source: Option<FeatureSequence>,
    pub duration_s: Option<f64>,
}

impl Example {
    pub fn new(id: impl Into<String>, features: FeatureSequence) -> Self {
        Self {
            id: id.into(),
            features,
            transcript: None,
            frame_labels: None,
            positive: None,
            source: None,
            duration_s: None,
        }
    }

    pub fn pair(&self) -> Result<ParallelPair> {
        let src = self.source.clone().ok_or_else(|| PipelineError::Unpaired(self.id.clone()))?;
        ParallelPair::new(src, self.features.clone()).map_err(|_| PipelineError::Unpaired(self.id.clone()))
    }
}

/// Examples sorted by id; ids are unique.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(mut examples: Vec<Example>) -> Result<Self> {
        examples.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = examples.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(PipelineError::Manifest(format!("duplicate id `{}`", w[0].id)));
        }
        for e in &examples {
            if e.features.is_empty() {
                return Err(PipelineError::Manifest(format!("`{}` has no frames", e.id)));
            }
            if let Some(l) = &e.frame_labels {
                if l.len() != e.features.len() {
                    return Err(PipelineError::Manifest(format!(
                        "`{}` has {} frame labels for {} frames",
                        e.id,
                        l.len(),
                        e.features.len()
                    )));
                }
            }
        }
        Ok(Self { examples })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.binary_search_by(|e| e.id.as_str().cmp(id)).ok().map(|i| &self.examples[i])
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.dim())
    }

    pub fn total_frames(&self) -> usize {
        self.examples.iter().map(|e| e.features.len()).sum()
    }

    pub fn strip_labels(&self) -> Self {
        let examples = self
            .examples
            .iter()
            .map(|e| Example {
                transcript: None,
                frame_labels: None,
                ..e.clone()
            })
            .collect();
        Self { examples }
    }

    /// First `n` examples in id order.
    pub fn take(&self, n: usize) -> Self {
        Self {
            examples: self.examples.iter().take(n).cloned().collect(),
        }
    }

    /// Union of two datasets with disjoint ids.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        let ids: BTreeSet<&str> = self.examples.iter().map(|e| e.id.as_str()).collect();
        if let Some(e) = other.examples.iter().find(|e| ids.contains(e.id.as_str())) {
            return Err(PipelineError::Manifest(format!("duplicate id `{}`", e.id)));
        }
        Self::new(self.examples.iter().chain(&other.examples).cloned().collect())
    }

    /// Replaces every example's features by their `source` side.
    pub fn source_side(&self) -> Result<Self> {
        let examples = self
            .examples
            .iter()
            .map(|e| {
                let src = e.source.clone().ok_or_else(|| PipelineError::Unpaired(e.id.clone()))?;
                Ok(Example {
                    features: src,
                    source: None,
                    ..e.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(examples)
    }

    /// Featurizes every record of `manifest`. Frame labels in the manifest
    /// are at the 10 ms rate and are mapped to the front-end's output rate.
    pub fn from_manifest(manifest: &Manifest, fe: &FrontEnd) -> Result<Self> {
        manifest.validate()?;
        let fb = Fbank::new(&fe.fbank)?;
        let load = |p: &Path| -> Result<(FeatureSequence, Option<f64>)> {
            if p.extension().is_some_and(|e| e == "fea") {
                Ok((read_archive(p)?, None))
            } else {
                let w = read_wav(p)?;
                Ok((fe.compute(&fb, &w)?, Some(w.duration_secs())))
            }
        };
        let examples = manifest
            .records
            .par_iter()
            .map(|r: &Record| {
                let (features, duration_s) = load(&r.path)?;
                let source = match &r.source {
                    Some(s) => Some(load(s)?.0),
                    None => None,
                };
                let frame_labels = r.frame_labels.as_ref().map(|l| {
                    if l.len() == features.len() {
                        l.clone()
                    } else {
                        fe.map_labels(l)
                    }
                });
                Ok(Example {
                    id: r.id.clone(),
                    features,
                    transcript: r.transcript.clone(),
                    frame_labels,
                    positive: r.positive,
                    source,
                    duration_s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(examples)
    }

    /// Featurizes synthetic utterances with labels taken by construction.
    pub fn from_synth(utts: &[SynthUtterance], scheme: LabelScheme, fe: &FrontEnd) -> Result<Self> {
        Self::from_synth_pairs(utts, None, scheme, fe)
    }

    /// As [`Dataset::from_synth`]; when `far` is given its waveforms become
    /// the features and the clean ones the paired source.
    pub fn from_synth_pairs(
        clean: &[SynthUtterance],
        far: Option<&[Waveform]>,
        scheme: LabelScheme,
        fe: &FrontEnd,
    ) -> Result<Self> {
        if let Some(f) = far {
            if f.len() != clean.len() {
                return Err(PipelineError::Config("far-field list length differs from clean list".into()));
            }
        }
        let fb = Fbank::new(&fe.fbank)?;
        let win = fe.fbank.window_samples();
        let hop = fe.fbank.hop_samples();
        let examples = clean
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                let clean_f = fe.compute(&fb, &u.waveform)?;
                let raw = fb.frame_count(u.waveform.len());
                let labels = fe.map_labels(&u.frame_labels(scheme, win, hop, raw));
                let (features, source) = match far {
                    Some(f) => (fe.compute(&fb, &f[i])?, Some(clean_f)),
                    None => (clean_f, None),
                };
                Ok(Example {
                    id: u.id.clone(),
                    features,
                    transcript: Some(u.transcript.clone()),
                    frame_labels: Some(labels),
                    positive: Some(u.positive),
                    source,
                    duration_s: Some(u.waveform.duration_secs()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(examples)
    }
}

/// `y'[t] = y[max(t - d, 0)]`.
pub fn delay_labels(labels: &[usize], delay: usize) -> Vec<usize> {
    (0..labels.len()).map(|t| labels[t.saturating_sub(delay)]).collect()
}
