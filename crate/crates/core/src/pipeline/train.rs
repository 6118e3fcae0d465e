//! Mini-batch SGD with momentum over whole utterances.
//!
//! Each utterance's gradient is computed independently (in parallel when
//! `workers > 1`) and the batch sum is accumulated in id order, so results do
//! not depend on the worker count. Utterances are processed at their own
//! length, which makes padding masks unnecessary.

use std::io::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{delay_labels, Dataset, Example};
use super::{PipelineError, Result};
use crate::criteria::{ctc_loss, hard_ce_loss, interpolated_loss, soft_ce_loss, Loss, PosteriorCache};
use crate::netcore::{save_checkpoint, ModelSpec, Network, Upstream};
use crate::seeding::{rng, utterance_rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Criterion {
    /// Frame-level cross entropy against frame labels.
    HardCe,
    /// CTC against the transcript.
    Ctc { blank: usize },
    /// Cross entropy against teacher posteriors on the same input, optionally
    /// interpolated with hard labels (`lambda = 1` uses no labels).
    SoftCe { lambda: f64 },
    /// Cross entropy against teacher posteriors computed on the paired
    /// source features.
    TsAdapt,
}

impl Criterion {
    fn name(&self) -> &'static str {
        match self {
            Criterion::HardCe => "hard_ce",
            Criterion::Ctc { .. } => "ctc",
            Criterion::SoftCe { .. } => "soft_ce",
            Criterion::TsAdapt => "ts_adapt",
        }
    }

    fn needs_targets(&self) -> bool {
        matches!(self, Criterion::SoftCe { .. } | Criterion::TsAdapt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub criterion: Criterion,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Utterances per update.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    #[serde(default = "default_clip")]
    pub clip: f64,
    /// Learning rate multiplier applied every `decay_every` epochs.
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: usize,
    /// Frames by which hard frame labels are delayed.
    #[serde(default)]
    pub label_delay: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Per-epoch checkpoints and `log.jsonl` go here when set.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_clip() -> f64 {
    5.0
}
fn default_decay() -> f64 {
    1.0
}
fn default_decay_every() -> usize {
    1
}
fn default_workers() -> usize {
    1
}

impl TrainConfig {
    pub fn new(criterion: Criterion, learning_rate: f64, epochs: usize, seed: u64) -> Self {
        Self {
            criterion,
            learning_rate,
            momentum: default_momentum(),
            batch_size: 8,
            epochs,
            seed,
            clip: default_clip(),
            lr_decay: default_decay(),
            decay_every: default_decay_every(),
            label_delay: 0,
            workers: default_workers(),
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        // A zero rate is allowed so a schedule can freeze training.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.clip >= 0.0) || !(self.lr_decay > 0.0) || self.decay_every == 0 {
            return bad("clip must be >= 0, lr_decay > 0 and decay_every >= 1");
        }
        if let Criterion::SoftCe { lambda } = self.criterion {
            if !(0.0..=1.0).contains(&lambda) {
                return bad("soft_ce lambda must lie in [0, 1]");
            }
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Summed loss divided by the number of frames.
    pub loss: f64,
    pub frames: usize,
    pub learning_rate: f64,
    /// Mean pre-clip gradient norm over the epoch's updates.
    pub grad_norm: f64,
    /// File name of the epoch's checkpoint inside `checkpoint_dir`.
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub net: Network<f32>,
    pub log: Vec<EpochLog>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

/// Teacher posteriors on each example's features, or on its paired source
/// when `on_source`.
pub fn teacher_posteriors(teacher: &Network<f32>, data: &Dataset, on_source: bool, workers: usize) -> Result<PosteriorCache> {
    use rayon::prelude::*;
    let out: Vec<_> = pool(workers)?.install(|| {
        data.examples()
            .par_iter()
            .map(|e| {
                let x = if on_source {
                    e.source.as_ref().ok_or_else(|| PipelineError::Unpaired(e.id.clone()))?
                } else {
                    &e.features
                };
                Ok((e.id.clone(), teacher.posteriors(x)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(out.into_iter().collect())
}

fn check_labels(data: &Dataset, cfg: &TrainConfig, targets: Option<&PosteriorCache>) -> Result<()> {
    let name = cfg.criterion.name();
    for e in data.examples() {
        let missing = |what| PipelineError::MissingLabels {
            id: e.id.clone(),
            what,
            criterion: name,
        };
        match cfg.criterion {
            Criterion::HardCe if e.frame_labels.is_none() => return Err(missing("frame labels")),
            Criterion::Ctc { .. } if e.transcript.is_none() => return Err(missing("a transcript")),
            Criterion::SoftCe { lambda } if lambda < 1.0 && e.frame_labels.is_none() => {
                return Err(missing("frame labels"))
            }
            _ => {}
        }
        if cfg.criterion.needs_targets() {
            let t = targets.and_then(|t| t.get(&e.id)).ok_or_else(|| missing("teacher posteriors"))?;
            if t.frames() != e.features.len() {
                return Err(PipelineError::Unpaired(e.id.clone()));
            }
        }
    }
    Ok(())
}

fn example_loss(net: &Network<f32>, e: &Example, cfg: &TrainConfig, targets: Option<&PosteriorCache>) -> Result<(f64, Vec<f32>)> {
    let pass = net.forward_features(&e.features)?;
    let logits = pass.logits_f64();
    let labels = || e.frame_labels.as_ref().map(|l| delay_labels(l, cfg.label_delay));
    let loss: Loss = match cfg.criterion {
        Criterion::HardCe => hard_ce_loss(&labels().expect("checked"), &logits)?,
        Criterion::Ctc { blank } => ctc_loss(&logits, e.transcript.as_ref().expect("checked"), blank)?,
        Criterion::SoftCe { lambda } => {
            let t = &targets.expect("checked")[&e.id];
            if lambda >= 1.0 {
                soft_ce_loss(t, &logits)?
            } else {
                interpolated_loss(lambda, t, labels().as_deref(), &logits)?
            }
        }
        Criterion::TsAdapt => soft_ce_loss(&targets.expect("checked")[&e.id], &logits)?,
    };
    let grad = net.backward(&pass, Upstream::Logits(&loss.grad))?;
    Ok((loss.value, grad))
}

/// Trains `net` on `data`. Soft criteria read teacher posteriors from
/// `targets`, keyed by example id.
pub fn train(mut net: Network<f32>, data: &Dataset, targets: Option<&PosteriorCache>, cfg: &TrainConfig) -> Result<TrainOutput> {
    use rayon::prelude::*;
    cfg.validate()?;
    if data.is_empty() {
        return Err(PipelineError::Config("training set is empty".into()));
    }
    check_labels(data, cfg, targets)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let workers = pool(cfg.workers)?;
    let n = net.num_params();
    let mut velocity = vec![0.0f64; n];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng(cfg.seed ^ 0x7a11_5eed);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle);
        let (mut epoch_loss, mut epoch_frames, mut norm_sum, mut updates) = (0.0, 0usize, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut ids = batch.to_vec();
            ids.sort_unstable();
            let results: Vec<(f64, Vec<f32>)> = workers.install(|| {
                ids.par_iter()
                    .map(|&i| example_loss(&net, &data.examples()[i], cfg, targets))
                    .collect::<Result<Vec<_>>>()
            })?;
            let frames: usize = ids.iter().map(|&i| data.examples()[i].features.len()).sum();
            let mut g = vec![0.0f64; n];
            for (loss, grad) in &results {
                epoch_loss += loss;
                for (a, &b) in g.iter_mut().zip(grad) {
                    *a += b as f64;
                }
            }
            epoch_frames += frames;
            let scale = 1.0 / frames.max(1) as f64;
            let mut norm = 0.0;
            for v in g.iter_mut() {
                *v *= scale;
                norm += *v * *v;
            }
            let norm = norm.sqrt();
            if !norm.is_finite() {
                return Err(PipelineError::Diverged(epoch));
            }
            norm_sum += norm;
            updates += 1;
            let clip = if cfg.clip > 0.0 && norm > cfg.clip { cfg.clip / norm } else { 1.0 };
            if lr == 0.0 {
                continue;
            }
            let params = net.params_mut();
            for ((p, v), gi) in params.iter_mut().zip(velocity.iter_mut()).zip(&g) {
                *v = cfg.momentum * *v + gi * clip;
                *p = (*p as f64 - lr * *v) as f32;
            }
        }
        let loss = epoch_loss / epoch_frames.max(1) as f64;
        if !loss.is_finite() {
            return Err(PipelineError::Diverged(epoch));
        }
        let checkpoint = match &cfg.checkpoint_dir {
            Some(dir) => {
                let name = format!("epoch{:03}.ckpt", epoch + 1);
                save_checkpoint(dir.join(&name), &net)?;
                Some(name)
            }
            None => None,
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            loss,
            frames: epoch_frames,
            learning_rate: lr,
            grad_norm: norm_sum / updates.max(1) as f64,
            checkpoint,
        };
        if let Some(dir) = &cfg.checkpoint_dir {
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(dir.join("log.jsonl"))?;
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        }
        log.push(entry);
    }
    Ok(TrainOutput { net, log })
}

/// Compression by teacher/student learning: a freshly initialized student of
/// `student_spec` learns the teacher's frame posteriors. Labels are never
/// read unless `cfg` asks for an interpolated soft criterion.
pub fn distill(teacher: &Network<f32>, student_spec: ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    if teacher.spec().output_dim != student_spec.output_dim {
        return Err(PipelineError::OutputMismatch {
            teacher: teacher.spec().output_dim,
            student: student_spec.output_dim,
        });
    }
    let mut cfg = cfg.clone();
    if !matches!(cfg.criterion, Criterion::SoftCe { .. }) {
        cfg.criterion = Criterion::SoftCe { lambda: 1.0 };
    }
    cfg.validate()?;
    let targets = teacher_posteriors(teacher, data, false, cfg.workers)?;
    let student = Network::init(student_spec, &mut utterance_rng(cfg.seed, "student-init"))?;
    train(student, data, Some(&targets), &cfg)
}

/// Domain adaptation with parallel data: the student starts as a copy of the
/// teacher, which sees the close-talk side of each pair while the student
/// learns on the far-field side.
pub fn adapt(teacher: &Network<f32>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    for e in data.examples() {
        e.pair()?;
    }
    let mut cfg = cfg.clone();
    cfg.criterion = Criterion::TsAdapt;
    cfg.validate()?;
    let targets = teacher_posteriors(teacher, data, true, cfg.workers)?;
    train(teacher.clone(), data, Some(&targets), &cfg)
}
