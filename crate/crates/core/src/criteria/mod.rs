//! Training criteria. Every loss returns its value and the gradient with
//! respect to the student's pre-softmax logits.

mod cache;
mod ctc;

pub use cache::{read_posterior_cache, write_posterior_cache, PosteriorCache, CACHE_MAGIC};
pub use ctc::{ctc_feasible, ctc_loss};

use thiserror::Error;

use crate::featkit::FeatureSequence;
use crate::matrix::{log_softmax_row, Matrix, Real};
use crate::netcore::{NetError, Network, Posteriorgram};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub type Result<T> = std::result::Result<T, CriterionError>;

#[derive(Debug, Error)]
pub enum CriterionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("distribution does not sum to one (sum {0})")]
    NotNormalized(f64),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("label string of length {labels} needs at least {needed} frames, got {frames}")]
    Infeasible { labels: usize, needed: usize, frames: usize },
    #[error("source has {source_frames} frames, target has {target_frames}")]
    Unpaired { source_frames: usize, target_frames: usize },
    #[error("bad posterior cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scalar loss and its gradient w.r.t. the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub grad: Matrix<f64>,
}

impl Loss {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            value: 0.0,
            grad: Matrix::zeros(rows, cols),
        }
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, w: f64, other: &Loss) {
        self.value += w * other.value;
        for (a, b) in self.grad.as_mut_slice().iter_mut().zip(other.grad.as_slice()) {
            *a += w * b;
        }
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 || p.iter().any(|&v| v < 0.0) {
        return Err(CriterionError::NotNormalized(s));
    }
    Ok(())
}

/// `sum_i p_i ln(p_i / q_i)`, with `q` floored at [`PROB_FLOOR`] and
/// `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CriterionError::Shape(format!("{} vs {} entries", p.len(), q.len())));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let kl = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum::<f64>();
    // Rounding can push the sum a hair below zero when p == q.
    Ok(kl.max(0.0))
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Summed per-frame entropy of a posteriorgram.
pub fn posteriorgram_entropy(post: &Posteriorgram) -> f64 {
    (0..post.frames()).map(|t| entropy(post.row(t))).sum()
}

fn check_logits(rows: usize, cols: usize, logits: &Matrix<f64>) -> Result<()> {
    if logits.rows() != rows || logits.cols() != cols {
        return Err(CriterionError::Shape(format!(
            "targets are {rows}x{cols}, logits are {}x{}",
            logits.rows(),
            logits.cols()
        )));
    }
    Ok(())
}

/// Cross entropy against soft targets:
/// `-sum_t sum_i P_T(i|t) ln P_S(i|t)`, gradient `P_S - P_T`.
pub fn soft_ce_loss(teacher: &Posteriorgram, logits: &Matrix<f64>) -> Result<Loss> {
    let (t_len, n) = (teacher.frames(), teacher.classes());
    check_logits(t_len, n, logits)?;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(t_len, n);
    let mut logp = vec![0.0; n];
    for t in 0..t_len {
        log_softmax_row(logits.row(t), &mut logp);
        let pt = teacher.row(t);
        value -= pt
            .iter()
            .zip(&logp)
            .filter(|(&p, _)| p > 0.0)
            .map(|(p, l)| p * l)
            .sum::<f64>();
        for ((g, &l), &p) in grad.row_mut(t).iter_mut().zip(&logp).zip(pt) {
            *g = l.exp() - p;
        }
    }
    Ok(Loss { value, grad })
}

/// Frame-level cross entropy with hard labels; gradient `softmax - onehot`.
pub fn hard_ce_loss(labels: &[usize], logits: &Matrix<f64>) -> Result<Loss> {
    let n = logits.cols();
    check_logits(labels.len(), n, logits)?;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(labels.len(), n);
    let mut logp = vec![0.0; n];
    for (t, &l) in labels.iter().enumerate() {
        if l >= n {
            return Err(CriterionError::Label { label: l, classes: n });
        }
        log_softmax_row(logits.row(t), &mut logp);
        value -= logp[l];
        let g = grad.row_mut(t);
        for (gi, &lp) in g.iter_mut().zip(&logp) {
            *gi = lp.exp();
        }
        g[l] -= 1.0;
    }
    Ok(Loss { value, grad })
}

/// `lambda * soft + (1 - lambda) * hard`. `lambda = 1` is pure teacher
/// targets and never touches `labels`.
pub fn interpolated_loss(
    lambda: f64,
    teacher: &Posteriorgram,
    labels: Option<&[usize]>,
    logits: &Matrix<f64>,
) -> Result<Loss> {
    let soft = soft_ce_loss(teacher, logits)?;
    if lambda == 1.0 {
        return Ok(soft);
    }
    let labels = labels.ok_or_else(|| CriterionError::Shape("hard labels required when lambda < 1".into()))?;
    let hard = hard_ce_loss(labels, logits)?;
    let mut out = Loss::zero(logits.rows(), logits.cols());
    out.add_scaled(lambda, &soft);
    out.add_scaled(1.0 - lambda, &hard);
    Ok(out)
}

/// Frame-synchronous (source, target) feature pair.
#[derive(Clone, Debug)]
pub struct ParallelPair {
    source: FeatureSequence,
    target: FeatureSequence,
}

impl ParallelPair {
    pub fn new(source: FeatureSequence, target: FeatureSequence) -> Result<Self> {
        if source.len() != target.len() {
            return Err(CriterionError::Unpaired {
                source_frames: source.len(),
                target_frames: target.len(),
            });
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &FeatureSequence {
        &self.source
    }

    pub fn target(&self) -> &FeatureSequence {
        &self.target
    }

    pub fn frames(&self) -> usize {
        self.source.len()
    }
}

/// Teacher posteriors on the source side, then soft CE against the
/// student's logits on the target side. No transcription is involved.
pub fn ts_adaptation_loss<F: Real>(
    teacher: &Network<F>,
    student_logits_on_target: &Matrix<f64>,
    pair: &ParallelPair,
) -> Result<Loss> {
    if teacher.spec().output_dim != student_logits_on_target.cols() {
        return Err(CriterionError::Shape(format!(
            "teacher has {} outputs, student logits have {} columns",
            teacher.spec().output_dim,
            student_logits_on_target.cols()
        )));
    }
    let post = teacher.posteriors(pair.source())?;
    soft_ce_loss(&post, student_logits_on_target)
}

#[cfg(test)]
mod tests;
