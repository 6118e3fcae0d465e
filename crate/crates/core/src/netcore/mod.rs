//! Sequence-network core: LSTM layers with optional projection and
//! peepholes, an affine softmax output, hand-derived reverse-mode gradients,
//! truncated-SVD compression and checkpoints.

mod checkpoint;
mod layout;
mod network;
mod spec;
mod svd;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use layout::{Affine, LayerLayout, Layout, LAYOUT_VERSION};
pub use network::{Cache, Network, Pass, Upstream};
pub use spec::{block_params, param_count, uniform_rank_for_budget, BlockId, ModelSpec};
pub use svd::{select_svd_ranks, svd_compress};

use thiserror::Error;

use crate::matrix::{softmax_row, Matrix};

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("rank {rank} for block `{block}` exceeds its maximum {max}")]
    Rank { block: String, rank: usize, max: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("activation cache does not belong to this network state")]
    StaleCache,
    #[error("non-finite parameter")]
    NonFinite,
    #[error("invalid posteriorgram: {0}")]
    Posterior(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `T x N` matrix of per-frame label posteriors; rows sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriorgram {
    rows: Matrix<f64>,
}

impl Posteriorgram {
    /// Validates entries in `[0, 1]` and row sums within `1e-6`.
    pub fn new(rows: Matrix<f64>) -> Result<Self> {
        for (t, row) in rows.iter_rows().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(NetError::Posterior(format!("frame {t} has an entry outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(NetError::Posterior(format!("frame {t} sums to {s}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_logits(logits: &Matrix<f64>) -> Self {
        let mut rows = Matrix::zeros(logits.rows(), logits.cols());
        for t in 0..logits.rows() {
            softmax_row(logits.row(t), rows.row_mut(t));
        }
        Self { rows }
    }

    /// One-hot rows for the given labels.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut rows = Matrix::zeros(labels.len(), classes);
        for (t, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(NetError::Posterior(format!("label {l} out of range at frame {t}")));
            }
            rows.set(t, l, 1.0);
        }
        Ok(Self { rows })
    }

    pub fn frames(&self) -> usize {
        self.rows.rows()
    }

    pub fn classes(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.rows.row(t)
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.rows.get(t, i)
    }

    pub fn matrix(&self) -> &Matrix<f64> {
        &self.rows
    }

    /// Per-frame argmax (smallest index on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.rows
            .iter_rows()
            .map(|row| {
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
