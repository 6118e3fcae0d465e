use super::{CriterionError, Loss, Result};
use crate::matrix::{log_softmax_row, Matrix};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum frame count for a label string: one frame per label plus one
/// blank between each pair of equal neighbours.
pub fn ctc_feasible(labels: &[usize], frames: usize) -> bool {
    frames >= min_frames(labels)
}

fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log probability of `labels` summed over every blank-augmented
/// alignment, by forward-backward in log space.
///
/// An empty label string scores the all-blank path.
pub fn ctc_loss(logits: &Matrix<f64>, labels: &[usize], blank: usize) -> Result<Loss> {
    let (t_len, n) = (logits.rows(), logits.cols());
    if blank >= n {
        return Err(CriterionError::Label { label: blank, classes: n });
    }
    for &l in labels {
        if l >= n || l == blank {
            return Err(CriterionError::Label { label: l, classes: n });
        }
    }
    let needed = min_frames(labels).max(1);
    if t_len < needed {
        return Err(CriterionError::Infeasible {
            labels: labels.len(),
            needed,
            frames: t_len,
        });
    }

    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    let s_len = ext.len();
    let skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut logp = Matrix::zeros(t_len, n);
    for t in 0..t_len {
        log_softmax_row(logits.row(t), logp.row_mut(t));
    }
    let ninf = f64::NEG_INFINITY;

    // alpha includes the emission at t; beta covers frames after t only.
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = logp.get(0, ext[0]);
    if s_len > 1 {
        alpha[1] = logp.get(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = a + logp.get(t, ext[s]);
        }
    }
    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = (t + 1) * s_len;
            let via = |u: usize| beta[next + u] + logp.get(t + 1, ext[u]);
            let mut b = via(s);
            if s + 1 < s_len {
                b = log_add(b, via(s + 1));
            }
            if s + 2 < s_len && skip(s + 2) {
                b = log_add(b, via(s + 2));
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }

    let mut grad = Matrix::zeros(t_len, n);
    let mut occ = vec![ninf; n];
    for t in 0..t_len {
        occ.iter_mut().for_each(|o| *o = ninf);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            occ[ext[s]] = log_add(occ[ext[s]], v);
        }
        for (k, g) in grad.row_mut(t).iter_mut().enumerate() {
            *g = logp.get(t, k).exp() - (occ[k] - log_p).exp();
        }
    }
    Ok(Loss { value: -log_p, grad })
}
