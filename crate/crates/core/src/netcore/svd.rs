use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::network::Network;
use super::spec::{block_params, param_count, BlockId, ModelSpec};
use super::{NetError, Result};
use crate::matrix::Real;

/// Dense `rows x cols` weight of a block (product of factors if factorized).
fn dense_block<F: Real>(net: &Network<F>, id: BlockId) -> DMatrix<f64> {
    let a = net.layout().block(id).expect("block exists");
    let p = net.params();
    let first = DMatrix::from_row_slice(
        a.rows,
        a.inner(),
        &p[a.first()].iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>(),
    );
    match a.rank {
        None => first,
        Some(k) => {
            let second = DMatrix::from_row_slice(
                k,
                a.cols,
                &p[a.second()].iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>(),
            );
            first * second
        }
    }
}

struct Factors {
    singular: Vec<f64>,
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
}

/// Thin SVD with singular triples sorted by decreasing value.
fn sorted_svd(w: DMatrix<f64>) -> Factors {
    let svd = w.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    Factors {
        singular: order.iter().map(|&i| svd.singular_values[i]).collect(),
        u: DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]),
        v_t: DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]),
    }
}

/// Replaces each listed block by the rank-`k` factors `U_k sqrt(S_k)` and
/// `sqrt(S_k) V_k^T` of its truncated SVD. Other parameters are copied.
pub fn svd_compress<F: Real>(net: &Network<F>, ranks: &BTreeMap<BlockId, usize>) -> Result<Network<F>> {
    let mut spec = net.spec().clone();
    for (&id, &k) in ranks {
        if net.layout().block(id).is_none() {
            return Err(NetError::Spec(format!("block `{id}` does not exist")));
        }
        let (m, n) = spec.block_shape(id);
        if k == 0 || k > m.min(n) {
            return Err(NetError::Rank {
                block: id.to_string(),
                rank: k,
                max: m.min(n),
            });
        }
        spec.svd_rank.insert(id.to_string(), k);
    }
    let mut out = Network::<F>::zeros(spec)?;
    let src_layout = net.layout().clone();
    let dst_layout = out.layout().clone();
    let src = net.params();
    let dst = out.params_mut();

    // Non-block tensors keep their positions relative to the layout.
    for (sl, dl) in src_layout.layers.iter().zip(&dst_layout.layers) {
        let h4 = 4 * net.spec().hidden;
        dst[dl.bias..dl.bias + h4].copy_from_slice(&src[sl.bias..sl.bias + h4]);
        if let (Some(s), Some(d)) = (sl.peepholes, dl.peepholes) {
            let h3 = 3 * net.spec().hidden;
            dst[d..d + h3].copy_from_slice(&src[s..s + h3]);
        }
    }
    let n_out = net.spec().output_dim;
    dst[dst_layout.output_bias..dst_layout.output_bias + n_out]
        .copy_from_slice(&src[src_layout.output_bias..src_layout.output_bias + n_out]);

    for id in net.spec().blocks() {
        let s = src_layout.block(id).expect("source block");
        let d = dst_layout.block(id).expect("dest block");
        match ranks.get(&id) {
            None => dst[d.offset..d.offset + d.len()].copy_from_slice(&src[s.offset..s.offset + s.len()]),
            Some(&k) => {
                let f = sorted_svd(dense_block(net, id));
                let first = &mut dst[d.first()];
                for r in 0..d.rows {
                    for c in 0..k {
                        first[r * k + c] = F::from_f64_lossy(f.u[(r, c)] * f.singular[c].sqrt());
                    }
                }
                let second = &mut dst[d.second()];
                for r in 0..k {
                    for c in 0..d.cols {
                        second[r * d.cols + c] = F::from_f64_lossy(f.singular[r].sqrt() * f.v_t[(r, c)]);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn energy_rank(s: &[f64], energy: f64) -> usize {
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, v) in s.iter().enumerate() {
        acc += v * v;
        if acc >= energy * total {
            return i + 1;
        }
    }
    s.len()
}

/// Rank choice for `blocks`: the smallest rank keeping `energy` of the
/// squared singular values per block, then greedily adjusted one rank step at
/// a time toward `budget` total parameters. Shrinking drops the step that
/// loses least energy per parameter saved; growing adds the step that gains
/// most energy per parameter spent.
pub fn select_svd_ranks<F: Real>(
    net: &Network<F>,
    blocks: &[BlockId],
    energy: f64,
    budget: Option<usize>,
) -> Result<BTreeMap<BlockId, usize>> {
    let spectra: Vec<(BlockId, Vec<f64>)> = blocks
        .iter()
        .map(|&id| {
            if net.layout().block(id).is_none() {
                return Err(NetError::Spec(format!("block `{id}` does not exist")));
            }
            Ok((id, sorted_svd(dense_block(net, id)).singular))
        })
        .collect::<Result<_>>()?;
    let mut ranks: BTreeMap<BlockId, usize> = spectra
        .iter()
        .map(|(id, s)| (*id, energy_rank(s, energy)))
        .collect();
    let Some(budget) = budget else {
        return Ok(ranks);
    };
    let spec_with = |ranks: &BTreeMap<BlockId, usize>| -> ModelSpec {
        let mut s = net.spec().clone();
        for (id, k) in ranks {
            s.svd_rank.insert(id.to_string(), *k);
        }
        s
    };
    let step_cost = |id: BlockId| {
        let (m, n) = net.spec().block_shape(id);
        block_params(m, n, Some(1))
    };
    while param_count(&spec_with(&ranks)) > budget {
        let pick = spectra
            .iter()
            .filter(|(id, _)| ranks[id] > 1)
            .min_by(|(a, sa), (b, sb)| {
                let la = sa[ranks[a] - 1].powi(2) / step_cost(*a) as f64;
                let lb = sb[ranks[b] - 1].powi(2) / step_cost(*b) as f64;
                la.total_cmp(&lb)
            });
        match pick {
            Some((id, _)) => *ranks.get_mut(id).unwrap() -= 1,
            None => break,
        }
    }
    loop {
        let current = param_count(&spec_with(&ranks));
        let pick = spectra
            .iter()
            .filter(|(id, s)| ranks[id] < s.len() && current + step_cost(*id) <= budget)
            .max_by(|(a, sa), (b, sb)| {
                let ga = sa[ranks[a]].powi(2) / step_cost(*a) as f64;
                let gb = sb[ranks[b]].powi(2) / step_cost(*b) as f64;
                ga.total_cmp(&gb)
            });
        match pick {
            Some((id, _)) => *ranks.get_mut(id).unwrap() += 1,
            None => break,
        }
    }
    Ok(ranks)
}
