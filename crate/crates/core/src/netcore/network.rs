use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::layout::{Affine, Layout};
use super::spec::ModelSpec;
use super::{NetError, Posteriorgram, Result};
use crate::featkit::FeatureSequence;
use crate::matrix::{axpy, dot, softmax_row, Matrix, Real};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// LSTM network with hand-derived gradients.
///
/// The identity tag changes on every parameter mutation, so activation caches
/// from an earlier parameter state are rejected by [`Network::backward`].
#[derive(Debug)]
pub struct Network<F> {
    spec: ModelSpec,
    layout: Layout,
    params: Vec<F>,
    id: u64,
}

impl<F: Clone> Clone for Network<F> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            params: self.params.clone(),
            id: self.id,
        }
    }
}

impl<F: PartialEq> PartialEq for Network<F> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

/// Upstream gradient fed to [`Network::backward`].
#[derive(Clone, Copy, Debug)]
pub enum Upstream<'a> {
    /// dLoss/dLogits, `T x output_dim`.
    Logits(&'a Matrix<f64>),
    /// dLoss/dPosteriors, `T x output_dim`; chained through the softmax.
    Posteriors(&'a Matrix<f64>),
}

struct LayerCache<F> {
    /// Gate pre-activations before the second factor and bias, `T x q`.
    pre: Vec<F>,
    /// Gate activations i, f, g, o, `T x 4h`.
    acts: Vec<F>,
    c: Vec<F>,
    tanh_c: Vec<F>,
    m: Vec<F>,
    /// First projection factor output, `T x k` (factorized projection only).
    proj_mid: Vec<F>,
    /// Layer output `T x r`.
    r: Vec<F>,
}

/// Activations retained from a forward pass.
pub struct Cache<F> {
    net_id: u64,
    frames: usize,
    input: Vec<F>,
    layers: Vec<LayerCache<F>>,
    out_mid: Vec<F>,
}

/// Output of [`Network::forward`].
pub struct Pass<F> {
    pub logits: Matrix<F>,
    pub cache: Cache<F>,
}

impl<F: Real> Pass<F> {
    pub fn logits_f64(&self) -> Matrix<f64> {
        self.logits.map(|v| v.to_f64_lossy())
    }

    pub fn posteriors(&self) -> Posteriorgram {
        Posteriorgram::from_logits(&self.logits_f64())
    }

    pub fn frames(&self) -> usize {
        self.cache.frames
    }
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// `out += x · W` with `W` stored `len(x) x cols`.
#[inline]
fn vec_mat<F: Real>(x: &[F], w: &[F], cols: usize, out: &mut [F]) {
    for (j, &xv) in x.iter().enumerate() {
        if xv != F::zero() {
            axpy(xv, &w[j * cols..(j + 1) * cols], out);
        }
    }
}

/// `out[j] = W[j, :] · y` with `W` stored `len(out) x len(y)`.
#[inline]
fn mat_vec<F: Real>(w: &[F], y: &[F], out: &mut [F]) {
    let cols = y.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(&w[j * cols..(j + 1) * cols], y);
    }
}

/// `C (m x n) = A (m x k) B (k x n) + beta C`.
fn gemm_nn<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], beta: F, c: &mut [F]) {
    F::gemm(m, k, n, F::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `C (m x n) = A^T B + beta C` with `A` stored `k x m`.
fn gemm_tn<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], beta: F, c: &mut [F]) {
    if k == 0 {
        return;
    }
    F::gemm(m, k, n, F::one(), a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `C (m x n) = A B^T + beta C` with `B` stored `n x k`.
fn gemm_nt<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], beta: F, c: &mut [F]) {
    F::gemm(m, k, n, F::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

fn col_sums<F: Real>(rows: usize, cols: usize, m: &[F], out: &mut [F]) {
    for t in 0..rows {
        for (o, &v) in out.iter_mut().zip(&m[t * cols..(t + 1) * cols]) {
            *o += v;
        }
    }
}

impl<F: Real> Network<F> {
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        Ok(Self {
            params: vec![F::zero(); layout.total],
            spec,
            layout,
            id: fresh_id(),
        })
    }

    /// Weights uniform in `(-0.05, 0.05)`, biases zero, forget-gate bias 1.
    pub fn init(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let h = net.spec.hidden;
        let mut is_bias = vec![false; net.layout.total];
        for layer in &net.layout.layers {
            is_bias[layer.bias..layer.bias + 4 * h].iter_mut().for_each(|b| *b = true);
        }
        let ob = net.layout.output_bias;
        is_bias[ob..ob + net.spec.output_dim].iter_mut().for_each(|b| *b = true);
        for (p, &bias) in net.params.iter_mut().zip(&is_bias) {
            if !bias {
                *p = F::from_f64_lossy(rng.gen_range(-0.05..0.05));
            }
        }
        for layer in net.layout.layers.clone() {
            for v in &mut net.params[layer.bias + h..layer.bias + 2 * h] {
                *v = F::one();
            }
        }
        Ok(net)
    }

    pub fn from_params(spec: ModelSpec, params: Vec<F>) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        if params.len() != layout.total {
            return Err(NetError::Dimension(format!(
                "parameter vector has {} entries, spec needs {}",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite);
        }
        Ok(Self {
            spec,
            layout,
            params,
            id: fresh_id(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    /// Mutable parameters; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [F] {
        self.id = fresh_id();
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| G::from_f64_lossy(v.to_f64_lossy())).collect(),
            id: fresh_id(),
        }
    }

    pub fn forward_features(&self, x: &FeatureSequence) -> Result<Pass<F>> {
        self.forward(&x.frames().map(|v| F::from_f64_lossy(v as f64)))
    }

    pub fn posteriors(&self, x: &FeatureSequence) -> Result<Posteriorgram> {
        Ok(self.forward_features(x)?.posteriors())
    }

    pub fn forward(&self, x: &Matrix<F>) -> Result<Pass<F>> {
        if x.cols() != self.spec.input_dim {
            return Err(NetError::Dimension(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.spec.input_dim
            )));
        }
        let t = x.rows();
        let mut layers: Vec<LayerCache<F>> = Vec::with_capacity(self.spec.layers);
        for li in 0..self.spec.layers {
            let input = if li == 0 { x.as_slice() } else { &layers[li - 1].r };
            let lc = self.forward_layer(li, input, t);
            layers.push(lc);
        }
        let r_last: &[F] = layers.last().map_or(&[], |l| &l.r);
        let out = self.layout.output;
        let n_out = self.spec.output_dim;
        let mut logits = vec![F::zero(); t * n_out];
        for row in logits.chunks_mut(n_out.max(1)) {
            row.copy_from_slice(&self.params[self.layout.output_bias..self.layout.output_bias + n_out]);
        }
        let w = &self.params[out.first()];
        let mut out_mid = Vec::new();
        match out.rank {
            None => gemm_nn(t, out.rows, n_out, r_last, w, F::one(), &mut logits),
            Some(k) => {
                out_mid = vec![F::zero(); t * k];
                gemm_nn(t, out.rows, k, r_last, w, F::zero(), &mut out_mid);
                gemm_nn(t, k, n_out, &out_mid, &self.params[out.second()], F::one(), &mut logits);
            }
        }
        Ok(Pass {
            logits: Matrix::from_vec(t, n_out, logits),
            cache: Cache {
                net_id: self.id,
                frames: t,
                input: x.as_slice().to_vec(),
                layers,
                out_mid,
            },
        })
    }

    fn forward_layer(&self, li: usize, x: &[F], t_len: usize) -> LayerCache<F> {
        let layer = &self.layout.layers[li];
        let h = self.spec.hidden;
        let rd = self.spec.recurrent_dim();
        let nin = layer.input_dim;
        let g = layer.gates;
        let q = g.inner();
        let a = &self.params[g.first()];
        let (a_x, a_r) = a.split_at(nin * q);
        let b = &self.params[g.second()];
        let bias = &self.params[layer.bias..layer.bias + 4 * h];
        let peep = layer.peepholes.map(|p| &self.params[p..p + 3 * h]);

        let mut pre = vec![F::zero(); t_len * q];
        gemm_nn(t_len, nin, q, x, a_x, F::zero(), &mut pre);

        let mut acts = vec![F::zero(); t_len * 4 * h];
        let mut c = vec![F::zero(); t_len * h];
        let mut tanh_c = vec![F::zero(); t_len * h];
        let mut m = vec![F::zero(); t_len * h];
        let mut r = vec![F::zero(); t_len * rd];
        let proj_rank = layer.projection.and_then(|p| p.rank);
        let mut proj_mid = vec![F::zero(); t_len * proj_rank.unwrap_or(0)];

        let zero_h = vec![F::zero(); h];
        let zero_r = vec![F::zero(); rd];
        let mut z = vec![F::zero(); 4 * h];
        for t in 0..t_len {
            let (r_done, r_rest) = r.split_at_mut(t * rd);
            let r_prev: &[F] = if t == 0 { &zero_r } else { &r_done[(t - 1) * rd..] };
            let pre_t = &mut pre[t * q..(t + 1) * q];
            vec_mat(r_prev, a_r, q, pre_t);
            z.copy_from_slice(bias);
            if g.rank.is_some() {
                vec_mat(pre_t, b, 4 * h, &mut z);
            } else {
                for (zv, &p) in z.iter_mut().zip(pre_t.iter()) {
                    *zv += p;
                }
            }

            let (c_done, c_rest) = c.split_at_mut(t * h);
            let c_prev: &[F] = if t == 0 { &zero_h } else { &c_done[(t - 1) * h..] };
            let c_t = &mut c_rest[..h];
            let act = &mut acts[t * 4 * h..(t + 1) * 4 * h];
            let tc = &mut tanh_c[t * h..(t + 1) * h];
            let m_t = &mut m[t * h..(t + 1) * h];
            for j in 0..h {
                let (pi, pf, po) = match peep {
                    Some(p) => (p[j], p[h + j], p[2 * h + j]),
                    None => (F::zero(), F::zero(), F::zero()),
                };
                let i = sigmoid(z[j] + pi * c_prev[j]);
                let f = sigmoid(z[h + j] + pf * c_prev[j]);
                let gv = z[2 * h + j].tanh();
                let cv = f * c_prev[j] + i * gv;
                let o = sigmoid(z[3 * h + j] + po * cv);
                let tcv = cv.tanh();
                act[j] = i;
                act[h + j] = f;
                act[2 * h + j] = gv;
                act[3 * h + j] = o;
                c_t[j] = cv;
                tc[j] = tcv;
                m_t[j] = o * tcv;
            }

            let r_t = &mut r_rest[..rd];
            match layer.projection {
                None => r_t.copy_from_slice(m_t),
                Some(p) => match p.rank {
                    None => vec_mat(m_t, &self.params[p.first()], p.cols, r_t),
                    Some(k) => {
                        let mid = &mut proj_mid[t * k..(t + 1) * k];
                        vec_mat(m_t, &self.params[p.first()], k, mid);
                        vec_mat(mid, &self.params[p.second()], p.cols, r_t);
                    }
                },
            }
        }
        LayerCache {
            pre,
            acts,
            c,
            tanh_c,
            m,
            proj_mid,
            r,
        }
    }

    /// Gradient of the loss w.r.t. every parameter, in parameter layout.
    pub fn backward(&self, pass: &Pass<F>, upstream: Upstream<'_>) -> Result<Vec<F>> {
        let cache = &pass.cache;
        if cache.net_id != self.id {
            return Err(NetError::StaleCache);
        }
        let t_len = cache.frames;
        let n_out = self.spec.output_dim;
        let dy: Vec<F> = match upstream {
            Upstream::Logits(g) => {
                check_shape(g, t_len, n_out)?;
                g.as_slice().iter().map(|&v| F::from_f64_lossy(v)).collect()
            }
            Upstream::Posteriors(g) => {
                check_shape(g, t_len, n_out)?;
                let logits = pass.logits_f64();
                let mut p = vec![0.0; n_out];
                let mut out = Vec::with_capacity(t_len * n_out);
                for t in 0..t_len {
                    softmax_row(logits.row(t), &mut p);
                    let gt = g.row(t);
                    let inner: f64 = gt.iter().zip(&p).map(|(a, b)| a * b).sum();
                    out.extend(p.iter().zip(gt).map(|(pj, gj)| F::from_f64_lossy(pj * (gj - inner))));
                }
                out
            }
        };

        let mut grad = vec![F::zero(); self.layout.total];
        let rd = self.spec.recurrent_dim();
        let r_last = &cache.layers.last().expect("at least one layer").r;
        let out = self.layout.output;
        let mut d_r = vec![F::zero(); t_len * rd];
        match out.rank {
            None => {
                gemm_tn(rd, t_len, n_out, r_last, &dy, F::zero(), &mut grad[out.first()]);
                gemm_nt(t_len, n_out, rd, &dy, &self.params[out.first()], F::zero(), &mut d_r);
            }
            Some(k) => {
                let mut d_mid = vec![F::zero(); t_len * k];
                gemm_tn(k, t_len, n_out, &cache.out_mid, &dy, F::zero(), &mut grad[out.second()]);
                gemm_nt(t_len, n_out, k, &dy, &self.params[out.second()], F::zero(), &mut d_mid);
                gemm_tn(rd, t_len, k, r_last, &d_mid, F::zero(), &mut grad[out.first()]);
                gemm_nt(t_len, k, rd, &d_mid, &self.params[out.first()], F::zero(), &mut d_r);
            }
        }
        let ob = self.layout.output_bias;
        col_sums(t_len, n_out, &dy, &mut grad[ob..ob + n_out]);

        for li in (0..self.spec.layers).rev() {
            let input: &[F] = if li == 0 { &cache.input } else { &cache.layers[li - 1].r };
            d_r = self.backward_layer(li, &cache.layers[li], input, t_len, &d_r, &mut grad, li > 0);
        }
        Ok(grad)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_layer(
        &self,
        li: usize,
        lc: &LayerCache<F>,
        x: &[F],
        t_len: usize,
        d_r_above: &[F],
        grad: &mut [F],
        need_dx: bool,
    ) -> Vec<F> {
        let layer = &self.layout.layers[li];
        let h = self.spec.hidden;
        let rd = self.spec.recurrent_dim();
        let nin = layer.input_dim;
        let g = layer.gates;
        let q = g.inner();
        let a = &self.params[g.first()];
        let (a_x, a_r) = a.split_at(nin * q);
        let b = &self.params[g.second()];
        let peep = layer.peepholes.map(|p| &self.params[p..p + 3 * h]);

        let mut d_pre = vec![F::zero(); t_len * q];
        let mut d_z = vec![F::zero(); t_len * 4 * h];
        let mut d_rt_all = vec![F::zero(); t_len * rd];
        let proj_rank = layer.projection.and_then(|p| p.rank);
        let mut d_mid_all = vec![F::zero(); t_len * proj_rank.unwrap_or(0)];
        let mut d_peep = vec![F::zero(); if peep.is_some() { 3 * h } else { 0 }];

        let mut dr_rec = vec![F::zero(); rd];
        let mut dc_next = vec![F::zero(); h];
        let mut dm = vec![F::zero(); h];
        let mut dc_prev = vec![F::zero(); h];
        let zero_h = vec![F::zero(); h];

        for t in (0..t_len).rev() {
            let drt = &mut d_rt_all[t * rd..(t + 1) * rd];
            for ((o, &a), &b) in drt.iter_mut().zip(&d_r_above[t * rd..(t + 1) * rd]).zip(&dr_rec) {
                *o = a + b;
            }
            match layer.projection {
                None => dm.copy_from_slice(drt),
                Some(p) => match p.rank {
                    None => mat_vec(&self.params[p.first()], drt, &mut dm),
                    Some(k) => {
                        let d_mid = &mut d_mid_all[t * k..(t + 1) * k];
                        mat_vec(&self.params[p.second()], drt, d_mid);
                        mat_vec(&self.params[p.first()], d_mid, &mut dm);
                    }
                },
            }

            let act = &lc.acts[t * 4 * h..(t + 1) * 4 * h];
            let c_t = &lc.c[t * h..(t + 1) * h];
            let tc = &lc.tanh_c[t * h..(t + 1) * h];
            let c_prev: &[F] = if t == 0 { &zero_h } else { &lc.c[(t - 1) * h..t * h] };
            let dz = &mut d_z[t * 4 * h..(t + 1) * 4 * h];
            let one = F::one();
            for j in 0..h {
                let (i, f, gv, o) = (act[j], act[h + j], act[2 * h + j], act[3 * h + j]);
                let (pi, pf, po) = match peep {
                    Some(p) => (p[j], p[h + j], p[2 * h + j]),
                    None => (F::zero(), F::zero(), F::zero()),
                };
                let d_o = dm[j] * tc[j];
                let dzo = d_o * o * (one - o);
                let dc = dc_next[j] + dm[j] * o * (one - tc[j] * tc[j]) + dzo * po;
                let dzi = dc * gv * i * (one - i);
                let dzf = dc * c_prev[j] * f * (one - f);
                let dzg = dc * i * (one - gv * gv);
                dc_prev[j] = dc * f + dzi * pi + dzf * pf;
                if !d_peep.is_empty() {
                    d_peep[j] += dzi * c_prev[j];
                    d_peep[h + j] += dzf * c_prev[j];
                    d_peep[2 * h + j] += dzo * c_t[j];
                }
                dz[j] = dzi;
                dz[h + j] = dzf;
                dz[2 * h + j] = dzg;
                dz[3 * h + j] = dzo;
            }
            std::mem::swap(&mut dc_next, &mut dc_prev);

            let dp = &mut d_pre[t * q..(t + 1) * q];
            if g.rank.is_some() {
                mat_vec(b, dz, dp);
            } else {
                dp.copy_from_slice(dz);
            }
            mat_vec(a_r, dp, &mut dr_rec);
        }

        // Weight gradients, batched over time.
        let first = g.first();
        let (gx, gr) = grad[first].split_at_mut(nin * q);
        gemm_tn(nin, t_len, q, x, &d_pre, F::zero(), gx);
        if t_len > 1 {
            gemm_tn(rd, t_len - 1, q, &lc.r[..(t_len - 1) * rd], &d_pre[q..], F::zero(), gr);
        }
        if g.rank.is_some() {
            gemm_tn(q, t_len, 4 * h, &lc.pre, &d_z, F::zero(), &mut grad[g.second()]);
        }
        col_sums(t_len, 4 * h, &d_z, &mut grad[layer.bias..layer.bias + 4 * h]);
        if let Some(p) = layer.peepholes {
            grad[p..p + 3 * h].copy_from_slice(&d_peep);
        }
        if let Some(p) = layer.projection {
            project_grads(&p, lc, &d_rt_all, &d_mid_all, t_len, h, grad);
        }

        if !need_dx {
            return Vec::new();
        }
        let mut dx = vec![F::zero(); t_len * nin];
        gemm_nt(t_len, q, nin, &d_pre, a_x, F::zero(), &mut dx);
        dx
    }
}

fn project_grads<F: Real>(
    p: &Affine,
    lc: &LayerCache<F>,
    d_rt: &[F],
    d_mid: &[F],
    t_len: usize,
    h: usize,
    grad: &mut [F],
) {
    match p.rank {
        None => gemm_tn(h, t_len, p.cols, &lc.m, d_rt, F::zero(), &mut grad[p.first()]),
        Some(k) => {
            gemm_tn(h, t_len, k, &lc.m, d_mid, F::zero(), &mut grad[p.first()]);
            gemm_tn(k, t_len, p.cols, &lc.proj_mid, d_rt, F::zero(), &mut grad[p.second()]);
        }
    }
}

fn check_shape(g: &Matrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if g.rows() != rows || g.cols() != cols {
        return Err(NetError::Dimension(format!(
            "upstream gradient is {}x{}, forward produced {rows}x{cols}",
            g.rows(),
            g.cols()
        )));
    }
    Ok(())
}
