//! Flat parameter layout.
//!
//! Tensors appear in this order, each row-major with rows indexing inputs:
//!
//! ```text
//! for each layer l:
//!   gates      (in_l + r) x 4h      or factors A (in_l + r) x k, B k x 4h
//!   gate bias  4h                   gate order i, f, g, o
//!   peepholes  3h                   i, f, o (only with peepholes)
//!   projection h x p                or factors A h x k, B k x p (only with p > 0)
//! output       r x out              or factors A r x k, B k x out
//! output bias  out
//! ```
//!
//! where `r` is the recurrent width (`p`, or `h` without projection).

use super::spec::{BlockId, ModelSpec};

pub const LAYOUT_VERSION: u32 = 1;

/// Placement of one affine block inside the parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub rows: usize,
    pub cols: usize,
    pub rank: Option<usize>,
    pub offset: usize,
}

impl Affine {
    fn new(spec: &ModelSpec, id: BlockId, offset: usize) -> Self {
        let (rows, cols) = spec.block_shape(id);
        Self {
            rows,
            cols,
            rank: spec.rank(id),
            offset,
        }
    }

    pub fn len(&self) -> usize {
        super::spec::block_params(self.rows, self.cols, self.rank)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of the first factor's output (`k`, or `cols` when dense).
    pub fn inner(&self) -> usize {
        self.rank.unwrap_or(self.cols)
    }

    /// Dense weight, or the first factor when factorized.
    pub fn first(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.inner()
    }

    /// Second factor; empty when dense.
    pub fn second(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.rows * self.inner();
        match self.rank {
            Some(k) => start..start + k * self.cols,
            None => start..start,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub input_dim: usize,
    pub gates: Affine,
    pub bias: usize,
    pub peepholes: Option<usize>,
    pub projection: Option<Affine>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerLayout>,
    pub output: Affine,
    pub output_bias: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(spec: &ModelSpec) -> Self {
        let h = spec.hidden;
        let mut off = 0;
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let gates = Affine::new(spec, BlockId::Gates(l), off);
            off += gates.len();
            let bias = off;
            off += 4 * h;
            let peepholes = spec.peepholes.then(|| {
                let p = off;
                off += 3 * h;
                p
            });
            let projection = (spec.projection > 0).then(|| {
                let a = Affine::new(spec, BlockId::Projection(l), off);
                off += a.len();
                a
            });
            layers.push(LayerLayout {
                input_dim: spec.layer_input_dim(l),
                gates,
                bias,
                peepholes,
                projection,
            });
        }
        let output = Affine::new(spec, BlockId::Output, off);
        off += output.len();
        let output_bias = off;
        off += spec.output_dim;
        Self {
            layers,
            output,
            output_bias,
            total: off,
        }
    }

    pub fn block(&self, id: BlockId) -> Option<Affine> {
        match id {
            BlockId::Gates(l) => self.layers.get(l).map(|x| x.gates),
            BlockId::Projection(l) => self.layers.get(l).and_then(|x| x.projection),
            BlockId::Output => Some(self.output),
        }
    }

    /// Named `(name, offset, len)` segments in storage order.
    pub fn segments(&self, spec: &ModelSpec) -> Vec<(String, usize, usize)> {
        let h = spec.hidden;
        let mut out = Vec::new();
        let push_affine = |out: &mut Vec<_>, name: String, a: &Affine| match a.rank {
            None => out.push((name, a.offset, a.len())),
            Some(_) => {
                let (f, s) = (a.first(), a.second());
                out.push((format!("{name}.a"), f.start, f.len()));
                out.push((format!("{name}.b"), s.start, s.len()));
            }
        };
        for (l, layer) in self.layers.iter().enumerate() {
            push_affine(&mut out, BlockId::Gates(l).to_string(), &layer.gates);
            out.push((format!("lstm{l}.bias"), layer.bias, 4 * h));
            if let Some(p) = layer.peepholes {
                out.push((format!("lstm{l}.peephole"), p, 3 * h));
            }
            if let Some(p) = &layer.projection {
                push_affine(&mut out, BlockId::Projection(l).to_string(), p);
            }
        }
        push_affine(&mut out, "output".into(), &self.output);
        out.push(("output.bias".into(), self.output_bias, spec.output_dim));
        out
    }
}
