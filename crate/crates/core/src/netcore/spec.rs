use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{NetError, Result};

/// Architecture of an LSTM network with optional linear projection and an
/// affine softmax output layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub layers: usize,
    /// LSTM cells per layer.
    pub hidden: usize,
    /// Projection size; 0 disables the projection.
    pub projection: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub peepholes: bool,
    /// Low-rank factorization per affine block, keyed by [`BlockId`] name.
    #[serde(default)]
    pub svd_rank: BTreeMap<String, usize>,
}

/// An affine weight block that can be factorized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockId {
    /// `(input + recurrent) x 4·hidden` gate weights of one layer.
    Gates(usize),
    /// `hidden x projection` weights of one layer.
    Projection(usize),
    /// `recurrent x output` weights of the softmax layer.
    Output,
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::Gates(l) => write!(f, "lstm{l}.gates"),
            BlockId::Projection(l) => write!(f, "lstm{l}.proj"),
            BlockId::Output => write!(f, "output"),
        }
    }
}

impl FromStr for BlockId {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "output" {
            return Ok(BlockId::Output);
        }
        let bad = || NetError::Spec(format!("unknown block name `{s}`"));
        let rest = s.strip_prefix("lstm").ok_or_else(bad)?;
        let (idx, kind) = rest.split_once('.').ok_or_else(bad)?;
        let l: usize = idx.parse().map_err(|_| bad())?;
        match kind {
            "gates" => Ok(BlockId::Gates(l)),
            "proj" => Ok(BlockId::Projection(l)),
            _ => Err(bad()),
        }
    }
}

impl ModelSpec {
    pub fn new(input_dim: usize, layers: usize, hidden: usize, projection: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            layers,
            hidden,
            projection,
            output_dim,
            peepholes: false,
            svd_rank: BTreeMap::new(),
        }
    }

    pub fn with_peepholes(mut self, on: bool) -> Self {
        self.peepholes = on;
        self
    }

    pub fn with_rank(mut self, block: BlockId, rank: usize) -> Self {
        self.svd_rank.insert(block.to_string(), rank);
        self
    }

    /// Large keyword-spotting model: 8 stacked 80-dim frames in, 5 LSTM
    /// layers of 1024 cells projected to 512, 5 outputs.
    pub fn kws_large() -> Self {
        Self::new(640, 5, 1024, 512, 5).with_peepholes(true)
    }

    /// Small keyword-spotting model before factorization: 3 layers of 256
    /// cells projected to 128.
    pub fn kws_small() -> Self {
        Self::new(640, 3, 256, 128, 5).with_peepholes(true)
    }

    /// Width of the recurrent state fed back and passed upward.
    pub fn recurrent_dim(&self) -> usize {
        if self.projection > 0 {
            self.projection
        } else {
            self.hidden
        }
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.recurrent_dim()
        }
    }

    /// All affine blocks present in this architecture.
    pub fn blocks(&self) -> Vec<BlockId> {
        let mut out = Vec::new();
        for l in 0..self.layers {
            out.push(BlockId::Gates(l));
            if self.projection > 0 {
                out.push(BlockId::Projection(l));
            }
        }
        out.push(BlockId::Output);
        out
    }

    /// `(inputs, outputs)` of a block.
    pub fn block_shape(&self, block: BlockId) -> (usize, usize) {
        match block {
            BlockId::Gates(l) => (self.layer_input_dim(l) + self.recurrent_dim(), 4 * self.hidden),
            BlockId::Projection(_) => (self.hidden, self.projection),
            BlockId::Output => (self.recurrent_dim(), self.output_dim),
        }
    }

    pub fn rank(&self, block: BlockId) -> Option<usize> {
        self.svd_rank.get(&block.to_string()).copied()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.layers == 0 || self.hidden == 0 || self.output_dim == 0 {
            return Err(NetError::Spec(
                "input_dim, layers, hidden and output_dim must all be at least 1".into(),
            ));
        }
        let blocks = self.blocks();
        for (name, &rank) in &self.svd_rank {
            let id: BlockId = name.parse()?;
            if !blocks.contains(&id) {
                return Err(NetError::Spec(format!("block `{name}` does not exist in this spec")));
            }
            let (m, n) = self.block_shape(id);
            if rank == 0 || rank > m.min(n) {
                return Err(NetError::Rank {
                    block: name.clone(),
                    rank,
                    max: m.min(n),
                });
            }
        }
        Ok(())
    }
}

/// Weights in one affine block (biases excluded).
pub fn block_params(m: usize, n: usize, rank: Option<usize>) -> usize {
    match rank {
        Some(k) => k * (m + n),
        None => m * n,
    }
}

/// Exact parameter count:
/// per layer `4h(in+p)` gate weights (or `k(4h+in+p)` factorized), `4h`
/// gate biases, `3h` peepholes when enabled and `h·p` projection weights;
/// then `p·out + out` for the output layer.
pub fn param_count(spec: &ModelSpec) -> usize {
    let h = spec.hidden;
    let mut total = 0;
    for block in spec.blocks() {
        let (m, n) = spec.block_shape(block);
        total += block_params(m, n, spec.rank(block));
    }
    total += spec.layers * 4 * h;
    if spec.peepholes {
        total += spec.layers * 3 * h;
    }
    total + spec.output_dim
}

/// Largest uniform rank for `blocks` that keeps the model within `budget`
/// parameters.
pub fn uniform_rank_for_budget(spec: &ModelSpec, blocks: &[BlockId], budget: usize) -> Option<ModelSpec> {
    let max_rank = blocks
        .iter()
        .map(|&b| {
            let (m, n) = spec.block_shape(b);
            m.min(n)
        })
        .min()?;
    let with = |k: usize| {
        let mut s = spec.clone();
        for &b in blocks {
            s.svd_rank.insert(b.to_string(), k);
        }
        s
    };
    (1..=max_rank).rev().map(with).find(|s| param_count(s) <= budget)
}
