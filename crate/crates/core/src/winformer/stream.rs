use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::tensorcore::{kernels, ParamStore, Tensor};
use crate::winformer::block::{block_prefix, LN_EPS};
use crate::winformer::{BlockWeights, StackConfig};

/// Per-layer ring buffers holding the last `left − 1` rotated keys and
/// values, plus the absolute index of the next frame.
#[derive(Debug, Clone)]
pub struct StreamCache {
    layers: Vec<VecDeque<(Vec<f64>, Vec<f64>)>>,
    capacity: usize,
    position: usize,
}

impl StreamCache {
    pub fn new(layers: usize, left: usize) -> Self {
        StreamCache {
            layers: vec![VecDeque::with_capacity(left.saturating_sub(1)); layers],
            capacity: left.saturating_sub(1),
            position: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// Cached rows per layer.
    pub fn lens(&self) -> Vec<usize> {
        self.layers.iter().map(VecDeque::len).collect()
    }

    /// Total cached values (keys and values, every layer).
    pub fn cached_values(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.iter())
            .map(|(k, v)| k.len() + v.len())
            .sum()
    }

    fn check(&self) -> Result<()> {
        let expect = self.position.min(self.capacity);
        if self.layers.iter().any(|l| l.len() != expect) {
            return Err(Error::Contract(format!(
                "stream cache out of sync: position {} but layer lengths {:?}",
                self.position,
                self.lens()
            )));
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn corrupt_for_test(&mut self) {
        if let Some(layer) = self.layers.first_mut() {
            layer.pop_back();
        }
    }
}

/// Strictly causal stack evaluated one frame at a time. Produces the same
/// rows as [`crate::winformer::stack_forward`] run offline on the history.
#[derive(Debug, Clone)]
pub struct StreamingStack {
    cfg: StackConfig,
    blocks: Vec<BlockWeights<Tensor>>,
    norm_gamma: Tensor,
    norm_beta: Tensor,
    cache: StreamCache,
}

impl StreamingStack {
    pub fn new(params: &ParamStore, prefix: &str, cfg: StackConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.window.right != 0 {
            return Err(Error::Contract(
                "streaming stacks must be strictly causal (right = 0)".into(),
            ));
        }
        let blocks = (0..cfg.layers)
            .map(|i| BlockWeights::load(&block_prefix(prefix, i), |n| params.tensor(n)))
            .collect::<Result<_>>()?;
        Ok(StreamingStack {
            cfg,
            blocks,
            norm_gamma: params.tensor(&format!("{prefix}.norm.gamma"))?,
            norm_beta: params.tensor(&format!("{prefix}.norm.beta"))?,
            cache: StreamCache::new(cfg.layers, cfg.window.left),
        })
    }

    pub fn cache(&self) -> &StreamCache {
        &self.cache
    }

    #[cfg(test)]
    pub(crate) fn cache_mut(&mut self) -> &mut StreamCache {
        &mut self.cache
    }

    /// Pushes one `[H]` frame through every layer and the final norm.
    pub fn push(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() != self.cfg.hidden {
            return Err(Error::dim("stream_push", format!("frame of {} values", frame.len())));
        }
        self.cache.check()?;
        let pos = self.cache.position;
        let mut x = frame.to_vec();
        for (w, cache) in self.blocks.iter().zip(self.cache.layers.iter_mut()) {
            x = block_step(&x, w, &self.cfg, cache, self.cache.capacity, pos);
        }
        self.cache.position += 1;
        Ok(kernels::layer_norm_row(
            &x,
            self.norm_gamma.data(),
            self.norm_beta.data(),
            LN_EPS,
        ))
    }
}

fn block_step(
    x: &[f64],
    w: &BlockWeights<Tensor>,
    cfg: &StackConfig,
    cache: &mut VecDeque<(Vec<f64>, Vec<f64>)>,
    capacity: usize,
    pos: usize,
) -> Vec<f64> {
    let hd = cfg.hidden / cfg.heads;
    let h = kernels::layer_norm_row(x, w.ln1_gamma.data(), w.ln1_beta.data(), LN_EPS);
    let mut q = kernels::linear_row(&h, w.wq.data(), w.bq.data());
    let mut k = kernels::linear_row(&h, w.wk.data(), w.bk.data());
    let v = kernels::linear_row(&h, w.wv.data(), w.bv.data());
    if cfg.rotary {
        kernels::rope_row(&mut q, cfg.heads, pos, 1.0);
        kernels::rope_row(&mut k, cfg.heads, pos, 1.0);
    }
    let mut attn = vec![0.0; cfg.hidden];
    for head in 0..cfg.heads {
        let s = head * hd..(head + 1) * hd;
        let keys = cache
            .iter()
            .map(|(ck, _)| &ck[s.clone()])
            .chain(std::iter::once(&k[s.clone()]));
        let values = cache
            .iter()
            .map(|(_, cv)| &cv[s.clone()])
            .chain(std::iter::once(&v[s.clone()]));
        let (o, _) = kernels::attend(&q[s.clone()], keys, values);
        attn[s].copy_from_slice(&o);
    }
    let o = kernels::linear_row(&attn, w.wo.data(), w.bo.data());
    let x1: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
    let h2 = kernels::layer_norm_row(&x1, w.ln2_gamma.data(), w.ln2_beta.data(), LN_EPS);
    let f: Vec<f64> = kernels::linear_row(&h2, w.w1.data(), w.b1.data())
        .into_iter()
        .map(kernels::gelu)
        .collect();
    let f = kernels::linear_row(&f, w.w2.data(), w.b2.data());

    if capacity > 0 {
        if cache.len() == capacity {
            cache.pop_front();
        }
        cache.push_back((k, v));
    }
    x1.iter().zip(&f).map(|(a, b)| a + b).collect()
}
