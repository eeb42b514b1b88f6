use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensorcore::{Bound, Graph, ParamStore, Var};
use crate::winformer::attention::{rope, windowed_attention};
use crate::winformer::{SeqLayout, WindowSpec};

pub const LN_EPS: f64 = 1e-5;

/// Shape of one Transformer stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub window: WindowSpec,
    pub rotary: bool,
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden {} must be divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if !(self.hidden / self.heads).is_multiple_of(2) && self.rotary {
            return Err(Error::Config("rotary needs an even head dimension".into()));
        }
        self.window.validate()
    }
}

/// Weights of one pre-norm block, generic over how they are held: graph
/// handles for training, plain tensors for streaming.
#[derive(Debug, Clone)]
pub struct BlockWeights<T> {
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

impl<T> BlockWeights<T> {
    pub fn load(prefix: &str, mut fetch: impl FnMut(&str) -> Result<T>) -> Result<Self> {
        let mut f = |suffix: &str| fetch(&format!("{prefix}.{suffix}"));
        Ok(BlockWeights {
            ln1_gamma: f("ln1.gamma")?,
            ln1_beta: f("ln1.beta")?,
            wq: f("attn.wq")?,
            bq: f("attn.bq")?,
            wk: f("attn.wk")?,
            bk: f("attn.bk")?,
            wv: f("attn.wv")?,
            bv: f("attn.bv")?,
            wo: f("attn.wo")?,
            bo: f("attn.bo")?,
            ln2_gamma: f("ln2.gamma")?,
            ln2_beta: f("ln2.beta")?,
            w1: f("ffn.w1")?,
            b1: f("ffn.b1")?,
            w2: f("ffn.w2")?,
            b2: f("ffn.b2")?,
        })
    }
}

pub(crate) fn block_prefix(prefix: &str, i: usize) -> String {
    format!("{prefix}.block{i}")
}

fn normal_init(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f32> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}

/// Adds freshly initialized stack parameters under `prefix`: projections
/// N(0, 0.02²), biases zero, norm gains one.
pub fn init_stack(store: &mut ParamStore, prefix: &str, cfg: &StackConfig, rng: &mut impl Rng) -> Result<()> {
    cfg.validate()?;
    let h = cfg.hidden;
    let ff = 4 * h;
    for i in 0..cfg.layers {
        let p = block_prefix(prefix, i);
        store.insert(format!("{p}.ln1.gamma"), vec![h], vec![1.0; h])?;
        store.insert(format!("{p}.ln1.beta"), vec![h], vec![0.0; h])?;
        for name in ["wq", "wk", "wv", "wo"] {
            store.insert(format!("{p}.attn.{name}"), vec![h, h], normal_init(rng, h * h, 0.02))?;
        }
        for name in ["bq", "bk", "bv", "bo"] {
            store.insert(format!("{p}.attn.{name}"), vec![h], vec![0.0; h])?;
        }
        store.insert(format!("{p}.ln2.gamma"), vec![h], vec![1.0; h])?;
        store.insert(format!("{p}.ln2.beta"), vec![h], vec![0.0; h])?;
        store.insert(format!("{p}.ffn.w1"), vec![h, ff], normal_init(rng, h * ff, 0.02))?;
        store.insert(format!("{p}.ffn.b1"), vec![ff], vec![0.0; ff])?;
        store.insert(format!("{p}.ffn.w2"), vec![ff, h], normal_init(rng, ff * h, 0.02))?;
        store.insert(format!("{p}.ffn.b2"), vec![h], vec![0.0; h])?;
    }
    store.insert(format!("{prefix}.norm.gamma"), vec![h], vec![1.0; h])?;
    store.insert(format!("{prefix}.norm.beta"), vec![h], vec![0.0; h])?;
    Ok(())
}

/// One pre-norm block: `x + attn(ln(x))`, then `+ ffn(ln(·))`.
pub fn block_forward(
    g: &mut Graph,
    x: Var,
    w: &BlockWeights<Var>,
    cfg: &StackConfig,
    layout: SeqLayout,
) -> Result<Var> {
    let h = g.layer_norm(x, w.ln1_gamma, w.ln1_beta, LN_EPS)?;
    let mut q = g.linear(h, w.wq, w.bq)?;
    let mut k = g.linear(h, w.wk, w.bk)?;
    let v = g.linear(h, w.wv, w.bv)?;
    if cfg.rotary {
        q = rope(g, q, layout, cfg.heads)?;
        k = rope(g, k, layout, cfg.heads)?;
    }
    let a = windowed_attention(g, q, k, v, layout, cfg.heads, cfg.window)?;
    let o = g.linear(a, w.wo, w.bo)?;
    let x = g.add(x, o)?;
    let h = g.layer_norm(x, w.ln2_gamma, w.ln2_beta, LN_EPS)?;
    let f = g.linear(h, w.w1, w.b1)?;
    let f = g.gelu(f)?;
    let f = g.linear(f, w.w2, w.b2)?;
    g.add(x, f)
}

/// All blocks of the stack under `prefix` followed by the final layer norm.
pub fn stack_forward(
    g: &mut Graph,
    x: Var,
    params: &Bound,
    prefix: &str,
    cfg: &StackConfig,
    layout: SeqLayout,
) -> Result<Var> {
    let mut x = x;
    for i in 0..cfg.layers {
        let w = BlockWeights::load(&block_prefix(prefix, i), |n| params.get(n))?;
        x = block_forward(g, x, &w, cfg, layout)?;
    }
    let gamma = params.get(&format!("{prefix}.norm.gamma"))?;
    let beta = params.get(&format!("{prefix}.norm.beta"))?;
    g.layer_norm(x, gamma, beta, LN_EPS)
}
