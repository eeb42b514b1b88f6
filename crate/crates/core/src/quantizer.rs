//! Single-layer vector quantizer whose codes are a frozen random basis
//! passed through a learnable linear map, `C = E·W`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensorcore::{kernels, Graph, ParamStore, Tensor, Var};

pub const BASIS: &str = "quantizer.basis";
pub const MAP: &str = "quantizer.map";
pub const COMMIT_WEIGHT: f64 = 0.25;

/// Frozen basis `E [K×D]`, learnable map `W [D×D]` and the derived codes.
/// Build a fresh one after every update of `W`.
#[derive(Debug, Clone)]
pub struct Codebook {
    basis: Tensor,
    map: Tensor,
    codes: Tensor,
    code_norms: Vec<f64>,
}

impl Codebook {
    /// Inserts `E ~ N(0, 1/D)` and `W = I` into `store`.
    pub fn init(store: &mut ParamStore, k: usize, d: usize, rng: &mut impl Rng) -> Result<()> {
        if k == 0 || d == 0 {
            return Err(Error::Config(format!("codebook needs K, D >= 1 (got {k}, {d})")));
        }
        let dist = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("positive std");
        let basis = (0..k * d).map(|_| dist.sample(rng) as f32).collect();
        store.insert(BASIS, vec![k, d], basis)?;
        let mut map = vec![0.0f32; d * d];
        for i in 0..d {
            map[i * d + i] = 1.0;
        }
        store.insert(MAP, vec![d, d], map)
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        Codebook::new(store.tensor(BASIS)?, store.tensor(MAP)?)
    }

    pub fn new(basis: Tensor, map: Tensor) -> Result<Self> {
        let (k, d) = basis.dims2()?;
        if map.shape() != [d, d] {
            return Err(Error::dim("codebook", format!("map {:?} for D = {d}", map.shape())));
        }
        let codes = Tensor::new(vec![k, d], kernels::matmul(basis.data(), map.data(), k, d, d))?;
        let code_norms = (0..k).map(|i| kernels::dot(codes.row(i), codes.row(i))).collect();
        Ok(Codebook {
            basis,
            map,
            codes,
            code_norms,
        })
    }

    pub fn k(&self) -> usize {
        self.codes.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.codes.shape()[1]
    }

    pub fn codes(&self) -> &Tensor {
        &self.codes
    }

    pub fn basis(&self) -> &Tensor {
        &self.basis
    }

    pub fn map(&self) -> &Tensor {
        &self.map
    }

    /// Index of the code nearest to `z`, lowest index on ties.
    ///
    /// The expanded form `‖z‖² − 2z·c + ‖c‖²` ranks all codes; everything
    /// within rounding distance of the best is re-scored with the exact
    /// squared difference so ties resolve the same way a plain scan does.
    pub fn nearest(&self, z: &[f64]) -> usize {
        let zz = kernels::dot(z, z);
        let approx: Vec<f64> = (0..self.k())
            .map(|i| zz - 2.0 * kernels::dot(z, self.codes.row(i)) + self.code_norms[i])
            .collect();
        let best = approx.iter().copied().fold(f64::INFINITY, f64::min);
        let slack = 1e-9 * (1.0 + zz + best.abs());
        let mut winner = usize::MAX;
        let mut winner_d = f64::INFINITY;
        for (i, &a) in approx.iter().enumerate() {
            if a <= best + slack {
                let exact = squared_distance(z, self.codes.row(i));
                if exact < winner_d {
                    winner = i;
                    winner_d = exact;
                }
            }
        }
        winner
    }

    /// Nearest-code tokens and the selected codes for a `[T×D]` latent.
    pub fn quantize(&self, z: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        let (t, d) = z.dims2()?;
        if d != self.d() {
            return Err(Error::dim("quantize", format!("latent dim {d}, codebook dim {}", self.d())));
        }
        let tokens: Vec<usize> = (0..t).map(|i| self.nearest(z.row(i))).collect();
        let z_q = self.lookup(&tokens)?;
        Ok((tokens, z_q))
    }

    /// Code rows for `tokens`.
    pub fn lookup(&self, tokens: &[usize]) -> Result<Tensor> {
        let d = self.d();
        let mut data = Vec::with_capacity(tokens.len() * d);
        for &tok in tokens {
            if tok >= self.k() {
                return Err(Error::Index {
                    index: tok,
                    size: self.k(),
                });
            }
            data.extend_from_slice(self.codes.row(tok));
        }
        Tensor::new(vec![tokens.len(), d], data)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Graph-side quantization result.
#[derive(Debug, Clone)]
pub struct Quantized {
    pub tokens: Vec<usize>,
    /// Selected codes as a function of the map `W` (gradient reaches `W`).
    pub codes: Var,
    /// Straight-through output: value of the codes, gradient straight to `z`.
    pub ste: Var,
}

/// Quantizes graph latent `z` against codes `basis · map`.
pub fn quantize_graph(g: &mut Graph, z: Var, basis: Var, map: Var) -> Result<Quantized> {
    let cb = Codebook::new(g.value(basis).clone(), g.value(map).clone())?;
    let (tokens, z_q) = cb.quantize(g.value(z))?;
    let all = g.matmul(basis, map)?;
    let codes = g.gather_rows(all, &tokens)?;
    let ste = g.straight_through(z, z_q)?;
    Ok(Quantized { tokens, codes, ste })
}

/// Forward value of the selected codes; gradient flows to `z` only.
pub fn ste_quantize(g: &mut Graph, z: Var, cb: &Codebook) -> Result<Var> {
    let (_, z_q) = cb.quantize(g.value(z))?;
    g.straight_through(z, z_q)
}

#[derive(Debug, Clone, Copy)]
pub struct VqLoss {
    pub total: Var,
    pub codebook: Var,
    pub commit: Var,
}

/// `codebook = mean|sg(z) − z_q|`, `commit = mean|z − sg(z_q)|`,
/// `total = codebook + 0.25·commit`.
pub fn vq_loss(g: &mut Graph, z: Var, z_q: Var) -> Result<VqLoss> {
    if g.shape(z) != g.shape(z_q) {
        return Err(Error::dim("vq_loss", "z and z_q shapes differ"));
    }
    let zs = g.detach(z);
    let qs = g.detach(z_q);
    let d = g.sub(zs, z_q)?;
    let d = g.abs(d)?;
    let codebook = g.mean(d)?;
    let c = g.sub(z, qs)?;
    let c = g.abs(c)?;
    let commit = g.mean(c)?;
    let weighted = g.scale(commit, COMMIT_WEIGHT)?;
    let total = g.add(codebook, weighted)?;
    Ok(VqLoss {
        total,
        codebook,
        commit,
    })
}

/// Token histogram over `K` codes.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageStats {
    pub histogram: Vec<u64>,
    pub total: u64,
}

impl UsageStats {
    pub fn new(k: usize) -> Self {
        UsageStats {
            histogram: vec![0; k],
            total: 0,
        }
    }

    pub fn add(&mut self, tokens: &[usize]) -> Result<()> {
        let k = self.histogram.len();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= k) {
            return Err(Error::Index { index: bad, size: k });
        }
        for &t in tokens {
            self.histogram[t] += 1;
        }
        self.total += tokens.len() as u64;
        Ok(())
    }

    pub fn distinct(&self) -> usize {
        self.histogram.iter().filter(|&&c| c > 0).count()
    }

    pub fn usage(&self) -> f64 {
        self.distinct() as f64 / self.histogram.len() as f64
    }

    /// `exp` of the empirical entropy; 1 for an empty histogram.
    pub fn perplexity(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        let n = self.total as f64;
        let h: f64 = self
            .histogram
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum();
        h.exp()
    }
}

pub fn usage_stats(tokens: &[usize], k: usize) -> Result<UsageStats> {
    let mut s = UsageStats::new(k);
    s.add(tokens)?;
    Ok(s)
}
