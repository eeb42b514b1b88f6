//! Frame-masking Gaussian noise for training, and a Monte-Carlo check of
//! how such noise attenuates a plane-wave probe `cos(⟨ω,u⟩ + φ)`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// Masked frames are overwritten by fresh noise.
    Replacement,
    /// Masked frames get noise added on top.
    GatedAdditive,
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseModel::Replacement => "replacement",
            NoiseModel::GatedAdditive => "gated-additive",
        })
    }
}

impl FromStr for NoiseModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replacement" => Ok(NoiseModel::Replacement),
            "gated-additive" => Ok(NoiseModel::GatedAdditive),
            other => Err(Error::Config(format!("unknown noise model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub p: f64,
    pub sigma: f64,
    pub model: NoiseModel,
    pub active: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p: 0.2,
            sigma: 1.0,
            model: NoiseModel::Replacement,
            active: true,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("noise p = {} outside [0, 1]", self.p)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma = {} must be positive", self.sigma)));
        }
        Ok(())
    }
}

/// I.i.d. Bernoulli(`p`) frame mask.
pub fn sample_mask(frames: usize, p: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..frames).map(|_| rng.random::<f64>() < p).collect()
}

/// Mask and noise rows for a `[T×H]` input. Returns `None` when nothing
/// would change (inactive or `p = 0`), without touching the rng.
fn draw(rows: usize, hidden: usize, cfg: &NoiseConfig, rng: &mut impl Rng) -> Option<(Vec<bool>, Vec<f64>)> {
    if !cfg.active || cfg.p == 0.0 {
        return None;
    }
    let mask = sample_mask(rows, cfg.p, rng);
    let dist = Normal::new(0.0, cfg.sigma).expect("validated sigma");
    let mut noise = vec![0.0; rows * hidden];
    for (r, &m) in mask.iter().enumerate() {
        if m {
            for v in &mut noise[r * hidden..(r + 1) * hidden] {
                *v = dist.sample(rng);
            }
        }
    }
    Some((mask, noise))
}

fn apply(x: &Tensor, mask: &[bool], noise: &[f64], model: NoiseModel) -> Tensor {
    let (_, hidden) = x.last_dim_split();
    let mut out = x.clone();
    for (r, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let span = r * hidden..(r + 1) * hidden;
        for (o, n) in out.data_mut()[span.clone()].iter_mut().zip(&noise[span]) {
            *o = match model {
                NoiseModel::Replacement => *n,
                NoiseModel::GatedAdditive => *o + n,
            };
        }
    }
    out
}

/// Noisy copy of a `[T×H]` tensor. Unmasked rows are returned unchanged.
pub fn inject(x: &Tensor, cfg: &NoiseConfig, rng: &mut impl Rng) -> Result<Tensor> {
    cfg.validate()?;
    let (rows, hidden) = x.dims2()?;
    Ok(match draw(rows, hidden, cfg, rng) {
        None => x.clone(),
        Some((mask, noise)) => apply(x, &mask, &noise, cfg.model),
    })
}

/// Graph version of [`inject`]. The noise is a constant; replaced rows pass
/// no gradient back to `x`.
pub fn inject_graph(g: &mut Graph, x: Var, cfg: &NoiseConfig, rng: &mut impl Rng) -> Result<Var> {
    cfg.validate()?;
    let (rows, hidden) = g.value(x).dims2()?;
    let Some((mask, noise)) = draw(rows, hidden, cfg, rng) else {
        return Ok(x);
    };
    let value = apply(g.value(x), &mask, &noise, cfg.model);
    let model = cfg.model;
    g.custom("noise_inject", &[x], value, move |ctx| {
        let mut grad = ctx.grad.clone();
        if model == NoiseModel::Replacement {
            for (r, &m) in mask.iter().enumerate() {
                if m {
                    grad.data_mut()[r * hidden..(r + 1) * hidden].fill(0.0);
                }
            }
        }
        vec![Some(grad)]
    })
}

/// `(1 − p) + p·exp(−σ²ω²/2)`.
pub fn attenuation_factor(p: f64, sigma: f64, omega_norm: f64) -> f64 {
    (1.0 - p) + p * (-0.5 * sigma * sigma * omega_norm * omega_norm).exp()
}

/// Closed-form `E[cos(⟨ω, x̃⟩ + φ)]` under `model`.
pub fn expected_probe(model: NoiseModel, p: f64, sigma: f64, omega: &[f64], phi: f64, x: &[f64]) -> f64 {
    let wn = norm(omega);
    let clean = (dot(omega, x) + phi).cos();
    match model {
        NoiseModel::GatedAdditive => attenuation_factor(p, sigma, wn) * clean,
        NoiseModel::Replacement => (1.0 - p) * clean + p * (-0.5 * sigma * sigma * wn * wn).exp() * phi.cos(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub const MIN_MC_SAMPLES: usize = 10_000;

/// One row of an attenuation curve.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationRow {
    pub omega_norm: f64,
    pub p: f64,
    pub sigma: f64,
    pub model: NoiseModel,
    pub analytic: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub n: usize,
}

impl AttenuationRow {
    /// Distance of the estimate from `target` in standard errors. An exact
    /// (zero-variance) estimate counts as 0 on a match and ∞ otherwise.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mc_mean - target).abs();
        if self.mc_stderr > 0.0 {
            diff / self.mc_stderr
        } else if diff <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub struct ProbeSpec<'a> {
    pub p: f64,
    pub sigma: f64,
    pub omega: &'a [f64],
    pub phi: f64,
    pub x: &'a [f64],
    pub model: NoiseModel,
}

/// Monte-Carlo mean and standard error of the probe over `n` noisy draws
/// of `x` (whole-vector masks), alongside the closed form.
pub fn mc_verify(spec: &ProbeSpec<'_>, n: usize, rng: &mut impl Rng) -> Result<AttenuationRow> {
    if n < MIN_MC_SAMPLES {
        return Err(Error::Contract(format!("mc_verify needs N >= {MIN_MC_SAMPLES}, got {n}")));
    }
    if spec.omega.len() != spec.x.len() {
        return Err(Error::dim("mc_verify", "omega and x dimensions differ"));
    }
    NoiseConfig {
        p: spec.p,
        sigma: spec.sigma,
        model: spec.model,
        active: true,
    }
    .validate()?;
    let d = spec.x.len();
    let mut u = vec![0.0; d];
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..n {
        let masked = spec.p > 0.0 && rng.random::<f64>() < spec.p;
        for j in 0..d {
            u[j] = if masked {
                let e: f64 = StandardNormal.sample(rng);
                match spec.model {
                    NoiseModel::Replacement => spec.sigma * e,
                    NoiseModel::GatedAdditive => spec.x[j] + spec.sigma * e,
                }
            } else {
                spec.x[j]
            };
        }
        let f = (dot(spec.omega, &u) + spec.phi).cos();
        let delta = f - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (f - mean);
    }
    let var = m2 / (n - 1) as f64;
    Ok(AttenuationRow {
        omega_norm: norm(spec.omega),
        p: spec.p,
        sigma: spec.sigma,
        model: spec.model,
        analytic: expected_probe(spec.model, spec.p, spec.sigma, spec.omega, spec.phi, spec.x),
        mc_mean: mean,
        mc_stderr: (var / n as f64).sqrt(),
        n,
    })
}

pub const CURVE_HEADER: &str = "omega_norm,p,sigma,model,analytic,mc_mean,mc_stderr,n";

pub fn write_curve_csv(rows: &[AttenuationRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.9},{:.9},{:.9},{}",
            r.omega_norm, r.p, r.sigma, r.model, r.analytic, r.mc_mean, r.mc_stderr, r.n
        )?;
    }
    Ok(())
}
