use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::ModelConfig;
use crate::error::{Error, Result};
use crate::tensorcore::{Bound, Graph, ParamStore, Var};

const SLOPE: f64 = 0.2;
const LAYERS: [&str; 3] = ["disc.l1", "disc.l2", "disc.l3"];

/// Per-frame feed-forward critic over log-mel frames:
/// `n_mels → hidden → hidden → 1`, leaky-relu between layers.
#[derive(Debug, Clone, Copy)]
pub struct FrameDiscriminator {
    pub n_mels: usize,
    pub hidden: usize,
}

/// Logits `[N × 1]` and the two hidden activations.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub logits: Var,
    pub features: Vec<Var>,
}

impl FrameDiscriminator {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(FrameDiscriminator {
            n_mels: cfg.disc_scale().n_mels,
            hidden: cfg.disc_hidden,
        })
    }

    fn widths(&self) -> [(usize, usize); 3] {
        [(self.n_mels, self.hidden), (self.hidden, self.hidden), (self.hidden, 1)]
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for (name, (fan_in, fan_out)) in LAYERS.iter().zip(self.widths()) {
            let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
            let w = (0..fan_in * fan_out).map(|_| dist.sample(rng) as f32).collect();
            store.insert(format!("{name}.w"), vec![fan_in, fan_out], w)?;
            store.insert(format!("{name}.b"), vec![fan_out], vec![0.0; fan_out])?;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, frames: Var) -> Result<DiscOutput> {
        if g.shape(frames).get(1) != Some(&self.n_mels) {
            return Err(Error::dim("discriminator", format!("input {:?}", g.shape(frames))));
        }
        let mut h = frames;
        let mut features = Vec::with_capacity(2);
        for (i, name) in LAYERS.iter().enumerate() {
            let w = p.get(&format!("{name}.w"))?;
            let b = p.get(&format!("{name}.b"))?;
            h = g.linear(h, w, b)?;
            if i < 2 {
                h = g.leaky_relu(h, SLOPE)?;
                features.push(h);
            }
        }
        Ok(DiscOutput { logits: h, features })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdvLosses {
    pub generator: Var,
    pub discriminator: Var,
    pub feature: Var,
}

/// Least-squares adversarial losses and L1 feature matching with the real
/// features held fixed.
pub fn adv_losses(g: &mut Graph, real: &DiscOutput, fake: &DiscOutput) -> Result<AdvLosses> {
    if g.shape(real.logits) != g.shape(fake.logits) || real.features.len() != fake.features.len() {
        return Err(Error::dim("adv_losses", "real and fake outputs differ in shape"));
    }
    let r1 = g.add_scalar(real.logits, -1.0)?;
    let r1 = g.square(r1)?;
    let r1 = g.mean(r1)?;
    let f0 = g.square(fake.logits)?;
    let f0 = g.mean(f0)?;
    let discriminator = g.add(r1, f0)?;

    let f1 = g.add_scalar(fake.logits, -1.0)?;
    let f1 = g.square(f1)?;
    let generator = g.mean(f1)?;

    let mut feature = g.constant(crate::tensorcore::Tensor::scalar(0.0));
    for (&rf, &ff) in real.features.iter().zip(&fake.features) {
        let rf = g.detach(rf);
        let d = g.sub(rf, ff)?;
        let d = g.abs(d)?;
        let m = g.mean(d)?;
        feature = g.add(feature, m)?;
    }
    Ok(AdvLosses {
        generator,
        discriminator,
        feature,
    })
}
