use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::model::{decoder_graph, encoder_graph, latent_reg};
use crate::codec::{adv_losses, FrameDiscriminator, ModelConfig, DECODER, DISC, ENCODER, QUANTIZER};
use crate::error::{Error, Result};
use crate::quantizer::{quantize_graph, usage_stats, vq_loss, Codebook, BASIS, MAP};
use crate::signal::{log_mel, log_mel_graph, MelAnalyzer, MultiScaleMel, SpecScale};
use crate::tensorcore::{
    adamw_step, clip_global_norm, group_of, AdamWConfig, Graph, LrSchedule, OptimState, ParamStore, Tensor, Var,
};
use crate::winformer::SeqLayout;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mel: f64,
    pub e: f64,
    pub q: f64,
    pub adv: f64,
    pub feat: f64,
}

impl LossWeights {
    pub fn for_stage(stage: u8) -> Self {
        let zero = LossWeights {
            mel: 1.0,
            e: 0.0,
            q: 0.0,
            adv: 0.0,
            feat: 0.0,
        };
        match stage {
            1 => LossWeights { e: 1e-4, ..zero },
            2 => LossWeights { q: 1.0, ..zero },
            _ => LossWeights {
                adv: 1.0,
                feat: 1.0,
                ..zero
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stage: u8,
    pub weights: LossWeights,
    pub steps: u64,
    pub trainable: Vec<String>,
    pub schedule: LrSchedule,
    pub grad_clip: f64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
}

impl StagePlan {
    /// Default plan for `stage`: 1e-4 → 1e-5 cosine schedule with up to
    /// 1000 warmup steps (at most a tenth of the run), clip 1.0.
    pub fn new(stage: u8, steps: u64) -> Result<Self> {
        let trainable: &[&str] = match stage {
            1 => &[ENCODER, DECODER],
            2 => &[QUANTIZER, DECODER],
            3 => &[DECODER, DISC],
            s => return Err(Error::Config(format!("stage must be 1, 2 or 3 (got {s})"))),
        };
        let plan = StagePlan {
            stage,
            weights: LossWeights::for_stage(stage),
            steps,
            trainable: trainable.iter().map(|s| s.to_string()).collect(),
            schedule: LrSchedule {
                lr_max: 1e-4,
                lr_min: 1e-5,
                warmup_steps: (steps / 10).min(1000),
                total_steps: steps.max(1),
            },
            grad_clip: 1.0,
            optimizer: AdamWConfig::default(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_lr(mut self, lr_max: f64, lr_min: f64) -> Self {
        self.schedule.lr_max = lr_max;
        self.schedule.lr_min = lr_min;
        self
    }

    pub fn trains(&self, group: &str) -> bool {
        self.trainable.iter().any(|g| g == group)
    }

    /// Checks the per-stage weight and freeze invariants.
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let bad = |msg: &str| Err(Error::Config(format!("stage {}: {msg}", self.stage)));
        let allowed: &[&str] = match self.stage {
            1 => &[ENCODER, DECODER],
            2 => &[QUANTIZER, DECODER],
            3 => &[DECODER, DISC],
            _ => return bad("stage must be 1, 2 or 3"),
        };
        if let Some(g) = self.trainable.iter().find(|g| !allowed.contains(&g.as_str())) {
            return bad(&format!("group `{g}` may not train in this stage"));
        }
        let weights = [w.mel, w.e, w.q, w.adv, w.feat];
        if weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("loss weights must be finite and non-negative");
        }
        match self.stage {
            1 if w.q != 0.0 || w.adv != 0.0 || w.feat != 0.0 => return bad("only mel and latent terms apply"),
            2 if w.e != 0.0 || w.adv != 0.0 || w.feat != 0.0 => return bad("only mel and vq terms apply"),
            3 if w.e != 0.0 || w.q != 0.0 => return bad("only mel, adversarial and feature terms apply"),
            _ => {}
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        self.schedule.validate()
    }
}

/// Loss components available to [`stage_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub mel: Var,
    pub reg: Option<Var>,
    pub vq: Option<Var>,
    pub adv: Option<Var>,
    pub feat: Option<Var>,
}

/// Scalar values of every logged component.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Breakdown {
    pub loss: f64,
    pub mel: f64,
    pub vq: f64,
    pub reg: f64,
    pub adv: f64,
    pub feat: f64,
}

/// Weighted stage objective. A component with non-zero weight that was not
/// computed is a configuration error.
pub fn stage_loss(g: &mut Graph, plan: &StagePlan, parts: &LossParts) -> Result<(Var, Breakdown)> {
    plan.validate()?;
    let w = &plan.weights;
    let terms = [
        ("mel", w.mel, Some(parts.mel)),
        ("reg", w.e, parts.reg),
        ("vq", w.q, parts.vq),
        ("adv", w.adv, parts.adv),
        ("feat", w.feat, parts.feat),
    ];
    let mut total = g.constant(Tensor::scalar(0.0));
    for (name, weight, part) in terms {
        if weight == 0.0 {
            continue;
        }
        let Some(v) = part else {
            return Err(Error::Config(format!(
                "stage {} weights `{name}` but that component is unavailable",
                plan.stage
            )));
        };
        let scaled = g.scale(v, weight)?;
        total = g.add(total, scaled)?;
    }
    let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
    let breakdown = Breakdown {
        loss: g.value(total).item(),
        mel: g.value(parts.mel).item(),
        vq: val(parts.vq),
        reg: val(parts.reg),
        adv: val(parts.adv),
        feat: val(parts.feat),
    };
    Ok((total, breakdown))
}

pub const METRICS_HEADER: &str = "step,stage,loss,mel,vq,reg,adv,feat,usage,perplexity,lr";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub stage: u8,
    pub breakdown: Breakdown,
    /// Discriminator objective of the alternating update (stage 3).
    pub disc: f64,
    pub usage: f64,
    pub perplexity: f64,
    pub lr: f64,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        let b = &self.breakdown;
        format!(
            "{},{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.6},{:.6},{:.3e}",
            self.step, self.stage, b.loss, b.mel, b.vq, b.reg, b.adv, b.feat, self.usage, self.perplexity, self.lr
        )
    }
}

/// Random crops of `crop` samples (whole utterance, zero-padded, when
/// shorter) stacked as `[batch × crop]`.
pub fn sample_batch(utterances: &[Vec<f64>], batch: usize, crop: usize, rng: &mut impl Rng) -> Result<Tensor> {
    if utterances.is_empty() || batch == 0 || crop == 0 {
        return Err(Error::Contract("sample_batch needs utterances, batch >= 1 and crop >= 1".into()));
    }
    let mut data = Vec::with_capacity(batch * crop);
    for _ in 0..batch {
        let u = &utterances[rng.random_range(0..utterances.len())];
        let start = if u.len() > crop { rng.random_range(0..=u.len() - crop) } else { 0 };
        let end = (start + crop).min(u.len());
        data.extend_from_slice(&u[start..end]);
        data.resize(data.len() + crop - (end - start), 0.0);
    }
    Tensor::new(vec![batch, crop], data)
}

/// Owns the parameters and optimizer state across the steps of a stage.
pub struct Trainer {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    mel: MultiScaleMel,
    disc_mel: Arc<MelAnalyzer>,
    disc: FrameDiscriminator,
    opt: OptimState,
    disc_opt: OptimState,
    rng: ChaCha8Rng,
    stage_step: u64,
}

impl Trainer {
    pub fn new(cfg: ModelConfig, params: ParamStore, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let scales = SpecScale::desk_defaults(cfg.sample_rate);
        Ok(Trainer {
            mel: MultiScaleMel::new(&scales, cfg.sample_rate)?,
            disc_mel: Arc::new(MelAnalyzer::new(cfg.disc_scale(), cfg.sample_rate)?),
            disc: FrameDiscriminator::new(&cfg)?,
            opt: OptimState::new(AdamWConfig::default()),
            disc_opt: OptimState::new(AdamWConfig::default()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            stage_step: 0,
            cfg,
            params,
        })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Resets optimizer state and the schedule position for a new stage.
    pub fn begin_stage(&mut self, plan: &StagePlan) -> Result<()> {
        plan.validate()?;
        self.opt = OptimState::new(plan.optimizer);
        self.disc_opt = OptimState::new(plan.optimizer);
        self.stage_step = 0;
        Ok(())
    }

    pub fn multiscale(&self) -> &MultiScaleMel {
        &self.mel
    }

    /// Forward, weighted loss, backward, clip and update of the trainable
    /// groups; in stage 3 also one discriminator update.
    pub fn train_step(&mut self, plan: &StagePlan, batch: &Tensor) -> Result<StepMetrics> {
        plan.validate()?;
        let cfg = self.cfg;
        let (b, len) = batch.dims2()?;
        if len % cfg.r != 0 {
            return Err(Error::dim("train_step", format!("crop {len} is not a multiple of r = {}", cfg.r)));
        }
        let layout = SeqLayout { batch: b, len: len / cfg.r };
        let stage = plan.stage;
        let lr = plan.schedule.lr_at(self.stage_step);

        let mut g = Graph::new();
        let generator_trains = |name: &str| {
            let group = group_of(name);
            name != BASIS && group != DISC && plan.trains(group)
        };
        let p = self.params.bind(&mut g, generator_trains);
        let frames = g.constant(batch.clone().reshaped(vec![layout.rows(), cfg.r])?);
        let noise = cfg.noise.active.then_some((&cfg.noise, &mut self.rng));
        let z = encoder_graph(&mut g, &p, &cfg, frames, layout, noise)?;

        let (tokens, dec_in, vq, reg) = if stage == 1 {
            let cb = Codebook::new(self.params.tensor(BASIS)?, self.params.tensor(MAP)?)?;
            let (tokens, _) = cb.quantize(g.value(z))?;
            let reg = latent_reg(&mut g, z)?;
            (tokens, z, None, Some(reg))
        } else {
            let q = quantize_graph(&mut g, z, p.get(BASIS)?, p.get(MAP)?)?;
            let vq = if stage == 2 { Some(vq_loss(&mut g, z, q.codes)?.total) } else { None };
            (q.tokens, q.ste, vq, None)
        };
        let y = decoder_graph(&mut g, &p, &cfg, dec_in, layout)?;
        let y = g.reshape(y, &[b, len])?;
        let mel = self.mel.loss_graph(&mut g, batch, y)?;

        let mut fake_frames = None;
        let (adv, feat) = if stage == 3 {
            let real = g.constant(log_mel(&self.disc_mel, batch)?);
            let fake = log_mel_graph(&mut g, &self.disc_mel, y)?;
            fake_frames = Some(g.value(fake).clone());
            let real_out = self.disc.forward(&mut g, &p, real)?;
            let fake_out = self.disc.forward(&mut g, &p, fake)?;
            let l = adv_losses(&mut g, &real_out, &fake_out)?;
            (Some(l.generator), Some(l.feature))
        } else {
            (None, None)
        };

        let parts = LossParts { mel, reg, vq, adv, feat };
        let (loss, breakdown) = stage_loss(&mut g, plan, &parts)?;
        if !breakdown.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "stage {stage} step {}: {breakdown:?}",
                self.stage_step
            )));
        }
        let grads = g.backward(loss)?;
        let mut grads = p.collect_grads(&g, &grads);
        clip_global_norm(&mut grads, plan.grad_clip);
        adamw_step(&mut self.params, &grads, &mut self.opt, lr)?;
        drop(g);

        let disc = match fake_frames {
            Some(fake) if plan.trains(DISC) => self.disc_step(plan, batch, fake, lr)?,
            _ => 0.0,
        };

        let usage = usage_stats(&tokens, cfg.codebook_size)?;
        self.stage_step += 1;
        Ok(StepMetrics {
            step: self.stage_step,
            stage,
            breakdown,
            disc,
            usage: usage.usage(),
            perplexity: usage.perplexity(),
            lr,
        })
    }

    /// Runs every step of `plan` on random crops of `utterances`, calling
    /// `on_step` after each update.
    pub fn run_stage(
        &mut self,
        plan: &StagePlan,
        utterances: &[Vec<f64>],
        batch: usize,
        crop: usize,
        mut on_step: impl FnMut(&Self, &StepMetrics) -> Result<()>,
    ) -> Result<Vec<StepMetrics>> {
        self.begin_stage(plan)?;
        let mut log = Vec::with_capacity(plan.steps as usize);
        for _ in 0..plan.steps {
            let x = sample_batch(utterances, batch, crop, &mut self.rng)?;
            let m = self.train_step(plan, &x)?;
            on_step(self, &m)?;
            log.push(m);
        }
        Ok(log)
    }

    fn disc_step(&mut self, plan: &StagePlan, batch: &Tensor, fake: Tensor, lr: f64) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, |n| group_of(n) == DISC);
        let real = g.constant(log_mel(&self.disc_mel, batch)?);
        let fake = g.constant(fake);
        let real_out = self.disc.forward(&mut g, &p, real)?;
        let fake_out = self.disc.forward(&mut g, &p, fake)?;
        let l = adv_losses(&mut g, &real_out, &fake_out)?;
        let value = g.value(l.discriminator).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss at step {}", self.stage_step)));
        }
        let grads = g.backward(l.discriminator)?;
        let mut grads: BTreeMap<String, Tensor> = p.collect_grads(&g, &grads);
        clip_global_norm(&mut grads, plan.grad_clip);
        adamw_step(&mut self.params, &grads, &mut self.disc_opt, lr)?;
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::init_params;
    use crate::noise::NoiseConfig;
    use crate::winformer::WindowSpec;

    fn tiny() -> ModelConfig {
        ModelConfig {
            sample_rate: 4000,
            r: 40,
            hidden: 16,
            code_dim: 4,
            codebook_size: 32,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            enc_window: WindowSpec { left: 8, right: 0 },
            dec_window: WindowSpec { left: 8, right: 2 },
            noise: NoiseConfig::default(),
            rotary: true,
            disc_hidden: 8,
            disc_window: 64,
        }
    }

    fn utterances() -> Vec<Vec<f64>> {
        (0..4)
            .map(|u| {
                (0..1200)
                    .map(|i| 0.3 * (i as f64 * (0.07 + 0.05 * u as f64)).sin())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn stage_loss_examples() {
        let mut g = Graph::new();
        let mel = g.constant(Tensor::scalar(2.0));
        let reg = g.constant(Tensor::scalar(1.0));
        let plan = StagePlan::new(1, 100).unwrap();
        let parts = LossParts { mel, reg: Some(reg), vq: None, adv: None, feat: None };
        let (_, b) = stage_loss(&mut g, &plan, &parts).unwrap();
        assert!((b.loss - 2.0001).abs() < 1e-12);

        let plan2 = StagePlan::new(2, 100).unwrap();
        let vq = g.constant(Tensor::scalar(0.0));
        let parts = LossParts { mel, reg: None, vq: Some(vq), adv: None, feat: None };
        assert_eq!(stage_loss(&mut g, &plan2, &parts).unwrap().1.loss, 2.0);

        let mut zero = plan.clone();
        zero.weights = LossWeights { mel: 0.0, e: 0.0, q: 0.0, adv: 0.0, feat: 0.0 };
        let parts = LossParts { mel, reg: Some(reg), vq: None, adv: None, feat: None };
        assert_eq!(stage_loss(&mut g, &zero, &parts).unwrap().1.loss, 0.0);

        let parts = LossParts { mel, reg: None, vq: None, adv: None, feat: None };
        assert!(matches!(stage_loss(&mut g, &plan, &parts), Err(Error::Config(_))));
    }

    #[test]
    fn plan_validation() {
        for s in 1..=3 {
            assert!(StagePlan::new(s, 50).is_ok());
        }
        assert!(StagePlan::new(4, 50).is_err());
        let mut p = StagePlan::new(2, 50).unwrap();
        p.trainable.push(ENCODER.into());
        assert!(p.validate().is_err());
        let mut p = StagePlan::new(1, 50).unwrap();
        p.weights.adv = 1.0;
        assert!(p.validate().is_err());
        let mut p = StagePlan::new(3, 50).unwrap();
        p.trainable.push(QUANTIZER.into());
        assert!(p.validate().is_err());
    }

    fn snapshot(s: &ParamStore, groups: &[&str]) -> Vec<(String, Vec<u32>)> {
        s.iter()
            .filter(|(n, _)| groups.contains(&group_of(n)))
            .map(|(n, p)| (n.clone(), p.data.iter().map(|v| v.to_bits()).collect()))
            .collect()
    }

    #[test]
    fn freeze_contracts_hold_per_stage() {
        let cfg = tiny();
        let utts = utterances();
        let mut t = Trainer::new(cfg, init_params(&cfg, 1).unwrap(), 2).unwrap();
        let cases: [(u8, &[&str], &[&str]); 3] = [
            (1, &[QUANTIZER, DISC], &[ENCODER, DECODER]),
            (2, &[ENCODER, DISC], &[QUANTIZER, DECODER]),
            (3, &[ENCODER, QUANTIZER], &[DECODER, DISC]),
        ];
        for (stage, frozen, moving) in cases {
            let plan = StagePlan::new(stage, 20).unwrap().with_lr(1e-3, 1e-4);
            t.begin_stage(&plan).unwrap();
            let start = snapshot(&t.params, moving);
            for _ in 0..3 {
                let batch = sample_batch(&utts, 2, 400, t.rng()).unwrap();
                let before = snapshot(&t.params, frozen);
                t.train_step(&plan, &batch).unwrap();
                assert_eq!(before, snapshot(&t.params, frozen), "stage {stage}");
            }
            // the first step runs at lr 0 (warmup), later ones move
            let end = snapshot(&t.params, moving);
            for ((name, a), (_, b)) in start.iter().zip(&end) {
                if !name.ends_with(".b") && !name.contains("beta") && name != BASIS {
                    assert_ne!(a, b, "stage {stage}: {name}");
                }
            }
            let basis: Vec<u32> = t.params.get(BASIS).unwrap().data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(basis, init_params(&cfg, 1).unwrap().get(BASIS).unwrap().data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn stage_one_ignores_codebook() {
        let cfg = ModelConfig { noise: NoiseConfig { p: 0.0, ..NoiseConfig::default() }, ..tiny() };
        let utts = utterances();
        let plan = StagePlan::new(1, 10).unwrap();
        let run = |perturb: bool| {
            let mut params = init_params(&cfg, 3).unwrap();
            if perturb {
                params.get_mut(MAP).unwrap().data.iter_mut().for_each(|v| *v *= 3.0);
                params.get_mut(BASIS).unwrap().data.iter_mut().for_each(|v| *v = -*v);
            }
            let mut t = Trainer::new(cfg, params, 4).unwrap();
            t.begin_stage(&plan).unwrap();
            let batch = sample_batch(&utts, 2, 400, t.rng()).unwrap();
            t.train_step(&plan, &batch).unwrap().breakdown.loss
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn zero_noise_training_is_deterministic() {
        let cfg = ModelConfig { noise: NoiseConfig { p: 0.0, ..NoiseConfig::default() }, ..tiny() };
        let utts = utterances();
        let run = || {
            let mut t = Trainer::new(cfg, init_params(&cfg, 5).unwrap(), 6).unwrap();
            let plan = StagePlan::new(1, 10).unwrap();
            t.begin_stage(&plan).unwrap();
            for _ in 0..4 {
                let batch = sample_batch(&utts, 2, 400, t.rng()).unwrap();
                t.train_step(&plan, &batch).unwrap();
            }
            snapshot(&t.params, &[ENCODER, DECODER, QUANTIZER, DISC])
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sample_batch_pads_short_utterances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&[vec![1.0; 10]], 3, 16, &mut rng).unwrap();
        assert_eq!(b.shape(), &[3, 16]);
        assert_eq!(&b.row(0)[..10], &[1.0; 10]);
        assert_eq!(&b.row(0)[10..], &[0.0; 6]);
    }

    #[test]
    fn metrics_row_has_every_column() {
        let m = StepMetrics {
            step: 3,
            stage: 2,
            breakdown: Breakdown::default(),
            disc: 0.0,
            usage: 0.5,
            perplexity: 2.0,
            lr: 1e-4,
        };
        assert_eq!(m.csv_row().split(',').count(), METRICS_HEADER.split(',').count());
    }
}
