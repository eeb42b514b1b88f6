use std::sync::Arc;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::signal::mel::SpecScale;
use crate::signal::stft::{MelAnalyzer, MelFrames};
use crate::tensorcore::{Graph, Tensor, Var};

/// Floor added to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-5;

/// Records the mel projection of every row of `x` (`[B × L]`) as one op,
/// producing `[B·frames × n_mels]`.
pub fn mel_graph(g: &mut Graph, analyzer: &Arc<MelAnalyzer>, x: Var) -> Result<Var> {
    let (batch, len) = g.value(x).dims2()?;
    let saved: Vec<MelFrames> = (0..batch)
        .map(|b| analyzer.analyze(g.value(x).row(b)))
        .collect();
    let frames = saved.first().map_or(0, |s| s.frames);
    let n_mels = analyzer.bank.n_mels;
    let data = saved.iter().flat_map(|s| s.mel.iter().copied()).collect();
    let value = Tensor::new(vec![batch * frames, n_mels], data)?;
    let analyzer = Arc::clone(analyzer);
    g.custom("mel", &[x], value, move |ctx| {
        let per = frames * n_mels;
        let mut dx = Vec::with_capacity(batch * len);
        for (b, s) in saved.iter().enumerate() {
            dx.extend(analyzer.backward(s, &ctx.grad.data()[b * per..(b + 1) * per]));
        }
        vec![Some(Tensor::new(vec![batch, len], dx).unwrap())]
    })
}

/// `log(mel(x) + 1e-5)` rows for a batch of signals.
pub fn log_mel_graph(g: &mut Graph, analyzer: &Arc<MelAnalyzer>, x: Var) -> Result<Var> {
    let mel = mel_graph(g, analyzer, x)?;
    let shifted = g.add_scalar(mel, LOG_FLOOR)?;
    g.log(shifted)
}

/// Log-mel frames of a plain batch `[B × L]`.
pub fn log_mel(analyzer: &MelAnalyzer, x: &Tensor) -> Result<Tensor> {
    let (batch, _) = x.dims2()?;
    let mut data = Vec::new();
    let mut frames = 0;
    for b in 0..batch {
        let s = analyzer.analyze(x.row(b));
        frames = s.frames;
        data.extend(s.mel.iter().map(|m| (m + LOG_FLOOR).ln()));
    }
    Tensor::new(vec![batch * frames, analyzer.bank.n_mels], data)
}

/// `mean |log(a + 1e-5) − log(b + 1e-5)|` between two equally shaped sets
/// of mel energies.
pub fn mel_l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim("mel_l1_distance", format!("{} vs {}", a.len(), b.len())));
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| ((x + LOG_FLOOR).ln() - (y + LOG_FLOOR).ln()).abs())
        .sum();
    Ok(total / a.len() as f64)
}

/// Sum over scales of the mean absolute log-mel difference.
pub struct MultiScaleMel {
    analyzers: Vec<Arc<MelAnalyzer>>,
}

impl MultiScaleMel {
    pub fn new(scales: &[SpecScale], sample_rate: u32) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Config("at least one spectral scale is required".into()));
        }
        let analyzers = scales
            .iter()
            .map(|s| MelAnalyzer::new(*s, sample_rate).map(Arc::new))
            .collect::<Result<_>>()?;
        Ok(MultiScaleMel { analyzers })
    }

    pub fn analyzers(&self) -> &[Arc<MelAnalyzer>] {
        &self.analyzers
    }

    pub fn loss(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::dim("multiscale_mel_loss", format!("{} vs {}", x.len(), y.len())));
        }
        self.analyzers
            .iter()
            .map(|a| mel_l1_distance(&a.analyze(x).mel, &a.analyze(y).mel))
            .sum()
    }

    /// Loss between a differentiable prediction and a fixed reference, both
    /// `[B × L]`.
    pub fn loss_graph(&self, g: &mut Graph, target: &Tensor, pred: Var) -> Result<Var> {
        if target.shape() != g.shape(pred) {
            return Err(Error::dim(
                "multiscale_mel_loss",
                format!("{:?} vs {:?}", target.shape(), g.shape(pred)),
            ));
        }
        let mut total: Option<Var> = None;
        for a in &self.analyzers {
            let reference = g.constant(log_mel(a, target)?);
            let predicted = log_mel_graph(g, a, pred)?;
            let diff = g.sub(predicted, reference)?;
            let abs = g.abs(diff)?;
            let term = g.mean(abs)?;
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
        Ok(total.expect("at least one scale"))
    }
}

pub fn multiscale_mel_loss(x: &AudioBuffer, y: &AudioBuffer, scales: &[SpecScale]) -> Result<f64> {
    MultiScaleMel::new(scales, x.sample_rate)?.loss(&x.to_f64(), &y.to_f64())
}

/// Reconstruction SNR in dB, capped at 120.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::dim(
            "snr_db",
            format!("{} vs {}", reference.len(), estimate.len()),
        ));
    }
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::Contract("snr reference is all zeros".into()));
    }
    let noise: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    Ok((10.0 * (signal / noise.max(1e-12)).log10()).min(120.0))
}
