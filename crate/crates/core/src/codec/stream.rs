use std::collections::VecDeque;

use crate::codec::ModelConfig;
use crate::error::{Error, Result};
use crate::quantizer::Codebook;
use crate::tensorcore::{kernels, ParamStore, Tensor};
use crate::winformer::StreamingStack;

struct Affine {
    w: Tensor,
    b: Tensor,
}

impl Affine {
    fn load(params: &ParamStore, name: &str) -> Result<Self> {
        Ok(Affine {
            w: params.tensor(&format!("{name}.w"))?,
            b: params.tensor(&format!("{name}.b"))?,
        })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        kernels::linear_row(x, self.w.data(), self.b.data())
    }
}

/// Frame-synchronous encoder: a token is emitted as soon as its `r`
/// samples have arrived.
pub struct StreamEncoder {
    r: usize,
    down1: Affine,
    down2: Affine,
    stack: StreamingStack,
    proj: Affine,
    codebook: Codebook,
    pending: Vec<f64>,
}

impl StreamEncoder {
    pub fn new(cfg: &ModelConfig, params: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        Ok(StreamEncoder {
            r: cfg.r,
            down1: Affine::load(params, "encoder.down1")?,
            down2: Affine::load(params, "encoder.down2")?,
            stack: StreamingStack::new(params, "encoder.stack", cfg.enc_stack())?,
            proj: Affine::load(params, "encoder.proj")?,
            codebook: Codebook::from_store(params)?,
            pending: Vec::with_capacity(cfg.r),
        })
    }

    fn frame(&mut self, frame: &[f64]) -> Result<usize> {
        let h: Vec<f64> = self.down1.apply(frame).into_iter().map(kernels::gelu).collect();
        let h = self.down2.apply(&h);
        let h = self.stack.push(&h)?;
        Ok(self.codebook.nearest(&self.proj.apply(&h)))
    }

    /// Buffers `samples` and returns the tokens of every completed frame.
    pub fn push(&mut self, samples: &[f64]) -> Result<Vec<usize>> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stream encoder input".into()));
        }
        let mut out = Vec::new();
        for &s in samples {
            self.pending.push(s);
            if self.pending.len() == self.r {
                let frame = std::mem::take(&mut self.pending);
                out.push(self.frame(&frame)?);
                self.pending = frame;
                self.pending.clear();
            }
        }
        Ok(out)
    }

    /// Zero-pads a partial trailing frame and encodes it.
    pub fn finish(&mut self) -> Result<Option<usize>> {
        if self.pending.is_empty() {
            return Ok(None);
        }
        let mut frame = std::mem::take(&mut self.pending);
        frame.resize(self.r, 0.0);
        self.frame(&frame).map(Some)
    }
}

/// Token-synchronous decoder. Audio frame `t` becomes available once token
/// `t + right` has been pushed.
pub struct StreamDecoder {
    code_dim: usize,
    right: usize,
    up_in: Affine,
    stack: StreamingStack,
    out: Affine,
    codebook: Codebook,
    ready: VecDeque<Vec<f64>>,
    pushed: usize,
    finished: bool,
}

impl StreamDecoder {
    pub fn new(cfg: &ModelConfig, params: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        Ok(StreamDecoder {
            code_dim: cfg.code_dim,
            right: cfg.dec_window.right,
            up_in: Affine::load(params, "decoder.up_in")?,
            stack: StreamingStack::new(params, "decoder.stack", cfg.dec_stack())?,
            out: Affine::load(params, "decoder.out")?,
            codebook: Codebook::from_store(params)?,
            ready: VecDeque::new(),
            pushed: 0,
            finished: false,
        })
    }

    /// Frames of lookahead the decoder waits for.
    pub fn lookahead(&self) -> usize {
        self.right
    }

    fn step(&mut self, code: &[f64]) -> Result<()> {
        let h = self.up_in.apply(code);
        let h = self.stack.push(&h)?;
        if self.pushed >= self.right {
            self.ready.push_back(self.out.apply(&h));
        }
        self.pushed += 1;
        Ok(())
    }

    pub fn push(&mut self, token: usize) -> Result<()> {
        if self.finished {
            return Err(Error::Contract("stream decoder already finished".into()));
        }
        let code = self.codebook.lookup(&[token])?;
        self.step(code.data())
    }

    /// Next audio frame, or `None` while its lookahead has not arrived.
    pub fn pull(&mut self) -> Option<Vec<f64>> {
        self.ready.pop_front()
    }

    /// Flushes the tail by feeding `right` zero codes (as the offline decoder
    /// pads); returns every frame not yet pulled.
    pub fn finish(&mut self) -> Result<Vec<Vec<f64>>> {
        if !self.finished {
            let zero = vec![0.0; self.code_dim];
            if self.pushed > 0 {
                for _ in 0..self.right {
                    self.step(&zero)?;
                }
            }
            self.finished = true;
        }
        Ok(self.ready.drain(..).collect())
    }
}

/// Offline-vs-streaming comparison on one waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamReport {
    pub tokens_equal: bool,
    pub max_abs_diff: f64,
    /// Samples of delay between a token arriving and its audio frame
    /// becoming available.
    pub latency_samples: usize,
    pub frames: usize,
}

impl StreamReport {
    pub fn passed(&self, tol: f64, cfg: &ModelConfig) -> bool {
        self.tokens_equal && self.max_abs_diff < tol && self.latency_samples == cfg.latency_samples()
    }
}

/// Streams `x` one sample at a time through the encoder and one token at
/// a time through the decoder, against the offline codec.
pub fn stream_check(cfg: &ModelConfig, params: &ParamStore, x: &[f64]) -> Result<StreamReport> {
    let codec = crate::codec::Codec::new(*cfg, params.clone())?;
    let offline = codec.encode_samples(x)?.tokens;
    let want = codec.decode_samples(&offline)?;

    let mut enc = StreamEncoder::new(cfg, params)?;
    let mut tokens = Vec::with_capacity(offline.len());
    for &v in x {
        tokens.extend(enc.push(&[v])?);
    }
    tokens.extend(enc.finish()?);

    let mut dec = StreamDecoder::new(cfg, params)?;
    let mut got = Vec::with_capacity(want.len());
    let mut first_ready = None;
    for (i, &t) in tokens.iter().enumerate() {
        dec.push(t)?;
        while let Some(f) = dec.pull() {
            first_ready.get_or_insert(i);
            got.extend(f);
        }
    }
    let tail = dec.finish()?;
    if first_ready.is_none() && !tail.is_empty() {
        // the flush's zero codes occupy the virtual positions after the last token
        first_ready = Some(cfg.dec_window.right);
    }
    got.extend(tail.into_iter().flatten());
    let max_abs_diff = if got.len() == want.len() {
        got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(StreamReport {
        tokens_equal: tokens == offline,
        max_abs_diff,
        latency_samples: first_ready.unwrap_or(0) * cfg.r,
        frames: tokens.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{init_params, Codec};
    use crate::noise::NoiseConfig;
    use crate::winformer::WindowSpec;

    fn cfg(right: usize) -> ModelConfig {
        ModelConfig {
            sample_rate: 4000,
            r: 40,
            hidden: 16,
            code_dim: 4,
            codebook_size: 32,
            enc_layers: 2,
            dec_layers: 2,
            heads: 2,
            enc_window: WindowSpec { left: 5, right: 0 },
            dec_window: WindowSpec { left: 5, right },
            noise: NoiseConfig::default(),
            rotary: true,
            disc_hidden: 8,
            disc_window: 64,
        }
    }

    fn signal(n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.5 * (i as f64 * 0.031).sin() * (i as f64 * 0.0017).cos()).collect()
    }

    #[test]
    fn streaming_matches_offline() {
        for right in [0, 2] {
            let c = cfg(right);
            let params = init_params(&c, 9).unwrap();
            let codec = Codec::new(c, params.clone()).unwrap();
            let x = signal(40 * 20 + 13);
            let offline = codec.encode_samples(&x).unwrap().tokens;

            let mut enc = StreamEncoder::new(&c, &params).unwrap();
            let mut tokens = Vec::new();
            for chunk in x.chunks(7) {
                tokens.extend(enc.push(chunk).unwrap());
            }
            tokens.extend(enc.finish().unwrap());
            assert_eq!(tokens, offline);

            let want = codec.decode_samples(&tokens).unwrap();
            let mut dec = StreamDecoder::new(&c, &params).unwrap();
            let mut got = Vec::new();
            for (i, &t) in tokens.iter().enumerate() {
                dec.push(t).unwrap();
                match dec.pull() {
                    Some(f) => {
                        assert!(i >= right);
                        got.extend(f);
                    }
                    None => assert!(i < right),
                }
            }
            for f in dec.finish().unwrap() {
                got.extend(f);
            }
            assert_eq!(got.len(), want.len());
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-5, "right {right}: {err}");
        }
    }

    #[test]
    fn pull_before_lookahead_is_not_ready() {
        let c = cfg(2);
        let params = init_params(&c, 1).unwrap();
        let mut dec = StreamDecoder::new(&c, &params).unwrap();
        assert!(dec.pull().is_none());
        dec.push(1).unwrap();
        dec.push(2).unwrap();
        assert!(dec.pull().is_none());
        dec.push(3).unwrap();
        assert_eq!(dec.pull().unwrap().len(), 40);
        assert!(dec.push(40).is_err());
    }

    #[test]
    fn short_sequences_flush_every_frame() {
        let c = cfg(2);
        let params = init_params(&c, 4).unwrap();
        let codec = Codec::new(c, params.clone()).unwrap();
        let want = codec.decode_samples(&[5]).unwrap();
        let mut dec = StreamDecoder::new(&c, &params).unwrap();
        dec.push(5).unwrap();
        let got: Vec<f64> = dec.finish().unwrap().into_iter().flatten().collect();
        assert_eq!(got.len(), want.len());
        assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-5));
        assert!(StreamDecoder::new(&c, &params).unwrap().finish().unwrap().is_empty());
    }

    #[test]
    fn check_reports_lookahead_latency() {
        for right in [0, 2] {
            let c = cfg(right);
            let params = init_params(&c, 2).unwrap();
            let rep = stream_check(&c, &params, &signal(40 * 6 + 3)).unwrap();
            assert!(rep.passed(1e-5, &c), "{rep:?}");
            assert_eq!(rep.latency_samples, right * 40);
            assert_eq!(rep.frames, 7);
        }
    }
}
