use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One STFT resolution of the multi-scale analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecScale {
    pub win_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl SpecScale {
    /// Default resolution for a window: hop = win/4, n_mels = max(5, win/8),
    /// full band.
    pub fn for_window(win_len: usize, sample_rate: u32) -> Self {
        SpecScale {
            win_len,
            hop: win_len / 4,
            n_mels: (win_len / 8).max(5),
            f_min: 0.0,
            f_max: sample_rate as f64 / 2.0,
        }
    }

    /// The four desk resolutions, windows 64 through 512.
    pub fn desk_defaults(sample_rate: u32) -> Vec<SpecScale> {
        [64, 128, 256, 512]
            .into_iter()
            .map(|w| SpecScale::for_window(w, sample_rate))
            .collect()
    }

    pub fn bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if !self.win_len.is_power_of_two() || self.win_len < 2 {
            return Err(Error::Config(format!(
                "win_len {} must be a power of two >= 2",
                self.win_len
            )));
        }
        if self.hop == 0 || self.hop > self.win_len {
            return Err(Error::Config(format!(
                "hop {} must be in 1..={}",
                self.hop, self.win_len
            )));
        }
        if self.n_mels < 2 {
            return Err(Error::Config("n_mels must be >= 2".into()));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max) {
            return Err(Error::Config(format!(
                "need 0 <= f_min < f_max (got {} / {})",
                self.f_min, self.f_max
            )));
        }
        if self.f_max > nyquist {
            return Err(Error::Config(format!(
                "f_max {} exceeds Nyquist {nyquist}",
                self.f_max
            )));
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank, `n_mels × (win_len/2 + 1)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelBank {
    pub n_mels: usize,
    pub bins: usize,
    pub weights: Vec<f64>,
}

impl MelBank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }
}

/// Filters centered uniformly on the mel scale between `f_min` and `f_max`.
/// A filter too narrow to straddle any bin keeps unit weight on the bin
/// nearest its center so every row stays positive.
pub fn mel_bank(scale: &SpecScale, sample_rate: u32) -> Result<MelBank> {
    scale.validate(sample_rate)?;
    let bins = scale.bins();
    let n = scale.n_mels;
    let (lo, hi) = (hz_to_mel(scale.f_min), hz_to_mel(scale.f_max));
    let edges: Vec<f64> = (0..n + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / scale.win_len as f64;
    let mut weights = vec![0.0; n * bins];
    for m in 0..n {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            *w = up.min(down).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            let nearest = ((center / bin_hz).round() as usize).min(bins - 1);
            row[nearest] = 1.0;
        }
    }
    Ok(MelBank {
        n_mels: n,
        bins,
        weights,
    })
}
