use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioBuffer;
use crate::error::Result;
use crate::signal::mel::{mel_bank, MelBank, SpecScale};
use crate::tensorcore::Tensor;

/// Floor inside the magnitude square root.
pub const MAG_FLOOR: f64 = 1e-12;

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Maps an index of the reflect-padded signal back to the source index.
fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j >= n {
        j = 2 * (n - 1) - j;
    }
    j.clamp(0, n - 1) as usize
}

/// Number of centered frames for a signal of `len` samples.
pub fn frame_count(len: usize, scale: &SpecScale) -> usize {
    1 + len.max(scale.win_len) / scale.hop
}

/// Windowed, centered STFT analysis plus mel projection at one scale.
pub struct MelAnalyzer {
    pub scale: SpecScale,
    pub bank: MelBank,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Saved forward quantities for one signal.
pub struct MelFrames {
    pub frames: usize,
    /// `frames × bins` one-sided spectrum.
    spectrum: Vec<Complex64>,
    /// `frames × bins` magnitudes.
    pub magnitude: Vec<f64>,
    /// `frames × n_mels`.
    pub mel: Vec<f64>,
    source_len: usize,
}

impl MelAnalyzer {
    pub fn new(scale: SpecScale, sample_rate: u32) -> Result<Self> {
        let bank = mel_bank(&scale, sample_rate)?;
        let mut planner = FftPlanner::new();
        Ok(MelAnalyzer {
            window: hann(scale.win_len),
            forward: planner.plan_fft_forward(scale.win_len),
            inverse: planner.plan_fft_inverse(scale.win_len),
            scale,
            bank,
        })
    }

    /// Zero-pads short inputs to one window, then reflect-pads by win/2.
    fn padded_index(&self, source_len: usize, i: usize) -> Option<usize> {
        let half = (self.scale.win_len / 2) as isize;
        let len = source_len.max(self.scale.win_len);
        let j = reflect(i as isize - half, len);
        (j < source_len).then_some(j)
    }

    pub fn analyze(&self, x: &[f64]) -> MelFrames {
        let win = self.scale.win_len;
        let bins = self.scale.bins();
        let frames = frame_count(x.len(), &self.scale);
        let mut spectrum = Vec::with_capacity(frames * bins);
        let mut magnitude = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); win];
        for f in 0..frames {
            for (n, slot) in buf.iter_mut().enumerate() {
                let v = self
                    .padded_index(x.len(), f * self.scale.hop + n)
                    .map_or(0.0, |j| x[j]);
                *slot = Complex64::new(v * self.window[n], 0.0);
            }
            self.forward.process(&mut buf);
            for c in &buf[..bins] {
                spectrum.push(*c);
                magnitude.push((c.re * c.re + c.im * c.im + MAG_FLOOR).sqrt());
            }
        }
        let n_mels = self.bank.n_mels;
        let mut mel = vec![0.0; frames * n_mels];
        for f in 0..frames {
            let mags = &magnitude[f * bins..(f + 1) * bins];
            for m in 0..n_mels {
                mel[f * n_mels + m] = self
                    .bank
                    .row(m)
                    .iter()
                    .zip(mags)
                    .map(|(w, a)| w * a)
                    .sum();
            }
        }
        MelFrames {
            frames,
            spectrum,
            magnitude,
            mel,
            source_len: x.len(),
        }
    }

    /// Gradient of a loss with respect to the source samples given its
    /// gradient with respect to the mel frames.
    pub fn backward(&self, saved: &MelFrames, d_mel: &[f64]) -> Vec<f64> {
        let win = self.scale.win_len;
        let bins = self.scale.bins();
        let n_mels = self.bank.n_mels;
        let mut dx = vec![0.0; saved.source_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); win];
        for f in 0..saved.frames {
            let dm = &d_mel[f * n_mels..(f + 1) * n_mels];
            for slot in buf.iter_mut() {
                *slot = Complex64::new(0.0, 0.0);
            }
            for k in 0..bins {
                let dmag: f64 = (0..n_mels).map(|m| self.bank.row(m)[k] * dm[m]).sum();
                let c = saved.spectrum[f * bins + k];
                let mag = saved.magnitude[f * bins + k];
                buf[k] = Complex64::new(dmag * c.re / mag, dmag * c.im / mag);
            }
            // Re Σ_k G_k e^{+2πikn/N} over the one-sided bins.
            self.inverse.process(&mut buf);
            for (n, g) in buf.iter().enumerate() {
                if let Some(j) = self.padded_index(saved.source_len, f * self.scale.hop + n) {
                    dx[j] += g.re * self.window[n];
                }
            }
        }
        dx
    }
}

/// `frames × (win/2+1)` magnitude spectrogram, `sqrt(re² + im² + 1e-12)`.
pub fn stft_mag(x: &AudioBuffer, scale: &SpecScale) -> Result<Tensor> {
    let analyzer = MelAnalyzer::new(*scale, x.sample_rate)?;
    let saved = analyzer.analyze(&x.to_f64());
    Tensor::new(vec![saved.frames, scale.bins()], saved.magnitude)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale(win: usize, hop: usize) -> SpecScale {
        SpecScale {
            win_len: win,
            hop,
            n_mels: 8,
            f_min: 0.0,
            f_max: 8000.0,
        }
    }

    #[test]
    fn frame_count_for_centered_frames() {
        let buf = AudioBuffer::new(vec![0.0; 1024], 16000);
        let mags = stft_mag(&buf, &scale(256, 64)).unwrap();
        assert_eq!(mags.shape(), &[17, 129]);
    }

    #[test]
    fn zero_signal_gives_floor_magnitudes() {
        let buf = AudioBuffer::new(vec![0.0; 512], 16000);
        let mags = stft_mag(&buf, &scale(128, 32)).unwrap();
        assert!(mags.data().iter().all(|&m| (m - MAG_FLOOR.sqrt()).abs() < 1e-15));
    }

    #[test]
    fn tone_at_bin_center_has_single_dominant_bin() {
        let sr = 16000;
        let win = 256;
        let k = 20;
        let f = k as f64 * sr as f64 / win as f64;
        let samples = (0..2048)
            .map(|n| (2.0 * PI * f * n as f64 / sr as f64).sin() as f32)
            .collect();
        let buf = AudioBuffer::new(samples, sr);
        let mags = stft_mag(&buf, &scale(win, 64)).unwrap();
        let (frames, bins) = mags.dims2().unwrap();
        // interior frames see no reflection artifacts
        for fr in 2..frames - 2 {
            let row = &mags.data()[fr * bins..(fr + 1) * bins];
            let peak = (0..bins).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(peak, k);
            let second = row
                .iter()
                .enumerate()
                .filter(|(i, _)| (*i as isize - k as isize).abs() > 1)
                .map(|(_, v)| *v)
                .fold(0.0, f64::max);
            assert!(row[k] > 100.0 * second);
        }
    }

    #[test]
    fn short_input_is_zero_padded_to_one_window() {
        let buf = AudioBuffer::new(vec![0.5; 10], 16000);
        let mags = stft_mag(&buf, &scale(64, 16)).unwrap();
        assert_eq!(mags.shape()[0], 1 + 64 / 16);
    }

    #[test]
    fn reflect_mapping() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-3, 5), 3);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }
}
