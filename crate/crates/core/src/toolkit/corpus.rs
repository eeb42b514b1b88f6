//! Seeded synthetic corpus: sums of tones and linear chirps with optional
//! amplitude modulation over a faint noise floor.

use std::f64::consts::TAU;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::toolkit::wav::{wav_read, wav_write};

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "path,seconds,components";
const PEAK: f64 = 0.9;
const NOISE_FLOOR: f64 = 0.01;
const MIN_FREQ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub num_utterances: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_utterances: 200,
            seconds: 1.0,
            sample_rate: 4000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulation {
    pub rate: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    /// Start and end frequency in Hz; equal for a steady tone.
    pub f0: f64,
    pub f1: f64,
    pub amp: f64,
    pub phase: f64,
    pub am: Option<Modulation>,
}

impl Component {
    pub fn is_tone(&self) -> bool {
        self.f0 == self.f1
    }

    fn value(&self, t: f64, dur: f64) -> f64 {
        let sweep = (self.f1 - self.f0) / (2.0 * dur);
        let carrier = (TAU * (self.f0 * t + sweep * t * t) + self.phase).sin();
        let env = self.am.map_or(1.0, |m| 1.0 + m.depth * (TAU * m.rate * t).sin());
        self.amp * env * carrier
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_tone() {
            write!(f, "tone@{:.3}", self.f0)
        } else {
            write!(f, "chirp@{:.3}-{:.3}", self.f0, self.f1)
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.seconds.is_finite() && self.seconds > 0.0) {
            return Err(Error::Config(format!("seconds must be positive, got {}", self.seconds)));
        }
        if (self.sample_rate as f64) * 0.45 <= MIN_FREQ {
            return Err(Error::Config(format!(
                "sample rate {} leaves no room above {MIN_FREQ} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn samples_per_utterance(&self) -> usize {
        (self.seconds * self.sample_rate as f64).round() as usize
    }

    /// Utterance `index`, drawn from its own stream seeded with `seed ^ index`.
    pub fn utterance(&self, index: usize) -> (AudioBuffer, Vec<Component>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ index as u64);
        let sr = self.sample_rate as f64;
        let (lo, hi) = (MIN_FREQ.ln(), (0.45 * sr).ln());
        let k = rng.random_range(1..=5);
        let comps: Vec<Component> = (0..k)
            .map(|_| {
                let f0 = rng.random_range(lo..hi).exp();
                let f1 = if rng.random_bool(0.5) { f0 } else { rng.random_range(lo..hi).exp() };
                let amp = rng.random_range(0.1..0.5);
                let phase = rng.random_range(0.0..TAU);
                let am = rng.random_bool(0.5).then(|| Modulation {
                    rate: rng.random_range(1.0..8.0),
                    depth: rng.random_range(0.0..0.5),
                });
                Component { f0, f1, amp, phase, am }
            })
            .collect();
        let n = self.samples_per_utterance();
        let floor = Normal::new(0.0, NOISE_FLOOR).expect("positive std");
        let mut x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                comps.iter().map(|c| c.value(t, self.seconds)).sum::<f64>() + floor.sample(&mut rng)
            })
            .collect();
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            x.iter_mut().for_each(|v| *v *= PEAK / peak);
        }
        let samples = x.iter().map(|&v| v.clamp(-PEAK, PEAK) as f32).collect();
        (AudioBuffer::new(samples, self.sample_rate), comps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: String,
    pub seconds: f64,
    pub components: String,
}

pub fn utterance_name(index: usize) -> String {
    format!("utt_{index:05}.wav")
}

/// Writes every utterance plus `manifest.csv` into `out_dir`.
pub fn gen_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    spec.validate()?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::with_capacity(spec.num_utterances);
    for i in 0..spec.num_utterances {
        let (audio, comps) = spec.utterance(i);
        let path = utterance_name(i);
        wav_write(&audio, dir.join(&path))?;
        rows.push(ManifestRow {
            path,
            seconds: audio.seconds(),
            components: comps.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
        });
    }
    let mut csv = String::from(MANIFEST_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.path, r.seconds, r.components));
    }
    std::fs::write(dir.join(MANIFEST), csv)?;
    Ok(rows)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(dir.as_ref().join(MANIFEST))?;
    let mut offset = 0u64;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let here = offset;
        offset += line.len() as u64 + 1;
        if i == 0 {
            if line != MANIFEST_HEADER {
                return Err(Error::Parse { offset: 0, detail: format!("unexpected manifest header `{line}`") });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, ',').collect();
        let bad = |detail: String| Error::Parse { offset: here, detail };
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        }
        let seconds = fields[1].parse().map_err(|_| bad(format!("bad seconds `{}`", fields[1])))?;
        rows.push(ManifestRow {
            path: fields[0].to_string(),
            seconds,
            components: fields[2].to_string(),
        });
    }
    Ok(rows)
}

/// Loads every manifest entry in order.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, AudioBuffer)>> {
    let dir = dir.as_ref();
    read_manifest(dir)?
        .into_iter()
        .map(|r| {
            let p = dir.join(&r.path);
            wav_read(&p).map(|a| (p, a))
        })
        .collect()
}
