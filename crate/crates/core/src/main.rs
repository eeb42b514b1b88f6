use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wincodec::codec::{init_params, stream_check, Codec, Trainer, METRICS_HEADER};
use wincodec::noise::{mc_verify, write_curve_csv, NoiseModel, ProbeSpec};
use wincodec::quantizer::usage_stats;
use wincodec::signal::{snr_db, MultiScaleMel, SpecScale};
use wincodec::tokenstats::{format_token_line, ngram_counts, normalized_curve, parse_token_lines, rank_curve, zipf_fit};
use wincodec::toolkit::{
    check_shapes, gen_corpus, load_checkpoint, load_corpus, save_checkpoint, wav_read, wav_write, CorpusSpec, Metadata,
    RunConfig, StageRecord,
};
use wincodec::{gradsuite, AudioBuffer, Error, Result};

#[derive(Parser)]
#[command(name = "wincodec", about = "Streaming windowed-attention audio codec")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded synthetic corpus and its manifest.
    GenCorpus {
        /// Corpus spec, or a run config whose `corpus` section is used.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one training stage.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt_in: Option<PathBuf>,
        #[arg(long)]
        ckpt_out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// WAV → token line.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Token line → WAV.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode and decode a WAV, reporting quality metrics.
    Roundtrip {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Monte-Carlo check of the noise-attenuation closed forms.
    VerifyProp1 {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        model: NoiseModel,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank–frequency curve and power-law fit of token n-grams.
    Zipf {
        #[arg(long, num_args = 1.., required = true)]
        tokens: Vec<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
        n: u8,
        #[arg(long)]
        drop_hapax: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare streaming and offline inference on a WAV.
    StreamCheck {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
}

/// Attenuation curve grid, ‖ω‖ from 0 to 4.
const OMEGA_GRID: [f64; 9] = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0];
const STREAM_TOL: f64 = 1e-5;

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::from(2)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_codec(path: &Path) -> Result<(Codec, Metadata)> {
    let (params, meta) = load_checkpoint(path)?;
    check_shapes(&params, &meta.model)?;
    Ok((Codec::new(meta.model, params)?, meta))
}

fn read_audio(codec: &Codec, path: &Path) -> Result<AudioBuffer> {
    let audio = wav_read(path)?;
    if audio.sample_rate != codec.cfg.sample_rate {
        return Err(Error::Config(format!(
            "{} is at {} Hz but the model expects {} Hz",
            path.display(),
            audio.sample_rate,
            codec.cfg.sample_rate
        )));
    }
    Ok(audio)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenCorpus { spec, out } => {
            let text = std::fs::read_to_string(&spec)?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let corpus = if value.get("num_utterances").is_some() {
                let c: CorpusSpec = serde_json::from_value(value)?;
                c
            } else {
                RunConfig::from_json(&text)?.corpus
            };
            let rows = gen_corpus(&corpus, &out)?;
            println!("wrote {} utterances to {}", rows.len(), out.display());
        }
        Cmd::Train { config, stage, data, ckpt_in, ckpt_out, metrics } => {
            let run = RunConfig::load(&config)?;
            let cfg = run.model;
            let (params, mut meta) = match ckpt_in {
                Some(p) => {
                    let (params, mut meta) = load_checkpoint(&p)?;
                    check_shapes(&params, &cfg)?;
                    meta.model = cfg;
                    (params, meta)
                }
                None => (init_params(&cfg, run.train.seed)?, Metadata::new(cfg)),
            };
            let corpus = load_corpus(&data)?;
            let keep = corpus.len().saturating_sub(run.train.heldout);
            if keep == 0 {
                return Err(Error::Contract(format!("no training utterances in {}", data.display())));
            }
            let mut utts = Vec::with_capacity(keep);
            for (path, a) in &corpus[..keep] {
                if a.sample_rate != cfg.sample_rate {
                    return Err(Error::Config(format!("{} is at {} Hz, config says {}", path.display(), a.sample_rate, cfg.sample_rate)));
                }
                utts.push(a.to_f64());
            }
            let plan = run.plan(stage)?;
            let seed = run.train.seed.wrapping_add(stage as u64);
            let mut trainer = Trainer::new(cfg, params, seed)?;
            let mut csv = create(&metrics)?;
            writeln!(csv, "{METRICS_HEADER}")?;
            trainer.run_stage(&plan, &utts, run.train.batch, run.crop_samples(), |_, m| {
                writeln!(csv, "{}", m.csv_row())?;
                Ok(())
            })?;
            csv.flush()?;
            meta.stages.push(StageRecord { stage, steps: plan.steps, seed });
            save_checkpoint(&trainer.params, &meta, &ckpt_out)?;
            println!("stage {stage}: {} steps, checkpoint {}", plan.steps, ckpt_out.display());
        }
        Cmd::Encode { ckpt, input, out } => {
            let (codec, _) = load_codec(&ckpt)?;
            let audio = read_audio(&codec, &input)?;
            let tokens = codec.encode(&audio)?.tokens;
            std::fs::write(&out, format_token_line(&tokens) + "\n")?;
        }
        Cmd::Decode { ckpt, input, out } => {
            let (codec, _) = load_codec(&ckpt)?;
            let lines = parse_token_lines(&std::fs::read_to_string(&input)?)?;
            if lines.len() != 1 {
                return Err(Error::Contract(format!("expected one token line, found {}", lines.len())));
            }
            wav_write(&codec.decode(&lines[0])?, &out)?;
        }
        Cmd::Roundtrip { ckpt, input, out, metrics } => {
            let (codec, _) = load_codec(&ckpt)?;
            let audio = read_audio(&codec, &input)?;
            let x = audio.to_f64();
            let (enc, y) = codec.roundtrip_samples(&x)?;
            let y = &y[..x.len()];
            let mel = MultiScaleMel::new(&SpecScale::desk_defaults(codec.cfg.sample_rate), codec.cfg.sample_rate)?;
            let snr = snr_db(&x, y)?;
            let dist = mel.loss(&x, y)?;
            let usage = usage_stats(&enc.tokens, codec.cfg.codebook_size)?.usage();
            let mut csv = create(&metrics)?;
            writeln!(csv, "snr_db,mel_distance,usage,bitrate")?;
            writeln!(csv, "{snr:.6},{dist:.6},{usage:.6},{}", codec.cfg.bitrate())?;
            csv.flush()?;
            wav_write(&AudioBuffer::new(y.iter().map(|&v| v as f32).collect(), audio.sample_rate), &out)?;
            println!("snr {snr:.2} dB, mel distance {dist:.4}, usage {usage:.3}, {} bps", codec.cfg.bitrate());
        }
        Cmd::VerifyProp1 { p, sigma, dim, model, samples, out } => {
            if dim == 0 {
                return Err(Error::Config("dim must be positive".into()));
            }
            let unit = 1.0 / (dim as f64).sqrt();
            let x = vec![0.3 * unit; dim];
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut rows = Vec::with_capacity(OMEGA_GRID.len());
            for w in OMEGA_GRID {
                let omega = vec![w * unit; dim];
                let spec = ProbeSpec { p, sigma, omega: &omega, phi: 0.0, x: &x, model };
                let row = mc_verify(&spec, samples, &mut rng)?;
                println!("|w| {w:.2}: analytic {:.6}, mc {:.6} ± {:.6} (z {:.2})", row.analytic, row.mc_mean, row.mc_stderr, row.z_score(row.analytic));
                rows.push(row);
            }
            let mut f = create(&out)?;
            write_curve_csv(&rows, &mut f)?;
            f.flush()?;
        }
        Cmd::Zipf { tokens, n, drop_hapax, out } => {
            let mut streams = Vec::new();
            for path in &tokens {
                streams.extend(parse_token_lines(&std::fs::read_to_string(path)?)?);
            }
            let table = ngram_counts(&streams, n as usize)?;
            let curve = rank_curve(&table, drop_hapax);
            let mut f = create(&out)?;
            writeln!(f, "rank,count,norm_x,norm_y")?;
            let norm = if curve.rows.len() >= 2 { normalized_curve(&curve)? } else { Vec::new() };
            for (i, &(r, c)) in curve.rows.iter().enumerate() {
                match norm.get(i) {
                    Some((x, y)) => writeln!(f, "{r},{c},{x:.9},{y:.9}")?,
                    None => writeln!(f, "{r},{c},,")?,
                }
            }
            f.flush()?;
            match zipf_fit(&curve) {
                Ok(fit) => println!("{} distinct {n}-grams, s = {:.4}, r2 = {:.4}", curve.rows.len(), fit.s, fit.r2),
                Err(_) => println!("{} distinct {n}-grams, too few for a fit", curve.rows.len()),
            }
        }
        Cmd::Gradcheck { seed } => {
            let rows = gradsuite::run(seed)?;
            let mut failed = Vec::new();
            for r in &rows {
                println!("{:<14} {:.3e} (< {:.0e}) {}", r.name, r.max_rel_err, r.tolerance, if r.passed() { "ok" } else { "FAIL" });
                if !r.passed() {
                    failed.push(r.name);
                }
            }
            if !failed.is_empty() {
                return Err(Error::Contract(format!("gradcheck failed for {}", failed.join(", "))));
            }
        }
        Cmd::StreamCheck { ckpt, input } => {
            let (codec, _) = load_codec(&ckpt)?;
            let audio = read_audio(&codec, &input)?;
            let rep = stream_check(&codec.cfg, &codec.params, &audio.to_f64())?;
            println!(
                "tokens_equal={} max_abs_diff={:.3e} latency_samples={} frames={}",
                rep.tokens_equal, rep.max_abs_diff, rep.latency_samples, rep.frames
            );
            if !rep.passed(STREAM_TOL, &codec.cfg) {
                return Err(Error::Contract("streaming output differs from offline".into()));
            }
        }
    }
    Ok(())
}
