//! Three-stage training run on a small synthetic corpus, printing progress.
//!
//! `cargo run --release --example desk -- [steps1 steps2 steps3] [lr]`

use std::time::Instant;

use wincodec::codec::{init_params, Codec, ModelConfig, Trainer};
use wincodec::noise::NoiseConfig;
use wincodec::quantizer::usage_stats;
use wincodec::signal::{snr_db, MultiScaleMel, SpecScale};
use wincodec::toolkit::{save_checkpoint, CorpusSpec, Metadata, RunConfig};
use wincodec::winformer::WindowSpec;

fn main() -> wincodec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: Vec<u64> = args.iter().take(3).map(|s| s.parse().unwrap()).collect();
    let steps = if steps.len() == 3 { [steps[0], steps[1], steps[2]] } else { [2000, 2000, 1000] };
    let lr: Option<f64> = args.get(3).map(|s| s.parse().unwrap());
    let env = |k: &str| std::env::var(k).ok().map(|v| v.parse::<f64>().unwrap());

    let model = ModelConfig {
        sample_rate: 4000,
        r: 80,
        hidden: 64,
        code_dim: 8,
        codebook_size: 256,
        enc_layers: 2,
        dec_layers: 2,
        heads: 4,
        enc_window: WindowSpec { left: 32, right: 0 },
        dec_window: WindowSpec { left: 32, right: env("DESK_RIGHT").map_or(2, |v| v as usize) },
        noise: NoiseConfig { p: env("DESK_P").unwrap_or(0.2), ..NoiseConfig::default() },
        rotary: true,
        disc_hidden: 64,
        disc_window: 256,
    };
    let mut run = RunConfig { model, ..Default::default() };
    run.corpus = CorpusSpec { num_utterances: 200, seconds: 1.0, sample_rate: 4000, seed: 7 };
    run.train.steps = steps;
    run.train.lr_max = lr;
    run.validate()?;

    let utts: Vec<Vec<f64>> = (0..200).map(|i| run.corpus.utterance(i).0.to_f64()).collect();
    let held: Vec<Vec<f64>> = (200..210).map(|i| run.corpus.utterance(i).0.to_f64()).collect();
    let mel = MultiScaleMel::new(&SpecScale::desk_defaults(4000), 4000)?;

    let params = init_params(&model, 1)?;
    let mut trainer = Trainer::new(model, params, 1)?;
    let t0 = Instant::now();
    for stage in 1..=3u8 {
        let mut plan = run.plan(stage)?;
        if stage == 1 {
            plan.weights.e = env("DESK_LE").unwrap_or(plan.weights.e);
        }
        if plan.steps == 0 {
            continue;
        }
        let log = trainer.run_stage(&plan, &utts, run.train.batch, run.crop_samples(), |_, m| {
            if m.step % 100 == 0 || m.step == 10 {
                println!(
                    "stage {} step {:5} loss {:.4} mel {:.4} vq {:.4} usage {:.3} ppl {:.1} lr {:.2e} t {:.0}s",
                    m.stage, m.step, m.breakdown.loss, m.breakdown.mel, m.breakdown.vq, m.usage, m.perplexity, m.lr,
                    t0.elapsed().as_secs_f64()
                );
            }
            Ok(())
        })?;
        let _ = log;
        let codec = Codec::new(model, trainer.params.clone())?;
        let mut tokens = Vec::new();
        let (mut snr, mut md, mut bypass) = (0.0, 0.0, 0.0);
        for x in &held {
            let y = codec.decode_latent(&codec.encode_samples(x)?.latent)?;
            bypass += mel.loss(x, &y[..x.len()])? / held.len() as f64;
            let (enc, y) = codec.roundtrip_samples(x)?;
            snr += snr_db(x, &y[..x.len()])? / held.len() as f64;
            md += mel.loss(x, &y[..x.len()])? / held.len() as f64;
            tokens.extend(enc.tokens);
        }
        let encoded: Vec<_> = utts.iter().map(|x| codec.encode_samples(x).unwrap()).collect();
        let train_tokens: Vec<usize> = encoded.iter().flat_map(|e| e.tokens.clone()).collect();
        let rows: Vec<&[f64]> = encoded.iter().flat_map(|e| (0..e.latent.shape()[0]).map(move |i| e.latent.row(i))).collect();
        let d = model.code_dim;
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..d).map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt()).collect();
        let code_rms = (codec.codebook()?.codes().data().iter().map(|v| v * v).sum::<f64>() / (256 * d) as f64).sqrt();
        println!("latent mean {mean:.3?}\nlatent std {std:.3?}\ncode rms {code_rms:.3}");
        save_checkpoint(&trainer.params, &Metadata::new(model), format!("/tmp/desk_s{stage}.mgck"))?;
        let u = usage_stats(&train_tokens, 256)?;
        println!(
            "== after stage {stage}: heldout snr {snr:.2} dB, mel {md:.4} (unquantized {bypass:.4}); train usage {:.3} ppl {:.1}",
            u.usage(),
            u.perplexity()
        );
    }
    Ok(())
}
