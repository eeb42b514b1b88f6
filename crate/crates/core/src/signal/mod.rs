//! Spectral transforms, mel filterbanks, the multi-scale log-mel loss and SNR.

mod dft;
mod loss;
mod mel;
mod stft;

pub use dft::dft;
pub use loss::{
    log_mel, log_mel_graph, mel_graph, mel_l1_distance, multiscale_mel_loss, snr_db, MultiScaleMel,
    LOG_FLOOR,
};
pub use mel::{hz_to_mel, mel_bank, mel_to_hz, MelBank, SpecScale};
pub use stft::{frame_count, hann, stft_mag, MelAnalyzer, MelFrames, MAG_FLOOR};
