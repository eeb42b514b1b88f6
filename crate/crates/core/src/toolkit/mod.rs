//! File formats and plumbing: WAV, synthetic corpora, checkpoints and run
//! configuration.

mod checkpoint;
mod config;
mod corpus;
mod wav;

pub use checkpoint::{
    check_shapes, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Metadata, StageRecord,
    MAGIC, VERSION,
};
pub use config::{RunConfig, TrainConfig};
pub use corpus::{
    gen_corpus, load_corpus, read_manifest, utterance_name, Component, CorpusSpec, ManifestRow, Modulation,
    MANIFEST, MANIFEST_HEADER,
};
pub use wav::{decode_wav, encode_wav, from_pcm16, to_pcm16, wav_read, wav_write};
