//! Landmark sequences, gloss vocabularies, dataset manifests and the
//! synthetic dataset generator.

mod landmarks;
mod manifest;
mod synth;
mod vocab;

pub use landmarks::{LandmarkSequence, DEFAULT_FRAME_WIDTH, LMK_MAGIC};
pub use manifest::{DatasetManifest, ManifestRecord};
pub use synth::{gloss_motif, synth_samples, write_synth_dataset, SynthConfig, SynthSample};
pub use vocab::{GlossSequence, Vocabulary, BLANK, BOS, EOS, PAD, RESERVED_TOKENS, UNK};
