//! Gloss-level text correction: synthetic corruption, a two-stage
//! encoder-decoder transformer and its self-supervised pretraining.

mod corpus;
mod corrupt;
mod model;
mod pretrain;

pub use corpus::{gloss_corpus, GrammarConfig};
pub use corrupt::{corrupt, preprocess, preprocess_ids, CorrectionPair, CorruptionSpec};
pub use model::{greedy_generate, init_transformer, transformer_logits, transformer_loss, TransformerConfig};
pub use pretrain::{
    pairs_from_tsv, pairs_to_tsv, pretrain, training_pair, CorrectOptions, Corrector, CorrectorConfig, PretrainLog,
};
