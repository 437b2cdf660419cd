//! Landmark-based continuous sign language recognition: a convolutional +
//! BiLSTM student network trained with CTC and multi-head distillation,
//! landmark augmentation, a two-stage transformer gloss corrector, WER
//! evaluation and post-training INT8 quantization.

pub mod archive;
pub mod augment;
pub mod autodiff;
pub mod ctc;
pub mod data;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod mslr;
pub mod optim;
pub mod params;
pub mod quant;
pub mod rng;
pub mod tensor;
pub mod textcorr;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
