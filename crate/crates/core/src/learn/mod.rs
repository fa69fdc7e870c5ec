//! Differentiation, optimisation and training.

mod adam;
mod decoder;
mod gradcheck;
mod negatives;
mod params;
mod tape;
mod tensor;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use decoder::{decode_link, decoder_logits, DecoderParams};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use negatives::sample_negatives;
pub use params::{ParamId, ParameterStore};
pub use tape::{sigmoid, Gradients, Tape, Var, LOGIT_CLAMP};
pub use tensor::Tensor;
pub use trainer::{
    BatchOutcome, BatchScores, EpochStats, Model, ModelConfig, ModelParams, StreamState,
    TrainConfig,
};
