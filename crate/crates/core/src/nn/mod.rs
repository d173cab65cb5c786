//! Neural building blocks: a small reverse-mode tape, parameters with Adam,
//! the classifier model and its checkpoint format.

pub mod checkpoint;
pub mod model;
pub mod params;
pub mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use model::{
    attention_weights, parameter_layout, positional_encoding, scaled_dot_attention, Classifier, CodeInputs, Dropout,
    EncoderConfig, Example, ModelConfig, ModelVariant,
};
pub use params::{adam_step, AdamConfig, AdamState, Grad, Gradients, ParamId, ParameterStore};
pub use tape::{bce_loss, logistic, masked_softmax, Graph, Var, BCE_EPS, LAYER_NORM_EPS};
