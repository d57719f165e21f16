//! LSTM with sigmoid gates and a configurable cell activation.

pub mod activation;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod train;

pub use activation::{activation_eval, activation_grad, Activation, ActivationKind, DEFAULT_PEF_ALPHA};
pub use io::{load_model, load_model_with_meta, save_model, save_model_with_meta};
pub use model::{Gradients, LayerGradients, LayerTape, LstmLayer, LstmModel, ModelConfig, Tape};
pub use train::{predict_batch, train, EpochTrace, Loss, TrainConfig, GATE_NAMES};
