//! Small convolutional network used as the region feature extractor.
//!
//! Supports forward inference, exact backpropagation of the softmax
//! log-loss, momentum training over negative:positive balanced batches,
//! k-fold selection of the stopping iteration and retraining on the full
//! set. The activations of a designated hidden layer are exported as the
//! region descriptor for the final linear classifier.

mod net;
mod spec;
mod train;

pub use net::{
    extract_features, forward, forward_activations, loss_and_gradients, mean_loss, nll, patch_to_input, Activations,
    ConvNetWeights, ForwardOutput, Gradients, LayerParams, Tensor, WEIGHTS_VERSION,
};
pub use spec::{ConvNetSpec, Layer, Shape};
pub use train::{
    accuracy, crossval_stop_iteration, crossval_with, finetune_full, select_stop_iteration, session_folds,
    smooth_curve, train, train_with_validation, BatchSampler, ConvNetFoldRunner, CrossValidation, FoldRunner,
    LabeledPatch, TrainConfig, TrainOutcome,
};
