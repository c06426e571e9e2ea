//! Losses, the pooled-feature MLP, the point-transformer layer and the CorAl baseline.

pub mod coral;
pub mod losses;
pub mod mlp;
pub mod nn;
pub mod pt_layer;

pub use coral::{coral_fit, coral_predict, CoralModel};
pub use losses::{
    combined_loss, cross_entropy, regression_head_loss, wasserstein1, ClassDistribution, LossKind, OneHotLabel,
};
pub use mlp::{predict, train_mlp, Head, MlpParams, Sample, TrainConfig, TrainOutcome};
pub use pt_layer::{pt_layer_backward, pt_layer_forward, PTLayerParams};
