//! Anchor matching, loss assembly and the training loop.

mod denoise;
mod loss;
mod matching;
mod train;

pub use denoise::{denoise_init, InitMode};
pub use loss::{
    classification_loss, layer_weights, pose_loss, query_pose_loss, LayerWeightMode, PoseLoss,
};
pub use matching::{match_anchors, Assignment};
pub use train::{
    grid_queries, load_model, metrics_csv, save_model, scene_init, select_queries, step_loss,
    step_loss_and_grad, train, training_assignment, MetricRow, StepInput, StepLoss, TrainConfig,
    TrainOutcome, METRICS_HEADER,
};
