//! Supervised and multi-path consistency losses, view construction and the
//! Single-/Dual-Network training loops.

mod batch;
mod eval;
mod loss;
mod rank;
mod step;
mod train;

pub use batch::{
    build_consistency_batch, build_paths, easy_views, prepare_supervised, ConsistencyBatch, EasyViews,
    PathBatch, SupervisedBatch, ViewOptions,
};
pub use eval::{
    evaluate, extract_features, predict_keypoints, score_predictions, EvalConfig, EvalReport, EvalSample,
    MetricKind, ModelMetrics,
};
pub use loss::{
    consistency_loss, multipath_unsup_loss, supervised_loss, LossGrad, MultiPathLoss, PathSignals, Teacher,
    UnsupMode, DEFAULT_TAU,
};
pub use rank::{rank_augmentations, CurvePoint, RankEntry, Ranking};
pub use step::{
    dual_consistency_batches, step_gradients, step_loss, train_step_dual, train_step_single, StepConfig,
    StepLosses,
};
pub use train::{
    loss_csv_header, loss_csv_row, parse_pipeline, LossRecord, NetworkMode, TrainConfig, TrainData, Trainer, NET_NAMES,
};
