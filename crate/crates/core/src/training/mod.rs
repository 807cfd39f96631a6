//! Objective, optimizer, the epoch loop and the ablation matrix.

mod ablation;
mod losses;
mod optim;
mod train;

pub use ablation::{
    evaluation_split, object_fragmentation, run_ablation, write_ablation_csv, AblationAxes, AblationRow, FRAGMENTATION_QUANTILES,
};
pub use losses::SOFT_IOU_EPS;
pub use optim::{adagrad_step, cosine_annealing, ADAGRAD_EPS};
pub use train::{
    default_threshold, evaluate_network, masks_of, predict_all, regularizer_weight, train, train_network,
    train_step, write_log_csv, EpochLog, TrainConfig, TrainOutcome,
};
