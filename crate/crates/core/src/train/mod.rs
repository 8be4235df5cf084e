//! Configuration, optimisation, checkpoints, inference and evaluation.

mod checkpoint;
mod config;
mod detect;
mod eval;
mod optim;
mod trainer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{
    model_config_from_text, model_config_to_text, parse_pairs, DetectOptions, GeometryKind, OptimizerConfig, RunConfig,
};
pub use detect::{annotate, detect_image, pad_to_multiple};
pub use eval::{
    detection_path, evaluate, evaluate_dirs, f_score, match_image, maximum_matching, EvalReport, ImageResult, Matching,
    IGNORE_OVERLAP,
};
pub use optim::{global_norm, learning_rate, Momentum};
pub use trainer::{train, IterationLog, Trainer};
