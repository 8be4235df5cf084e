//! Image I/O, augmentation, difficulty ranking, curriculum batches and the
//! synthetic corpus.

mod augment;
mod curriculum;
mod difficulty;
mod image_io;
mod synth;

pub use augment::{apply_mask, apply_pixel_blur, blur_site_count, mask_extent, mean_color};
pub use curriculum::{
    curriculum_iter, eligible_indices, load_corpus, read_manifest, write_manifest, BatchOptions, CurriculumSchedule,
    CurriculumStage, LoadedSample, SampleRecord, TrainingSample,
};
pub use difficulty::{difficulty_factors, laplacian_variance, rank_difficulty, DifficultyWeights, SMALL_BOX_EDGE};
pub use image_io::{from_rgb8, load_image, quantize, save_png, to_rgb8};
pub use synth::{generate_synthetic_dataset, write_synthetic_dataset, SyntheticSample, MANIFEST_NAME, MAX_ANGLE};
