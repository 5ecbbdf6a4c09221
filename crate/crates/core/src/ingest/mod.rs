//! Getting pixels in: dataset files, augmentation, patch-centre sampling and
//! mean-padded patch extraction.

mod augment;
pub mod io;
mod patch;
mod sampling;

pub use augment::{augment_dataset, augment_image, draw_params, transform_image, AugmentParams, AugmentationConfig};
pub use patch::{extract_patch, Patch};
pub use sampling::{class_counts, collect_samples, sample_centers, grid_stride};
