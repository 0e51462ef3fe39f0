//! Synthetic scenes, binary masks and the on-disk dataset format.

mod dataset;
mod generate;
mod mask;

pub use dataset::{read_dataset, write_dataset, SCHEMA_VERSION};
pub use generate::{
    category_color, category_shape, gaze_direction, generate_scene, image_to_tensor, ObjectInstance, SceneConfig,
    SceneSample, Shape, BACKGROUND, HEAD_COLOR, NOTCH_COLOR, PALETTE,
};
pub use mask::{decode_rle, encode_rle, BinaryMask, Bitmap};
