//! Synthetic scenes with an analytic oracle renderer, camera-file loading,
//! image files and run configuration.

mod config;
mod image;
mod scene;
mod transforms;

pub use config::{RunConfig, Value};
pub use image::{read_pfm, read_png, write_pfm, write_png, Image};
pub use scene::{
    make_dataset, make_dataset_with_rig, oracle_render, style_texture, AnalyticScene, Lighting, PosePattern, Primitive,
    Rig, SceneDataset, StyleTexture, View, UP,
};
pub use transforms::{focal_from_angle, gl_to_cv, load_transforms_json, write_transforms_json, TransformsOptions};
