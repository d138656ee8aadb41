use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::read_png;
use super::scene::{SceneDataset, View};
use crate::error::{Error, Result};
use crate::fields::SceneBounds;
use crate::renderer::{rigidity_error, Camera, Mat4};

#[derive(Deserialize, Serialize)]
struct TransformsFile {
    camera_angle_x: f64,
    frames: Vec<Frame>,
}

#[derive(Deserialize, Serialize)]
struct Frame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
}

/// Options for datasets loaded from a `transforms.json` file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformsOptions {
    pub near: f64,
    pub far: f64,
    pub bounds: SceneBounds,
    /// Color that RGBA images are composited over.
    pub background: [f64; 3],
}

impl Default for TransformsOptions {
    fn default() -> Self {
        Self {
            near: 2.0,
            far: 6.0,
            bounds: SceneBounds::cube(1.5),
            background: [1.0; 3],
        }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    before + column.saturating_sub(1)
}

/// Loads a synthetic-camera JSON file. Camera transforms in the file use
/// the +y up, −z forward convention and are converted to the renderer's
/// +y down, +z forward camera space. All frames become training views.
pub fn load_transforms_json(path: &Path, opts: &TransformsOptions) -> Result<SceneDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io("sceneio", path, e))?;
    let file: TransformsFile = serde_json::from_str(&text).map_err(|e| {
        let offset = byte_offset(&text, e.line(), e.column());
        Error::format("sceneio", path, format!("at byte offset {offset}: {e}"))
    })?;
    if file.frames.is_empty() {
        return Err(Error::format("sceneio", path, "no frames"));
    }
    if !(file.camera_angle_x > 0.0 && file.camera_angle_x < std::f64::consts::PI) {
        return Err(Error::format("sceneio", path, format!("camera_angle_x {} out of range", file.camera_angle_x)));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut train = Vec::with_capacity(file.frames.len());
    for (i, frame) in file.frames.iter().enumerate() {
        let m = to_mat4(&frame.transform_matrix)
            .ok_or_else(|| Error::format("sceneio", path, format!("frame {i}: transform_matrix must be 4x4")))?;
        let dev = rigidity_error(&m);
        if !(dev < 1e-6) {
            return Err(Error::format("sceneio", path, format!("frame {i}: transform is not rigid (deviation {dev:e})")));
        }
        let image = read_png(&resolve_image(dir, &frame.file_path))?;
        let image = match image.channels() {
            3 => image,
            4 => image.composite_alpha(opts.background)?,
            c => return Err(Error::format("sceneio", path, format!("frame {i}: {c}-channel image"))),
        };
        let (w, h) = (image.width(), image.height());
        let fx = focal_from_angle(file.camera_angle_x, w);
        let camera = Camera::new(
            fx,
            fx,
            (w as f64 - 1.0) / 2.0,
            (h as f64 - 1.0) / 2.0,
            w,
            h,
            gl_to_cv(&m),
            opts.near,
            opts.far,
        )?;
        train.push(View {
            image,
            camera,
            depth: None,
        });
    }
    let (w, h) = (train[0].image.width(), train[0].image.height());
    if train.iter().any(|v| v.image.width() != w || v.image.height() != h) {
        return Err(Error::format("sceneio", path, "frames have different image sizes"));
    }
    Ok(SceneDataset {
        train,
        heldout: Vec::new(),
        bounds: opts.bounds,
        background: opts.background,
    })
}

/// Writes cameras in the same format `load_transforms_json` reads. Only the
/// horizontal focal length is stored, so cameras must have square pixels
/// and a centered principal point. `frames` pairs each camera with an image
/// path relative to the file.
pub fn write_transforms_json(path: &Path, frames: &[(String, Camera)]) -> Result<()> {
    let first = &frames
        .first()
        .ok_or_else(|| Error::invalid("sceneio", "no frames to write"))?
        .1;
    let file = TransformsFile {
        camera_angle_x: 2.0 * (0.5 * first.width as f64 / first.fx).atan(),
        frames: frames
            .iter()
            .map(|(file_path, cam)| Frame {
                file_path: file_path.clone(),
                transform_matrix: gl_to_cv(&cam.c2w).iter().map(|r| r.to_vec()).collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("plain data serializes");
    std::fs::write(path, text).map_err(|e| Error::io("sceneio", path, e))
}

/// `fx = 0.5·W / tan(0.5·angle)`.
pub fn focal_from_angle(camera_angle_x: f64, width: usize) -> f64 {
    0.5 * width as f64 / (0.5 * camera_angle_x).tan()
}

fn resolve_image(dir: &Path, file_path: &str) -> PathBuf {
    let mut p = dir.join(file_path);
    if p.extension().is_none() {
        p.set_extension("png");
    }
    p
}

fn to_mat4(rows: &[Vec<f64>]) -> Option<Mat4> {
    if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
        return None;
    }
    Some(std::array::from_fn(|i| std::array::from_fn(|j| rows[i][j])))
}

/// Flips the camera y and z axes (its own inverse).
pub fn gl_to_cv(m: &Mat4) -> Mat4 {
    let mut out = *m;
    for row in out.iter_mut().take(3) {
        row[1] = -row[1];
        row[2] = -row[2];
    }
    out
}
