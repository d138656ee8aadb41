//! Runs every stylization ablation on one small coarse field and writes a
//! contact sheet (coarse, then one column per variant) plus final losses.
//!
//! cargo run --release --example ablation -- [out_dir]

use std::path::PathBuf;

use stylefield::cli::ABLATIONS;
use stylefield::features::{FeatureExtractor, EXTRACTOR_SEED};
use stylefield::fields::{CoarseConfig, FineConfig};
use stylefield::renderer::{render_image, FieldView, RenderOptions};
use stylefield::sceneio::{make_dataset, style_texture, write_png, AnalyticScene, Image, PosePattern, StyleTexture};
use stylefield::trainer::{rescale_camera, train_coarse, train_style, StageConfig, StyleConfig};

fn main() -> stylefield::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example-out/ablation".into()));
    std::fs::create_dir_all(&out).expect("create output directory");
    let ds = make_dataset(&AnalyticScene::tabletop(), 3, 0, PosePattern::Arc, 32, 0)?;
    let opts = RenderOptions { samples: 16, stratified: true, background: ds.background, chunk: 2048 };
    let stage = StageConfig { iterations: 800, batch_rays: 128, ..StageConfig::coarse_default() };
    let (coarse, _) = train_coarse(&ds, CoarseConfig { width: 64, ..CoarseConfig::default() }, &stage, &opts, None)?;

    let style = style_texture(StyleTexture::Stripes, 64, 0);
    let extractor = FeatureExtractor::generate(EXTRACTOR_SEED);
    let eval = RenderOptions { stratified: false, ..opts };
    let base = StyleConfig {
        stage: StageConfig { iterations: 60, ..StageConfig::style_default() },
        fine: FineConfig { width: 64, ..FineConfig::default() },
        image_size: 24,
        ..StyleConfig::default()
    };
    let cam = rescale_camera(&ds.train[1].camera, 24)?;
    let mut tiles = vec![render_image(FieldView::Coarse { field: &coarse, bounds: ds.bounds }, &cam, &eval, 0)?.color];
    for (name, ablation) in ABLATIONS {
        let mut cfg = base.clone();
        ablation.apply(&mut cfg)?;
        let (field, run) = train_style(coarse.clone(), ds.bounds, &ds, &style, &extractor, &cfg, &eval, None)?;
        let last = run.history.last().expect("history");
        println!("{name:>13}: content {:.4}  style {:.4}", last.content, last.style);
        tiles.push(render_image(FieldView::Hierarchical(&field), &cam, &eval, 0)?.color);
    }
    let (w, h) = (tiles[0].width(), tiles[0].height());
    let mut sheet = Image::filled(w * tiles.len(), h, &[1.0; 3]);
    for (k, t) in tiles.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                sheet.pixel_mut(k * w + x, y).copy_from_slice(t.pixel(x, y));
            }
        }
    }
    write_png(&out.join("contact_sheet.png"), &sheet)?;
    println!("contact sheet in {}", out.display());
    Ok(())
}
