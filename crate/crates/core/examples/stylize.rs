//! Stage 2: freezes a briefly trained coarse field and stylizes it with a
//! procedural texture; prints the annealed content weight and both losses.
//!
//! cargo run --release --example stylize -- [out_dir]

use std::path::PathBuf;

use stylefield::features::{FeatureExtractor, EXTRACTOR_SEED};
use stylefield::fields::{CoarseConfig, FineConfig};
use stylefield::renderer::{render_image, FieldView, RenderOptions};
use stylefield::sceneio::{make_dataset, style_texture, write_png, AnalyticScene, PosePattern, StyleTexture};
use stylefield::trainer::{rescale_camera, train_coarse, train_style, Output, StageConfig, StyleConfig};

fn main() -> stylefield::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example-out/stylize".into()));
    let ds = make_dataset(&AnalyticScene::tabletop(), 3, 0, PosePattern::Arc, 32, 0)?;
    let opts = RenderOptions { samples: 24, stratified: true, background: ds.background, chunk: 2048 };
    let coarse_stage = StageConfig { iterations: 1500, batch_rays: 128, ..StageConfig::coarse_default() };
    let (coarse, _) = train_coarse(&ds, CoarseConfig { width: 64, ..CoarseConfig::default() }, &coarse_stage, &opts, None)?;

    let style = style_texture(StyleTexture::Perlin, 64, 0);
    std::fs::create_dir_all(&out).expect("create output directory");
    write_png(&out.join("style.png"), &style)?;
    let cfg = StyleConfig {
        fine: FineConfig { width: 64, ..FineConfig::default() },
        ..StyleConfig::default()
    };
    let eval = RenderOptions { stratified: false, ..opts };
    let extractor = FeatureExtractor::generate(EXTRACTOR_SEED);
    let (field, run) = train_style(coarse, ds.bounds, &ds, &style, &extractor, &cfg, &eval, Some(&Output::new(&out, "style")))?;
    for r in run.history.iter().step_by(25) {
        println!("iter {:3}  λ {:7.4}  content {:.4}  style {:.4}", r.iter, r.lambda, r.content, r.style);
    }

    let cam = rescale_camera(&ds.train[1].camera, 64)?;
    write_png(&out.join("coarse.png"), &render_image(FieldView::coarse_of(&field), &cam, &eval, 0)?.color)?;
    write_png(&out.join("stylized.png"), &render_image(FieldView::Hierarchical(&field), &cam, &eval, 0)?.color)?;
    println!("renders in {}", out.display());
    Ok(())
}
