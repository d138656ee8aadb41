//! Stage 1: fits the coarse field to three views of the sphere scene and
//! reports held-out PSNR against the oracle renders.
//!
//! cargo run --release --example train_coarse -- [iterations] [out_dir]

use std::path::PathBuf;

use stylefield::fields::CoarseConfig;
use stylefield::metrics::psnr;
use stylefield::renderer::{render_image, FieldView, RenderOptions};
use stylefield::sceneio::{make_dataset, write_png, AnalyticScene, PosePattern};
use stylefield::trainer::{train_coarse, Output, StageConfig};

fn main() -> stylefield::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(2000, |s| s.parse().expect("iteration count"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "example-out/train_coarse".into()));

    let ds = make_dataset(&AnalyticScene::sphere(), 3, 4, PosePattern::Arc, 32, 0)?;
    let cfg = CoarseConfig { width: 64, ..CoarseConfig::default() };
    let stage = StageConfig { iterations, batch_rays: 128, ..StageConfig::coarse_default() };
    let opts = RenderOptions { samples: 32, stratified: true, background: ds.background, chunk: 2048 };
    let (field, run) = train_coarse(&ds, cfg, &stage, &opts, Some(&Output::new(&out, "coarse")))?;
    println!(
        "loss {:.4} -> {:.4} over {} iterations",
        run.history[0].recon,
        run.history.last().expect("history").recon,
        run.history.len()
    );

    let eval = RenderOptions { stratified: false, ..opts };
    for (i, v) in ds.heldout.iter().enumerate() {
        let r = render_image(FieldView::Coarse { field: &field, bounds: ds.bounds }, &v.camera, &eval, 0)?;
        write_png(&out.join(format!("heldout_{i}.png")), &r.color)?;
        println!("held-out view {i}: PSNR {:.2} dB", psnr(&r.color, &v.image)?);
    }
    Ok(())
}
