//! Ray-traces the analytic sphere scene, then volume-renders an untrained
//! coarse field from the same camera. Writes PNGs and a PFM depth map.
//!
//! cargo run --release --example render_sphere -- [out_dir]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stylefield::fields::{CoarseConfig, CoarseField};
use stylefield::renderer::{render_image, FieldView, RenderOptions};
use stylefield::sceneio::{oracle_render, write_pfm, write_png, AnalyticScene, Rig};

fn main() -> stylefield::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example-out/render_sphere".into()));
    std::fs::create_dir_all(&out).expect("create output directory");

    let scene = AnalyticScene::sphere();
    let cam = Rig::default().camera(0.3, 0.35, 64, &scene.bounds)?;
    let (rgb, depth) = oracle_render(&scene, &cam)?;
    write_png(&out.join("oracle.png"), &rgb)?;
    write_pfm(&out.join("oracle_depth.pfm"), &depth)?;
    let hits = depth.data().iter().filter(|d| d.is_finite()).count();
    println!("oracle: {hits} of {} pixels hit the sphere", depth.data().len());

    let field = CoarseField::new(CoarseConfig::default(), &mut ChaCha8Rng::seed_from_u64(1))?;
    let opts = RenderOptions { background: scene.background, ..RenderOptions::default() };
    let r = render_image(FieldView::Coarse { field: &field, bounds: scene.bounds }, &cam, &opts, 0)?;
    write_png(&out.join("untrained.png"), &r.color)?;
    let mean_opacity = r.opacity.data().iter().sum::<f64>() / r.opacity.data().len() as f64;
    println!("untrained field: mean opacity {mean_opacity:.3}; images in {}", out.display());
    Ok(())
}
