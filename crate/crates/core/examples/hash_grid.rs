//! Multi-resolution hash encoding: per-level resolutions, the growth
//! factor, and continuity of the encoding across a voxel face.
//!
//! cargo run --release --example hash_grid

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stylefield::diffcore::{Array, Graph};
use stylefield::encodings::{grid_resolutions, HashGrid, HashGridConfig};

fn main() -> stylefield::Result<()> {
    let cfg = HashGridConfig::default();
    println!("levels {} N_min {} N_max {} F {} T 2^{}", cfg.levels, cfg.n_min, cfg.n_max, cfg.feature_dim, cfg.table_log2);
    println!("growth factor b = {:.6}", cfg.growth_factor());
    println!("resolutions {:?}", grid_resolutions(&cfg)?);

    let small = HashGridConfig { table_log2: 14, ..cfg };
    let grid = HashGrid::new(small, &mut ChaCha8Rng::seed_from_u64(0))?;
    let n0 = grid.resolutions()[0] as f64;
    // Two points straddling the face x = 37/N_0 of a level-0 voxel.
    let face = 37.0 / n0;
    let pts = Array::new(&[2, 3], vec![face - 1e-12, 0.4, 0.6, face + 1e-12, 0.4, 0.6])?;
    let g = Graph::new();
    let b = grid.params.bind(&g, false);
    let enc = g.value(grid.encode(&g, &b, g.constant(pts))?);
    let d = small.output_dim();
    let jump = (0..d).map(|k| (enc.data()[k] - enc.data()[d + k]).abs()).fold(0.0, f64::max);
    println!("encoding dim {d}; largest jump across the voxel face: {jump:.2e}");
    Ok(())
}
