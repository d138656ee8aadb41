//! Acceptance suite. Runs every criterion in order (so wall-clock limits are
//! measured without competing tests) and prints one PASS/FAIL line each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use rand::rngs::mock::StepRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stylefield::diffcore::{grad_check, Array, Graph, ParamId, Var};
use stylefield::encodings::{grid_resolutions, hash_encode, HashGrid, HashGridConfig, PositionalEncodingConfig};
use stylefield::features::{nn_match, FeatureExtractor, EXTRACTOR_SEED};
use stylefield::fields::{CoarseConfig, CoarseField, FineConfig, FineInput, HierarchicalField, SceneBounds};
use stylefield::metrics::{consistency_report, psnr, PoseRender, Range};
use stylefield::objectives::{AnnealSchedule, ContentWeight};
use stylefield::renderer::{composite, render_image, render_rays, sample_along, Camera, FieldView, RenderOptions};
use stylefield::sceneio::{make_dataset, style_texture, AnalyticScene, PosePattern, Rig, SceneDataset, StyleTexture, UP};
use stylefield::trainer::{
    load_coarse, stylize_per_view, train_coarse, train_style, Output, StageConfig, StyleConfig, TrainRun,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Runs one criterion, printing its verdict. Panics count as failures.
fn criterion(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (false, format!("panicked: {msg}"))
        }
    };
    println!("{} {name} [{secs:.1}s]: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_array(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Array {
    let n = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `Σ y ⊙ R` for a fixed pseudo-random `R`, so that every output entry
/// reaches the gradient with a distinct weight.
fn weighted_sum(g: &Graph, y: Var) -> Var {
    let shape = g.shape(y);
    let r = random_array(&shape, -1.0, 1.0, &mut seeded(99));
    let prod = g.mul(y, g.constant(r)).unwrap();
    g.sum(prod)
}

// ---------------------------------------------------------------------------

fn table_context_documented() -> Outcome {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&readme).unwrap_or_default();
    let values = ["0.137", "0.720", "0.176", "0.686"];
    let missing: Vec<_> = values.iter().filter(|v| !text.contains(*v)).collect();
    outcome(
        missing.is_empty(),
        format!(
            "full-scale reference numbers (short RMSE 0.137 / SSIM 0.720, long RMSE 0.176 / SSIM 0.686) are context only, \
             not reproduced at desk scale; README mentions them: {}",
            missing.is_empty()
        ),
    )
}

type Probe = Box<dyn Fn(&Graph, Var) -> stylefield::Result<Var>>;

fn op_probes() -> Vec<(&'static str, Probe, Array)> {
    let mut r = seeded(7);
    let c34 = random_array(&[3, 4], -1.0, 1.0, &mut r);
    let pos34 = random_array(&[3, 4], 0.5, 2.0, &mut r);
    let c43 = random_array(&[4, 3], -1.0, 1.0, &mut r);
    let row3 = random_array(&[3], -1.0, 1.0, &mut r);
    let col4 = random_array(&[4], -1.0, 1.0, &mut r);
    let m42 = random_array(&[4, 2], -1.0, 1.0, &mut r);
    let m34 = random_array(&[3, 4], -1.0, 1.0, &mut r);
    let img = random_array(&[2, 5, 6], -1.0, 1.0, &mut r);
    let wconv = random_array(&[3, 2, 3, 3], -0.5, 0.5, &mut r);
    let bconv = random_array(&[3], -0.5, 0.5, &mut r);
    let cos_b = random_array(&[4, 5], -1.0, 1.0, &mut r);
    // Entries kept away from the relu / clamp kinks.
    let kinked = Array::new(
        &[3, 4],
        (0..12)
            .map(|i| {
                let m = r.gen_range(0.1..1.0);
                if i % 2 == 0 { m } else { -m }
            })
            .collect(),
    )
    .unwrap();

    let k = |a: &Array| a.clone();
    let mut v: Vec<(&'static str, Probe, Array)> = Vec::new();
    macro_rules! probe {
        ($name:expr, $point:expr, |$g:ident, $x:ident| $body:expr) => {
            v.push(($name, Box::new(move |$g: &Graph, $x: Var| Ok(weighted_sum($g, $body))), $point));
        };
    }
    let c = k(&c34);
    probe!("add (lhs)", k(&c34), |g, x| g.add(x, g.constant(c.clone()))?);
    let c = k(&c34);
    probe!("add (rhs)", k(&c34), |g, x| g.add(g.constant(c.clone()), x)?);
    let c = k(&c34);
    probe!("sub (lhs)", k(&m34), |g, x| g.sub(x, g.constant(c.clone()))?);
    let c = k(&c34);
    probe!("sub (rhs)", k(&m34), |g, x| g.sub(g.constant(c.clone()), x)?);
    let c = k(&m34);
    probe!("mul (lhs)", k(&c34), |g, x| g.mul(x, g.constant(c.clone()))?);
    let c = k(&m34);
    probe!("mul (rhs)", k(&c34), |g, x| g.mul(g.constant(c.clone()), x)?);
    let c = k(&pos34);
    probe!("div (numerator)", k(&c34), |g, x| g.div(x, g.constant(c.clone()))?);
    let c = k(&c34);
    probe!("div (denominator)", k(&pos34), |g, x| g.div(g.constant(c.clone()), x)?);
    let c = k(&row3);
    probe!("add_row (matrix)", k(&c43), |g, x| g.add_row(x, g.constant(c.clone()))?);
    let c = k(&c43);
    probe!("add_row (row)", k(&row3), |g, x| g.add_row(g.constant(c.clone()), x)?);
    let c = k(&col4);
    probe!("mul_col (matrix)", k(&c43), |g, x| g.mul_col(x, g.constant(c.clone()))?);
    let c = k(&c43);
    probe!("mul_col (column)", k(&col4), |g, x| g.mul_col(g.constant(c.clone()), x)?);
    probe!("scale", k(&c34), |g, x| g.scale(x, -1.7));
    probe!("add_scalar", k(&c34), |g, x| g.add_scalar(x, 0.3));
    probe!("neg", k(&c34), |g, x| g.neg(x));
    let c = k(&m42);
    probe!("matmul (lhs)", k(&m34), |g, x| g.matmul(x, g.constant(c.clone()))?);
    let c = k(&m34);
    probe!("matmul (rhs)", k(&m42), |g, x| g.matmul(g.constant(c.clone()), x)?);
    probe!("sin", k(&c34), |g, x| g.sin(x));
    probe!("cos", k(&c34), |g, x| g.cos(x));
    probe!("exp", k(&c34), |g, x| g.exp(x));
    probe!("log", k(&pos34), |g, x| g.log(x));
    probe!("relu", k(&kinked), |g, x| g.relu(x));
    probe!("softplus", k(&c34), |g, x| g.softplus(x));
    probe!("sigmoid", k(&c34), |g, x| g.sigmoid(x));
    probe!("clamp_min", k(&kinked), |g, x| g.clamp_min(x, 0.05));
    let c = k(&c34);
    probe!("concat", k(&m34), |g, x| g.concat(&[g.constant(c.clone()), x, g.scale(x, 2.0)])?);
    probe!("gather", k(&c34), |g, x| g.gather(x, Rc::new(vec![2, 0, 2, 1]))?);
    probe!("reshape", k(&c34), |g, x| g.reshape(x, &[2, 6])?);
    probe!("transpose", k(&c34), |g, x| g.transpose(x)?);
    v.push(("sum", Box::new(|g: &Graph, x: Var| Ok(g.sum(g.mul(x, x)?))), k(&c34)));
    v.push(("mean", Box::new(|g: &Graph, x: Var| Ok(g.mean(g.mul(x, x)?))), k(&c34)));
    probe!("sum_axis (0)", k(&c34), |g, x| g.sum_axis(x, 0)?);
    probe!("sum_axis (1 of 3)", k(&img), |g, x| g.sum_axis(x, 1)?);
    probe!("cumsum_exclusive", k(&c34), |g, x| g.cumsum_exclusive(x)?);
    let (w, b) = (k(&wconv), k(&bconv));
    probe!("conv2d (input)", k(&img), |g, x| g.conv2d(x, g.constant(w.clone()), g.constant(b.clone()))?);
    let (i, b) = (k(&img), k(&bconv));
    probe!("conv2d (weight)", k(&wconv), |g, x| g.conv2d(g.constant(i.clone()), x, g.constant(b.clone()))?);
    let (i, w) = (k(&img), k(&wconv));
    probe!("conv2d (bias)", k(&bconv), |g, x| g.conv2d(g.constant(i.clone()), g.constant(w.clone()), x)?);
    probe!("avg_pool2 (odd edges)", random_array(&[2, 5, 7], -1.0, 1.0, &mut r), |g, x| g.avg_pool2(x)?);
    let cb = k(&cos_b);
    probe!("cosine_rows (a)", random_array(&[4, 5], -1.0, 1.0, &mut r), |g, x| g.cosine_rows(x, g.constant(cb.clone()))?);
    let cb = k(&cos_b);
    probe!("cosine_rows (b)", random_array(&[4, 5], -1.0, 1.0, &mut r), |g, x| g.cosine_rows(g.constant(cb.clone()), x)?);

    // Rendering and encoding, which are compositions of the above.
    let (rays, s) = (3, 6);
    let t = Array::new(&[rays, s], (0..rays * s).map(|i| 1.0 + (i % s) as f64 * 0.3).collect()).unwrap();
    let delta = Array::full(&[rays, s], 0.3);
    let colors = random_array(&[rays * s, 3], 0.0, 1.0, &mut r);
    let sigma = random_array(&[rays, s], 0.1, 3.0, &mut r);
    let (t2, d2, c2) = (t.clone(), delta.clone(), colors.clone());
    v.push((
        "composite (density)",
        Box::new(move |g: &Graph, x: Var| {
            let c = composite(g, x, g.constant(c2.clone()), &t2, &d2, [0.2, 0.5, 0.9])?;
            Ok(g.add(weighted_sum(g, c.color), weighted_sum(g, c.depth))?)
        }),
        sigma.clone(),
    ));
    v.push((
        "composite (color)",
        Box::new(move |g: &Graph, x: Var| {
            let c = composite(g, g.constant(sigma.clone()), x, &t, &delta, [0.2, 0.5, 0.9])?;
            Ok(g.add(weighted_sum(g, c.color), weighted_sum(g, c.depth))?)
        }),
        colors,
    ));
    let pts = random_array(&[4, 3], 0.05, 0.95, &mut r);
    let tables = [random_array(&[64, 2], -1.0, 1.0, &mut r), random_array(&[64, 2], -1.0, 1.0, &mut r)];
    let (p2, t1) = (pts.clone(), tables[1].clone());
    v.push((
        "hash_encode (table)",
        Box::new(move |g: &Graph, x: Var| {
            let e = hash_encode(g, g.constant(p2.clone()), &[x, g.constant(t1.clone())], &[5, 11])?;
            Ok(weighted_sum(g, e))
        }),
        tables[0].clone(),
    ));
    let tb = tables.clone();
    v.push((
        "hash_encode (points)",
        Box::new(move |g: &Graph, x: Var| {
            let ts = [g.constant(tb[0].clone()), g.constant(tb[1].clone())];
            Ok(weighted_sum(g, hash_encode(g, x, &ts, &[5, 11])?))
        }),
        pts,
    ));
    v
}

#[derive(Clone, Copy)]
enum Which {
    Coarse(ParamId),
    Fine(ParamId),
    Grid(ParamId),
}

fn tiny_hierarchical() -> HierarchicalField {
    let coarse = CoarseConfig {
        pe: PositionalEncodingConfig { levels: 3, include_identity: true },
        width: 12,
        hidden_layers: 2,
        feature_dim: 6,
        color_width: 8,
    };
    let grid = HashGridConfig { levels: 2, n_min: 3, n_max: 7, feature_dim: 2, table_log2: 5 };
    let fine = FineConfig { input: FineInput::HashGrid(grid), width: 8, hidden_layers: 1 };
    let mut r = seeded(11);
    let coarse = CoarseField::new(coarse, &mut r).unwrap();
    let mut h = HierarchicalField::new(coarse, fine, SceneBounds::cube(1.0), &mut r).unwrap();
    // Zero-initialized heads would hide most of the fine path from the check.
    for id in h.fine.params.ids().collect::<Vec<_>>() {
        let shape = h.fine.params.value(id).shape().to_vec();
        h.fine.params.set(id, random_array(&shape, -0.6, 0.6, &mut r)).unwrap();
    }
    let grid = h.grid.as_mut().unwrap();
    for id in grid.params.ids().collect::<Vec<_>>() {
        let shape = grid.params.value(id).shape().to_vec();
        grid.params.set(id, random_array(&shape, -0.5, 0.5, &mut r)).unwrap();
    }
    h
}

/// Worst relative error over every parameter tensor of a 4×4-pixel
/// hierarchical render.
fn end_to_end_render_check() -> (f64, usize) {
    let h = tiny_hierarchical();
    let cam = Camera::look_at([0.4, 0.6, -2.5], [0.0; 3], UP, 0.9, 4, 4, 1.0, 4.0).unwrap();
    let rays = cam.all_rays();
    let opts = RenderOptions { samples: 6, stratified: false, background: [1.0, 0.9, 0.8], chunk: 64 };
    let mut which = Vec::new();
    which.extend(h.coarse.params.ids().map(Which::Coarse));
    which.extend(h.fine.params.ids().map(Which::Fine));
    which.extend(h.grid.as_ref().unwrap().params.ids().map(Which::Grid));
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for w in which {
        let point = match w {
            Which::Coarse(id) => h.coarse.params.value(id).clone(),
            Which::Fine(id) => h.fine.params.value(id).clone(),
            Which::Grid(id) => h.grid.as_ref().unwrap().params.value(id).clone(),
        };
        checked += point.len();
        let f = |g: &Graph, x: Var| {
            let mut b = h.bind(g, false);
            match w {
                Which::Coarse(id) => b.coarse = b.coarse.replaced(id, x),
                Which::Fine(id) => b.fine = b.fine.replaced(id, x),
                Which::Grid(id) => b.grid = b.grid.take().map(|gb| gb.replaced(id, x)),
            }
            let c = render_rays(g, &rays, cam.near, cam.far, &opts, &mut StepRng::new(0, 0), |g, rp| {
                let o = h.forward_points(g, &b, &rp.points, &rp.dirs)?;
                Ok((o.sigma_fine, o.color_fine))
            })?;
            Ok(g.add(weighted_sum(g, c.color), weighted_sum(g, c.depth))?)
        };
        worst = worst.max(grad_check(f, &point, 1e-6).unwrap());
    }
    (worst, checked)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let probes = op_probes();
    for (name, f, point) in &probes {
        match grad_check(|g, x| f(g, x), point, 1e-6) {
            Ok(e) if e < 1e-4 => worst = worst.max(e),
            Ok(e) => failures.push(format!("{name} ({e:.1e})")),
            Err(e) => failures.push(format!("{name} ({e})")),
        }
    }
    let (e2e, n) = end_to_end_render_check();
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && e2e < 1e-3 && secs < 120.0;
    outcome(
        pass,
        format!(
            "{} op probes, worst rel err {worst:.1e} (tol 1e-4){}; 4x4 hierarchical render over {n} parameters: {e2e:.1e} (tol 1e-3); {secs:.1}s (limit 120s)",
            probes.len(),
            if failures.is_empty() { String::new() } else { format!(", failed: {}", failures.join(", ")) }
        ),
    )
}

fn rendering_physics() -> Outcome {
    let mut r = seeded(3);
    let (mut composites, mut worst_w, mut worst_t, mut violations) = (0usize, 0.0f64, 0.0f64, 0usize);
    for _ in 0..100 {
        let (rays, s) = (100, r.gen_range(1..=64));
        let mut sigma = Vec::with_capacity(rays * s);
        let mut delta = Vec::with_capacity(rays * s);
        for _ in 0..rays * s {
            sigma.push(if r.gen_bool(0.2) { 0.0 } else { 10f64.powf(r.gen_range(-3.0..2.0)) });
            delta.push(r.gen_range(1e-3..0.5));
        }
        let mut t = Vec::with_capacity(rays * s);
        for ray in 0..rays {
            let mut acc = 1.0;
            for i in 0..s {
                t.push(acc);
                acc += delta[ray * s + i];
            }
        }
        let g = Graph::new();
        let (sa, da, ta) = (
            Array::new(&[rays, s], sigma.clone()).unwrap(),
            Array::new(&[rays, s], delta.clone()).unwrap(),
            Array::new(&[rays, s], t).unwrap(),
        );
        let colors = g.constant(random_array(&[rays * s, 3], 0.0, 1.0, &mut r));
        let c = composite(&g, g.constant(sa), colors, &ta, &da, [1.0; 3]).unwrap();
        let w = g.value(c.weights);
        for ray in 0..rays {
            let ws = &w.data()[ray * s..(ray + 1) * s];
            // Independent transmittance: T_i = exp(−Σ_{j<i} σ_j δ_j).
            let mut optical = 0.0f64;
            let mut prev_t = f64::INFINITY;
            for i in 0..s {
                let ti = (-optical).exp();
                let alpha = 1.0 - (-sigma[ray * s + i] * delta[ray * s + i]).exp();
                worst_w = worst_w.max((ws[i] - ti * alpha).abs());
                if !(0.0..=1.0).contains(&ws[i]) || ti > prev_t {
                    violations += 1;
                }
                prev_t = ti;
                optical += sigma[ray * s + i] * delta[ray * s + i];
            }
            let total: f64 = ws.iter().sum();
            if total > 1.0 + 1e-12 {
                violations += 1;
            }
            worst_t = worst_t.max((g.value(c.opacity).data()[ray] - total).abs());
            composites += 1;
        }
    }
    let (near, far) = (2.0, 6.0);
    let samples = sample_along(near, far, 64, None).unwrap();
    let mut worst_h: f64 = 0.0;
    for sig in [0.01, 0.1, 0.5, 1.0, 3.0] {
        let g = Graph::new();
        let sv = g.constant(Array::full(&[1, 64], sig));
        let t = Array::new(&[1, 64], samples.t.clone()).unwrap();
        let d = Array::new(&[1, 64], samples.delta.clone()).unwrap();
        let c = composite(&g, sv, g.constant(Array::zeros(&[64, 3])), &t, &d, [0.0; 3]).unwrap();
        worst_h = worst_h.max((g.value(c.opacity).data()[0] - (1.0 - (-sig * (far - near)).exp())).abs());
    }
    let pass = composites == 10_000 && violations == 0 && worst_w < 1e-12 && worst_t < 1e-12 && worst_h < 1e-6;
    outcome(
        pass,
        format!(
            "{composites} random composites: {violations} invariant violations, weight vs independent T·α {worst_w:.1e}; \
             homogeneous opacity vs 1−e^(−σD) at 64 samples: {worst_h:.1e} (tol 1e-6)"
        ),
    )
}

fn hash_grid_formulas() -> Outcome {
    let cfg = HashGridConfig { levels: 8, n_min: 128, n_max: 512, feature_dim: 4, table_log2: 19 };
    let b = cfg.growth_factor();
    let res = grid_resolutions(&cfg).unwrap();
    // Continuity needs only the level layout, so a small table suffices.
    let small = HashGridConfig { table_log2: 12, ..cfg };
    let mut grid = HashGrid::new(small, &mut seeded(5)).unwrap();
    // Unit-scale tables, so a jump would not hide below the init scale.
    let mut r = seeded(6);
    for id in grid.params.ids().collect::<Vec<_>>() {
        let shape = grid.params.value(id).shape().to_vec();
        grid.params.set(id, random_array(&shape, -1.0, 1.0, &mut r)).unwrap();
    }
    let mut pts = Vec::new();
    for &n in grid.resolutions() {
        for axis in 0..3 {
            for _ in 0..20 {
                let face = r.gen_range(1..n) as f64 / n as f64;
                let mut p: [f64; 3] = std::array::from_fn(|_| r.gen_range(0.05..0.95));
                p[axis] = face - 1e-13;
                pts.extend_from_slice(&p);
                p[axis] = face + 1e-13;
                pts.extend_from_slice(&p);
            }
        }
    }
    let n = pts.len() / 3;
    let g = Graph::new();
    let bound = grid.params.bind(&g, false);
    let enc = g.value(grid.encode(&g, &bound, g.constant(Array::new(&[n, 3], pts).unwrap())).unwrap());
    let dim = small.output_dim();
    let mut jump: f64 = 0.0;
    for pair in 0..n / 2 {
        for k in 0..dim {
            jump = jump.max((enc.data()[2 * pair * dim + k] - enc.data()[(2 * pair + 1) * dim + k]).abs());
        }
    }
    // 4^(1/7) = 1.2190136…; the quoted 1.219013 is its first six decimals.
    let oracle = 4f64.powf(1.0 / 7.0);
    let six_decimals = (b * 1e6).floor() == 1_219_013.0;
    let pass = (b - oracle).abs() < 1e-14 && six_decimals && res[3] == 231 && jump < 1e-9;
    outcome(
        pass,
        format!(
            "b = {b:.10} vs 4^(1/7) = {oracle:.10}, first six decimals match 1.219013: {six_decimals}; N_3 = {} (expect 231), resolutions {res:?}; max jump across {} voxel faces {jump:.1e} (tol 1e-9)",
            res[3],
            n / 2
        ),
    )
}

fn annealing_values() -> Outcome {
    let s = AnnealSchedule::default();
    let got = [s.lambda_at(0.0), s.lambda_at(50.0), s.lambda_at(100.0), s.lambda_at(250.0)];
    let exact = got == [10.0, 1.0, 0.1, 0.1];
    let below = s.lambda_at(100.0 - 1e-9);
    let continuous = (below - s.lambda_at(100.0)).abs() < 1e-9 && s.lambda_at(100.0 + 1e-9) == s.lambda_at(100.0);
    outcome(exact && continuous, format!("λ(0, 50, 100, 250) = {got:?}; |λ(T−1e-9) − λ(T)| = {:.1e}", (below - got[2]).abs()))
}

fn nn_matching_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = seeded(8);
    let mut mismatched = 0usize;
    let mut rows = 0usize;
    for _ in 0..200 {
        let d = r.gen_range(1..=16);
        let (h1, w1, h2, w2) = (r.gen_range(1..=64), r.gen_range(1..=64), r.gen_range(1..=64), r.gen_range(1..=64));
        let a = random_array(&[h1 * w1, d], -1.0, 1.0, &mut r);
        let b = random_array(&[h2 * w2, d], -1.0, 1.0, &mut r);
        let got = nn_match(&a, &b).unwrap();
        for i in 0..h1 * w1 {
            let x = a.row(i);
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut best = (0usize, f64::INFINITY);
            for j in 0..h2 * w2 {
                let y = b.row(j);
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let dist = 1.0 - dot / (nx * ny + 1e-8);
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            mismatched += usize::from(got.indices[i] != best.0);
            rows += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatched == 0 && secs < 60.0,
        format!("200 random pairs up to 64x64x16, {rows} queries, {mismatched} index mismatches; {secs:.1}s (limit 60s)"),
    )
}

// ---------------------------------------------------------------------------
// Training criteria share one stage-1 field and one annealed stage-2 run.

fn sphere_dataset() -> SceneDataset {
    make_dataset(&AnalyticScene::sphere(), 3, 4, PosePattern::Arc, 32, 0).unwrap()
}

fn stage1_options(ds: &SceneDataset) -> RenderOptions {
    RenderOptions { samples: 32, stratified: true, background: ds.background, chunk: 2048 }
}

fn stage2_options(ds: &SceneDataset) -> RenderOptions {
    RenderOptions { samples: 24, stratified: false, background: ds.background, chunk: 2048 }
}

fn heldout_psnr(field: &CoarseField, ds: &SceneDataset) -> Vec<f64> {
    let opts = RenderOptions { stratified: false, ..stage1_options(ds) };
    ds.heldout
        .iter()
        .map(|v| {
            let r = render_image(FieldView::Coarse { field, bounds: ds.bounds }, &v.camera, &opts, 0).unwrap();
            psnr(&r.color, &v.image).unwrap()
        })
        .collect()
}

fn stage1_training(dir: &Path, trained: &mut Option<CoarseField>) -> Outcome {
    let start = Instant::now();
    let ds = sphere_dataset();
    let cfg = CoarseConfig { width: 64, ..CoarseConfig::default() };
    let stage = StageConfig { iterations: 5000, batch_rays: 128, checkpoint_every: 1000, ..StageConfig::coarse_default() };
    let out = Output::new(dir, "coarse");
    let (field, run): (CoarseField, TrainRun) = train_coarse(&ds, cfg, &stage, &stage1_options(&ds), Some(&out)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let final_psnr = heldout_psnr(&field, &ds);
    let mean = final_psnr.iter().sum::<f64>() / final_psnr.len() as f64;
    let trend: Vec<f64> = run.checkpoints[..5]
        .iter()
        .map(|p| {
            let (f, _) = load_coarse(p).unwrap();
            let v = heldout_psnr(&f, &ds);
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let block_loss: Vec<f64> = run.history.chunks(1000).map(|c| c.iter().map(|r| r.recon).sum::<f64>() / c.len() as f64).collect();
    let loss_down = block_loss.windows(2).all(|w| w[1] < w[0]);
    let psnr_up = trend.windows(2).all(|w| w[1] >= w[0] - 0.25) && trend[4] > trend[0];
    *trained = Some(field);
    outcome(
        mean >= 22.0 && loss_down && psnr_up && secs < 1200.0,
        format!(
            "held-out PSNR {:?} dB, mean {mean:.2} (threshold 22); checkpoint trend {:?}; block-mean loss {:?}; {secs:.0}s (limit 1200s)",
            final_psnr.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            trend.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            block_loss.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn residual_density_invariant(coarse: &CoarseField) -> Outcome {
    let ds = sphere_dataset();
    let h = HierarchicalField::new(coarse.clone(), FineConfig { width: 64, ..FineConfig::default() }, ds.bounds, &mut seeded(4)).unwrap();
    let rig = Rig::default();
    let mut r = seeded(10);
    let opts = stage2_options(&ds);
    let mut identical = 0;
    let mut worst: f64 = 0.0;
    for (az, el) in rig.random(PosePattern::Hemisphere, 10, &mut r) {
        let cam = rig.camera(az, el, 16, &ds.bounds).unwrap();
        let rays = cam.all_rays();
        let g = Graph::new();
        let a = render_rays(&g, &rays, cam.near, cam.far, &opts, &mut StepRng::new(0, 0), |g, rp| FieldView::coarse_of(&h).eval(g, rp)).unwrap();
        let b = render_rays(&g, &rays, cam.near, cam.far, &opts, &mut StepRng::new(0, 0), |g, rp| FieldView::Hierarchical(&h).eval(g, rp)).unwrap();
        let same = g.value(a.weights).data() == g.value(b.weights).data() && g.value(a.depth).data() == g.value(b.depth).data();
        worst = worst.max(g.value(a.weights).max_abs_diff(&g.value(b.weights)));
        identical += usize::from(same);
    }
    outcome(identical == 10, format!("{identical}/10 random poses render bit-identical weights and depth (max weight diff {worst:e})"))
}

fn style_setup() -> (SceneDataset, StyleConfig, stylefield::sceneio::Image, FeatureExtractor) {
    let ds = sphere_dataset();
    let cfg = StyleConfig { fine: FineConfig { width: 64, ..FineConfig::default() }, ..StyleConfig::default() };
    (ds, cfg, style_texture(StyleTexture::Stripes, 64, 0), FeatureExtractor::generate(EXTRACTOR_SEED))
}

fn annealing_pareto(coarse: &CoarseField, annealed_out: &mut Option<HierarchicalField>) -> Outcome {
    let start = Instant::now();
    let (ds, base, style, ex) = style_setup();
    let mut finals = Vec::new();
    for weight in [ContentWeight::default(), ContentWeight::Constant(10.0), ContentWeight::Constant(0.1)] {
        let cfg = StyleConfig { weight, ..base.clone() };
        let (field, run) = train_style(coarse.clone(), ds.bounds, &ds, &style, &ex, &cfg, &stage2_options(&ds), None).unwrap();
        let last = run.history.last().unwrap();
        finals.push((last.content, last.style));
        if annealed_out.is_none() {
            *annealed_out = Some(field);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let dominates = |o: (f64, f64), a: (f64, f64)| o.0 <= a.0 && o.1 <= a.1 && (o.0 < a.0 || o.1 < a.1);
    let a = finals[0];
    let ok = !dominates(finals[1], a) && !dominates(finals[2], a);
    outcome(
        ok && secs < 2700.0,
        format!(
            "final (content, style): annealed ({:.4}, {:.4}), λ=10 ({:.4}, {:.4}), λ=0.1 ({:.4}, {:.4}); annealed not dominated: {ok}; {secs:.0}s (limit 2700s)",
            a.0, a.1, finals[1].0, finals[1].1, finals[2].0, finals[2].1
        ),
    )
}

fn consistency_direction(stylized: &HierarchicalField) -> Outcome {
    let start = Instant::now();
    let (ds, cfg, style, ex) = style_setup();
    let opts = stage2_options(&ds);
    let rig = Rig::default();
    let (mut ours, mut baseline) = (Vec::new(), Vec::new());
    for i in 0..11 {
        let az = (-15.0 + 3.0 * i as f64).to_radians();
        let camera = rig.camera(az, rig.elevation, cfg.image_size, &ds.bounds).unwrap();
        let fine = render_image(FieldView::Hierarchical(stylized), &camera, &opts, 0).unwrap();
        let coarse = render_image(FieldView::coarse_of(stylized), &camera, &opts, 0).unwrap();
        let flat = stylize_per_view(&coarse.color, &style, &ex, &cfg.weight, &cfg.stage).unwrap();
        ours.push(PoseRender { image: fine.color.clone(), depth: fine.masked_depth(0.5), camera });
        baseline.push(PoseRender { image: flat, depth: coarse.masked_depth(0.5), camera });
    }
    let pairs: Vec<_> = (0..10).map(|i| (i, i + 1, Range::Short)).collect();
    let z_tol = 0.01 * ds.bounds.diameter();
    let a = consistency_report(&ours, &pairs, z_tol, &ex).unwrap().aggregate(Range::Short).0;
    let b = consistency_report(&baseline, &pairs, z_tol, &ex).unwrap().aggregate(Range::Short).0;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        a < b && secs < 1800.0,
        format!("masked warped RMSE over 10 short-range pairs: stylized field {a:.4} vs per-view 2D {b:.4}; {secs:.0}s (limit 1800s)"),
    )
}

// ---------------------------------------------------------------------------

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["stylefield"];
    argv.extend_from_slice(args);
    stylefield::cli::run(argv)
}

/// Every file under `dir` with its bytes, sorted by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("tiny.cfg");
    std::fs::write(
        &cfg,
        "scene.kind = sphere\ncoarse.width = 16\ncoarse.hidden_layers = 2\nstage1.iterations = 30\nstage1.checkpoint_every = 10\n\
         render.samples = 8\nstage2.iterations = 3\nstage2.checkpoint_every = 1\nstage2.image_size = 16\nfine.width = 16\n\
         grid.table_log2 = 10\nstage2.novel_poses = 1\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let d = |name: &str| root.join(name).to_str().unwrap().to_string();
    let mut codes = Vec::new();
    for run in ["a", "b"] {
        let (scene, coarse, style, render, eval) = (
            d(&format!("{run}-scene")),
            d(&format!("{run}-coarse")),
            d(&format!("{run}-style")),
            d(&format!("{run}-render")),
            d(&format!("{run}-eval")),
        );
        codes.push(cli(&["make-scene", "--config", cfg, "--out", &scene, "--seed", "7"]));
        codes.push(cli(&["train-coarse", "--config", cfg, "--out", &coarse, "--seed", "7"]));
        let ck = format!("{coarse}/coarse.sfck");
        codes.push(cli(&["train-style", "--config", cfg, "--out", &style, "--seed", "7", "--checkpoint", &ck]));
        let sk = format!("{style}/style.sfck");
        codes.push(cli(&["render", "--config", cfg, "--out", &render, "--seed", "7", "--checkpoint", &sk, "--pose-path", "arc4"]));
        codes.push(cli(&["evaluate", "--config", cfg, "--out", &eval, "--seed", "7", "--renders", &render]));
    }
    let mut differing = Vec::new();
    let mut files = 0;
    for stage in ["scene", "coarse", "style", "render", "eval"] {
        // scene.cfg points at the transforms file beside it, so it names its own directory.
        let norm = |run: &str| {
            let dir = root.join(format!("{run}-{stage}"));
            let prefix = dir.to_str().unwrap().to_string();
            snapshot(&dir)
                .into_iter()
                .map(|(p, bytes)| match p.to_str() {
                    Some("scene.cfg") => (p, String::from_utf8(bytes).unwrap().replace(&prefix, "<out>").into_bytes()),
                    _ => (p, bytes),
                })
                .collect::<Vec<_>>()
        };
        let (a, b) = (norm("a"), norm("b"));
        files += a.len();
        if a != b {
            differing.push(stage);
        }
    }
    let ok = codes.iter().all(|&c| c == 0) && differing.is_empty() && files > 0;
    outcome(
        ok,
        format!(
            "two CLI pipelines (make-scene, train-coarse, train-style, render, evaluate) with seed 7: exit codes {codes:?}; {files} files compared, differing stages {differing:?}"
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("scratch directory");
    let mut results = Vec::new();
    results.push(criterion("full-scale reference numbers kept as context", table_context_documented));
    results.push(criterion("gradient suite vs finite differences", gradient_suite));
    results.push(criterion("transmittance invariants and homogeneous opacity", rendering_physics));
    results.push(criterion("hash-grid growth factor, resolutions and continuity", hash_grid_formulas));
    results.push(criterion("content-weight annealing values", annealing_values));
    results.push(criterion("nearest-neighbor matching vs brute force", nn_matching_oracle));
    let mut coarse = None;
    results.push(criterion("stage-1 desk-scale training", || stage1_training(dir.path(), &mut coarse)));
    let mut annealed = None;
    match &coarse {
        Some(c) => {
            results.push(criterion("zero residual renders coarse geometry exactly", || residual_density_invariant(c)));
            results.push(criterion("annealed run not Pareto-dominated by constant weights", || annealing_pareto(c, &mut annealed)));
        }
        None => {
            results.push(criterion("zero residual renders coarse geometry exactly", || outcome(false, "no stage-1 field")));
            results.push(criterion("annealed run not Pareto-dominated by constant weights", || outcome(false, "no stage-1 field")));
        }
    }
    match &annealed {
        Some(h) => results.push(criterion("stylized field more consistent than per-view 2D", || consistency_direction(h))),
        None => results.push(criterion("stylized field more consistent than per-view 2D", || outcome(false, "no stage-2 field"))),
    }
    results.push(criterion("bit-identical reruns through the command line", determinism));
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
