//! Two-stage optimization: the coarse field is fitted to posed images, then
//! frozen while the fine field is stylized.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::checkpoint::{self, CHECKPOINT_MAGIC};
use crate::diffcore::{Adam, Array, Graph};
use crate::error::{Error, Result};
use crate::features::{image_to_chw, FeatureExtractor};
use crate::fields::{
    bounds_from_named, coarse_from_named, CoarseConfig, CoarseField, DensityMode, FineConfig, FineInput, HierarchicalField,
    SceneBounds,
};
use crate::objectives::{content_loss, recon_loss, style_loss, total_loss, ContentWeight, LossLog, LossReport};
use crate::renderer::{composite, normalize, ray_points, sub, Camera, RenderOptions};
use crate::sceneio::{Image, SceneDataset, UP};

/// Optimization settings of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub iterations: usize,
    pub lr: f64,
    /// `(iteration, factor)`: from that iteration on the rate is multiplied by `factor`.
    pub decay: Vec<(usize, f64)>,
    pub batch_rays: usize,
    pub seed: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
}

impl StageConfig {
    /// Desk-scale coarse stage.
    pub fn coarse_default() -> Self {
        Self {
            iterations: 5000,
            lr: 5e-4,
            decay: Vec::new(),
            batch_rays: 256,
            seed: 0,
            checkpoint_every: 1000,
        }
    }

    pub fn style_default() -> Self {
        Self {
            iterations: 150,
            lr: 5e-3,
            decay: vec![(50, 0.33), (100, 0.33)],
            batch_rays: 0,
            seed: 0,
            checkpoint_every: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid("trainer", format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(&(at, f)) = self.decay.iter().find(|(_, f)| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::invalid("trainer", format!("decay factor {f} at iteration {at} outside (0,1]")));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        self.decay
            .iter()
            .filter(|(at, _)| *at <= iter)
            .fold(self.lr, |lr, (_, f)| lr * f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Coarse,
    Style,
}

/// Record of a finished stage.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub stage: Stage,
    pub history: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
    /// Wall-clock seconds for each block of `checkpoint_every` steps (or the whole run).
    pub block_seconds: Vec<f64>,
}

impl TrainRun {
    fn new(stage: Stage) -> Self {
        Self {
            stage,
            history: Vec::new(),
            checkpoints: Vec::new(),
            block_seconds: Vec::new(),
        }
    }
}

/// Where a stage writes its artifacts.
#[derive(Clone, Debug)]
pub struct Output {
    pub dir: PathBuf,
    pub prefix: &'static str,
}

impl Output {
    pub fn new(dir: impl Into<PathBuf>, prefix: &'static str) -> Self {
        Self {
            dir: dir.into(),
            prefix,
        }
    }

    pub fn checkpoint(&self, iter: Option<usize>) -> PathBuf {
        match iter {
            Some(i) => self.dir.join(format!("{}-{i:06}.sfck", self.prefix)),
            None => self.dir.join(format!("{}.sfck", self.prefix)),
        }
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join(format!("{}_loss.jsonl", self.prefix))
    }
}

pub fn coarse_named(field: &CoarseField, bounds: &SceneBounds) -> Vec<(String, Array)> {
    let mut out = field.params.named("coarse.");
    out.push(("meta.bounds".into(), bounds.to_array()));
    out
}

pub fn save_coarse(path: &Path, field: &CoarseField, bounds: &SceneBounds) -> Result<()> {
    checkpoint::save(path, CHECKPOINT_MAGIC, &coarse_named(field, bounds))
}

pub fn load_coarse(path: &Path) -> Result<(CoarseField, SceneBounds)> {
    let arrays = checkpoint::load(path, CHECKPOINT_MAGIC)?;
    Ok((coarse_from_named(&arrays)?, bounds_from_named(&arrays)?))
}

pub fn save_hierarchical(path: &Path, field: &HierarchicalField) -> Result<()> {
    checkpoint::save(path, CHECKPOINT_MAGIC, &field.to_named())
}

pub fn load_hierarchical(path: &Path) -> Result<HierarchicalField> {
    HierarchicalField::from_named(&checkpoint::load(path, CHECKPOINT_MAGIC)?)
}

/// A checkpoint holding either a coarse field or a full hierarchical field.
pub enum LoadedField {
    Coarse(CoarseField, SceneBounds),
    Hierarchical(HierarchicalField),
}

pub fn load_any(path: &Path) -> Result<LoadedField> {
    let arrays = checkpoint::load(path, CHECKPOINT_MAGIC)?;
    if arrays.iter().any(|(n, _)| n.starts_with("fine.")) {
        Ok(LoadedField::Hierarchical(HierarchicalField::from_named(&arrays)?))
    } else {
        Ok(LoadedField::Coarse(coarse_from_named(&arrays)?, bounds_from_named(&arrays)?))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io("trainer", dir, e))
}

fn diverged(iteration: usize, last: &Option<PathBuf>) -> Error {
    Error::Diverged {
        iteration,
        checkpoint: last
            .as_ref()
            .map_or_else(|| "none".to_string(), |p| p.display().to_string()),
    }
}

/// Fits a fresh coarse field (initialized from `stage.seed`) to the training
/// views with random ray batches.
pub fn train_coarse(
    dataset: &SceneDataset,
    field_cfg: CoarseConfig,
    stage: &StageConfig,
    render: &RenderOptions,
    out: Option<&Output>,
) -> Result<(CoarseField, TrainRun)> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage.seed);
    let field = CoarseField::new(field_cfg, &mut rng)?;
    continue_coarse(field, dataset, stage, render, out, &mut rng)
}

fn continue_coarse(
    mut field: CoarseField,
    dataset: &SceneDataset,
    stage: &StageConfig,
    render: &RenderOptions,
    out: Option<&Output>,
    rng: &mut ChaCha8Rng,
) -> Result<(CoarseField, TrainRun)> {
    stage.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::invalid("trainer", "dataset has no training views"));
    }
    if stage.batch_rays == 0 {
        return Err(Error::invalid("trainer", "coarse stage needs a positive ray batch"));
    }
    let mut log = match out {
        Some(o) => {
            ensure_dir(&o.dir)?;
            Some(LossLog::create(&o.log())?)
        }
        None => None,
    };
    let bounds = dataset.bounds;
    let mut adam = Adam::new(stage.lr);
    let mut run = TrainRun::new(Stage::Coarse);
    let mut last_good: Option<PathBuf> = None;
    let mut clock = Instant::now();
    for iter in 0..stage.iterations {
        let mut rays = Vec::with_capacity(stage.batch_rays);
        let mut target = Vec::with_capacity(stage.batch_rays * 3);
        let mut near_far = (f64::INFINITY, 0.0f64);
        for _ in 0..stage.batch_rays {
            let view = &dataset.train[rng.gen_range(0..dataset.train.len())];
            let cam = &view.camera;
            let (u, v) = (rng.gen_range(0..cam.width), rng.gen_range(0..cam.height));
            rays.push(cam.pixel_ray(u, v)?);
            target.extend_from_slice(view.image.pixel(u, v));
            near_far = (near_far.0.min(cam.near), near_far.1.max(cam.far));
        }
        let loss = {
            let g = Graph::new();
            let b = field.params.bind(&g, true);
            let rp = ray_points(&rays, near_far.0, near_far.1, render, rng)?;
            let o = field.forward_points(&g, &b, &bounds, &rp.points, &rp.dirs)?;
            let sigma = g.reshape(o.sigma, &[rays.len(), render.samples])?;
            let c = composite(&g, sigma, o.color, &rp.t, &rp.delta, render.background)?;
            let truth = g.constant(Array::new(&[rays.len(), 3], target)?);
            let loss = recon_loss(&g, c.color, truth)?;
            let value = g.item(loss);
            if !value.is_finite() {
                return Err(diverged(iter, &last_good));
            }
            g.backward(loss)?;
            field.params.accumulate_grads(&g, &b);
            value
        };
        adam.lr = stage.lr_at(iter);
        adam.step(&mut field.params).map_err(|_| diverged(iter, &last_good))?;
        let report = LossReport {
            iter,
            lambda: 0.0,
            recon: loss,
            content: 0.0,
            style: 0.0,
            total: loss,
        };
        if let Some(log) = log.as_mut() {
            log.append(&report)?;
        }
        run.history.push(report);
        let done = iter + 1;
        if stage.checkpoint_every > 0 && done % stage.checkpoint_every == 0 {
            run.block_seconds.push(clock.elapsed().as_secs_f64());
            clock = Instant::now();
            if let Some(o) = out {
                let p = o.checkpoint(Some(done));
                save_coarse(&p, &field, &bounds)?;
                run.checkpoints.push(p.clone());
                last_good = Some(p);
            }
        }
    }
    if stage.checkpoint_every == 0 || stage.iterations % stage.checkpoint_every != 0 {
        run.block_seconds.push(clock.elapsed().as_secs_f64());
    }
    if let Some(o) = out {
        let p = o.checkpoint(None);
        save_coarse(&p, &field, &bounds)?;
        run.checkpoints.push(p);
    }
    Ok((field, run))
}

/// Settings of the stylization stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleConfig {
    pub stage: StageConfig,
    pub fine: FineConfig,
    pub weight: ContentWeight,
    pub density: DensityMode,
    /// Extra content poses sampled between the training cameras.
    pub novel_poses: usize,
    /// Width of the stylization renders.
    pub image_size: usize,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            stage: StageConfig::style_default(),
            fine: FineConfig::default(),
            weight: ContentWeight::default(),
            density: DensityMode::Residual,
            novel_poses: 6,
            image_size: 32,
        }
    }
}

/// Ablation switches for the stylization stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Ablation {
    pub no_residual_density: bool,
    pub pe_instead_of_hash: bool,
    pub ec_only: bool,
    pub constant_lambda: Option<f64>,
}

impl Ablation {
    pub fn apply(&self, cfg: &mut StyleConfig) -> Result<()> {
        if self.pe_instead_of_hash && self.ec_only {
            return Err(Error::invalid(
                "trainer",
                "conflicting ablations: pe-instead-of-hash and ec-only both replace the fine input",
            ));
        }
        if self.no_residual_density {
            cfg.density = DensityMode::CoarseOnly;
        }
        if self.pe_instead_of_hash {
            cfg.fine.input = FineInput::high_frequency_pe();
        }
        if self.ec_only {
            cfg.fine.input = FineInput::FeatureOnly;
        }
        if let Some(l) = self.constant_lambda {
            if !(l >= 0.0) {
                return Err(Error::invalid("trainer", format!("constant λ must be nonnegative, got {l}")));
            }
            cfg.weight = ContentWeight::Constant(l);
        }
        Ok(())
    }
}

/// Same camera at a different width (aspect ratio kept).
pub fn rescale_camera(cam: &Camera, width: usize) -> Result<Camera> {
    let s = width as f64 / cam.width as f64;
    let height = ((cam.height as f64 * s).round() as usize).max(1);
    Camera::new(
        cam.fx * s,
        cam.fy * s,
        (cam.cx + 0.5) * s - 0.5,
        (cam.cy + 0.5) * s - 0.5,
        width,
        height,
        cam.c2w,
        cam.near,
        cam.far,
    )
}

/// Look-at cameras between random pairs of `cameras`, aimed at `center`.
pub fn novel_poses(cameras: &[Camera], k: usize, center: [f64; 3], rng: &mut impl Rng) -> Result<Vec<Camera>> {
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let a = &cameras[rng.gen_range(0..cameras.len())];
        let b = &cameras[rng.gen_range(0..cameras.len())];
        let s: f64 = rng.gen_range(0.0..1.0);
        let (oa, ob) = (sub(a.origin(), center), sub(b.origin(), center));
        let radius = (1.0 - s) * crate::renderer::norm(oa) + s * crate::renderer::norm(ob);
        let mut dir: [f64; 3] = std::array::from_fn(|i| (1.0 - s) * oa[i] + s * ob[i]);
        // Small jitter so that a single training camera still yields distinct poses.
        for d in dir.iter_mut() {
            *d += rng.gen_range(-0.05..0.05) * radius;
        }
        let dir = normalize(dir);
        let eye: [f64; 3] = std::array::from_fn(|i| center[i] + radius * dir[i]);
        let fov_x = 2.0 * (0.5 * a.width as f64 / a.fx).atan();
        out.push(Camera::look_at(eye, center, UP, fov_x, a.width, a.height, a.near, a.far)?);
    }
    Ok(out)
}

/// Precomputed per-pose inputs of the stylization loss.
struct ContentPose {
    camera: Camera,
    points: Vec<[f64; 3]>,
    t: Array,
    delta: Array,
    sigma_coarse: Array,
    feature_coarse: Array,
    content_rows: Array,
}

fn content_poses(
    coarse: &CoarseField,
    bounds: &SceneBounds,
    cameras: &[Camera],
    extractor: &FeatureExtractor,
    render: &RenderOptions,
) -> Result<Vec<ContentPose>> {
    let opts = RenderOptions {
        stratified: false,
        ..*render
    };
    let mut out = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let rays = cam.all_rays();
        let rp = ray_points(&rays, cam.near, cam.far, &opts, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        let g = Graph::new();
        let b = coarse.params.bind(&g, false);
        let o = coarse.forward_points(&g, &b, bounds, &rp.points, &rp.dirs)?;
        let sigma = g.reshape(o.sigma, &[rays.len(), opts.samples])?;
        let c = composite(&g, sigma, o.color, &rp.t, &rp.delta, opts.background)?;
        let img = color_to_chw(&g.value(c.color), cam)?;
        let content_rows = (*g.value(extractor.feature_rows(&g, g.constant(img))?)).clone();
        out.push(ContentPose {
            camera: *cam,
            sigma_coarse: (*g.value(o.sigma)).clone(),
            feature_coarse: (*g.value(o.feature)).clone(),
            points: rp.points,
            t: rp.t,
            delta: rp.delta,
            content_rows,
        });
    }
    Ok(out)
}

fn color_to_chw(color: &Array, cam: &Camera) -> Result<Array> {
    let (w, h) = (cam.width, cam.height);
    let img = Image::new(w, h, 3, color.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    image_to_chw(&img)
}

/// Stylizes a frozen coarse field: each step renders one full content pose
/// (round-robin) through the hierarchical field and descends
/// `λ(t)·content + style` on the fine and grid parameters only.
#[allow(clippy::too_many_arguments)]
pub fn train_style(
    coarse: CoarseField,
    bounds: SceneBounds,
    dataset: &SceneDataset,
    style: &Image,
    extractor: &FeatureExtractor,
    cfg: &StyleConfig,
    render: &RenderOptions,
    out: Option<&Output>,
) -> Result<(HierarchicalField, TrainRun)> {
    cfg.stage.validate()?;
    if style.width().min(style.height()) < 64 {
        return Err(Error::invalid(
            "trainer",
            format!("style image must be at least 64 px, got {}x{}", style.width(), style.height()),
        ));
    }
    if dataset.train.is_empty() {
        return Err(Error::invalid("trainer", "dataset has no training views"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage.seed);
    let mut field = HierarchicalField::new(coarse, cfg.fine, bounds, &mut rng)?;
    field.density_mode = cfg.density;

    let mut cameras = dataset
        .train
        .iter()
        .map(|v| rescale_camera(&v.camera, cfg.image_size))
        .collect::<Result<Vec<_>>>()?;
    let center: [f64; 3] = std::array::from_fn(|i| 0.5 * (bounds.min[i] + bounds.max[i]));
    let novel = novel_poses(&cameras, cfg.novel_poses, center, &mut rng)?;
    cameras.extend(novel);
    let poses = content_poses(&field.coarse, &bounds, &cameras, extractor, render)?;
    let style_rows = extractor.extract(style)?.rows;

    let coarse_print = field.coarse.params.fingerprint();
    let extractor_print = extractor.fingerprint();
    let mut log = match out {
        Some(o) => {
            ensure_dir(&o.dir)?;
            Some(LossLog::create(&o.log())?)
        }
        None => None,
    };
    let mut adam_fine = Adam::new(cfg.stage.lr);
    let mut adam_grid = Adam::new(cfg.stage.lr);
    let mut run = TrainRun::new(Stage::Style);
    let mut last_good: Option<PathBuf> = None;
    let mut clock = Instant::now();
    for iter in 0..cfg.stage.iterations {
        let pose = &poses[iter % poses.len()];
        let lambda = cfg.weight.at(iter);
        let report = {
            let g = Graph::new();
            let binding = field.bind(&g, true);
            let sc = g.constant(pose.sigma_coarse.clone());
            let ec = g.constant(pose.feature_coarse.clone());
            let (sigma, color) = field.forward_fine(&g, &binding, &pose.points, sc, ec)?;
            let r = pose.t.shape()[0];
            let sigma = g.reshape(sigma, &[r, render.samples])?;
            let c = composite(&g, sigma, color, &pose.t, &pose.delta, render.background)?;
            let (w, h) = (pose.camera.width, pose.camera.height);
            let chw = g.transpose(c.color)?;
            let img = g.reshape(chw, &[3, h, w])?;
            let feats = extractor.feature_rows(&g, img)?;
            let content_target = g.constant(pose.content_rows.clone());
            let lc = content_loss(&g, feats, content_target)?;
            let (ls, _) = style_loss(&g, feats, &style_rows)?;
            let total = total_loss(&g, lc, ls, lambda)?;
            let report = LossReport {
                iter,
                lambda,
                recon: 0.0,
                content: g.item(lc),
                style: g.item(ls),
                total: g.item(total),
            };
            if !report.is_finite() {
                return Err(diverged(iter, &last_good));
            }
            g.backward(total)?;
            field.fine.params.accumulate_grads(&g, &binding.fine);
            if let (Some(grid), Some(gb)) = (field.grid.as_mut(), binding.grid.as_ref()) {
                grid.params.accumulate_grads(&g, gb);
            }
            report
        };
        let lr = cfg.stage.lr_at(iter);
        adam_fine.lr = lr;
        adam_fine.step(&mut field.fine.params).map_err(|_| diverged(iter, &last_good))?;
        if let Some(grid) = field.grid.as_mut() {
            adam_grid.lr = lr;
            adam_grid.step(&mut grid.params).map_err(|_| diverged(iter, &last_good))?;
        }
        if field.coarse.params.fingerprint() != coarse_print || extractor.fingerprint() != extractor_print {
            return Err(Error::invalid(
                "trainer",
                format!("frozen parameters changed during stylization step {iter}"),
            ));
        }
        if let Some(log) = log.as_mut() {
            log.append(&report)?;
        }
        run.history.push(report);
        let done = iter + 1;
        if cfg.stage.checkpoint_every > 0 && done % cfg.stage.checkpoint_every == 0 {
            run.block_seconds.push(clock.elapsed().as_secs_f64());
            clock = Instant::now();
            if let Some(o) = out {
                let p = o.checkpoint(Some(done));
                save_hierarchical(&p, &field)?;
                run.checkpoints.push(p.clone());
                last_good = Some(p);
            }
        }
    }
    if cfg.stage.checkpoint_every == 0 || cfg.stage.iterations % cfg.stage.checkpoint_every != 0 {
        run.block_seconds.push(clock.elapsed().as_secs_f64());
    }
    if let Some(o) = out {
        let p = o.checkpoint(None);
        save_hierarchical(&p, &field)?;
        run.checkpoints.push(p);
    }
    Ok((field, run))
}

/// Baseline without any 3-D field: optimizes the pixels of one image
/// directly under the same content and style losses, starting from
/// `content`. Views stylized this way know nothing about each other.
pub fn stylize_per_view(
    content: &Image,
    style: &Image,
    extractor: &FeatureExtractor,
    weight: &ContentWeight,
    stage: &StageConfig,
) -> Result<Image> {
    stage.validate()?;
    let (w, h) = (content.width(), content.height());
    let chw = image_to_chw(content)?;
    let logits = chw.map(|v| {
        let v = v.clamp(1e-3, 1.0 - 1e-3);
        (v / (1.0 - v)).ln()
    });
    let content_rows = extractor.extract(content)?.rows;
    let style_rows = extractor.extract(style)?.rows;
    let mut params = crate::diffcore::ParamStore::new();
    let id = params.insert("pixels", logits);
    let mut adam = Adam::new(stage.lr);
    for iter in 0..stage.iterations {
        {
            let g = Graph::new();
            let b = params.bind(&g, true);
            let img = g.sigmoid(b.var(id));
            let feats = extractor.feature_rows(&g, img)?;
            let lc = content_loss(&g, feats, g.constant(content_rows.clone()))?;
            let (ls, _) = style_loss(&g, feats, &style_rows)?;
            let total = total_loss(&g, lc, ls, weight.at(iter))?;
            if !g.item(total).is_finite() {
                return Err(diverged(iter, &None));
            }
            g.backward(total)?;
            params.accumulate_grads(&g, &b);
        }
        adam.lr = stage.lr_at(iter);
        adam.step(&mut params)?;
    }
    let px = params.value(id).map(|v| 1.0 / (1.0 + (-v).exp()));
    let mut data = vec![0.0; w * h * 3];
    for c in 0..3 {
        for i in 0..w * h {
            data[i * 3 + c] = px.data()[c * w * h + i];
        }
    }
    Image::new(w, h, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encodings::{HashGridConfig, PositionalEncodingConfig};
    use crate::sceneio::{make_dataset, style_texture, AnalyticScene, PosePattern, StyleTexture};

    fn tiny_coarse() -> CoarseConfig {
        CoarseConfig {
            pe: PositionalEncodingConfig { levels: 3, include_identity: true },
            width: 16,
            hidden_layers: 2,
            feature_dim: 8,
            color_width: 8,
        }
    }

    fn tiny_render() -> RenderOptions {
        RenderOptions {
            samples: 8,
            stratified: true,
            background: [1.0; 3],
            chunk: 1024,
        }
    }

    fn tiny_stage(iterations: usize, seed: u64) -> StageConfig {
        StageConfig {
            iterations,
            lr: 1e-2,
            decay: Vec::new(),
            batch_rays: 32,
            seed,
            checkpoint_every: 2,
        }
    }

    #[test]
    fn lr_schedule_follows_decay_events() {
        let s = StageConfig::style_default();
        assert_eq!(s.lr_at(0), 5e-3);
        assert_eq!(s.lr_at(49), 5e-3);
        assert_eq!(s.lr_at(50), 5e-3 * 0.33);
        assert_eq!(s.lr_at(99), 5e-3 * 0.33);
        assert_eq!(s.lr_at(100), 5e-3 * 0.33 * 0.33);
        assert_eq!(s.lr_at(149), s.lr_at(100));
        let bad = StageConfig { decay: vec![(3, 1.5)], ..s };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let ds = make_dataset(&AnalyticScene::sphere(), 1, 0, PosePattern::Arc, 8, 0).unwrap();
        let (f, run) = train_coarse(&ds, tiny_coarse(), &tiny_stage(0, 5), &tiny_render(), None).unwrap();
        let fresh = CoarseField::new(tiny_coarse(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(f.params.fingerprint(), fresh.params.fingerprint());
        assert!(run.history.is_empty());
    }

    #[test]
    fn coarse_training_is_deterministic_and_checkpoints() {
        let ds = make_dataset(&AnalyticScene::sphere(), 2, 0, PosePattern::Arc, 8, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = Output { dir: dir.path().to_path_buf(), prefix: "coarse" };
        let (a, run) = train_coarse(&ds, tiny_coarse(), &tiny_stage(5, 1), &tiny_render(), Some(&out)).unwrap();
        let (b, _) = train_coarse(&ds, tiny_coarse(), &tiny_stage(5, 1), &tiny_render(), None).unwrap();
        assert_eq!(a.params.fingerprint(), b.params.fingerprint());
        assert_eq!(run.history.len(), 5);
        assert_eq!(run.checkpoints.len(), 3);
        let (back, bounds) = load_coarse(&out.checkpoint(None)).unwrap();
        assert_eq!(back.params.fingerprint(), a.params.fingerprint());
        assert_eq!(bounds, ds.bounds);
        assert_eq!(crate::objectives::read_loss_log(&out.log()).unwrap(), run.history);
    }

    fn tiny_style(iterations: usize) -> StyleConfig {
        StyleConfig {
            stage: StageConfig {
                iterations,
                lr: 5e-3,
                decay: vec![(2, 0.33)],
                batch_rays: 0,
                seed: 3,
                checkpoint_every: 0,
            },
            fine: FineConfig {
                input: FineInput::HashGrid(HashGridConfig { levels: 2, n_min: 4, n_max: 8, feature_dim: 2, table_log2: 8 }),
                width: 16,
                hidden_layers: 2,
            },
            weight: ContentWeight::default(),
            density: DensityMode::Residual,
            novel_poses: 1,
            image_size: 8,
        }
    }

    #[test]
    fn stylization_never_touches_the_coarse_field() {
        let ds = make_dataset(&AnalyticScene::sphere(), 2, 0, PosePattern::Arc, 8, 0).unwrap();
        let (coarse, _) = train_coarse(&ds, tiny_coarse(), &tiny_stage(3, 1), &tiny_render(), None).unwrap();
        let before = coarse.params.fingerprint();
        let style = style_texture(StyleTexture::Stripes, 64, 0);
        let ex = FeatureExtractor::generate(crate::features::EXTRACTOR_SEED);
        let render = RenderOptions { stratified: false, ..tiny_render() };
        let (h, run) = train_style(coarse, ds.bounds, &ds, &style, &ex, &tiny_style(4), &render, None).unwrap();
        assert_eq!(h.coarse.params.fingerprint(), before);
        assert_eq!(run.history.len(), 4);
        assert_eq!(run.history[0].lambda, 10.0);
        let (h2, run2) = {
            let (coarse, _) = train_coarse(&ds, tiny_coarse(), &tiny_stage(3, 1), &tiny_render(), None).unwrap();
            train_style(coarse, ds.bounds, &ds, &style, &ex, &tiny_style(4), &render, None).unwrap()
        };
        assert_eq!(run.history, run2.history);
        assert_eq!(h.fine.params.fingerprint(), h2.fine.params.fingerprint());
    }

    #[test]
    fn small_style_images_rejected() {
        let ds = make_dataset(&AnalyticScene::sphere(), 1, 0, PosePattern::Arc, 8, 0).unwrap();
        let coarse = CoarseField::new(tiny_coarse(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let ex = FeatureExtractor::generate(1);
        let style = style_texture(StyleTexture::Stripes, 32, 0);
        assert!(train_style(coarse, ds.bounds, &ds, &style, &ex, &tiny_style(1), &tiny_render(), None).is_err());
    }

    #[test]
    fn conflicting_ablations_rejected() {
        let mut cfg = StyleConfig::default();
        let both = Ablation { pe_instead_of_hash: true, ec_only: true, ..Default::default() };
        assert!(both.apply(&mut cfg).is_err());
        let ec = Ablation { ec_only: true, constant_lambda: Some(10.0), ..Default::default() };
        ec.apply(&mut cfg).unwrap();
        assert_eq!(cfg.fine.input, FineInput::FeatureOnly);
        assert_eq!(cfg.weight, ContentWeight::Constant(10.0));
    }

    #[test]
    fn rescaled_camera_keeps_rays() {
        let cam = Camera::look_at([1.0, 2.0, -4.0], [0.0; 3], UP, 0.7, 64, 48, 1.0, 8.0).unwrap();
        let small = rescale_camera(&cam, 16).unwrap();
        assert_eq!((small.width, small.height), (16, 12));
        // Pixel (0,0) of the small image covers pixels 0..4 of the large one: centers at 1.5.
        let a = small.pixel_ray(0, 0).unwrap();
        let b = cam.ray_through(1.5, 1.5);
        assert!((0..3).all(|i| (a.dir[i] - b.dir[i]).abs() < 1e-12));
    }
}
