//! Command-line front end. `run` parses arguments, executes one subcommand
//! and maps the outcome to an exit code: 0 success, 1 usage error,
//! 2 runtime failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::encodings::{HashGridConfig, PositionalEncodingConfig};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::fields::{CoarseConfig, FineConfig, FineInput, SceneBounds};
use crate::metrics::{auto_pairs, consistency_report, PoseRender};
use crate::objectives::{read_loss_log, AnnealSchedule, ContentWeight, LossReport};
use crate::renderer::{render_image, Camera, FieldView, Mat4, RenderOptions};
use crate::sceneio::{
    load_transforms_json, make_dataset_with_rig, read_pfm, read_png, style_texture, write_pfm, write_png,
    write_transforms_json, AnalyticScene, Image, PosePattern, Rig, RunConfig, SceneDataset, StyleTexture,
    TransformsOptions,
};
use crate::trainer::{
    load_any, load_coarse, save_coarse, train_coarse, train_style, Ablation, LoadedField, Output, StageConfig,
    StyleConfig,
};

#[derive(Parser, Debug)]
#[command(name = "stylefield", version, about = "Sparse-view scene fitting and 3-D consistent stylization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: run-<timestamp>-<seed>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every stochastic component; overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Oracle-render a synthetic scene (images, depths, transforms.json) and the style textures.
    MakeScene {
        #[command(flatten)]
        common: Common,
    },
    /// Write the fixed-seed feature extractor weights.
    GenExtractorWeights {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the coarse field to the training views.
    TrainCoarse {
        #[command(flatten)]
        common: Common,
    },
    /// Stylize a trained coarse field.
    TrainStyle {
        #[command(flatten)]
        common: Common,
        /// Coarse checkpoint to stylize.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Render density from the coarse field only.
        #[arg(long)]
        no_residual: bool,
        /// Feed a positional encoding to the fine field instead of the hash grid.
        #[arg(long)]
        pe_not_hash: bool,
        /// Feed only the coarse features to the fine field.
        #[arg(long)]
        ec_only: bool,
        /// Fixed content weight instead of the annealed schedule.
        #[arg(long)]
        constant_lambda: Option<f64>,
    },
    /// Render a checkpoint along a camera path.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `circle<N>` (full orbit) or `arc<N>` (the training arc).
        #[arg(long, default_value = "circle60")]
        pose_path: String,
        /// Render the coarse level of a stylized checkpoint.
        #[arg(long)]
        coarse: bool,
    },
    /// Cross-view consistency metrics of a render directory.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `render`.
        #[arg(long)]
        renders: PathBuf,
        /// Pair selection; only `auto` (adjacent and half-path-apart poses).
        #[arg(long, default_value = "auto")]
        pairs: String,
    },
    /// Stylization ablation matrix: contact sheet and loss traces.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Coarse checkpoint (trained from the config when absent).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Runs the command line `argv` (including the program name).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.module());
            2
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::MakeScene { common } => make_scene(&Ctx::new("make-scene", &common)?),
        Command::GenExtractorWeights { common } => gen_extractor(&Ctx::new("gen-extractor-weights", &common)?),
        Command::TrainCoarse { common } => cmd_train_coarse(&Ctx::new("train-coarse", &common)?),
        Command::TrainStyle {
            common,
            checkpoint,
            no_residual,
            pe_not_hash,
            ec_only,
            constant_lambda,
        } => {
            let ctx = Ctx::new("train-style", &common)?;
            let ablation = Ablation {
                no_residual_density: no_residual || ctx.cfg.bool("stage2.no_residual")?,
                pe_instead_of_hash: pe_not_hash,
                ec_only,
                constant_lambda: constant_lambda.or(ctx.cfg.list("anneal.constant")?.first().copied()),
            };
            cmd_train_style(&ctx, &checkpoint, ablation)
        }
        Command::Render {
            common,
            checkpoint,
            pose_path,
            coarse,
        } => cmd_render(&Ctx::new("render", &common)?, &checkpoint, &pose_path, coarse),
        Command::Evaluate { common, renders, pairs } => {
            if pairs != "auto" {
                return Err(Error::invalid("cli", format!("unknown pair selection `{pairs}` (auto)")));
            }
            cmd_evaluate(&Ctx::new("evaluate", &common)?, &renders)
        }
        Command::Ablate { common, checkpoint } => cmd_ablate(&Ctx::new("ablate", &common)?, checkpoint.as_deref()),
    }
}

/// Resolved configuration and output directory of one invocation.
struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
}

impl Ctx {
    fn new(command: &str, common: &Common) -> Result<Self> {
        let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
        if let Some(s) = common.seed {
            cfg.set("seed", &s.to_string())?;
        }
        let seed = cfg.int("seed")? as u64;
        let out = common.out.clone().unwrap_or_else(|| {
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            PathBuf::from(format!("run-{now}-{seed}"))
        });
        std::fs::create_dir_all(&out).map_err(|e| Error::io("cli", &out, e))?;
        let mut manifest = format!(
            "command = {command}\nstylefield_version = {}\ncheckpoint_format = SFCK\n",
            env!("CARGO_PKG_VERSION")
        );
        manifest.push_str(&cfg.to_text());
        let path = out.join("manifest.txt");
        std::fs::write(&path, manifest).map_err(|e| Error::io("cli", &path, e))?;
        Ok(Self { cfg, out, seed })
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io("cli", &p, e))
    }
}

fn rig(cfg: &RunConfig) -> Result<Rig> {
    Ok(Rig {
        radius: cfg.float("scene.radius")?,
        fov_x: cfg.float("scene.fov_deg")?.to_radians(),
        elevation: cfg.float("scene.elevation_deg")?.to_radians(),
        arc_span: cfg.float("scene.arc_span_deg")?.to_radians(),
    })
}

fn scene(cfg: &RunConfig) -> Result<AnalyticScene> {
    match cfg.text("scene.kind")? {
        "sphere" => Ok(AnalyticScene::sphere()),
        "tabletop" => Ok(AnalyticScene::tabletop()),
        other => Err(Error::Config {
            key: "scene.kind".into(),
            msg: format!("unknown scene `{other}` (sphere|tabletop)"),
        }),
    }
}

fn dataset(ctx: &Ctx) -> Result<SceneDataset> {
    let cfg = &ctx.cfg;
    let transforms = cfg.text("data.transforms")?;
    if !transforms.is_empty() {
        let opts = TransformsOptions {
            near: cfg.float("data.near")?,
            far: cfg.float("data.far")?,
            bounds: SceneBounds::cube(cfg.float("data.bound")?),
            ..TransformsOptions::default()
        };
        return load_transforms_json(Path::new(transforms), &opts);
    }
    make_dataset_with_rig(
        &scene(cfg)?,
        cfg.usize("scene.n_train")?,
        cfg.usize("scene.n_heldout")?,
        PosePattern::from_str(cfg.text("scene.pattern")?)?,
        cfg.usize("scene.image_size")?,
        ctx.seed,
        &rig(cfg)?,
    )
}

fn render_options(cfg: &RunConfig, background: [f64; 3], stratified: bool) -> Result<RenderOptions> {
    Ok(RenderOptions {
        samples: cfg.usize("render.samples")?,
        stratified,
        background,
        chunk: cfg.usize("render.chunk")?,
    })
}

fn coarse_config(cfg: &RunConfig) -> Result<CoarseConfig> {
    Ok(CoarseConfig {
        pe: PositionalEncodingConfig {
            levels: cfg.usize("coarse.pe_levels")?,
            include_identity: cfg.bool("coarse.pe_identity")?,
        },
        width: cfg.usize("coarse.width")?,
        hidden_layers: cfg.usize("coarse.hidden_layers")?,
        feature_dim: cfg.usize("coarse.feature_dim")?,
        color_width: cfg.usize("coarse.color_width")?,
    })
}

fn style_config(ctx: &Ctx) -> Result<StyleConfig> {
    let cfg = &ctx.cfg;
    let input = match cfg.text("fine.input")? {
        "hash" => FineInput::HashGrid(HashGridConfig {
            levels: cfg.usize("grid.levels")?,
            n_min: cfg.usize("grid.n_min")?,
            n_max: cfg.usize("grid.n_max")?,
            feature_dim: cfg.usize("grid.feature_dim")?,
            table_log2: cfg.usize("grid.table_log2")? as u32,
        }),
        "pe" => FineInput::Positional(PositionalEncodingConfig {
            levels: cfg.usize("fine.pe_levels")?,
            include_identity: true,
        }),
        "feature" => FineInput::FeatureOnly,
        other => {
            return Err(Error::Config {
                key: "fine.input".into(),
                msg: format!("unknown fine input `{other}` (hash|pe|feature)"),
            })
        }
    };
    let factor = cfg.float("stage2.decay_factor")?;
    let decay = cfg.list("stage2.decay_at")?.iter().map(|&i| (i as usize, factor)).collect();
    Ok(StyleConfig {
        stage: StageConfig {
            iterations: cfg.usize("stage2.iterations")?,
            lr: cfg.float("stage2.lr")?,
            decay,
            batch_rays: 0,
            seed: ctx.seed,
            checkpoint_every: cfg.usize("stage2.checkpoint_every")?,
        },
        fine: FineConfig {
            input,
            width: cfg.usize("fine.width")?,
            hidden_layers: cfg.usize("fine.hidden_layers")?,
        },
        weight: ContentWeight::Annealed(AnnealSchedule::new(
            cfg.float("anneal.lambda0")?,
            cfg.float("anneal.alpha")?,
            cfg.float("anneal.period")?,
        )?),
        novel_poses: cfg.usize("stage2.novel_poses")?,
        image_size: cfg.usize("stage2.image_size")?,
        ..StyleConfig::default()
    })
}

fn extractor(cfg: &RunConfig) -> Result<FeatureExtractor> {
    let path = cfg.text("extractor.weights")?;
    if path.is_empty() {
        Ok(FeatureExtractor::generate(cfg.int("extractor.seed")? as u64))
    } else {
        FeatureExtractor::load(Path::new(path))
    }
}

fn style_image(ctx: &Ctx) -> Result<Image> {
    let path = ctx.cfg.text("style.image")?;
    if !path.is_empty() {
        return read_png(Path::new(path));
    }
    let kind = StyleTexture::from_str(ctx.cfg.text("style.texture")?)?;
    Ok(style_texture(kind, ctx.cfg.usize("style.size")?, ctx.seed))
}

fn make_scene(ctx: &Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    for (split, views) in [("train", &ds.train), ("heldout", &ds.heldout)] {
        let dir = ctx.out.join(split);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io("cli", &dir, e))?;
        let mut frames = Vec::new();
        for (i, v) in views.iter().enumerate() {
            let name = format!("r_{i:03}");
            write_png(&dir.join(format!("{name}.png")), &v.image)?;
            if let Some(d) = &v.depth {
                write_pfm(&dir.join(format!("{name}_depth.pfm")), d)?;
            }
            frames.push((format!("{split}/{name}"), v.camera));
        }
        if !frames.is_empty() {
            write_transforms_json(&ctx.out.join(format!("transforms_{split}.json")), &frames)?;
        }
    }
    for kind in StyleTexture::ALL {
        let size = ctx.cfg.usize("style.size")?;
        write_png(&ctx.out.join(format!("style_{}.png", kind.name())), &style_texture(kind, size, ctx.seed))?;
    }
    let cam = &ds.train[0].camera;
    let half = 0.5 * (ds.bounds.max[0] - ds.bounds.min[0]);
    let train_json = ctx.out.join("transforms_train.json");
    ctx.write(
        "scene.cfg",
        &format!(
            "# Trains on the files written next to this config.\ndata.transforms = {}\ndata.near = {:?}\ndata.far = {:?}\ndata.bound = {:?}\n",
            train_json.display(),
            cam.near,
            cam.far,
            half
        ),
    )?;
    println!("wrote {} train and {} held-out views to {}", ds.train.len(), ds.heldout.len(), ctx.out.display());
    Ok(())
}

fn gen_extractor(ctx: &Ctx) -> Result<()> {
    let ex = FeatureExtractor::generate(ctx.cfg.int("extractor.seed")? as u64);
    let p = ctx.out.join("extractor.sffx");
    ex.save(&p)?;
    println!("wrote {} (fingerprint {:016x})", p.display(), ex.fingerprint());
    Ok(())
}

fn coarse_stage(cfg: &RunConfig, seed: u64) -> Result<StageConfig> {
    Ok(StageConfig {
        iterations: cfg.usize("stage1.iterations")?,
        lr: cfg.float("stage1.lr")?,
        decay: Vec::new(),
        batch_rays: cfg.usize("stage1.batch_rays")?,
        seed,
        checkpoint_every: cfg.usize("stage1.checkpoint_every")?,
    })
}

fn cmd_train_coarse(ctx: &Ctx) -> Result<()> {
    let ds = dataset(ctx)?;
    let render = render_options(&ctx.cfg, ds.background, ctx.cfg.bool("stage1.stratified")?);
    let render = render?;
    let out = Output::new(&ctx.out, "coarse");
    let (field, run) = train_coarse(&ds, coarse_config(&ctx.cfg)?, &coarse_stage(&ctx.cfg, ctx.seed)?, &render, Some(&out))?;
    let eval = RenderOptions {
        stratified: false,
        ..render
    };
    let mut report = String::from("view,psnr_db\n");
    for (i, v) in ds.heldout.iter().enumerate() {
        let r = render_image(
            FieldView::Coarse {
                field: &field,
                bounds: ds.bounds,
            },
            &v.camera,
            &eval,
            ctx.seed,
        )?;
        let p = crate::metrics::psnr(&r.color, &v.image)?;
        writeln!(report, "{i},{p:.4}").expect("string");
    }
    ctx.write("heldout_psnr.csv", &report)?;
    let last = run.history.last().map_or(f64::NAN, |r| r.recon);
    println!(
        "trained {} iterations (final loss {last:.6}); checkpoint {}",
        run.history.len(),
        out.checkpoint(None).display()
    );
    Ok(())
}

fn cmd_train_style(ctx: &Ctx, checkpoint: &Path, ablation: Ablation) -> Result<()> {
    let (coarse, bounds) = load_coarse(checkpoint)?;
    let ds = dataset(ctx)?;
    let mut cfg = style_config(ctx)?;
    ablation.apply(&mut cfg)?;
    let render = render_options(&ctx.cfg, ds.background, false)?;
    let out = Output::new(&ctx.out, "style");
    let (_, run) = train_style(coarse, bounds, &ds, &style_image(ctx)?, &extractor(&ctx.cfg)?, &cfg, &render, Some(&out))?;
    if let Some(r) = run.history.last() {
        println!("stylized {} iterations (content {:.6}, style {:.6})", run.history.len(), r.content, r.style);
    }
    println!("checkpoint {}", out.checkpoint(None).display());
    Ok(())
}

/// Camera as stored in `cameras.json`.
#[derive(Serialize, Deserialize)]
struct CameraRecord {
    file: String,
    depth: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    near: f64,
    far: f64,
    c2w: Mat4,
}

#[derive(Serialize, Deserialize)]
struct RenderIndex {
    bounds_min: [f64; 3],
    bounds_max: [f64; 3],
    views: Vec<CameraRecord>,
}

fn pose_path(spec: &str, rig: &Rig) -> Result<Vec<(f64, f64)>> {
    let parse = |rest: &str| {
        rest.parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::invalid("cli", format!("bad pose path `{spec}` (circle<N>|arc<N>)")))
    };
    if let Some(rest) = spec.strip_prefix("circle") {
        Ok(rig.circle(parse(rest)?))
    } else if let Some(rest) = spec.strip_prefix("arc") {
        Ok(rig.pattern(PosePattern::Arc, parse(rest)?))
    } else {
        Err(Error::invalid("cli", format!("bad pose path `{spec}` (circle<N>|arc<N>)")))
    }
}

fn cmd_render(ctx: &Ctx, checkpoint: &Path, path: &str, coarse_only: bool) -> Result<()> {
    let loaded = load_any(checkpoint)?;
    let bounds = match &loaded {
        LoadedField::Coarse(_, b) => *b,
        LoadedField::Hierarchical(h) => h.bounds,
    };
    let view = match &loaded {
        LoadedField::Coarse(f, b) => FieldView::Coarse { field: f, bounds: *b },
        LoadedField::Hierarchical(h) if coarse_only => FieldView::coarse_of(h),
        LoadedField::Hierarchical(h) => FieldView::Hierarchical(h),
    };
    let rig = rig(&ctx.cfg)?;
    let size = ctx.cfg.usize("stage2.image_size")?;
    let render = render_options(&ctx.cfg, scene(&ctx.cfg).map_or([1.0; 3], |s| s.background), false)?;
    let mut index = RenderIndex {
        bounds_min: bounds.min,
        bounds_max: bounds.max,
        views: Vec::new(),
    };
    for (i, (az, el)) in pose_path(path, &rig)?.into_iter().enumerate() {
        let cam = rig.camera(az, el, size, &bounds)?;
        let r = render_image(view, &cam, &render, ctx.seed)?;
        let (file, depth) = (format!("view_{i:03}.png"), format!("depth_{i:03}.pfm"));
        write_png(&ctx.out.join(&file), &r.color)?;
        write_pfm(&ctx.out.join(&depth), &r.masked_depth(0.5))?;
        index.views.push(CameraRecord {
            file,
            depth,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            near: cam.near,
            far: cam.far,
            c2w: cam.c2w,
        });
    }
    ctx.write("cameras.json", &serde_json::to_string_pretty(&index).expect("plain data serializes"))?;
    println!("rendered {} views to {}", index.views.len(), ctx.out.display());
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, renders: &Path) -> Result<()> {
    let index_path = renders.join("cameras.json");
    let text = std::fs::read_to_string(&index_path).map_err(|e| Error::io("cli", &index_path, e))?;
    let index: RenderIndex =
        serde_json::from_str(&text).map_err(|e| Error::format("cli", &index_path, e.to_string()))?;
    let mut views = Vec::with_capacity(index.views.len());
    for v in &index.views {
        let camera = Camera::new(v.fx, v.fy, v.cx, v.cy, v.width, v.height, v.c2w, v.near, v.far)?;
        views.push(PoseRender {
            image: read_png(&renders.join(&v.file))?,
            depth: read_pfm(&renders.join(&v.depth))?,
            camera,
        });
    }
    let bounds = SceneBounds::new(index.bounds_min, index.bounds_max)?;
    let z_tol = ctx.cfg.float("metrics.z_tol_frac")? * bounds.diameter();
    let report = consistency_report(&views, &auto_pairs(views.len()), z_tol, &extractor(&ctx.cfg)?)?;
    ctx.write("consistency.csv", &report.to_csv())?;
    let table = report.to_table();
    ctx.write("consistency.txt", &table)?;
    print!("{table}");
    Ok(())
}

/// Side-by-side strip of equally sized images.
fn hconcat(images: &[Image]) -> Result<Image> {
    let (w, h) = (images[0].width(), images[0].height());
    let n = images.len();
    let mut out = Image::filled(w * n, h, &[1.0; 3]);
    for (k, img) in images.iter().enumerate() {
        if img.width() != w || img.height() != h {
            return Err(Error::invalid("cli", "contact sheet images differ in size"));
        }
        for y in 0..h {
            for x in 0..w {
                out.pixel_mut(k * w + x, y).copy_from_slice(img.pixel(x, y));
            }
        }
    }
    Ok(out)
}

/// Variants of the ablation matrix, in contact-sheet order.
pub const ABLATIONS: [(&str, Ablation); 6] = [
    ("full", Ablation {
        no_residual_density: false,
        pe_instead_of_hash: false,
        ec_only: false,
        constant_lambda: None,
    }),
    ("no-residual", Ablation {
        no_residual_density: true,
        pe_instead_of_hash: false,
        ec_only: false,
        constant_lambda: None,
    }),
    ("pe-not-hash", Ablation {
        no_residual_density: false,
        pe_instead_of_hash: true,
        ec_only: false,
        constant_lambda: None,
    }),
    ("ec-only", Ablation {
        no_residual_density: false,
        pe_instead_of_hash: false,
        ec_only: true,
        constant_lambda: None,
    }),
    ("constant-10", Ablation {
        no_residual_density: false,
        pe_instead_of_hash: false,
        ec_only: false,
        constant_lambda: Some(10.0),
    }),
    ("constant-0.1", Ablation {
        no_residual_density: false,
        pe_instead_of_hash: false,
        ec_only: false,
        constant_lambda: Some(0.1),
    }),
];

fn cmd_ablate(ctx: &Ctx, checkpoint: Option<&Path>) -> Result<()> {
    let ds = dataset(ctx)?;
    let (coarse, bounds) = match checkpoint {
        Some(p) => load_coarse(p)?,
        None => {
            let render = render_options(&ctx.cfg, ds.background, ctx.cfg.bool("stage1.stratified")?)?;
            let out = Output::new(&ctx.out.join("coarse"), "coarse");
            let (f, _) = train_coarse(&ds, coarse_config(&ctx.cfg)?, &coarse_stage(&ctx.cfg, ctx.seed)?, &render, Some(&out))?;
            save_coarse(&out.checkpoint(None), &f, &ds.bounds)?;
            (f, ds.bounds)
        }
    };
    let style = style_image(ctx)?;
    let ex = extractor(&ctx.cfg)?;
    let render = render_options(&ctx.cfg, ds.background, false)?;
    let base = style_config(ctx)?;
    let cam = crate::trainer::rescale_camera(&ds.train[0].camera, base.image_size)?;
    let mut tiles = vec![render_image(FieldView::Coarse { field: &coarse, bounds }, &cam, &render, ctx.seed)?.color];
    let mut legend = String::from("column,variant\n0,coarse\n");
    let mut traces = String::from("variant,iter,lambda,content,style,total\n");
    for (k, (name, ablation)) in ABLATIONS.iter().enumerate() {
        let mut cfg = base.clone();
        ablation.apply(&mut cfg)?;
        let out = Output::new(&ctx.out.join(name), "style");
        let (field, _) = train_style(coarse.clone(), bounds, &ds, &style, &ex, &cfg, &render, Some(&out))?;
        tiles.push(render_image(FieldView::Hierarchical(&field), &cam, &render, ctx.seed)?.color);
        writeln!(legend, "{},{name}", k + 1).expect("string");
        for r in read_loss_log(&out.log())? {
            let LossReport {
                iter,
                lambda,
                content,
                style,
                total,
                ..
            } = r;
            writeln!(traces, "{name},{iter},{lambda},{content},{style},{total}").expect("string");
        }
        println!("{name}: done");
    }
    write_png(&ctx.out.join("contact_sheet.png"), &hconcat(&tiles)?)?;
    ctx.write("contact_sheet.csv", &legend)?;
    ctx.write("loss_traces.csv", &traces)?;
    println!("wrote {}", ctx.out.join("contact_sheet.png").display());
    Ok(())
}
