//! Ray generation, sampling along rays, and differentiable volume
//! compositing for the coarse and hierarchical fields.

mod camera;

pub use camera::{cross, dot, norm, normalize, rigidity_error, sub, Camera, Mat4, Ray, IDENTITY};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::fields::{CoarseField, HierarchicalField, SceneBounds};
use crate::sceneio::Image;

/// Lower bound on accumulated weight when normalizing depth.
pub const DEPTH_EPS: f64 = 1e-10;

/// Sample depths along one ray and their quadrature widths.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Places `n` samples in `[near, far]`, one per equal-width bin: at the bin
/// center, or uniformly jittered within the bin when `jitter` is given.
///
/// Each sample's width spans the midpoints to its neighbors, with the first
/// and last intervals extended to `near` and `far`; the widths therefore sum
/// to `far − near` exactly.
pub fn sample_along(near: f64, far: f64, n: usize, jitter: Option<&mut dyn rand::RngCore>) -> Result<Samples> {
    if n < 2 {
        return Err(Error::invalid("renderer", format!("need at least 2 samples per ray, got {n}")));
    }
    if !(near < far) {
        return Err(Error::invalid("renderer", format!("need near < far, got {near} {far}")));
    }
    let bin = (far - near) / n as f64;
    let t: Vec<f64> = match jitter {
        None => (0..n).map(|i| near + (i as f64 + 0.5) * bin).collect(),
        Some(rng) => (0..n).map(|i| near + (i as f64 + rng.gen::<f64>()) * bin).collect(),
    };
    let mut delta = Vec::with_capacity(n);
    for i in 0..n {
        let lo = if i == 0 { near } else { 0.5 * (t[i - 1] + t[i]) };
        let hi = if i + 1 == n { far } else { 0.5 * (t[i] + t[i + 1]) };
        delta.push(hi - lo);
    }
    Ok(Samples { t, delta })
}

/// Differentiable per-ray outputs of [`composite`].
#[derive(Clone, Copy, Debug)]
pub struct Composite {
    /// `[r, 3]`
    pub color: Var,
    /// `[r]`, weight-averaged sample depth.
    pub depth: Var,
    /// `[r, s]`
    pub weights: Var,
    /// `[r]`, `Σ w_i`.
    pub opacity: Var,
}

/// Alpha-composites `sigma` (`[r, s]`, nonnegative) and `colors`
/// (`[r·s, 3]`, ray-major) given sample depths `t` and widths `delta`
/// (both `[r, s]`).
pub fn composite(g: &Graph, sigma: Var, colors: Var, t: &Array, delta: &Array, background: [f64; 3]) -> Result<Composite> {
    let sv = g.value(sigma);
    if sv.rank() != 2 || t.shape() != sv.shape() || delta.shape() != sv.shape() {
        return Err(Error::shape(
            "composite",
            format!("sigma {:?}, t {:?}, delta {:?}", sv.shape(), t.shape(), delta.shape()),
        ));
    }
    let (r, s) = (sv.shape()[0], sv.shape()[1]);
    if g.shape(colors) != [r * s, 3] {
        return Err(Error::shape("composite", format!("colors {:?} for {r}x{s} samples", g.shape(colors))));
    }
    if let Some(i) = sv.data().iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::invalid(
            "renderer",
            format!("density must be nonnegative and finite, sample {i} has {}", sv.data()[i]),
        ));
    }
    drop(sv);
    let dv = g.constant(delta.clone());
    let sd = g.mul(sigma, dv)?;
    let decay = g.exp(g.neg(sd));
    let alpha = g.add_scalar(g.neg(decay), 1.0);
    let acc = g.cumsum_exclusive(sd)?;
    let trans = g.exp(g.neg(acc));
    let weights = g.mul(trans, alpha)?;

    let wflat = g.reshape(weights, &[r * s])?;
    let wc = g.mul_col(colors, wflat)?;
    let wc = g.reshape(wc, &[r, s, 3])?;
    let fg = g.sum_axis(wc, 1)?;
    let opacity = g.sum_axis(weights, 1)?;
    let remaining = g.add_scalar(g.neg(opacity), 1.0);
    let bg = g.constant(Array::new(&[r, 3], background.repeat(r))?);
    let bg = g.mul_col(bg, remaining)?;
    let color = g.add(fg, bg)?;

    let tv = g.constant(t.clone());
    let wt = g.mul(weights, tv)?;
    let wt = g.sum_axis(wt, 1)?;
    let denom = g.clamp_min(opacity, DEPTH_EPS);
    let depth = g.div(wt, denom)?;

    #[cfg(debug_assertions)]
    check_weights(&g.value(weights), &g.value(trans));
    Ok(Composite {
        color,
        depth,
        weights,
        opacity,
    })
}

#[cfg(debug_assertions)]
fn check_weights(w: &Array, trans: &Array) {
    let s = *w.shape().last().unwrap_or(&1);
    for (row, tr) in w.data().chunks(s.max(1)).zip(trans.data().chunks(s.max(1))) {
        let tol = 1e-12;
        assert!(row.iter().all(|&v| (-tol..=1.0 + tol).contains(&v)), "weight outside [0,1]");
        assert!(row.iter().sum::<f64>() <= 1.0 + 1e-9, "weights sum above 1");
        assert!(tr.windows(2).all(|p| p[1] <= p[0] + tol), "transmittance increased");
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub samples: usize,
    pub stratified: bool,
    pub background: [f64; 3],
    /// Rays per evaluation chunk when rendering whole images.
    pub chunk: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            samples: 64,
            stratified: false,
            background: [0.0; 3],
            chunk: 4096,
        }
    }
}

/// Sample points of a ray batch, ray-major.
pub struct RayPoints {
    pub points: Vec<[f64; 3]>,
    pub dirs: Vec<[f64; 3]>,
    /// `[r, s]`
    pub t: Array,
    /// `[r, s]`
    pub delta: Array,
}

pub fn ray_points(rays: &[Ray], near: f64, far: f64, opts: &RenderOptions, rng: &mut dyn rand::RngCore) -> Result<RayPoints> {
    let s = opts.samples;
    let mut points = Vec::with_capacity(rays.len() * s);
    let mut dirs = Vec::with_capacity(rays.len() * s);
    let mut ts = Vec::with_capacity(rays.len() * s);
    let mut ds = Vec::with_capacity(rays.len() * s);
    let shared = if opts.stratified { None } else { Some(sample_along(near, far, s, None)?) };
    for ray in rays {
        let smp = match &shared {
            Some(smp) => smp.clone(),
            None => sample_along(near, far, s, Some(&mut *rng))?,
        };
        for &ti in &smp.t {
            points.push(ray.at(ti));
            dirs.push(ray.dir);
        }
        ts.extend_from_slice(&smp.t);
        ds.extend_from_slice(&smp.delta);
    }
    Ok(RayPoints {
        points,
        dirs,
        t: Array::new(&[rays.len(), s], ts)?,
        delta: Array::new(&[rays.len(), s], ds)?,
    })
}

/// Renders a ray batch with an arbitrary per-sample field evaluator
/// returning `(σ [n], color [n,3])` for `n = r·s` points.
pub fn render_rays<F>(
    g: &Graph,
    rays: &[Ray],
    near: f64,
    far: f64,
    opts: &RenderOptions,
    rng: &mut dyn rand::RngCore,
    field: F,
) -> Result<Composite>
where
    F: FnOnce(&Graph, &RayPoints) -> Result<(Var, Var)>,
{
    let rp = ray_points(rays, near, far, opts, rng)?;
    let (sigma, color) = field(g, &rp)?;
    let sigma = g.reshape(sigma, &[rays.len(), opts.samples])?;
    composite(g, sigma, color, &rp.t, &rp.delta, opts.background)
}

/// A field as seen by the renderer.
#[derive(Clone, Copy)]
pub enum FieldView<'a> {
    Coarse { field: &'a CoarseField, bounds: SceneBounds },
    Hierarchical(&'a HierarchicalField),
}

impl<'a> FieldView<'a> {
    /// Coarse-only view of a hierarchical field.
    pub fn coarse_of(field: &'a HierarchicalField) -> Self {
        FieldView::Coarse {
            field: &field.coarse,
            bounds: field.bounds,
        }
    }

    /// Evaluates `(σ, color)` with all parameters held constant.
    pub fn eval(&self, g: &Graph, rp: &RayPoints) -> Result<(Var, Var)> {
        match *self {
            FieldView::Coarse { field, bounds } => {
                let b = field.params.bind(g, false);
                let out = field.forward_points(g, &b, &bounds, &rp.points, &rp.dirs)?;
                Ok((out.sigma, out.color))
            }
            FieldView::Hierarchical(h) => {
                let b = h.bind(g, false);
                let out = h.forward_points(g, &b, &rp.points, &rp.dirs)?;
                Ok((out.sigma_fine, out.color_fine))
            }
        }
    }
}

/// A rendered view: RGB color, ray-distance depth and opacity.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub color: Image,
    pub depth: Image,
    pub opacity: Image,
}

impl RenderedView {
    /// Depth with `+inf` wherever the accumulated opacity is below `min_opacity`.
    pub fn masked_depth(&self, min_opacity: f64) -> Image {
        let mut d = self.depth.clone();
        for (v, o) in d.data_mut().iter_mut().zip(self.opacity.data()) {
            if *o < min_opacity {
                *v = f64::INFINITY;
            }
        }
        d
    }
}

/// Renders every pixel of `camera`, in chunks, without recording gradients
/// beyond each chunk. Deterministic given `seed`.
pub fn render_image(field: FieldView<'_>, camera: &Camera, opts: &RenderOptions, seed: u64) -> Result<RenderedView> {
    camera.validate()?;
    let rays = camera.all_rays();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut color = Vec::with_capacity(rays.len() * 3);
    let mut depth = Vec::with_capacity(rays.len());
    let mut opacity = Vec::with_capacity(rays.len());
    for chunk in rays.chunks(opts.chunk.max(1)) {
        let g = Graph::new();
        let c = render_rays(&g, chunk, camera.near, camera.far, opts, &mut rng, |g, rp| field.eval(g, rp))?;
        color.extend_from_slice(g.value(c.color).data());
        depth.extend_from_slice(g.value(c.depth).data());
        opacity.extend_from_slice(g.value(c.opacity).data());
    }
    let (w, h) = (camera.width, camera.height);
    Ok(RenderedView {
        color: Image::new(w, h, 3, color)?,
        depth: Image::new(w, h, 1, depth)?,
        opacity: Image::new(w, h, 1, opacity)?,
    })
}
