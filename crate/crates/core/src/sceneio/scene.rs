use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::error::{Error, Result};
use crate::fields::SceneBounds;
use crate::renderer::{dot, normalize, sub, Camera, Ray};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64, albedo: [f64; 3] },
    Cuboid { min: [f64; 3], max: [f64; 3], albedo: [f64; 3] },
}

impl Primitive {
    /// Nearest positive hit distance and outward normal.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, [f64; 3])> {
        match *self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = sub(ray.origin, center);
                let b = dot(oc, ray.dir);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > 0.0 { -b - s } else { -b + s };
                (t > 0.0).then(|| (t, normalize(sub(ray.at(t), center))))
            }
            Primitive::Cuboid { min, max, .. } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut axis0, mut axis1) = (0, 0);
                for d in 0..3 {
                    let inv = 1.0 / ray.dir[d];
                    let (mut a, mut b) = ((min[d] - ray.origin[d]) * inv, (max[d] - ray.origin[d]) * inv);
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    if a > t0 {
                        t0 = a;
                        axis0 = d;
                    }
                    if b < t1 {
                        t1 = b;
                        axis1 = d;
                    }
                }
                if t0 > t1 || t1 <= 0.0 {
                    return None;
                }
                let (t, d) = if t0 > 0.0 { (t0, axis0) } else { (t1, axis1) };
                let mut n = [0.0; 3];
                n[d] = if ray.dir[d] > 0.0 { -1.0 } else { 1.0 };
                if t0 <= 0.0 {
                    n[d] = -n[d];
                }
                Some((t, n))
            }
        }
    }

    pub fn albedo(&self) -> [f64; 3] {
        match *self {
            Primitive::Sphere { albedo, .. } | Primitive::Cuboid { albedo, .. } => albedo,
        }
    }

    fn extent(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Primitive::Sphere { center, radius, .. } => (center.map(|c| c - radius), center.map(|c| c + radius)),
            Primitive::Cuboid { min, max, .. } => (min, max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lighting {
    pub ambient: f64,
    /// Unit vector pointing toward the light.
    pub direction: [f64; 3],
    pub intensity: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        Self {
            ambient: 0.35,
            direction: normalize([0.4, 0.8, -0.45]),
            intensity: 0.65,
        }
    }
}

/// Lambertian primitives with exact ray intersection.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub lighting: Lighting,
    pub bounds: SceneBounds,
    pub background: [f64; 3],
}

impl AnalyticScene {
    pub fn new(primitives: Vec<Primitive>, lighting: Lighting, bounds: SceneBounds, background: [f64; 3]) -> Result<Self> {
        for (i, p) in primitives.iter().enumerate() {
            let (lo, hi) = p.extent();
            if (0..3).any(|d| lo[d] < bounds.min[d] - 1e-12 || hi[d] > bounds.max[d] + 1e-12) {
                return Err(Error::invalid("sceneio", format!("primitive {i} leaves the scene bounds")));
            }
            if p.albedo().iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::invalid("sceneio", format!("primitive {i} albedo outside [0,1]")));
            }
        }
        Ok(Self {
            primitives,
            lighting,
            bounds,
            background,
        })
    }

    /// A single unit sphere at the origin on a white background.
    pub fn sphere() -> Self {
        let prim = Primitive::Sphere {
            center: [0.0; 3],
            radius: 1.0,
            albedo: [0.85, 0.45, 0.25],
        };
        Self::new(vec![prim], Lighting::default(), SceneBounds::cube(1.5), [1.0; 3]).expect("valid scene")
    }

    /// A small tabletop: a slab with a sphere, a cube and a second sphere.
    pub fn tabletop() -> Self {
        let prims = vec![
            Primitive::Cuboid {
                min: [-1.3, -1.0, -1.3],
                max: [1.3, -0.8, 1.3],
                albedo: [0.55, 0.6, 0.5],
            },
            Primitive::Sphere {
                center: [-0.45, -0.25, 0.1],
                radius: 0.55,
                albedo: [0.85, 0.35, 0.25],
            },
            Primitive::Cuboid {
                min: [0.2, -0.8, -0.6],
                max: [0.9, -0.1, 0.1],
                albedo: [0.25, 0.45, 0.85],
            },
            Primitive::Sphere {
                center: [0.55, -0.5, 0.7],
                radius: 0.3,
                albedo: [0.9, 0.8, 0.3],
            },
        ];
        Self::new(prims, Lighting::default(), SceneBounds::cube(1.5), [1.0; 3]).expect("valid scene")
    }

    /// Nearest hit: distance and primitive index.
    pub fn hit(&self, ray: &Ray) -> Option<(f64, usize, [f64; 3])> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(ray).map(|(t, n)| (t, i, n)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn shade(&self, ray: &Ray) -> ([f64; 3], f64) {
        match self.hit(ray) {
            None => (self.background, f64::INFINITY),
            Some((t, i, n)) => {
                let l = &self.lighting;
                let lambert = l.ambient + l.intensity * dot(n, l.direction).max(0.0);
                let a = self.primitives[i].albedo();
                (a.map(|c| (c * lambert).clamp(0.0, 1.0)), t)
            }
        }
    }
}

/// Exact render: Lambertian color and ray-distance depth (`+inf` on a miss).
pub fn oracle_render(scene: &AnalyticScene, camera: &Camera) -> Result<(Image, Image)> {
    camera.validate()?;
    let rays = camera.all_rays();
    let mut color = Vec::with_capacity(rays.len() * 3);
    let mut depth = Vec::with_capacity(rays.len());
    for ray in &rays {
        let (c, t) = scene.shade(ray);
        color.extend_from_slice(&c);
        depth.push(t);
    }
    Ok((
        Image::new(camera.width, camera.height, 3, color)?,
        Image::new(camera.width, camera.height, 1, depth)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosePattern {
    /// Forward-facing cameras on a 30° horizontal arc.
    Arc,
    /// Cameras spread over the upper hemisphere, all looking at the origin.
    Hemisphere,
}

impl std::str::FromStr for PosePattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arc" => Ok(PosePattern::Arc),
            "hemisphere" => Ok(PosePattern::Hemisphere),
            _ => Err(Error::invalid("sceneio", format!("unknown pose pattern `{s}` (arc|hemisphere)"))),
        }
    }
}

/// One posed image.
#[derive(Clone, Debug)]
pub struct View {
    pub image: Image,
    pub camera: Camera,
    pub depth: Option<Image>,
}

#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub train: Vec<View>,
    pub heldout: Vec<View>,
    pub bounds: SceneBounds,
    pub background: [f64; 3],
}

impl SceneDataset {
    pub fn image_size(&self) -> (usize, usize) {
        let c = &self.train[0].camera;
        (c.width, c.height)
    }
}

/// Camera-rig geometry shared by generated datasets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rig {
    pub radius: f64,
    pub fov_x: f64,
    pub elevation: f64,
    pub arc_span: f64,
}

impl Default for Rig {
    fn default() -> Self {
        Self {
            radius: 4.0,
            fov_x: 40f64.to_radians(),
            elevation: 20f64.to_radians(),
            arc_span: 30f64.to_radians(),
        }
    }
}

pub const UP: [f64; 3] = [0.0, 1.0, 0.0];

impl Rig {
    /// Camera on the rig sphere at the given azimuth/elevation, looking at the origin.
    pub fn camera(&self, azimuth: f64, elevation: f64, size: usize, bounds: &SceneBounds) -> Result<Camera> {
        let eye = [
            self.radius * elevation.cos() * azimuth.sin(),
            self.radius * elevation.sin(),
            -self.radius * elevation.cos() * azimuth.cos(),
        ];
        let half = 0.5 * bounds.diameter();
        let near = (self.radius - half).max(0.05);
        Camera::look_at(eye, [0.0; 3], UP, self.fov_x, size, size, near, self.radius + half)
    }

    /// Poses of the train pattern.
    pub fn pattern(&self, pattern: PosePattern, n: usize) -> Vec<(f64, f64)> {
        match pattern {
            PosePattern::Arc => (0..n)
                .map(|i| {
                    let f = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
                    ((f - 0.5) * self.arc_span, self.elevation)
                })
                .collect(),
            PosePattern::Hemisphere => {
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                (0..n)
                    .map(|i| {
                        let f = (i as f64 + 0.5) / n as f64;
                        (i as f64 * golden, (10.0 + 50.0 * f).to_radians())
                    })
                    .collect()
            }
        }
    }

    /// Closed circle of `n` poses at the rig elevation (evaluation path).
    pub fn circle(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| (i as f64 / n as f64 * std::f64::consts::TAU, self.elevation))
            .collect()
    }

    /// Random poses within the span of a pattern.
    pub fn random(&self, pattern: PosePattern, n: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| match pattern {
                PosePattern::Arc => (
                    rng.gen_range(-0.5..0.5) * self.arc_span,
                    self.elevation + rng.gen_range(-0.1..0.1),
                ),
                PosePattern::Hemisphere => (
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(10f64.to_radians()..60f64.to_radians()),
                ),
            })
            .collect()
    }
}

/// Oracle-rendered dataset; held-out poses are drawn from `seed`.
pub fn make_dataset(
    scene: &AnalyticScene,
    n_train: usize,
    n_heldout: usize,
    pattern: PosePattern,
    size: usize,
    seed: u64,
) -> Result<SceneDataset> {
    make_dataset_with_rig(scene, n_train, n_heldout, pattern, size, seed, &Rig::default())
}

pub fn make_dataset_with_rig(
    scene: &AnalyticScene,
    n_train: usize,
    n_heldout: usize,
    pattern: PosePattern,
    size: usize,
    seed: u64,
    rig: &Rig,
) -> Result<SceneDataset> {
    if n_train == 0 {
        return Err(Error::invalid("sceneio", "a dataset needs at least one training view"));
    }
    if size < 2 {
        return Err(Error::invalid("sceneio", "image size must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let view = |(az, el): (f64, f64)| -> Result<View> {
        let camera = rig.camera(az, el, size, &scene.bounds)?;
        let (image, depth) = oracle_render(scene, &camera)?;
        Ok(View {
            image,
            camera,
            depth: Some(depth),
        })
    };
    let train = rig.pattern(pattern, n_train).into_iter().map(view).collect::<Result<_>>()?;
    let heldout = rig.random(pattern, n_heldout, &mut rng).into_iter().map(view).collect::<Result<_>>()?;
    Ok(SceneDataset {
        train,
        heldout,
        bounds: scene.bounds,
        background: scene.background,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StyleTexture {
    Stripes,
    CheckerNoise,
    Perlin,
}

impl std::str::FromStr for StyleTexture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes" => Ok(StyleTexture::Stripes),
            "checker-noise" => Ok(StyleTexture::CheckerNoise),
            "perlin" => Ok(StyleTexture::Perlin),
            _ => Err(Error::invalid(
                "sceneio",
                format!("unknown style texture `{s}` (stripes|checker-noise|perlin)"),
            )),
        }
    }
}

impl StyleTexture {
    pub const ALL: [StyleTexture; 3] = [StyleTexture::Stripes, StyleTexture::CheckerNoise, StyleTexture::Perlin];

    pub fn name(&self) -> &'static str {
        match self {
            StyleTexture::Stripes => "stripes",
            StyleTexture::CheckerNoise => "checker-noise",
            StyleTexture::Perlin => "perlin",
        }
    }
}

/// Seeded procedural style image of side `size`.
pub fn style_texture(kind: StyleTexture, size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(size * size * 3);
    match kind {
        StyleTexture::Stripes => {
            let period = size as f64 / 6.0;
            let a = [0.95, 0.85, 0.2];
            let b = [0.1, 0.15, 0.45];
            for y in 0..size {
                for x in 0..size {
                    let phase = ((x + y) as f64 / period * std::f64::consts::TAU).sin();
                    let c = if phase > 0.0 { a } else { b };
                    data.extend_from_slice(&c);
                }
            }
        }
        StyleTexture::CheckerNoise => {
            let cell = (size / 8).max(1);
            for y in 0..size {
                for x in 0..size {
                    let on = ((x / cell) + (y / cell)) % 2 == 0;
                    let base = if on { [0.85, 0.2, 0.25] } else { [0.15, 0.6, 0.3] };
                    let n: f64 = rng.gen_range(-0.15..0.15);
                    data.extend(base.iter().map(|v| (v + n).clamp(0.0, 1.0)));
                }
            }
        }
        StyleTexture::Perlin => {
            let noise = Perlin::new(&mut rng);
            let palette = [[0.1, 0.2, 0.5], [0.9, 0.6, 0.2], [0.95, 0.95, 0.85]];
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = (x as f64 / size as f64 * 4.0, y as f64 / size as f64 * 4.0);
                    let f = noise.fbm(u, v, 4) * 0.5 + 0.5;
                    let f = f.clamp(0.0, 1.0);
                    let (lo, hi, s) = if f < 0.5 {
                        (palette[0], palette[1], f * 2.0)
                    } else {
                        (palette[1], palette[2], f * 2.0 - 1.0)
                    };
                    data.extend((0..3).map(|c| lo[c] + (hi[c] - lo[c]) * s));
                }
            }
        }
    }
    Image::new(size, size, 3, data).expect("size")
}

/// 2-D gradient noise on a 256-entry permutation lattice.
struct Perlin {
    perm: Vec<usize>,
    grads: Vec<[f64; 2]>,
}

impl Perlin {
    fn new(rng: &mut impl Rng) -> Self {
        let mut perm: Vec<usize> = (0..256).collect();
        for i in (1..256).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let grads = (0..256)
            .map(|_| {
                let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                [a.cos(), a.sin()]
            })
            .collect();
        Self { perm, grads }
    }

    fn grad(&self, ix: i64, iy: i64) -> [f64; 2] {
        let h = self.perm[(self.perm[ix.rem_euclid(256) as usize] + iy.rem_euclid(256) as usize) % 256];
        self.grads[h]
    }

    fn noise(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (u, v) = (fade(fx), fade(fy));
        let corner = |dx: i64, dy: i64| {
            let g = self.grad(x0 as i64 + dx, y0 as i64 + dy);
            g[0] * (fx - dx as f64) + g[1] * (fy - dy as f64)
        };
        let a = corner(0, 0) + u * (corner(1, 0) - corner(0, 0));
        let b = corner(0, 1) + u * (corner(1, 1) - corner(0, 1));
        a + v * (b - a)
    }

    fn fbm(&self, x: f64, y: f64, octaves: usize) -> f64 {
        let (mut sum, mut amp, mut freq) = (0.0, 1.0, 1.0);
        for _ in 0..octaves {
            sum += amp * self.noise(x * freq, y * freq);
            amp *= 0.5;
            freq *= 2.0;
        }
        sum
    }
}
