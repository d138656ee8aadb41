//! Fixed convolutional feature extractor and nearest-neighbor feature
//! matching under cosine distance.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::checkpoint;
use crate::diffcore::{Array, Graph, ParamId, ParamStore, Var, COSINE_EPS};
use crate::error::{Error, Result};
use crate::sceneio::Image;

pub const EXTRACTOR_MAGIC: [u8; 4] = *b"SFFX";
pub const EXTRACTOR_SEED: u64 = 0xC0FFEE;
pub const FEATURE_DIM: usize = 128;
/// Smallest accepted image side.
pub const MIN_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layer {
    Conv(usize),
    Relu,
    Pool,
}

const STACK: [Layer; 12] = [
    Layer::Conv(0),
    Layer::Relu,
    Layer::Conv(1),
    Layer::Relu,
    Layer::Pool,
    Layer::Conv(2),
    Layer::Relu,
    Layer::Conv(3),
    Layer::Relu,
    Layer::Pool,
    Layer::Conv(4),
    Layer::Relu,
];

/// `(in, out)` channels of each 3×3 convolution.
const CONVS: [(usize, usize); 5] = [(3, 32), (32, 32), (32, 64), (64, 64), (64, FEATURE_DIM)];

/// Immutable conv stack producing 128-channel features at quarter resolution.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    params: ParamStore,
    convs: Vec<(ParamId, ParamId)>,
}

impl FeatureExtractor {
    /// Uniform He-initialized weights with zero biases.
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let convs = CONVS
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                let bound = (6.0 / (cin * 9) as f64).sqrt();
                let w = (0..cout * cin * 9).map(|_| rng.gen_range(-bound..bound)).collect();
                let w = params.insert(format!("conv.{i}.weight"), Array::new(&[cout, cin, 3, 3], w).expect("shape"));
                let b = params.insert(format!("conv.{i}.bias"), Array::zeros(&[cout]));
                (w, b)
            })
            .collect();
        Self { params, convs }
    }

    pub fn from_named(arrays: &[(String, Array)]) -> Result<Self> {
        let mut ex = Self::generate(0);
        ex.params.load_named("", arrays)?;
        Ok(ex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, EXTRACTOR_MAGIC, &self.params.named(""))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_named(&checkpoint::load(path, EXTRACTOR_MAGIC)?)
    }

    /// Weights from `path` when given, otherwise generated from the fixed seed.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::generate(EXTRACTOR_SEED)),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.params.fingerprint()
    }

    /// Output spatial size for an `h×w` input.
    pub fn output_size(h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(4), w.div_ceil(4))
    }

    /// Differentiable forward pass of a `[3,h,w]` image. The weights enter
    /// the graph as constants.
    pub fn forward(&self, g: &Graph, image: Var) -> Result<Var> {
        let shape = g.shape(image);
        if shape.len() != 3 || shape[0] != 3 || shape[1] < MIN_SIDE || shape[2] < MIN_SIDE {
            return Err(Error::shape(
                "extract",
                format!("expected [3,h,w] with h,w ≥ {MIN_SIDE}, got {shape:?}"),
            ));
        }
        if let Some(i) = g.value(image).data().iter().position(|v| !(-1e-6..=1.0 + 1e-6).contains(v)) {
            return Err(Error::invalid(
                "features",
                format!("image value {} at index {i} is outside [0,1]", g.value(image).data()[i]),
            ));
        }
        let bound = self.params.bind(g, false);
        // Zero-mean input; with [0,1] pixels every feature shares a large common component.
        let mut x = g.add_scalar(g.scale(image, 2.0), -1.0);
        for layer in STACK {
            x = match layer {
                Layer::Conv(i) => {
                    let (w, b) = self.convs[i];
                    g.conv2d(x, bound.var(w), bound.var(b))?
                }
                Layer::Relu => g.relu(x),
                Layer::Pool => g.avg_pool2(x)?,
            };
        }
        Ok(x)
    }

    /// Features of `image` as `[h'·w', 128]` rows (row-major locations).
    pub fn feature_rows(&self, g: &Graph, image: Var) -> Result<Var> {
        let f = self.forward(g, image)?;
        let s = g.shape(f);
        let flat = g.reshape(f, &[s[0], s[1] * s[2]])?;
        g.transpose(flat)
    }

    /// Non-differentiable convenience over an [`Image`].
    pub fn extract(&self, image: &Image) -> Result<FeatureMap> {
        let g = Graph::new();
        let x = g.constant(image_to_chw(image)?);
        let rows = self.feature_rows(&g, x)?;
        let (height, width) = Self::output_size(image.height(), image.width());
        Ok(FeatureMap {
            rows: (*g.value(rows)).clone(),
            height,
            width,
        })
    }
}

/// `[3,h,w]` planar array of an RGB image.
pub fn image_to_chw(image: &Image) -> Result<Array> {
    if image.channels() != 3 {
        return Err(Error::invalid("features", format!("expected RGB image, got {} channels", image.channels())));
    }
    let (w, h) = (image.width(), image.height());
    let mut out = vec![0.0; 3 * w * h];
    for (i, px) in image.data().chunks(3).enumerate() {
        for c in 0..3 {
            out[c * w * h + i] = px[c];
        }
    }
    Array::new(&[3, h, w], out)
}

/// Grid of feature vectors stored as `[h·w, d]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub rows: Array,
    pub height: usize,
    pub width: usize,
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Nearest style vector for every rendered vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NnMatch {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// For each row `F_i` of `rendered` finds the row `S_j` of `style`
/// minimizing `1 − ⟨F_i,S_j⟩/(‖F_i‖‖S_j‖ + ε)`; ties go to the smallest `j`.
pub fn nn_match(rendered: &Array, style: &Array) -> Result<NnMatch> {
    if rendered.rank() != 2 || style.rank() != 2 || rendered.shape()[1] != style.shape()[1] {
        return Err(Error::shape(
            "nn_match",
            format!("rendered {:?} vs style {:?}", rendered.shape(), style.shape()),
        ));
    }
    let m = style.shape()[0];
    if m == 0 {
        return Err(Error::invalid("features", "style feature map is empty"));
    }
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let style_norms: Vec<f64> = (0..m).map(|j| norm(style.row(j))).collect();
    let n = rendered.shape()[0];
    let mut indices = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for i in 0..n {
        let f = rendered.row(i);
        let nf = norm(f);
        let mut best = (0, f64::INFINITY);
        for (j, &ns) in style_norms.iter().enumerate() {
            let dot: f64 = f.iter().zip(style.row(j)).map(|(a, b)| a * b).sum();
            let d = 1.0 - dot / (nf * ns + COSINE_EPS);
            if d < best.1 {
                best = (j, d);
            }
        }
        indices.push(best.0);
        distances.push(best.1);
    }
    Ok(NnMatch { indices, distances })
}
