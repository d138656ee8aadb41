//! The hierarchical scene representation.
//!
//! The coarse field maps the positional encoding of a point to a density,
//! a geometric feature `e_c` and a view-dependent color. The fine field maps
//! hash-grid features of the point together with `e_c` to a residual density
//! and a stylized color; the composed density is `max(0, σ_c + σ′)`.

use rand::Rng;

use crate::diffcore::{Array, Bound, Graph, ParamId, ParamStore, Var};
use crate::encodings::{positional_encode_batch, HashGrid, HashGridConfig, PositionalEncodingConfig};
use crate::error::{Error, Result};

/// Axis-aligned scene box used to normalize world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|d| !(min[d] < max[d])) {
            return Err(Error::invalid("fields", format!("empty scene bounds {min:?}..{max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn cube(half: f64) -> Self {
        Self {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    /// Affine map into `[0,1]³`, clamped.
    pub fn to_unit(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|d| ((p[d] - self.min[d]) / (self.max[d] - self.min[d])).clamp(0.0, 1.0))
    }

    /// Affine map onto `[-1,1]³` (not clamped).
    pub fn to_signed(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|d| 2.0 * (p[d] - self.min[d]) / (self.max[d] - self.min[d]) - 1.0)
    }

    pub fn diameter(&self) -> f64 {
        (0..3).map(|d| (self.max[d] - self.min[d]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn to_array(&self) -> Array {
        Array::new(&[2, 3], [self.min, self.max].concat()).expect("2x3")
    }

    pub fn from_array(a: &Array) -> Result<Self> {
        if a.shape() != [2, 3] {
            return Err(Error::invalid("fields", format!("bounds array must be [2,3], got {:?}", a.shape())));
        }
        let d = a.data();
        Self::new([d[0], d[1], d[2]], [d[3], d[4], d[5]])
    }
}

/// Affine layer `x·W + b` with parameters stored in a [`ParamStore`].
#[derive(Clone, Copy, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    He,
    Zero,
}

impl Linear {
    fn new(params: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, init: Init, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| match init {
                Init::He => rng.gen_range(-bound..bound),
                Init::Zero => 0.0,
            })
            .collect();
        let weight = params.insert(format!("{name}.weight"), Array::new(&[fan_in, fan_out], w).expect("shape"));
        let bias = params.insert(format!("{name}.bias"), Array::zeros(&[fan_out]));
        Self { weight, bias }
    }

    fn lookup(params: &ParamStore, name: &str) -> Result<Self> {
        let get = |suffix: &str| {
            params
                .id(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::invalid("fields", format!("missing parameter `{name}.{suffix}`")))
        };
        Ok(Self {
            weight: get("weight")?,
            bias: get("bias")?,
        })
    }

    fn forward(&self, g: &Graph, b: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, b.var(self.weight))?;
        g.add_row(y, b.var(self.bias))
    }

    fn fan_in(&self, params: &ParamStore) -> usize {
        params.value(self.weight).shape()[0]
    }

    fn fan_out(&self, params: &ParamStore) -> usize {
        params.value(self.weight).shape()[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseConfig {
    pub pe: PositionalEncodingConfig,
    pub width: usize,
    pub hidden_layers: usize,
    pub feature_dim: usize,
    pub color_width: usize,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            pe: PositionalEncodingConfig::default(),
            width: 128,
            hidden_layers: 6,
            feature_dim: 64,
            color_width: 64,
        }
    }
}

/// Per-sample outputs of the coarse field.
#[derive(Clone, Copy, Debug)]
pub struct CoarseOutput {
    /// `[n]`, nonnegative.
    pub sigma: Var,
    /// `[n, feature_dim]`.
    pub feature: Var,
    /// `[n, 3]` in `[0,1]`.
    pub color: Var,
}

/// Low-frequency coarse radiance field.
///
/// Density uses a shifted softplus clamped at zero, `max(0, softplus(s) − ln 2)`,
/// so a zero density head yields exactly zero density.
#[derive(Clone, Debug)]
pub struct CoarseField {
    pub cfg: CoarseConfig,
    pub params: ParamStore,
    hidden: Vec<Linear>,
    feature: Linear,
    density: Linear,
    color_hidden: Linear,
    color_out: Linear,
}

impl CoarseField {
    pub fn new(cfg: CoarseConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.hidden_layers == 0 || cfg.width == 0 || cfg.feature_dim == 0 || cfg.pe.levels == 0 {
            return Err(Error::invalid("fields", "coarse field dimensions must be positive"));
        }
        let mut params = ParamStore::new();
        let mut hidden = Vec::with_capacity(cfg.hidden_layers);
        let mut fan_in = cfg.pe.output_dim();
        for i in 0..cfg.hidden_layers {
            hidden.push(Linear::new(&mut params, &format!("hidden.{i}"), fan_in, cfg.width, Init::He, rng));
            fan_in = cfg.width;
        }
        let feature = Linear::new(&mut params, "feature", cfg.width, cfg.feature_dim, Init::He, rng);
        let density = Linear::new(&mut params, "density", cfg.width, 1, Init::He, rng);
        let color_hidden = Linear::new(&mut params, "color_hidden", cfg.feature_dim + 3, cfg.color_width, Init::He, rng);
        let color_out = Linear::new(&mut params, "color_out", cfg.color_width, 3, Init::He, rng);
        Ok(Self {
            cfg,
            params,
            hidden,
            feature,
            density,
            color_hidden,
            color_out,
        })
    }

    /// Rebuilds the architecture from stored parameter shapes.
    pub fn from_params(params: ParamStore) -> Result<Self> {
        let mut hidden = Vec::new();
        while params.id(&format!("hidden.{}.weight", hidden.len())).is_some() {
            hidden.push(Linear::lookup(&params, &format!("hidden.{}", hidden.len()))?);
        }
        let Some(first) = hidden.first() else {
            return Err(Error::invalid("fields", "coarse parameters have no hidden layers"));
        };
        let pe = PositionalEncodingConfig::from_output_dim(first.fan_in(&params))
            .ok_or_else(|| Error::invalid("fields", "coarse input width is not a positional encoding size"))?;
        let feature = Linear::lookup(&params, "feature")?;
        let density = Linear::lookup(&params, "density")?;
        let color_hidden = Linear::lookup(&params, "color_hidden")?;
        let color_out = Linear::lookup(&params, "color_out")?;
        let cfg = CoarseConfig {
            pe,
            width: first.fan_out(&params),
            hidden_layers: hidden.len(),
            feature_dim: feature.fan_out(&params),
            color_width: color_hidden.fan_out(&params),
        };
        Ok(Self {
            cfg,
            params,
            hidden,
            feature,
            density,
            color_hidden,
            color_out,
        })
    }

    /// Zeroes the density head so that `σ_c ≡ 0`.
    pub fn zero_density_head(&mut self) {
        for id in [self.density.weight, self.density.bias] {
            let shape = self.params.value(id).shape().to_vec();
            self.params.set(id, Array::zeros(&shape)).expect("same shape");
        }
    }

    /// Evaluates a batch. `encoded` is the positional encoding of the points
    /// (`[n, pe_dim]`), `dirs` the unit view directions (`[n, 3]`).
    pub fn forward(&self, g: &Graph, b: &Bound, encoded: Var, dirs: Var) -> Result<CoarseOutput> {
        let mut h = encoded;
        for layer in &self.hidden {
            let z = layer.forward(g, b, h)?;
            h = g.relu(z);
        }
        let feature = self.feature.forward(g, b, h)?;
        let s = self.density.forward(g, b, h)?;
        let n = g.shape(s)[0];
        let s = g.reshape(s, &[n])?;
        let sp = g.softplus(s);
        let shifted = g.add_scalar(sp, -std::f64::consts::LN_2);
        let sigma = g.relu(shifted);
        let cin = g.concat(&[feature, dirs])?;
        let ch = self.color_hidden.forward(g, b, cin)?;
        let ch = g.relu(ch);
        let co = self.color_out.forward(g, b, ch)?;
        let color = g.sigmoid(co);
        Ok(CoarseOutput { sigma, feature, color })
    }

    /// Encodes world points and evaluates the field.
    pub fn forward_points(
        &self,
        g: &Graph,
        b: &Bound,
        bounds: &SceneBounds,
        points: &[[f64; 3]],
        dirs: &[[f64; 3]],
    ) -> Result<CoarseOutput> {
        check_points(points, dirs)?;
        let signed: Vec<[f64; 3]> = points.iter().map(|&p| bounds.to_signed(p)).collect();
        let encoded = g.constant(positional_encode_batch(&signed, &self.cfg.pe));
        let d = g.constant(Array::new(&[dirs.len(), 3], dirs.concat())?);
        self.forward(g, b, encoded, d)
    }
}

fn check_points(points: &[[f64; 3]], dirs: &[[f64; 3]]) -> Result<()> {
    if points.len() != dirs.len() {
        return Err(Error::shape("fields", format!("{} points vs {} directions", points.len(), dirs.len())));
    }
    for (i, p) in points.iter().chain(dirs).enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                module: "fields",
                what: "field input".into(),
                index: i % points.len().max(1),
            });
        }
    }
    Ok(())
}

/// Positional input of the fine field; the non-default variants exist for
/// the encoding ablation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FineInput {
    /// Multi-resolution hash features plus `e_c`.
    HashGrid(HashGridConfig),
    /// A high-frequency positional encoding plus `e_c`.
    Positional(PositionalEncodingConfig),
    /// `e_c` alone.
    FeatureOnly,
}

impl FineInput {
    pub fn encoded_dim(&self) -> usize {
        match self {
            FineInput::HashGrid(c) => c.output_dim(),
            FineInput::Positional(c) => c.output_dim(),
            FineInput::FeatureOnly => 0,
        }
    }

    pub fn code(&self) -> f64 {
        match self {
            FineInput::HashGrid(_) => 0.0,
            FineInput::Positional(_) => 1.0,
            FineInput::FeatureOnly => 2.0,
        }
    }

    /// The positional encoding used by the "encoding instead of hash grid" ablation.
    pub fn high_frequency_pe() -> Self {
        FineInput::Positional(PositionalEncodingConfig {
            levels: 10,
            include_identity: true,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FineConfig {
    pub input: FineInput,
    pub width: usize,
    pub hidden_layers: usize,
}

impl Default for FineConfig {
    fn default() -> Self {
        Self {
            input: FineInput::HashGrid(HashGridConfig::default()),
            width: 256,
            hidden_layers: 2,
        }
    }
}

/// Per-sample outputs of the fine decoder.
#[derive(Clone, Copy, Debug)]
pub struct FineOutput {
    /// Residual density pre-activation `σ′`, `[n]`, unbounded.
    pub residual: Var,
    /// `[n,3]` in `[0,1]`.
    pub color: Var,
}

/// Fine decoder. Its heads start at zero, so a fresh fine field predicts
/// `σ′ = 0` and mid-gray color.
#[derive(Clone, Debug)]
pub struct FineField {
    pub cfg: FineConfig,
    pub params: ParamStore,
    hidden: Vec<Linear>,
    density: Linear,
    color: Linear,
}

impl FineField {
    pub fn new(cfg: FineConfig, coarse_feature_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if cfg.hidden_layers == 0 || cfg.width == 0 {
            return Err(Error::invalid("fields", "fine field dimensions must be positive"));
        }
        let mut params = ParamStore::new();
        let mut fan_in = cfg.input.encoded_dim() + coarse_feature_dim;
        let mut hidden = Vec::with_capacity(cfg.hidden_layers);
        for i in 0..cfg.hidden_layers {
            hidden.push(Linear::new(&mut params, &format!("hidden.{i}"), fan_in, cfg.width, Init::He, rng));
            fan_in = cfg.width;
        }
        let density = Linear::new(&mut params, "density", cfg.width, 1, Init::Zero, rng);
        let color = Linear::new(&mut params, "color", cfg.width, 3, Init::Zero, rng);
        Ok(Self {
            cfg,
            params,
            hidden,
            density,
            color,
        })
    }

    pub fn from_params(params: ParamStore, input: FineInput) -> Result<Self> {
        let mut hidden = Vec::new();
        while params.id(&format!("hidden.{}.weight", hidden.len())).is_some() {
            hidden.push(Linear::lookup(&params, &format!("hidden.{}", hidden.len()))?);
        }
        let Some(first) = hidden.first() else {
            return Err(Error::invalid("fields", "fine parameters have no hidden layers"));
        };
        let cfg = FineConfig {
            input,
            width: first.fan_out(&params),
            hidden_layers: hidden.len(),
        };
        let density = Linear::lookup(&params, "density")?;
        let color = Linear::lookup(&params, "color")?;
        Ok(Self {
            cfg,
            params,
            hidden,
            density,
            color,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden[0].fan_in(&self.params)
    }

    /// `encoded` is `None` for the feature-only variant.
    pub fn forward(&self, g: &Graph, b: &Bound, encoded: Option<Var>, coarse_feature: Var) -> Result<FineOutput> {
        let input = match encoded {
            Some(e) => g.concat(&[e, coarse_feature])?,
            None => coarse_feature,
        };
        let width = g.shape(input)[1];
        if width != self.input_dim() {
            return Err(Error::shape(
                "fine_field",
                format!("input width {width}, expected {}", self.input_dim()),
            ));
        }
        let mut h = input;
        for layer in &self.hidden {
            let z = layer.forward(g, b, h)?;
            h = g.relu(z);
        }
        let s = self.density.forward(g, b, h)?;
        let n = g.shape(s)[0];
        let residual = g.reshape(s, &[n])?;
        let c = self.color.forward(g, b, h)?;
        let color = g.sigmoid(c);
        Ok(FineOutput { residual, color })
    }
}

/// How the hierarchical field composes density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DensityMode {
    /// `σ_f = max(0, σ_c + σ′)`.
    #[default]
    Residual,
    /// `σ_f = σ_c`; the residual is ignored (ablation).
    CoarseOnly,
}

/// Graph bindings of all hierarchical parameters for one step.
pub struct HierarchicalBinding {
    pub coarse: Bound,
    pub fine: Bound,
    pub grid: Option<Bound>,
}

/// Per-sample outputs of the hierarchical field.
#[derive(Clone, Copy, Debug)]
pub struct HierarchicalOutput {
    pub sigma_fine: Var,
    pub color_fine: Var,
    pub sigma_coarse: Var,
    pub color_coarse: Var,
}

/// Coarse field (frozen while stylizing), fine decoder and its encoding.
#[derive(Clone, Debug)]
pub struct HierarchicalField {
    pub coarse: CoarseField,
    pub fine: FineField,
    pub grid: Option<HashGrid>,
    pub bounds: SceneBounds,
    pub density_mode: DensityMode,
}

impl HierarchicalField {
    pub fn new(coarse: CoarseField, fine_cfg: FineConfig, bounds: SceneBounds, rng: &mut impl Rng) -> Result<Self> {
        let grid = match fine_cfg.input {
            FineInput::HashGrid(c) => Some(HashGrid::new(c, rng)?),
            _ => None,
        };
        let fine = FineField::new(fine_cfg, coarse.cfg.feature_dim, rng)?;
        Ok(Self {
            coarse,
            fine,
            grid,
            bounds,
            density_mode: DensityMode::Residual,
        })
    }

    /// Binds parameters; the coarse field is always bound frozen.
    pub fn bind(&self, g: &Graph, trainable: bool) -> HierarchicalBinding {
        HierarchicalBinding {
            coarse: self.coarse.params.bind(g, false),
            fine: self.fine.params.bind(g, trainable),
            grid: self.grid.as_ref().map(|gr| gr.params.bind(g, trainable)),
        }
    }

    /// Fine stage given already-evaluated coarse density and feature.
    pub fn forward_fine(
        &self,
        g: &Graph,
        binding: &HierarchicalBinding,
        points: &[[f64; 3]],
        sigma_coarse: Var,
        coarse_feature: Var,
    ) -> Result<(Var, Var)> {
        let encoded = match (&self.fine.cfg.input, &self.grid, &binding.grid) {
            (FineInput::HashGrid(_), Some(grid), Some(gb)) => {
                let unit: Vec<f64> = points.iter().flat_map(|&p| self.bounds.to_unit(p)).collect();
                let x = g.constant(Array::new(&[points.len(), 3], unit)?);
                Some(grid.encode(g, gb, x)?)
            }
            (FineInput::HashGrid(_), _, _) => {
                return Err(Error::invalid("fields", "hash-grid fine field without a grid"));
            }
            (FineInput::Positional(pe), _, _) => {
                let signed: Vec<[f64; 3]> = points.iter().map(|&p| self.bounds.to_signed(p)).collect();
                Some(g.constant(positional_encode_batch(&signed, pe)))
            }
            (FineInput::FeatureOnly, _, _) => None,
        };
        let out = self.fine.forward(g, &binding.fine, encoded, coarse_feature)?;
        let sigma = match self.density_mode {
            DensityMode::Residual => {
                let s = g.add(sigma_coarse, out.residual)?;
                g.relu(s)
            }
            DensityMode::CoarseOnly => sigma_coarse,
        };
        Ok((sigma, out.color))
    }

    pub fn forward_points(
        &self,
        g: &Graph,
        binding: &HierarchicalBinding,
        points: &[[f64; 3]],
        dirs: &[[f64; 3]],
    ) -> Result<HierarchicalOutput> {
        let c = self.coarse.forward_points(g, &binding.coarse, &self.bounds, points, dirs)?;
        let (sigma_fine, color_fine) = self.forward_fine(g, binding, points, c.sigma, c.feature)?;
        Ok(HierarchicalOutput {
            sigma_fine,
            color_fine,
            sigma_coarse: c.sigma,
            color_coarse: c.color,
        })
    }

    /// Checkpoint arrays: `coarse.*`, `fine.*`, `grid.*` parameters plus
    /// `meta.*` descriptors needed to rebuild the architecture.
    pub fn to_named(&self) -> Vec<(String, Array)> {
        let mut out = self.coarse.params.named("coarse.");
        out.extend(self.fine.params.named("fine."));
        if let Some(grid) = &self.grid {
            out.extend(grid.params.named("grid."));
            let res: Vec<f64> = grid.resolutions().iter().map(|&r| r as f64).collect();
            out.push(("meta.grid_resolutions".into(), Array::from_vec(res)));
            let c = grid.cfg;
            let cfg = [c.levels, c.n_min, c.n_max, c.feature_dim, c.table_log2 as usize];
            out.push(("meta.grid_config".into(), Array::from_vec(cfg.iter().map(|&v| v as f64).collect())));
        }
        out.push(("meta.bounds".into(), self.bounds.to_array()));
        let mut input = vec![self.fine.cfg.input.code()];
        if let FineInput::Positional(pe) = self.fine.cfg.input {
            input.push(pe.levels as f64);
            input.push(f64::from(u8::from(pe.include_identity)));
        }
        out.push(("meta.fine_input".into(), Array::from_vec(input)));
        let mode = match self.density_mode {
            DensityMode::Residual => 0.0,
            DensityMode::CoarseOnly => 1.0,
        };
        out.push(("meta.density_mode".into(), Array::scalar(mode)));
        out
    }

    pub fn from_named(arrays: &[(String, Array)]) -> Result<Self> {
        let coarse = coarse_from_named(arrays)?;
        let bounds = SceneBounds::from_array(find(arrays, "meta.bounds")?)?;
        let code = find(arrays, "meta.fine_input")?.data().to_vec();
        let grid = match code.first().copied() {
            Some(c) if c == 0.0 => {
                let res: Vec<usize> = find(arrays, "meta.grid_resolutions")?.data().iter().map(|&v| v as usize).collect();
                let c: Vec<usize> = find(arrays, "meta.grid_config")?.data().iter().map(|&v| v as usize).collect();
                if c.len() != 5 {
                    return Err(Error::invalid("fields", "meta.grid_config must hold 5 values"));
                }
                let cfg = HashGridConfig {
                    levels: c[0],
                    n_min: c[1],
                    n_max: c[2],
                    feature_dim: c[3],
                    table_log2: c[4] as u32,
                };
                let mut grid = HashGrid::with_resolutions(cfg, res, &mut rand::rngs::mock::StepRng::new(0, 0))?;
                grid.params.load_named("grid.", arrays)?;
                Some(grid)
            }
            _ => None,
        };
        let input = match (code.first().copied(), &grid) {
            (Some(c), Some(g)) if c == 0.0 => FineInput::HashGrid(g.cfg),
            (Some(c), _) if c == 1.0 && code.len() == 3 => FineInput::Positional(PositionalEncodingConfig {
                levels: code[1] as usize,
                include_identity: code[2] != 0.0,
            }),
            (Some(c), _) if c == 2.0 => FineInput::FeatureOnly,
            _ => return Err(Error::invalid("fields", "unrecognized meta.fine_input")),
        };
        let fine = FineField::from_params(params_with_prefix(arrays, "fine."), input)?;
        let density_mode = match find(arrays, "meta.density_mode").map(Array::item) {
            Ok(m) if m == 1.0 => DensityMode::CoarseOnly,
            _ => DensityMode::Residual,
        };
        Ok(Self {
            coarse,
            fine,
            grid,
            bounds,
            density_mode,
        })
    }
}

fn find<'a>(arrays: &'a [(String, Array)], name: &str) -> Result<&'a Array> {
    arrays
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, a)| a)
        .ok_or_else(|| Error::invalid("fields", format!("checkpoint lacks `{name}`")))
}

fn params_with_prefix(arrays: &[(String, Array)], prefix: &str) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, a) in arrays {
        if let Some(rest) = name.strip_prefix(prefix) {
            store.insert(rest, a.clone());
        }
    }
    store
}

/// Restores a coarse field from `coarse.*` arrays.
pub fn coarse_from_named(arrays: &[(String, Array)]) -> Result<CoarseField> {
    CoarseField::from_params(params_with_prefix(arrays, "coarse."))
}

/// Scene bounds stored alongside a checkpoint.
pub fn bounds_from_named(arrays: &[(String, Array)]) -> Result<SceneBounds> {
    SceneBounds::from_array(find(arrays, "meta.bounds")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(21)
    }

    fn small_coarse() -> CoarseField {
        let cfg = CoarseConfig {
            pe: PositionalEncodingConfig { levels: 3, include_identity: true },
            width: 16,
            hidden_layers: 3,
            feature_dim: 8,
            color_width: 8,
        };
        CoarseField::new(cfg, &mut rng()).unwrap()
    }

    fn random_points(n: usize, r: &mut ChaCha8Rng) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let pts = (0..n).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect();
        let dirs = (0..n)
            .map(|_| {
                let v: [f64; 3] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(0.1..1.0)];
                let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                v.map(|x| x / l)
            })
            .collect();
        (pts, dirs)
    }

    #[test]
    fn zero_density_head_gives_zero_density() {
        let mut c = CoarseField::new(CoarseConfig::default(), &mut rng()).unwrap();
        c.zero_density_head();
        let g = Graph::new();
        let b = c.params.bind(&g, false);
        let (p, d) = random_points(10, &mut rng());
        let out = c.forward_points(&g, &b, &SceneBounds::cube(1.0), &p, &d).unwrap();
        assert!(g.value(out.sigma).data().iter().all(|&s| s == 0.0));
        assert_eq!(g.shape(out.feature), vec![10, 64]);
    }

    #[test]
    fn coarse_colors_in_unit_range_and_density_nonnegative() {
        let c = small_coarse();
        let g = Graph::new();
        let b = c.params.bind(&g, false);
        let (p, d) = random_points(200, &mut rng());
        let out = c.forward_points(&g, &b, &SceneBounds::cube(1.0), &p, &d).unwrap();
        assert!(g.value(out.color).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(g.value(out.sigma).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn non_finite_input_rejected() {
        let c = small_coarse();
        let g = Graph::new();
        let b = c.params.bind(&g, false);
        let r = c.forward_points(&g, &b, &SceneBounds::cube(1.0), &[[f64::NAN, 0.0, 0.0]], &[[0.0, 0.0, 1.0]]);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    fn small_hier(input: FineInput) -> HierarchicalField {
        let fine = FineConfig { input, width: 16, hidden_layers: 2 };
        HierarchicalField::new(small_coarse(), fine, SceneBounds::cube(1.0), &mut rng()).unwrap()
    }

    fn small_grid_cfg() -> HashGridConfig {
        HashGridConfig { levels: 2, n_min: 4, n_max: 8, feature_dim: 2, table_log2: 8 }
    }

    #[test]
    fn fresh_fine_field_outputs_gray_and_zero_residual() {
        let h = small_hier(FineInput::HashGrid(small_grid_cfg()));
        let g = Graph::new();
        let b = h.bind(&g, true);
        let (p, d) = random_points(30, &mut rng());
        let out = h.forward_points(&g, &b, &p, &d).unwrap();
        assert_eq!(g.value(out.sigma_fine).data(), g.value(out.sigma_coarse).data());
        assert!(g.value(out.color_fine).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn composed_density_clamps_and_adds() {
        let g = Graph::new();
        let sc = g.constant(Array::from_vec(vec![2.0, 0.5, 1.0]));
        let res = g.constant(Array::from_vec(vec![0.0, -1.5, 0.25]));
        let s = g.add(sc, res).unwrap();
        let sf = g.relu(s);
        assert_eq!(g.value(sf).data(), &[2.0, 0.0, 1.25]);
    }

    #[test]
    fn feature_only_drops_grid_width() {
        let with = small_hier(FineInput::HashGrid(small_grid_cfg()));
        let without = small_hier(FineInput::FeatureOnly);
        assert_eq!(with.fine.input_dim() - without.fine.input_dim(), small_grid_cfg().output_dim());
    }

    #[test]
    fn fine_gradient_wrt_hash_entry_matches_finite_differences() {
        let h = small_hier(FineInput::HashGrid(small_grid_cfg()));
        // Randomize the fine heads so the residual depends on the grid.
        let mut fine = h.fine.clone();
        let mut r = rng();
        for id in fine.params.ids().collect::<Vec<_>>() {
            let shape = fine.params.value(id).shape().to_vec();
            let n = shape.iter().product();
            fine.params.set(id, Array::new(&shape, (0..n).map(|_| r.gen_range(-0.5..0.5)).collect()).unwrap()).unwrap();
        }
        let (p, d) = random_points(3, &mut r);
        let grid = h.grid.clone().unwrap();
        let level0 = grid.params.value(grid.table(0)).clone();
        let f = |g: &Graph, t0: Var| -> Result<Var> {
            let cb = h.coarse.params.bind(g, false);
            let c = h.coarse.forward_points(g, &cb, &h.bounds, &p, &d)?;
            let gb = grid.params.bind(g, false);
            let unit: Vec<f64> = p.iter().flat_map(|&q| h.bounds.to_unit(q)).collect();
            let x = g.constant(Array::new(&[3, 3], unit)?);
            let t1 = gb.var(grid.table(1));
            let e = crate::encodings::hash_encode(g, x, &[t0, t1], grid.resolutions())?;
            let fb = fine.params.bind(g, false);
            let out = fine.forward(g, &fb, Some(e), c.feature)?;
            let a = g.sum(out.residual);
            let b = g.sum(out.color);
            let s = g.add(a, b)?;
            Ok(s)
        };
        assert!(grad_check(f, &level0, 1e-6).unwrap() < 1e-4);
    }

    #[test]
    fn checkpoint_round_trip_restores_architecture() {
        for input in [FineInput::HashGrid(small_grid_cfg()), FineInput::high_frequency_pe(), FineInput::FeatureOnly] {
            let h = small_hier(input);
            let back = HierarchicalField::from_named(&h.to_named()).unwrap();
            assert_eq!(back.coarse.cfg, h.coarse.cfg);
            assert_eq!(back.fine.cfg, h.fine.cfg);
            assert_eq!(back.bounds, h.bounds);
            assert_eq!(back.to_named(), h.to_named());
        }
    }
}
