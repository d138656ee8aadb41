//! Input encodings: the fixed sinusoidal positional encoding used by the
//! coarse field and the learned multi-resolution hash grid used by the fine
//! field.

use std::rc::Rc;

use rand::Rng;

use crate::diffcore::{Array, Bound, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Primes of the XOR spatial hash, one per axis.
pub const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

/// Half-width of the uniform initialization of hash tables.
pub const TABLE_INIT_SCALE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionalEncodingConfig {
    pub levels: usize,
    pub include_identity: bool,
}

impl Default for PositionalEncodingConfig {
    fn default() -> Self {
        Self {
            levels: 7,
            include_identity: true,
        }
    }
}

impl PositionalEncodingConfig {
    pub fn output_dim(&self) -> usize {
        3 * usize::from(self.include_identity) + 6 * self.levels
    }

    /// Inverse of [`output_dim`](Self::output_dim), used when restoring a
    /// network from its weight shapes.
    pub fn from_output_dim(dim: usize) -> Option<Self> {
        if dim >= 3 && (dim - 3) % 6 == 0 {
            Some(Self {
                levels: (dim - 3) / 6,
                include_identity: true,
            })
        } else if dim % 6 == 0 && dim > 0 {
            Some(Self {
                levels: dim / 6,
                include_identity: false,
            })
        } else {
            None
        }
    }
}

/// `[x?, sin(2^l π p), cos(2^l π p) for l in 0..L for p in x]`.
///
/// Coordinates are expected in `[-1, 1]` but are encoded as given.
pub fn positional_encode(x: [f64; 3], cfg: &PositionalEncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.output_dim());
    if cfg.include_identity {
        out.extend_from_slice(&x);
    }
    for l in 0..cfg.levels {
        let freq = (1u64 << l) as f64 * std::f64::consts::PI;
        for p in x {
            let (s, c) = (freq * p).sin_cos();
            out.push(s);
            out.push(c);
        }
    }
    out
}

/// Row-stacked [`positional_encode`] of many points: `[n, output_dim]`.
pub fn positional_encode_batch(points: &[[f64; 3]], cfg: &PositionalEncodingConfig) -> Array {
    let dim = cfg.output_dim();
    let mut data = Vec::with_capacity(points.len() * dim);
    for &p in points {
        data.extend(positional_encode(p, cfg));
    }
    Array::new(&[points.len(), dim], data).expect("row length is output_dim")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HashGridConfig {
    pub levels: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub feature_dim: usize,
    pub table_log2: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            n_min: 128,
            n_max: 512,
            feature_dim: 4,
            table_log2: 19,
        }
    }
}

impl HashGridConfig {
    pub fn table_size(&self) -> usize {
        1usize << self.table_log2
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.feature_dim
    }

    /// `b = exp((ln N_max − ln N_min) / (M − 1))`.
    pub fn growth_factor(&self) -> f64 {
        (((self.n_max as f64).ln() - (self.n_min as f64).ln()) / (self.levels as f64 - 1.0)).exp()
    }

    fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::invalid("encodings", format!("hash grid needs at least 2 levels, got {}", self.levels)));
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(Error::invalid(
                "encodings",
                format!("need 0 < N_min <= N_max, got {} and {}", self.n_min, self.n_max),
            ));
        }
        if self.feature_dim == 0 || self.table_log2 == 0 || self.table_log2 > 32 {
            return Err(Error::invalid("encodings", "feature dim and table size must be positive (table_log2 <= 32)"));
        }
        Ok(())
    }
}

/// Per-level grid resolutions `N_m = ⌊N_min · b^m⌋`.
pub fn grid_resolutions(cfg: &HashGridConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let b = cfg.growth_factor();
    Ok((0..cfg.levels)
        .map(|m| (cfg.n_min as f64 * b.powi(m as i32)).floor() as usize)
        .collect())
}

/// XOR-of-primes spatial hash of an integer grid vertex, in `[0, table_size)`.
pub fn hash_index(cell: [u32; 3], table_size: usize) -> usize {
    let h = cell[0].wrapping_mul(HASH_PRIMES[0])
        ^ cell[1].wrapping_mul(HASH_PRIMES[1])
        ^ cell[2].wrapping_mul(HASH_PRIMES[2]);
    h as usize % table_size
}

/// Learned feature tables of a multi-resolution hash grid.
#[derive(Clone, Debug)]
pub struct HashGrid {
    pub cfg: HashGridConfig,
    resolutions: Vec<usize>,
    tables: Vec<ParamId>,
    pub params: ParamStore,
}

impl HashGrid {
    pub fn new(cfg: HashGridConfig, rng: &mut impl Rng) -> Result<Self> {
        let resolutions = grid_resolutions(&cfg)?;
        Self::with_resolutions(cfg, resolutions, rng)
    }

    /// Grid with explicit resolutions (restored from a checkpoint).
    pub fn with_resolutions(cfg: HashGridConfig, resolutions: Vec<usize>, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if resolutions.len() != cfg.levels {
            return Err(Error::invalid("encodings", "one resolution per level required"));
        }
        let mut params = ParamStore::new();
        let tables = (0..cfg.levels)
            .map(|m| {
                let n = cfg.table_size() * cfg.feature_dim;
                let data = (0..n).map(|_| rng.gen_range(-TABLE_INIT_SCALE..=TABLE_INIT_SCALE)).collect();
                let table = Array::new(&[cfg.table_size(), cfg.feature_dim], data).expect("table shape");
                params.insert(format!("level.{m}"), table)
            })
            .collect();
        Ok(Self {
            cfg,
            resolutions,
            tables,
            params,
        })
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }

    pub fn table(&self, level: usize) -> ParamId {
        self.tables[level]
    }

    /// Encodes `[n,3]` points in the unit cube to `[n, M·F]` features.
    pub fn encode(&self, g: &Graph, bound: &Bound, x: Var) -> Result<Var> {
        let tables: Vec<Var> = self.tables.iter().map(|&id| bound.var(id)).collect();
        hash_encode(g, x, &tables, &self.resolutions)
    }
}

/// Trilinear lookup of `[n,3]` unit-cube points into one hashed table per
/// level, concatenated across levels. Differentiable with respect to the
/// tables and to the point coordinates (through the interpolation weights).
pub fn hash_encode(g: &Graph, x: Var, tables: &[Var], resolutions: &[usize]) -> Result<Var> {
    let xv = g.value(x);
    if xv.rank() != 2 || xv.shape()[1] != 3 {
        return Err(Error::shape("hash_encode", format!("points must be [n,3], got {:?}", xv.shape())));
    }
    if let Some(i) = xv.first_non_finite() {
        return Err(Error::NonFinite {
            module: "encodings",
            what: "hash_encode input".into(),
            index: i,
        });
    }
    if tables.len() != resolutions.len() {
        return Err(Error::shape("hash_encode", "one table per resolution level"));
    }
    let n = xv.shape()[0];

    // Which of (frac, 1 − frac) feeds each corner weight, per axis; corner
    // rows are laid out corner-major: row = corner·n + sample.
    let selectors: [Rc<Vec<usize>>; 3] = std::array::from_fn(|axis| {
        let mut idx = Vec::with_capacity(8 * n);
        for corner in 0..8 {
            let upper = corner >> axis & 1 == 1;
            for s in 0..n {
                idx.push(s * 6 + if upper { axis } else { 3 + axis });
            }
        }
        Rc::new(idx)
    });

    let mut per_level = Vec::with_capacity(tables.len());
    for (&table, &res) in tables.iter().zip(resolutions) {
        let tv = g.value(table);
        let (table_size, feat) = (tv.shape()[0], tv.shape()[1]);
        let scale = res as f64;
        let mut floors = Vec::with_capacity(3 * n);
        let mut cells = Vec::with_capacity(n);
        for p in xv.data().chunks(3) {
            let c: [f64; 3] = std::array::from_fn(|d| (p[d] * scale).floor().max(0.0));
            floors.extend_from_slice(&c);
            cells.push(c.map(|v| v as u32));
        }
        let mut slots = Vec::with_capacity(8 * n);
        for corner in 0..8u32 {
            let offset = [corner & 1, corner >> 1 & 1, corner >> 2 & 1];
            for c in &cells {
                let v = [c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]];
                slots.push(hash_index(v, table_size));
            }
        }

        let scaled = g.scale(x, scale);
        let floor_v = g.constant(Array::new(&[n, 3], floors)?);
        let frac = g.sub(scaled, floor_v)?;
        let neg = g.scale(frac, -1.0);
        let one_minus = g.add_scalar(neg, 1.0);
        let both = g.concat(&[frac, one_minus])?;
        let flat = g.reshape(both, &[6 * n])?;
        let wx = g.gather(flat, Rc::clone(&selectors[0]))?;
        let wy = g.gather(flat, Rc::clone(&selectors[1]))?;
        let wz = g.gather(flat, Rc::clone(&selectors[2]))?;
        let wxy = g.mul(wx, wy)?;
        let w = g.mul(wxy, wz)?;

        let corners = g.gather(table, Rc::new(slots))?;
        let weighted = g.mul_col(corners, w)?;
        let stacked = g.reshape(weighted, &[8, n * feat])?;
        let summed = g.sum_axis(stacked, 0)?;
        per_level.push(g.reshape(summed, &[n, feat])?);
    }
    g.concat(&per_level)
}
