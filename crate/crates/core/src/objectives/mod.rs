//! Reconstruction, content and style losses, and the annealed content weight.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::features::{nn_match, NnMatch};

/// `λ(t) = λ0·α^{t/T}` for `t ≤ T`, and `λ0·α` afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealSchedule {
    pub lambda0: f64,
    pub alpha: f64,
    pub period: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            lambda0: 10.0,
            alpha: 0.01,
            period: 100.0,
        }
    }
}

impl AnnealSchedule {
    pub fn new(lambda0: f64, alpha: f64, period: f64) -> Result<Self> {
        if !(lambda0 > 0.0 && alpha > 0.0 && alpha <= 1.0 && period >= 1.0) {
            return Err(Error::invalid(
                "objectives",
                format!("need λ0 > 0, 0 < α ≤ 1, T ≥ 1; got {lambda0}, {alpha}, {period}"),
            ));
        }
        Ok(Self { lambda0, alpha, period })
    }

    pub fn lambda_at(&self, t: f64) -> f64 {
        let t = t.max(0.0).min(self.period);
        self.lambda0 * self.alpha.powf(t / self.period)
    }
}

/// Content weight over iterations: annealed, or fixed for ablations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContentWeight {
    Annealed(AnnealSchedule),
    Constant(f64),
}

impl Default for ContentWeight {
    fn default() -> Self {
        ContentWeight::Annealed(AnnealSchedule::default())
    }
}

impl ContentWeight {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            ContentWeight::Annealed(s) => s.lambda_at(t as f64),
            ContentWeight::Constant(l) => *l,
        }
    }
}

/// Mean over rays of the squared color error summed over channels.
pub fn recon_loss(g: &Graph, rendered: Var, truth: Var) -> Result<Var> {
    let (a, b) = (g.shape(rendered), g.shape(truth));
    if a != b || a.len() != 2 {
        return Err(Error::shape("recon_loss", format!("{a:?} vs {b:?}")));
    }
    let d = g.sub(rendered, truth)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / a[0].max(1) as f64))
}

/// Mean squared difference per feature element.
pub fn content_loss(g: &Graph, rendered: Var, content: Var) -> Result<Var> {
    let (a, b) = (g.shape(rendered), g.shape(content));
    if a != b {
        return Err(Error::shape("content_loss", format!("{a:?} vs {b:?}")));
    }
    let d = g.sub(rendered, content)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

/// Mean cosine distance from each rendered feature row to its nearest style
/// row. The match is recomputed from the current values and held fixed for
/// differentiation.
pub fn style_loss(g: &Graph, rendered: Var, style: &Array) -> Result<(Var, NnMatch)> {
    let m = nn_match(&g.value(rendered), style)?;
    let d = style.shape()[1];
    let mut rows = Vec::with_capacity(m.indices.len() * d);
    for &j in &m.indices {
        rows.extend_from_slice(style.row(j));
    }
    let matched = g.constant(Array::new(&[m.indices.len(), d], rows)?);
    let cos = g.cosine_rows(rendered, matched)?;
    let mean = g.mean(cos);
    Ok((g.add_scalar(g.neg(mean), 1.0), m))
}

/// `λ·content + style`.
pub fn total_loss(g: &Graph, content: Var, style: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("objectives", format!("content weight must be nonnegative, got {lambda}")));
    }
    let c = g.scale(content, lambda);
    g.add(c, style)
}

/// One training step's losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iter: usize,
    pub lambda: f64,
    pub recon: f64,
    pub content: f64,
    pub style: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.lambda, self.recon, self.content, self.style, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Append-only newline-delimited JSON loss log.
pub struct LossLog {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl LossLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io("objectives", path, e))?;
        Ok(Self {
            file: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, report: &LossReport) -> Result<()> {
        let line = serde_json::to_string(report).map_err(|e| Error::invalid("objectives", e.to_string()))?;
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io("objectives", &self.path, e))
    }
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io("objectives", path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format("objectives", path, format!("record {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn value(f: impl FnOnce(&Graph) -> Var) -> f64 {
        let g = Graph::new();
        let v = f(&g);
        g.item(v)
    }

    #[test]
    fn schedule_values() {
        let s = AnnealSchedule::default();
        assert_eq!(s.lambda_at(0.0), 10.0);
        assert!((s.lambda_at(50.0) - 1.0).abs() < 1e-12);
        assert!((s.lambda_at(100.0) - 0.1).abs() < 1e-12);
        assert!((s.lambda_at(250.0) - 0.1).abs() < 1e-12);
        assert_eq!(s.lambda_at(100.0), s.lambda_at(1e9));
        assert!(AnnealSchedule::new(10.0, 0.0, 100.0).is_err());
        assert!(AnnealSchedule::new(10.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn recon_closed_forms() {
        let ones = Array::ones(&[4, 3]);
        let zeros = Array::zeros(&[4, 3]);
        let l = value(|g| recon_loss(g, g.constant(zeros.clone()), g.constant(ones.clone())).unwrap());
        assert_eq!(l, 3.0);
        let l = value(|g| recon_loss(g, g.constant(ones.clone()), g.constant(ones.clone())).unwrap());
        assert_eq!(l, 0.0);
        let g = Graph::new();
        assert!(recon_loss(&g, g.constant(ones), g.constant(Array::ones(&[3, 3]))).is_err());
    }

    #[test]
    fn content_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, d) = (6, 5);
        let a = Array::new(&[n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let v = [0.3, -0.1, 0.0, 0.5, 0.2];
        let mut b = a.clone();
        for (i, x) in b.data_mut().iter_mut().enumerate() {
            *x += v[i % d];
        }
        let l = value(|g| content_loss(g, g.constant(a.clone()), g.constant(b.clone())).unwrap());
        let want = v.iter().map(|x| x * x).sum::<f64>() / d as f64;
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn style_loss_of_scaled_copy_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Array::new(&[5, 4], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let l = value(|g| style_loss(g, g.constant(s.map(|x| 3.0 * x)), &s).unwrap().0);
        assert!(l.abs() < 1e-7);
    }

    #[test]
    fn style_loss_matches_brute_force_mean_min() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Array::new(&[2, 2], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let s = Array::new(&[2, 2], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let cosd = |a: &[f64], b: &[f64]| {
            let dot = a[0] * b[0] + a[1] * b[1];
            1.0 - dot / (a[0].hypot(a[1]) * b[0].hypot(b[1]) + 1e-8)
        };
        let want = (0..2)
            .map(|i| cosd(f.row(i), s.row(0)).min(cosd(f.row(i), s.row(1))))
            .sum::<f64>()
            / 2.0;
        let l = value(|g| style_loss(g, g.constant(f.clone()), &s).unwrap().0);
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn total_loss_arithmetic_and_gradient_split() {
        assert_eq!(
            value(|g| total_loss(g, g.constant(Array::scalar(1.0)), g.constant(Array::scalar(2.0)), 10.0).unwrap()),
            12.0
        );
        assert_eq!(
            value(|g| total_loss(g, g.constant(Array::scalar(1.0)), g.constant(Array::scalar(2.0)), 0.0).unwrap()),
            2.0
        );
        // ∂(λc + s)/∂x == λ ∂c/∂x + ∂s/∂x from separate backward passes.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = Array::new(&[3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let target = Array::new(&[3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let style = Array::new(&[5, 4], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let grad_of = |which: u8| {
            let g = Graph::new();
            let x = g.leaf(x0.clone());
            let c = content_loss(&g, x, g.constant(target.clone())).unwrap();
            let (s, _) = style_loss(&g, x, &style).unwrap();
            let root = match which {
                0 => total_loss(&g, c, s, 2.5).unwrap(),
                1 => c,
                _ => s,
            };
            g.backward(root).unwrap();
            g.grad(x).unwrap()
        };
        let (t, c, s) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..12 {
            assert!((t.data()[i] - (2.5 * c.data()[i] + s.data()[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.jsonl");
        let mut log = LossLog::create(&p).unwrap();
        let r = LossReport { iter: 3, lambda: 0.1, recon: 0.0, content: 1.5, style: 0.25, total: 0.4 };
        log.append(&r).unwrap();
        log.append(&LossReport { iter: 4, ..r }).unwrap();
        let back = read_loss_log(&p).unwrap();
        assert_eq!(back, vec![r, LossReport { iter: 4, ..r }]);
    }

    proptest! {
        #[test]
        fn lambda_monotone_nonincreasing(a in 0.0f64..400.0, b in 0.0f64..400.0) {
            let s = AnnealSchedule::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.lambda_at(hi) <= s.lambda_at(lo));
        }

        #[test]
        fn losses_nonnegative_and_recon_symmetric(v in proptest::collection::vec(-2.0f64..2.0, 12)) {
            let a = Array::new(&[2, 6], v[..12].to_vec()).unwrap();
            let b = a.map(|x| (x * 1.7).sin());
            let ab = value(|g| recon_loss(g, g.constant(a.clone().reshaped(&[4, 3]).unwrap()), g.constant(b.clone().reshaped(&[4, 3]).unwrap())).unwrap());
            let ba = value(|g| recon_loss(g, g.constant(b.clone().reshaped(&[4, 3]).unwrap()), g.constant(a.clone().reshaped(&[4, 3]).unwrap())).unwrap());
            prop_assert!(ab >= 0.0 && ab == ba);
            prop_assert!(value(|g| content_loss(g, g.constant(a.clone()), g.constant(b.clone())).unwrap()) >= 0.0);
            prop_assert!(value(|g| style_loss(g, g.constant(a.clone()), &b).unwrap().0) >= -1e-12);
        }
    }
}
