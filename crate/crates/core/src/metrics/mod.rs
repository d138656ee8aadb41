//! Cross-view consistency protocol: depth-based warping between rendered
//! poses, masked RMSE and SSIM, PSNR, and a feature-space distance that is
//! reported as "FPD (proxy)".

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::renderer::{norm, sub, Camera};
use crate::sceneio::Image;

/// Minimum splatted weight for a warped pixel to count as covered.
pub const MIN_COVERAGE: f64 = 0.5;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Image A resampled into B's frame.
#[derive(Clone, Debug)]
pub struct WarpResult {
    pub image: Image,
    /// In-bounds, occlusion-passed and sufficiently covered target pixels.
    pub mask: Vec<bool>,
    pub fraction_valid: f64,
}

/// Forward-warps `image_a` into camera B. Every pixel of A with a finite
/// ray-distance depth is lifted to 3-D, projected into B and bilinearly
/// splatted onto its four neighbors; a contribution is kept only where its
/// distance from B's center agrees with `depth_b` within `z_tol`.
pub fn warp(
    image_a: &Image,
    depth_a: &Image,
    cam_a: &Camera,
    cam_b: &Camera,
    depth_b: &Image,
    z_tol: f64,
) -> Result<WarpResult> {
    let (wa, ha) = (cam_a.width, cam_a.height);
    let (wb, hb) = (cam_b.width, cam_b.height);
    if image_a.width() != wa || image_a.height() != ha || depth_a.width() != wa || depth_a.height() != ha {
        return Err(Error::invalid("metrics", "source image/depth size does not match its camera"));
    }
    if depth_b.width() != wb || depth_b.height() != hb || depth_a.channels() != 1 || depth_b.channels() != 1 {
        return Err(Error::invalid("metrics", "target depth size does not match its camera"));
    }
    let c = image_a.channels();
    let mut acc = vec![0.0; wb * hb * c];
    let mut weight = vec![0.0; wb * hb];
    let ob = cam_b.origin();
    for v in 0..ha {
        for u in 0..wa {
            let d = depth_a.pixel(u, v)[0];
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let p = cam_a.ray_through(u as f64, v as f64).at(d);
            let Some((x, y)) = cam_b.project(cam_b.world_to_camera(p)) else {
                continue;
            };
            let zb = norm(sub(p, ob));
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            for (dx, dy, w) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                let (tx, ty) = (x0 as i64 + dx, y0 as i64 + dy);
                if w <= 0.0 || tx < 0 || ty < 0 || tx >= wb as i64 || ty >= hb as i64 {
                    continue;
                }
                let (tx, ty) = (tx as usize, ty as usize);
                if !((zb - depth_b.pixel(tx, ty)[0]).abs() <= z_tol) {
                    continue;
                }
                let i = ty * wb + tx;
                weight[i] += w;
                for (k, s) in image_a.pixel(u, v).iter().enumerate() {
                    acc[i * c + k] += w * s;
                }
            }
        }
    }
    let mask: Vec<bool> = weight.iter().map(|&w| w >= MIN_COVERAGE).collect();
    for (i, &w) in weight.iter().enumerate() {
        for k in 0..c {
            acc[i * c + k] = if mask[i] { acc[i * c + k] / w } else { 0.0 };
        }
    }
    let valid = mask.iter().filter(|&&m| m).count();
    Ok(WarpResult {
        image: Image::new(wb, hb, c, acc)?,
        fraction_valid: valid as f64 / mask.len().max(1) as f64,
        mask,
    })
}

fn check_pair(a: &Image, b: &Image, mask: &[bool]) -> Result<()> {
    if !a.same_size(b) {
        return Err(Error::invalid("metrics", "image sizes differ"));
    }
    if mask.len() != a.width() * a.height() {
        return Err(Error::invalid("metrics", "mask size differs from image size"));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("metrics", "mask is empty"));
    }
    Ok(())
}

/// Root mean squared difference over masked pixels and all channels.
pub fn masked_rmse(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    check_pair(a, b, mask)?;
    let c = a.channels();
    let (mut s, mut n) = (0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for k in 0..c {
            s += (a.data()[i * c + k] - b.data()[i * c + k]).powi(2);
        }
        n += c;
    }
    Ok((s / n as f64).sqrt())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// SSIM on Rec. 709 luma with an 11×11 Gaussian window (σ = 1.5) and
/// `L = 1`, averaged over windows lying fully inside the image whose center
/// pixel is in `mask`. Window weights are renormalized over masked pixels.
pub fn ssim(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    check_pair(a, b, mask)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(
            "metrics",
            format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"),
        ));
    }
    let (ya, yb) = (a.luma()?, b.luma()?);
    let (ya, yb) = (ya.data(), yb.data());
    let g = gaussian_window();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let r = SSIM_WINDOW / 2;
    let (mut total, mut count) = (0.0, 0usize);
    for cy in r..h - r {
        for cx in r..w - r {
            if !mask[cy * w + cx] {
                continue;
            }
            let (mut ma, mut mb, mut saa, mut sbb, mut sab, mut norm) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for (j, gj) in g.iter().enumerate() {
                for (i, gi) in g.iter().enumerate() {
                    let k = (cy + j - r) * w + (cx + i - r);
                    if !mask[k] {
                        continue;
                    }
                    let wt = gj * gi;
                    norm += wt;
                    let (x, y) = (ya[k], yb[k]);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let (ma, mb, saa, sbb, sab) = (ma / norm, mb / norm, saa / norm, sbb / norm, sab / norm);
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("metrics", "no SSIM window is centered on a masked pixel"));
    }
    Ok(total / count as f64)
}

/// `10·log10(1/MSE)`; identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::invalid("metrics", "image sizes differ"));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len().max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

/// Feature-space distance used as a perceptual proxy: mean cosine distance
/// between co-located extractor features, after painting unmasked pixels
/// mid-gray in both images. Not comparable to LPIPS.
pub fn feature_distance(extractor: &FeatureExtractor, a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    check_pair(a, b, mask)?;
    let paint = |img: &Image| {
        let mut out = img.clone();
        let c = out.channels();
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                out.data_mut()[i * c..(i + 1) * c].fill(0.5);
            }
        }
        out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    };
    let (fa, fb) = (extractor.extract(&paint(a))?, extractor.extract(&paint(b))?);
    let n = fa.len();
    let mut s = 0.0;
    for i in 0..n {
        let (x, y) = (fa.rows.row(i), fb.rows.row(i));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        s += 1.0 - dot / (nx * ny + crate::diffcore::COSINE_EPS);
    }
    Ok(s / n.max(1) as f64)
}

/// A rendered pose: color, ray-distance depth (non-finite where empty), camera.
#[derive(Clone, Debug)]
pub struct PoseRender {
    pub image: Image,
    pub depth: Image,
    pub camera: Camera,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Range {
    Short,
    Long,
}

impl Range {
    pub fn name(&self) -> &'static str {
        match self {
            Range::Short => "short",
            Range::Long => "long",
        }
    }
}

/// Adjacent poses for short range, poses half the path apart for long range.
pub fn auto_pairs(n: usize) -> Vec<(usize, usize, Range)> {
    let mut out: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1, Range::Short)).collect();
    let half = n / 2;
    if half > 0 {
        out.extend((0..n - half).map(|i| (i, i + half, Range::Long)));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairMetrics {
    pub pair_id: usize,
    pub range: Range,
    pub from: usize,
    pub to: usize,
    pub rmse: f64,
    pub ssim: f64,
    pub fpd: f64,
    pub fraction_valid: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub pairs: Vec<PairMetrics>,
}

/// Mean of the finite values.
fn finite_mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.filter(|x| x.is_finite()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl ConsistencyReport {
    /// `(rmse, ssim, fpd)` averaged over the pairs of one range.
    pub fn aggregate(&self, range: Range) -> (f64, f64, f64) {
        let sel = || self.pairs.iter().filter(move |p| p.range == range);
        (
            finite_mean(sel().map(|p| p.rmse)),
            finite_mean(sel().map(|p| p.ssim)),
            finite_mean(sel().map(|p| p.fpd)),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair_id,range,rmse,ssim,fpd\n");
        for p in &self.pairs {
            writeln!(s, "{},{},{:.6},{:.6},{:.6}", p.pair_id, p.range.name(), p.rmse, p.ssim, p.fpd).expect("string");
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:>5} {:>6} {:>9} {:>9} {:>9} {:>12} {:>7}", "pair", "range", "from->to", "RMSE", "SSIM", "FPD (proxy)", "valid").expect("string");
        for p in &self.pairs {
            writeln!(
                s,
                "{:>5} {:>6} {:>9} {:>9.4} {:>9.4} {:>12.4} {:>7.3}",
                p.pair_id,
                p.range.name(),
                format!("{}->{}", p.from, p.to),
                p.rmse,
                p.ssim,
                p.fpd,
                p.fraction_valid
            )
            .expect("string");
        }
        for range in [Range::Short, Range::Long] {
            let (r, ss, f) = self.aggregate(range);
            writeln!(s, "{:>5} {:>6} {:>9} {:>9.4} {:>9.4} {:>12.4}", "mean", range.name(), "", r, ss, f).expect("string");
        }
        s.push_str("FPD (proxy): feature-space distance from the built-in extractor; not LPIPS.\n");
        s
    }
}

/// Warps each pair `from → to` and scores it on the warp-valid mask. Pairs
/// with an empty mask are reported with NaN metrics.
pub fn consistency_report(
    views: &[PoseRender],
    pairs: &[(usize, usize, Range)],
    z_tol: f64,
    extractor: &FeatureExtractor,
) -> Result<ConsistencyReport> {
    if views.len() < 2 {
        return Err(Error::invalid("metrics", "consistency needs at least two views"));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (pair_id, &(from, to, range)) in pairs.iter().enumerate() {
        let (a, b) = (
            views.get(from).ok_or_else(|| Error::invalid("metrics", format!("no view {from}")))?,
            views.get(to).ok_or_else(|| Error::invalid("metrics", format!("no view {to}")))?,
        );
        let w = warp(&a.image, &a.depth, &a.camera, &b.camera, &b.depth, z_tol)?;
        let (rmse, ssim_v, fpd) = if w.mask.iter().any(|&m| m) {
            (
                masked_rmse(&w.image, &b.image, &w.mask)?,
                ssim(&w.image, &b.image, &w.mask).unwrap_or(f64::NAN),
                feature_distance(extractor, &w.image, &b.image, &w.mask)?,
            )
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        out.push(PairMetrics {
            pair_id,
            range,
            from,
            to,
            rmse,
            ssim: ssim_v,
            fpd,
            fraction_valid: w.fraction_valid,
        });
    }
    Ok(ConsistencyReport { pairs: out })
}
