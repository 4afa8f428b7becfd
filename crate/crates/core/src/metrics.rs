//! Full-reference quality metrics on quantized images.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{Shape, Tensor};

/// Metric settings, echoed into every report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub bit_depth: u32,
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            bit_depth: 8,
            window: 8,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

fn peak(d: u32) -> Result<u64> {
    if !(1..=16).contains(&d) {
        return Err(Error::invalid(format!("bit depth {d} outside 1..=16")));
    }
    Ok((1u64 << d) - 1)
}

/// Round `[0, 1]` values to integer levels `0..=2^d − 1`.
pub fn quantize<T: Scalar>(t: &Tensor<T>, d: u32) -> Result<Vec<u32>> {
    let p = peak(d)? as f64;
    Ok(t.data()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * p).round() as u32)
        .collect())
}

fn check_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Shape> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("metric operands differ: {} vs {}", a.shape(), b.shape())));
    }
    Ok(a.shape())
}

/// PSNR in dB over integer levels; `f64::INFINITY` for identical images.
pub fn psnr_levels(a: &[u32], b: &[u32], d: u32) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("psnr over {} vs {} samples", a.len(), b.len())));
    }
    let p = peak(d)? as f64;
    let sse: u64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let e = x.abs_diff(y) as u64;
            e * e
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (p * p * a.len() as f64 / sse as f64).log10())
}

pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, d: u32) -> Result<f64> {
    check_dims(a, b)?;
    psnr_levels(&quantize(a, d)?, &quantize(b, d)?, d)
}

/// Summed-area table with a zero border row and column.
struct Integral {
    w: usize,
    s: Vec<i64>,
}

impl Integral {
    fn new(h: usize, w: usize, f: impl Fn(usize) -> i64) -> Self {
        let mut s = vec![0i64; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0;
            for x in 0..w {
                row += f(y * w + x);
                s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
            }
        }
        Integral { w, s }
    }

    fn window(&self, y: usize, x: usize, n: usize) -> i64 {
        let stride = self.w + 1;
        self.s[(y + n) * stride + x + n] - self.s[y * stride + x + n] - self.s[(y + n) * stride + x]
            + self.s[y * stride + x]
    }
}

/// Mean SSIM of one plane over all `n×n` windows (stride 1, uniform weights).
pub fn ssim_plane(a: &[u32], b: &[u32], h: usize, w: usize, cfg: &MetricConfig) -> Result<f64> {
    let n = cfg.window;
    if n == 0 || n > h || n > w {
        return Err(Error::invalid(format!("SSIM window {n} does not fit a {h}x{w} image")));
    }
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape("SSIM plane length does not match its dims"));
    }
    let p = peak(cfg.bit_depth)? as f64;
    let c1 = (cfg.k1 * p).powi(2);
    let c2 = (cfg.k2 * p).powi(2);
    let (ai, bi) = (|i: usize| a[i] as i64, |i: usize| b[i] as i64);
    let sa = Integral::new(h, w, ai);
    let sb = Integral::new(h, w, bi);
    let saa = Integral::new(h, w, |i| ai(i) * ai(i));
    let sbb = Integral::new(h, w, |i| bi(i) * bi(i));
    let sab = Integral::new(h, w, |i| ai(i) * bi(i));
    let count = (n * n) as i64;
    let nn = (count * count) as f64;
    let mut total = 0.0;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let (xa, xb) = (sa.window(y, x, n), sb.window(y, x, n));
            let mu_a = xa as f64 / count as f64;
            let mu_b = xb as f64 / count as f64;
            // exact integer numerators; one rounding each
            let var_a = (count * saa.window(y, x, n) - xa * xa) as f64 / nn;
            let var_b = (count * sbb.window(y, x, n) - xb * xb) as f64 / nn;
            let cov = (count * sab.window(y, x, n) - xa * xb) as f64 / nn;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
        }
    }
    Ok(total / ((h - n + 1) * (w - n + 1)) as f64)
}

/// SSIM averaged over every plane (image and channel) of `(n, c, h, w)`.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &MetricConfig) -> Result<f64> {
    let s = check_dims(a, b)?;
    let (qa, qb) = (quantize(a, cfg.bit_depth)?, quantize(b, cfg.bit_depth)?);
    let plane = s.plane();
    let mut total = 0.0;
    for (pa, pb) in qa.chunks(plane).zip(qb.chunks(plane)) {
        total += ssim_plane(pa, pb, s.h, s.w, cfg)?;
    }
    Ok(total / (s.n * s.c) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub config: MetricConfig,
    pub images: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Images whose PSNR is infinite (bit-identical after quantization).
    pub identical: usize,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl QualityReport {
    pub fn from_scores(config: MetricConfig, mut images: Vec<ImageScore>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("nothing to evaluate".into()));
        }
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let n = images.len() as f64;
        Ok(QualityReport {
            config,
            mean_psnr: images.iter().map(|s| s.psnr).sum::<f64>() / n,
            mean_ssim: images.iter().map(|s| s.ssim).sum::<f64>() / n,
            identical: images.iter().filter(|s| s.psnr.is_infinite()).count(),
            images,
        })
    }

    pub fn to_tsv(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "# bit_depth={} ssim_window={} k1={} k2={} ssim_channels=per-channel-mean\nid\tpsnr_db\tssim\n",
            c.bit_depth, c.window, c.k1, c.k2
        );
        for s in &self.images {
            let _ = writeln!(out, "{}\t{}\t{:.6}", s.id, fmt_db(s.psnr), s.ssim);
        }
        let _ = writeln!(out, "mean\t{}\t{:.6}", fmt_db(self.mean_psnr), self.mean_ssim);
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.images.iter().map(|s| s.id.len()).max().unwrap_or(2).max(4);
        let mut out = format!("{:<width$}  {:>10}  {:>8}\n", "id", "PSNR (dB)", "SSIM");
        for s in &self.images {
            let _ = writeln!(out, "{:<width$}  {:>10}  {:>8.4}", s.id, fmt_db(s.psnr), s.ssim);
        }
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>8.4}", "mean", fmt_db(self.mean_psnr), self.mean_ssim);
        let c = &self.config;
        let _ = writeln!(
            out,
            "({} images, {} identical; {}-bit, {}x{} uniform SSIM window, k1={}, k2={})",
            self.images.len(),
            self.identical,
            c.bit_depth,
            c.window,
            c.window,
            c.k1,
            c.k2
        );
        out
    }
}

/// Score every restored image against the reference with the same id.
/// Ids present on only one side are all listed in the error.
pub fn evaluate<T: Scalar>(
    restored: &[(String, Tensor<T>)],
    reference: &[(String, Tensor<T>)],
    cfg: &MetricConfig,
) -> Result<QualityReport> {
    let refs: BTreeMap<&str, &Tensor<T>> = reference.iter().map(|(id, t)| (id.as_str(), t)).collect();
    let rest: BTreeMap<&str, &Tensor<T>> = restored.iter().map(|(id, t)| (id.as_str(), t)).collect();
    let mut problems: Vec<String> = rest
        .keys()
        .filter(|id| !refs.contains_key(*id))
        .map(|id| format!("{id}: no reference image"))
        .collect();
    problems.extend(
        refs.keys()
            .filter(|id| !rest.contains_key(*id))
            .map(|id| format!("{id}: no restored image")),
    );
    if !problems.is_empty() {
        return Err(Error::Dataset(format!("id mismatch:\n  {}", problems.join("\n  "))));
    }
    let scores = rest
        .iter()
        .map(|(id, a)| {
            let b = refs[id];
            Ok(ImageScore {
                id: id.to_string(),
                psnr: psnr(a, b, cfg.bit_depth)?,
                ssim: ssim(a, b, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    QualityReport::from_scores(*cfg, scores)
}
