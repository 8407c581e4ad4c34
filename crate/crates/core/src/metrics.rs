//! Full-reference quality metrics on `[0, 1]` images, averaged over RGB.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR of identical images.
pub const PSNR_CAP: f64 = 99.0;
const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_shape(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` with peak 1, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape("psnr", a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_1d() -> [f64; SSIM_WIN] {
    let mut g = [0.0; SSIM_WIN];
    let r = (SSIM_WIN / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode Gaussian filter of an `h x w` plane.
fn blur(p: &[f64], h: usize, w: usize, g: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WIN + 1, w - SSIM_WIN + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WIN).map(|k| g[k] * p[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WIN).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over valid positions and channels.
/// Takes `(C, H, W)` or `(H, W)` images.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (c, h, w) = match *a.shape() {
        [c, h, w] => (c, h, w),
        [h, w] => (1, h, w),
        _ => return Err(Error::shape("ssim", format!("expected an image, got {:?}", a.shape()))),
    };
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(Error::shape("ssim", format!("{h}x{w} image is smaller than the {SSIM_WIN}x{SSIM_WIN} window")));
    }
    let g = gaussian_1d();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.data()[ch * n..(ch + 1) * n].iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.data()[ch * n..(ch + 1) * n].iter().map(|&v| v as f64).collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let (ma, mb) = (blur(&pa, h, w, &g), blur(&pb, h, w, &g));
        let saa = blur(&prod(&pa, &pa), h, w, &g);
        let sbb = blur(&prod(&pb, &pb), h, w, &g);
        let sab = blur(&prod(&pa, &pb), h, w, &g);
        let mut s = 0.0;
        for i in 0..ma.len() {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cov = sab[i] - mx * my;
            s += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += s / ma.len() as f64;
    }
    Ok(total / c as f64)
}

/// Per-frame scores of a predicted clip against its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn compute(pred: &[Tensor<f32>], gt: &[Tensor<f32>]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::Data(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
        }
        if pred.is_empty() {
            return Err(Error::Data("no frames to evaluate".into()));
        }
        let mut r = MetricReport {
            psnr: Vec::with_capacity(pred.len()),
            ssim: Vec::with_capacity(pred.len()),
        };
        for (p, g) in pred.iter().zip(gt) {
            r.psnr.push(psnr(p, g)?);
            r.ssim.push(ssim(p, g)?);
        }
        Ok(r)
    }

    pub fn frames(&self) -> usize {
        self.psnr.len()
    }

    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.frames() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.ssim.iter().sum::<f64>() / self.frames() as f64
    }

    /// `frame_idx,psnr_db,ssim` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame_idx,psnr_db,ssim\n");
        for (i, (p, q)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            let _ = writeln!(s, "{i},{p:.4},{q:.6}");
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:>6}  {:>9}  {:>8}\n", "frame", "psnr_db", "ssim");
        for (i, (p, q)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            let _ = writeln!(s, "{i:>6}  {p:>9.4}  {q:>8.6}");
        }
        let _ = writeln!(s, "{:>6}  {:>9.4}  {:>8.6}", "mean", self.mean_psnr(), self.mean_ssim());
        s
    }
}
