//! Per-channel 256-bin histograms, quantile-mapping histogram matching
//! and a percentile contrast stretch.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BINS: usize = 256;

fn level(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// `(channels, pixels per channel)` of a `(C, H, W)` or `(H, W)` image.
fn layout(img: &Tensor<f32>) -> Result<(usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h * w)),
        [h, w] => Ok((1, h * w)),
        _ => Err(Error::Data(format!("expected an image, got shape {:?}", img.shape()))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// One row of [`BINS`] counts per channel.
    pub counts: Vec<[u64; BINS]>,
}

impl Histogram {
    pub fn of(img: &Tensor<f32>) -> Result<Self> {
        let (c, n) = layout(img)?;
        let mut counts = vec![[0u64; BINS]; c];
        for (ch, row) in counts.iter_mut().enumerate() {
            for &v in &img.data()[ch * n..(ch + 1) * n] {
                row[level(v)] += 1;
            }
        }
        Ok(Histogram { counts })
    }

    /// Sum of the histograms of `imgs`, which must share a channel count.
    pub fn pooled<'a>(imgs: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut acc: Option<Histogram> = None;
        for img in imgs {
            let h = Histogram::of(img)?;
            match &mut acc {
                None => acc = Some(h),
                Some(a) => {
                    if a.counts.len() != h.counts.len() {
                        return Err(Error::Data("pooled images differ in channel count".into()));
                    }
                    for (ra, rb) in a.counts.iter_mut().zip(&h.counts) {
                        for (x, y) in ra.iter_mut().zip(rb) {
                            *x += y;
                        }
                    }
                }
            }
        }
        acc.ok_or_else(|| Error::Data("no reference images".into()))
    }

    fn cdf(row: &[u64; BINS]) -> [u64; BINS] {
        let mut out = [0; BINS];
        let mut acc = 0;
        for (o, &c) in out.iter_mut().zip(row) {
            acc += c;
            *o = acc;
        }
        out
    }
}

/// Remaps each channel of `src` so its empirical CDF follows `reference`:
/// level `s` maps to the lowest level `r` with `CDF_ref(r) >= CDF_src(s)`.
pub fn histogram_match_to(src: &Tensor<f32>, reference: &Histogram) -> Result<Tensor<f32>> {
    let (c, n) = layout(src)?;
    if n == 0 {
        return Err(Error::Data("empty image".into()));
    }
    if reference.counts.len() != c {
        return Err(Error::Data(format!(
            "reference has {} channels, image has {c}",
            reference.counts.len()
        )));
    }
    let own = Histogram::of(src)?;
    let mut out = src.clone();
    for ch in 0..c {
        let cs = Histogram::cdf(&own.counts[ch]);
        let cr = Histogram::cdf(&reference.counts[ch]);
        let (ns, nr) = (cs[BINS - 1] as u128, cr[BINS - 1] as u128);
        if nr == 0 {
            return Err(Error::Data("empty reference histogram".into()));
        }
        // Exact rational comparison: CDF_ref(r)/nr >= CDF_src(s)/ns.
        let mut map = [0usize; BINS];
        let mut r = 0;
        for s in 0..BINS {
            while (cr[r] as u128) * ns < (cs[s] as u128) * nr {
                r += 1;
            }
            map[s] = r;
        }
        for v in &mut out.data_mut()[ch * n..(ch + 1) * n] {
            *v = map[level(*v)] as f32 / 255.0;
        }
    }
    Ok(out)
}

pub fn histogram_match(src: &Tensor<f32>, reference: &Tensor<f32>) -> Result<Tensor<f32>> {
    if reference.numel() == 0 {
        return Err(Error::Data("empty reference".into()));
    }
    histogram_match_to(src, &Histogram::of(reference)?)
}

/// Largest per-channel Kolmogorov-Smirnov distance between the 256-bin
/// histograms of two images.
pub fn ks_distance(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    let (ha, hb) = (Histogram::of(a)?, Histogram::of(b)?);
    if ha.counts.len() != hb.counts.len() {
        return Err(Error::Data("channel count mismatch".into()));
    }
    let mut worst = 0.0f64;
    for (ra, rb) in ha.counts.iter().zip(&hb.counts) {
        let (ca, cb) = (Histogram::cdf(ra), Histogram::cdf(rb));
        let (na, nb) = (ca[BINS - 1] as f64, cb[BINS - 1] as f64);
        for k in 0..BINS {
            worst = worst.max((ca[k] as f64 / na - cb[k] as f64 / nb).abs());
        }
    }
    Ok(worst)
}

/// Per-channel linear stretch mapping the `lo`/`hi` quantiles to 0 and 1,
/// clipped.
pub fn stretch(img: &Tensor<f32>, lo: f64, hi: f64) -> Result<Tensor<f32>> {
    let (c, n) = layout(img)?;
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidArgument(format!("stretch quantiles {lo}, {hi}")));
    }
    let mut out = img.clone();
    for ch in 0..c {
        let plane = &mut out.data_mut()[ch * n..(ch + 1) * n];
        let mut sorted = plane.to_vec();
        sorted.sort_by(f32::total_cmp);
        let q = |p: f64| sorted[((n - 1) as f64 * p).round() as usize];
        let (a, b) = (q(lo), q(hi));
        if b <= a {
            continue;
        }
        for v in plane.iter_mut() {
            *v = ((*v - a) / (b - a)).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
