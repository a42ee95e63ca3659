//! Attention maps upsampled to image resolution, binarized, and compared to
//! ground-truth masks by intersection over union.

use crate::corpus::{BinaryMask, ImageGrid};
use crate::error::{Error, Result};
use crate::scorer::attention;

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub grid_size: usize,
    /// Row-major, `height * width`.
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

// Source coordinate of output pixel `i` under corner alignment.
fn source_coord(i: usize, out: usize, g: usize) -> (usize, f64) {
    if out <= 1 || g == 1 {
        return (0, 0.0);
    }
    let s = (i * (g - 1)) as f64 / (out - 1) as f64;
    let i0 = (s.floor() as usize).min(g - 1);
    (i0, s - i0 as f64)
}

// a + t(b - a), held inside [min(a,b), max(a,b)] against rounding.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + t * (b - a);
    v.clamp(a.min(b), a.max(b))
}

/// Bilinear upsampling of a row-major `g x g` map to `h x w`. Output pixel
/// (y, x) samples the grid at (y (g-1)/(h-1), x (g-1)/(w-1)), so the four
/// image corners coincide with the four corner cells.
pub fn upsample(weights: &[f64], g: usize, h: usize, w: usize) -> Result<SaliencyMap> {
    if g == 0 || weights.len() != g * g {
        return Err(Error::domain(format!(
            "attention of length {} is not a {g}x{g} grid",
            weights.len()
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::domain("output size must be positive"));
    }
    let cols: Vec<(usize, f64)> = (0..w).map(|x| source_coord(x, w, g)).collect();
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, fy) = source_coord(y, h, g);
        let y1 = (y0 + 1).min(g - 1);
        for &(x0, fx) in &cols {
            let x1 = (x0 + 1).min(g - 1);
            let top = lerp(weights[y0 * g + x0], weights[y0 * g + x1], fx);
            let bottom = lerp(weights[y1 * g + x0], weights[y1 * g + x1], fx);
            values.push(lerp(top, bottom, fy));
        }
    }
    Ok(SaliencyMap {
        height: h,
        width: w,
        grid_size: g,
        values,
    })
}

/// Attention of `audio` over `grid`, upsampled to `h x w`.
pub fn saliency(audio: &[f64], grid: &ImageGrid, h: usize, w: usize) -> Result<SaliencyMap> {
    let att = attention(audio, grid)?;
    upsample(&att.weights, grid.grid_size(), h, w)
}

/// Value at index `floor(q * n)` (capped at `n - 1`) of the ascending sort.
pub fn quantile_threshold(values: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain(format!("quantile {q} outside (0, 1)")));
    }
    if values.is_empty() {
        return Err(Error::domain("quantile of an empty map"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((q * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    Ok(sorted[idx])
}

/// Sets every pixel whose value is at least the per-map quantile threshold.
pub fn binarize(map: &SaliencyMap, q: f64) -> Result<BinaryMask> {
    let t = quantile_threshold(&map.values, q)?;
    BinaryMask::new(
        map.height,
        map.width,
        map.values.iter().map(|&v| v >= t).collect(),
    )
}

/// |a and b| / |a or b|, or 0 for an empty union.
pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(Error::domain(format!(
            "mask shapes {}x{} and {}x{} differ",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.data.iter().zip(&truth.data) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

pub fn mean_iou_for_class(maps: &[SaliencyMap], truths: &[BinaryMask], q: f64) -> Result<f64> {
    if maps.is_empty() {
        return Err(Error::domain("mean IOU over no images"));
    }
    if maps.len() != truths.len() {
        return Err(Error::domain(format!(
            "{} saliency maps but {} masks",
            maps.len(),
            truths.len()
        )));
    }
    let one = |(m, t): (&SaliencyMap, &BinaryMask)| iou(&binarize(m, q)?, t);
    #[cfg(feature = "parallel")]
    let ious: Vec<f64> = {
        use rayon::prelude::*;
        maps.par_iter().zip(truths).map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let ious: Vec<f64> = maps.iter().zip(truths).map(one).collect::<Result<_>>()?;
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Min-max scaled 8-bit rendering; a constant map renders black.
pub fn to_gray(map: &SaliencyMap) -> Vec<u8> {
    let lo = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    map.values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}
