use image::{GrayImage, RgbImage};

use super::mask::BinaryMask;

/// ITU-R BT.601 luma, rounded half up: `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(image: &RgbImage) -> GrayImage {
    let mut out = GrayImage::new(image.width(), image.height());
    for (dst, src) in out.pixels_mut().zip(image.pixels()) {
        let [r, g, b] = src.0;
        let y = (299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000;
        dst.0 = [y.min(255) as u8];
    }
    out
}

pub fn histogram(gray: &GrayImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for p in gray.pixels() {
        h[p.0[0] as usize] += 1;
    }
    h
}

/// Between-class variance scaled by N², for the split `{<= t} | {> t}`.
///
/// Zero when either side is empty.
pub(crate) fn scaled_between_variance(n0: u64, s0: u64, n1: u64, s1: u64) -> f64 {
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let d = s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128;
    let d = d as f64;
    d * d / (n0 as f64 * n1 as f64)
}

/// Otsu's threshold. Returns `t` and the mask of pixels strictly above `t`.
///
/// Only thresholds that leave both classes non-empty are candidates; the
/// smallest maximizer wins. A constant image has no candidate: its threshold is
/// the constant value and the mask is empty.
pub fn otsu_threshold(gray: &GrayImage) -> (u8, BinaryMask) {
    let hist = histogram(gray);
    let total_n: u64 = hist.iter().sum();
    let total_s: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();

    let mut best: Option<(u8, f64)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for t in 0..256usize {
        n0 += hist[t];
        s0 += t as u64 * hist[t];
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let v = scaled_between_variance(n0, s0, n1, total_s - s0);
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((t as u8, v));
        }
    }

    let threshold = match best {
        Some((t, _)) => t,
        None => gray.pixels().next().map_or(0, |p| p.0[0]),
    };
    let mask = if best.is_some() {
        BinaryMask::from_fn(gray.width(), gray.height(), |x, y| gray.get_pixel(x, y).0[0] > threshold)
    } else {
        BinaryMask::new(gray.width(), gray.height())
    };
    (threshold, mask)
}
