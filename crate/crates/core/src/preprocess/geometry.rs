use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LeafSample;
use crate::error::{Error, Result};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

#[inline]
fn sample_bilinear(img: &RgbImage, sx: f64, sy: f64, fill: Option<Rgb<u8>>) -> Rgb<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let fetch = |x: i64, y: i64| -> Option<[f64; 3]> {
        let (x, y) = match fill {
            Some(_) if x < 0 || y < 0 || x >= w || y >= h => return None,
            _ => (x.clamp(0, w - 1), y.clamp(0, h - 1)),
        };
        let p = img.get_pixel(x as u32, y as u32).0;
        Some([p[0] as f64, p[1] as f64, p[2] as f64])
    };
    let bg = fill.map(|c| [c.0[0] as f64, c.0[1] as f64, c.0[2] as f64]).unwrap_or([0.0; 3]);
    let p00 = fetch(x0, y0).unwrap_or(bg);
    let p10 = fetch(x0 + 1, y0).unwrap_or(bg);
    let p01 = fetch(x0, y0 + 1).unwrap_or(bg);
    let p11 = fetch(x0 + 1, y0 + 1).unwrap_or(bg);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] + (p10[c] - p00[c]) * fx;
        let bottom = p01[c] + (p11[c] - p01[c]) * fx;
        let v = top + (bottom - top) * fy;
        out[c] = v.round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.width() == width && img.height() == height {
        return img.clone();
    }
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    RgbImage::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) * sx - 0.5;
        let v = (y as f64 + 0.5) * sy - 0.5;
        sample_bilinear(img, u, v, None)
    })
}

/// Centered `size`x`size` crop; odd margins put the extra pixel after the crop.
pub fn center_crop(img: &RgbImage, size: u32) -> Result<RgbImage> {
    if size > img.width() || size > img.height() {
        return Err(Error::ShapeMismatch {
            expected: format!("at least {size}x{size}"),
            actual: format!("{}x{}", img.width(), img.height()),
        });
    }
    let x0 = (img.width() - size) / 2;
    let y0 = (img.height() - size) / 2;
    Ok(image::imageops::crop_imm(img, x0, y0, size, size).to_image())
}

/// Rotates about the image center by `degrees` (counter-clockwise), keeping the
/// canvas size and filling uncovered pixels with white.
pub fn rotate(img: &RgbImage, degrees: f64) -> RgbImage {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        // inverse mapping
        let sx = cos * dx - sin * dy + cx;
        let sy = sin * dx + cos * dy + cy;
        sample_bilinear(img, sx, sy, Some(WHITE))
    })
}

/// `count` rotated copies at angles drawn uniformly from
/// `[-max_degrees, max_degrees]`, deterministic per seed.
pub fn augment_rotations(sample: &LeafSample, count: usize, max_degrees: f64, seed: u64) -> Vec<LeafSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = max_degrees.abs();
    (0..count)
        .map(|i| {
            let angle: f64 = if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
            LeafSample {
                sample_id: format!("{}_rot{i}", sample.sample_id),
                image: rotate(&sample.image, angle),
                species_id: sample.species_id.clone(),
            }
        })
        .collect()
}
