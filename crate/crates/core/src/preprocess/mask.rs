use image::RgbImage;

use crate::error::{Error, Result};

/// Foreground/background partition of an image grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMask { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn invert(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bb: Option<BoundingBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => BoundingBox { x0: x, y0: y, x1: x, y1: y },
                        Some(b) => BoundingBox {
                            x0: b.x0.min(x),
                            y0: b.y0.min(y),
                            x1: b.x1.max(x),
                            y1: b.y1.max(y),
                        },
                    });
                }
            }
        }
        bb
    }

    /// Intersection over union; 1.0 for two empty masks.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Offsets of a digital disk of the given radius.
pub fn disk(radius: u32) -> Vec<(i32, i32)> {
    let r = radius as i32;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Erosion; pixels outside the grid count as background.
pub fn erode(mask: &BinaryMask, element: &[(i32, i32)]) -> BinaryMask {
    let (w, h) = (mask.width as i32, mask.height as i32);
    BinaryMask::from_fn(mask.width, mask.height, |x, y| {
        element.iter().all(|&(dx, dy)| {
            let (xx, yy) = (x as i32 + dx, y as i32 + dy);
            xx >= 0 && yy >= 0 && xx < w && yy < h && mask.get(xx as u32, yy as u32)
        })
    })
}

pub fn dilate(mask: &BinaryMask, element: &[(i32, i32)]) -> BinaryMask {
    let (w, h) = (mask.width as i32, mask.height as i32);
    BinaryMask::from_fn(mask.width, mask.height, |x, y| {
        element.iter().any(|&(dx, dy)| {
            let (xx, yy) = (x as i32 - dx, y as i32 - dy);
            xx >= 0 && yy >= 0 && xx < w && yy < h && mask.get(xx as u32, yy as u32)
        })
    })
}

/// Morphological opening with a disk: removes structures thinner than the disk
/// (leaf stems) while keeping the blade.
pub fn tophat_filter(mask: &BinaryMask, kernel_radius: u32) -> Result<BinaryMask> {
    if kernel_radius < 1 {
        return Err(Error::InvalidArgument("kernel radius must be >= 1".into()));
    }
    let se = disk(kernel_radius);
    Ok(dilate(&erode(mask, &se), &se))
}

/// Sub-image spanned by the mask's bounding box.
pub fn bounding_box_crop(image: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    if (image.width(), image.height()) != (mask.width, mask.height) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", image.width(), image.height()),
            actual: format!("{}x{}", mask.width, mask.height),
        });
    }
    let bb = mask.bounding_box().ok_or(Error::NoLeafDetected)?;
    Ok(image::imageops::crop_imm(image, bb.x0, bb.y0, bb.width(), bb.height()).to_image())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_crop_dimensions() {
        let img = RgbImage::new(30, 30);
        let mask = BinaryMask::from_fn(30, 30, |x, y| (10..=20).contains(&y) && (5..=8).contains(&x));
        let out = bounding_box_crop(&img, &mask).unwrap();
        assert_eq!((out.width(), out.height()), (4, 11));
    }

    #[test]
    fn bbox_full_frame_is_identity() {
        let img = RgbImage::from_fn(7, 5, |x, y| image::Rgb([x as u8, y as u8, 3]));
        let mask = BinaryMask::from_fn(7, 5, |_, _| true);
        assert_eq!(bounding_box_crop(&img, &mask).unwrap(), img);
    }

    #[test]
    fn bbox_empty_mask_errors() {
        let img = RgbImage::new(4, 4);
        assert!(matches!(
            bounding_box_crop(&img, &BinaryMask::new(4, 4)),
            Err(Error::NoLeafDetected)
        ));
    }

    #[test]
    fn opening_of_empty_is_empty() {
        assert!(tophat_filter(&BinaryMask::new(10, 10), 3).unwrap().is_empty());
    }

    #[test]
    fn zero_radius_rejected() {
        assert!(tophat_filter(&BinaryMask::new(3, 3), 0).is_err());
    }

    #[test]
    fn disk_radius_one_is_a_cross() {
        let d = disk(1);
        assert_eq!(d.len(), 5);
    }
}
