//! Two-view preprocessing: Otsu segmentation, stem removal by opening,
//! bounding-box crop to a 224x224 global view, and a centered local crop.

mod geometry;
mod mask;
mod threshold;

use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

pub use geometry::{augment_rotations, center_crop, resize_bilinear, rotate, WHITE};
pub use mask::{bounding_box_crop, dilate, disk, erode, tophat_filter, BinaryMask, BoundingBox};
pub use threshold::{histogram, otsu_threshold, to_grayscale};

use crate::dataset::{read_rgb, write_png, LeafSample};
use crate::error::{Error, Result};

pub const GLOBAL_SIZE: u32 = 224;
pub const CROP_SIZES: [u32; 3] = [32, 64, 128];

/// Which side of the Otsu threshold is the leaf.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Pixels at or below the threshold (the darker class); scans show dark leaves on a light background.
    #[default]
    Dark,
    Bright,
}

impl std::str::FromStr for Polarity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dark" => Ok(Polarity::Dark),
            "bright" => Ok(Polarity::Bright),
            _ => Err(Error::InvalidArgument(format!("unknown polarity '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub crop_size: u32,
    pub kernel_radius: u32,
    pub polarity: Polarity,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            crop_size: 64,
            kernel_radius: 3,
            polarity: Polarity::Dark,
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if !CROP_SIZES.contains(&self.crop_size) {
            return Err(Error::InvalidArgument(format!(
                "crop size {} not in {CROP_SIZES:?}",
                self.crop_size
            )));
        }
        if self.kernel_radius < 1 {
            return Err(Error::InvalidArgument("kernel radius must be >= 1".into()));
        }
        Ok(())
    }
}

/// Selects the representation fed to a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Global,
    Local,
}

impl std::str::FromStr for View {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(View::Global),
            "local" => Ok(View::Local),
            _ => Err(Error::InvalidArgument(format!("unknown view '{s}'"))),
        }
    }
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            View::Global => "global",
            View::Local => "local",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewPair {
    pub global_view: RgbImage,
    pub local_view: RgbImage,
}

impl ViewPair {
    /// Builds both views from an already segmented, tightly cropped leaf.
    pub fn from_leaf(leaf: &RgbImage, crop_size: u32) -> Result<ViewPair> {
        let global_view = resize_bilinear(leaf, GLOBAL_SIZE, GLOBAL_SIZE);
        let local_view = center_crop(&global_view, crop_size)?;
        Ok(ViewPair { global_view, local_view })
    }

    pub fn get(&self, view: View) -> &RgbImage {
        match view {
            View::Global => &self.global_view,
            View::Local => &self.local_view,
        }
    }

    pub fn write(&self, dir: &Path, sample_id: &str) -> Result<()> {
        write_png(&dir.join(format!("{sample_id}.global.png")), &self.global_view)?;
        write_png(&dir.join(format!("{sample_id}.local.png")), &self.local_view)
    }

    pub fn read(dir: &Path, sample_id: &str) -> Result<ViewPair> {
        Ok(ViewPair {
            global_view: read_rgb(&dir.join(format!("{sample_id}.global.png")))?,
            local_view: read_rgb(&dir.join(format!("{sample_id}.local.png")))?,
        })
    }
}

/// Leaf mask after thresholding and opening.
pub fn leaf_mask(gray: &GrayImage, config: &ViewConfig) -> Result<BinaryMask> {
    let (_, above) = otsu_threshold(gray);
    let mask = match config.polarity {
        Polarity::Bright => above,
        // a constant image has no split; keep it empty for both polarities
        Polarity::Dark if above.is_empty() => above,
        Polarity::Dark => above.invert(),
    };
    tophat_filter(&mask, config.kernel_radius)
}

/// Whites out everything outside the mask and crops to its bounding box.
pub fn filtered_leaf(image: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    let mut filtered = image.clone();
    for (x, y, p) in filtered.enumerate_pixels_mut() {
        if !mask.get(x, y) {
            *p = WHITE;
        }
    }
    bounding_box_crop(&filtered, mask)
}

pub fn make_views(sample: &LeafSample, config: &ViewConfig) -> Result<ViewPair> {
    config.validate()?;
    let gray = to_grayscale(&sample.image);
    let mask = leaf_mask(&gray, config)?;
    let leaf = filtered_leaf(&sample.image, &mask)?;
    ViewPair::from_leaf(&leaf, config.crop_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn leaf_on_white() -> LeafSample {
        // dark ellipse with a thin stem
        let img = RgbImage::from_fn(120, 100, |x, y| {
            let dx = (x as f64 - 60.0) / 40.0;
            let dy = (y as f64 - 50.0) / 25.0;
            let stem = (49..=50).contains(&y) && x > 95 && x < 115;
            if dx * dx + dy * dy <= 1.0 || stem {
                Rgb([40 + (x % 5) as u8 * 6, 90, 30])
            } else {
                WHITE
            }
        });
        LeafSample::new("leaf", img, Some("a".into())).unwrap()
    }

    #[test]
    fn views_have_contract_shapes() {
        for c in CROP_SIZES {
            let cfg = ViewConfig { crop_size: c, ..Default::default() };
            let v = make_views(&leaf_on_white(), &cfg).unwrap();
            assert_eq!(v.global_view.dimensions(), (224, 224));
            assert_eq!(v.local_view.dimensions(), (c, c));
        }
    }

    #[test]
    fn stem_is_removed_before_cropping() {
        let s = leaf_on_white();
        let gray = to_grayscale(&s.image);
        let mask = leaf_mask(&gray, &ViewConfig::default()).unwrap();
        let bb = mask.bounding_box().unwrap();
        // ellipse spans x in [20, 100]; the stem reached x = 114
        assert!(bb.x1 <= 101, "{bb:?}");
    }

    #[test]
    fn blank_image_is_no_leaf() {
        let s = LeafSample::new("w", RgbImage::from_pixel(50, 50, WHITE), None).unwrap();
        assert!(matches!(make_views(&s, &ViewConfig::default()), Err(Error::NoLeafDetected)));
    }

    #[test]
    fn local_view_is_central_block_of_full_leaf() {
        let img = RgbImage::from_fn(224, 224, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, 7]));
        let v = ViewPair::from_leaf(&img, 32).unwrap();
        assert_eq!(v.global_view, img);
        let block = image::imageops::crop_imm(&img, 96, 96, 32, 32).to_image();
        assert_eq!(v.local_view, block);
    }

    #[test]
    fn make_views_is_deterministic() {
        let s = leaf_on_white();
        let a = make_views(&s, &ViewConfig::default()).unwrap();
        let b = make_views(&s, &ViewConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_crop_size_rejected() {
        let cfg = ViewConfig { crop_size: 48, ..Default::default() };
        assert!(make_views(&leaf_on_white(), &cfg).is_err());
    }
}
