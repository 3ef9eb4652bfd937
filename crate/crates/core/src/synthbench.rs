//! Procedural two-factor leaf benchmark. Genus is carried by the silhouette
//! (aspect, egg shape, lobes, serration), species by the texture inside it
//! (stripe angle and period, vein spacing and angle).

use std::f64::consts::PI;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_manifest, write_png, write_taxonomy, DatasetSplit, LeafSample, TaxonRecord};
use crate::error::{Error, Result};

/// Number of distinct species textures.
pub const PALETTE_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_genera: usize,
    pub species_per_genus: usize,
    pub samples_per_species: usize,
    /// Leading samples of each species that go to the training split.
    pub train_per_species: usize,
    pub image_size: u32,
    pub shape_noise: f64,
    pub texture_noise: f64,
    pub seed: u64,
    /// Index of the first genus; lets extra batches continue the id space.
    #[serde(default)]
    pub genus_offset: usize,
    /// Index of the first texture used by this batch.
    #[serde(default)]
    pub texture_offset: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_genera: 6,
            species_per_genus: 3,
            samples_per_species: 21,
            train_per_species: 6,
            image_size: 256,
            shape_noise: 0.08,
            texture_noise: 0.08,
            seed: 0,
            genus_offset: 0,
            texture_offset: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_genera == 0 || self.species_per_genus == 0 || self.samples_per_species == 0 {
            return bad("genus, species and sample counts must be >= 1".into());
        }
        if self.train_per_species == 0 || self.train_per_species > self.samples_per_species {
            return bad(format!(
                "train_per_species must be in 1..={}",
                self.samples_per_species
            ));
        }
        if self.image_size < 64 {
            return bad("image size must be >= 64".into());
        }
        for (name, v) in [("shape", self.shape_noise), ("texture", self.texture_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} noise must be finite and >= 0"));
            }
        }
        let needed = self.texture_offset + self.num_genera * self.species_per_genus;
        if needed > PALETTE_SIZE {
            return bad(format!(
                "{needed} textures needed but only {PALETTE_SIZE} exist (offset {})",
                self.texture_offset
            ));
        }
        Ok(())
    }

    pub fn genus_id(&self, g: usize) -> String {
        format!("g{:02}", self.genus_offset + g)
    }

    pub fn species_id(&self, g: usize, s: usize) -> String {
        format!("{}s{s}", self.genus_id(g))
    }

    fn family_id(&self, g: usize) -> String {
        format!("f{:02}", (self.genus_offset + g) / 2)
    }

    pub fn taxonomy(&self) -> Vec<TaxonRecord> {
        let mut out = Vec::new();
        for g in 0..self.num_genera {
            for s in 0..self.species_per_genus {
                out.push(TaxonRecord {
                    species_id: self.species_id(g, s),
                    genus_id: self.genus_id(g),
                    family_id: self.family_id(g),
                    display_name: format!("Synthetic {} species {s}", self.genus_id(g)),
                });
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Silhouette {
    aspect: f64,
    egg: f64,
    lobes: u32,
    lobe_depth: f64,
    serration: u32,
}

fn silhouette(genus: usize) -> Silhouette {
    let serration = [0, 28][(genus / 5) % 2];
    Silhouette {
        aspect: [0.5, 0.64, 0.42, 0.74][(genus / 3) % 4],
        egg: [0.0, 0.3, -0.3][genus % 3],
        lobes: [0, 3, 4, 5, 7][genus % 5],
        lobe_depth: 0.16,
        serration,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Texture {
    stripe_angle: f64,
    period: f64,
    vein_spacing: f64,
    vein_angle: f64,
}

/// Texture `index` in 0..64. Each attribute cycles with the low bits of the
/// index so that neighbouring species differ in all of them; the map from
/// index to (angle, period, veins) is one-to-one.
fn texture(index: usize) -> Texture {
    let a = index % 8;
    let (vein_spacing, vein_deg) = [(14.0, 35.0), (24.0, 60.0)][(index / 32 + a) % 2];
    Texture {
        stripe_angle: ((a * 3) % 8) as f64 * 22.5f64.to_radians(),
        period: [4.0, 6.0, 9.0, 13.0][((index / 8) % 4 + a) % 4],
        vein_spacing,
        vein_angle: f64::to_radians(vein_deg),
    }
}

fn sample_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the master seed and sample index
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders sample `n` of species `s` in genus `g` (indices local to the spec).
pub fn render_sample(spec: &SynthSpec, g: usize, s: usize, n: usize) -> RgbImage {
    let genus = spec.genus_offset + g;
    let tex = texture(spec.texture_offset + g * spec.species_per_genus + s);
    let shape = silhouette(genus);
    let flat = ((genus * spec.species_per_genus + s) * spec.samples_per_species + n) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, flat));
    let mut jitter = |amount: f64| amount * rng.random_range(-1.0..=1.0);
    let (sn, tn) = (spec.shape_noise, spec.texture_noise);

    let size = spec.image_size as f64;
    let rotation = jitter(sn * 100.0).to_radians();
    let radius = 0.40 * size * (1.0 + jitter(sn));
    let aspect = shape.aspect * (1.0 + jitter(sn));
    let lobe_depth = shape.lobe_depth * (1.0 + jitter(sn * 2.0));
    let cx = size / 2.0 + jitter(sn * 0.3 * size * 0.1);
    let cy = size / 2.0 + jitter(sn * 0.3 * size * 0.1);
    let period = tex.period * (1.0 + jitter(tn));
    let stripe_angle = tex.stripe_angle + jitter(tn * 50.0).to_radians();
    let phase = jitter(tn * 12.5 * PI);
    let vein_phase = jitter(tn * 12.5 * tex.vein_spacing / 2.0);
    let shade = jitter(tn * 200.0);
    let pixel_noise = tn * 150.0;
    let (ca, sa) = (rotation.cos(), rotation.sin());
    let (cs, ss) = (stripe_angle.cos(), stripe_angle.sin());
    let (cv, sv) = (tex.vein_angle.cos(), tex.vein_angle.sin());

    let mut img = RgbImage::from_pixel(spec.image_size, spec.image_size, Rgb([255, 255, 255]));
    for (px, py, p) in img.enumerate_pixels_mut() {
        let dx = px as f64 + 0.5 - cx;
        let dy = py as f64 + 0.5 - cy;
        // leaf frame: v along the blade (tip at v > 0), u across; in pixels
        let u = ca * dx + sa * dy;
        let v = -(-sa * dx + ca * dy);
        let (un, vn) = (u / radius, v / radius);
        let width = aspect * (1.0 + shape.egg * vn).max(0.2);
        let q = ((un / width).powi(2) + vn.powi(2)).sqrt();
        let theta = un.atan2(vn);
        let mut edge = 1.0;
        if shape.lobes > 0 {
            edge += lobe_depth * (shape.lobes as f64 * theta).cos();
        }
        if shape.serration > 0 {
            let t = (shape.serration as f64 * theta / (2.0 * PI)).fract();
            edge += 0.05 * (t - 0.5).abs();
        }
        let inside = q <= edge;
        let stem = !inside && u.abs() <= 1.0 && vn < 0.0 && vn > -1.0 - 0.35;
        if stem {
            *p = Rgb([60, 90, 50]);
            continue;
        }
        if !inside {
            continue;
        }
        let stripe = 0.5 + 0.5 * (2.0 * PI * (u * cs + v * ss) / period + phase).cos();
        // secondary veins leave the midrib at the vein angle, toward the tip
        let d = v - u.abs() * cv / sv + vein_phase;
        let m = d.rem_euclid(tex.vein_spacing);
        let vein = m.min(tex.vein_spacing - m) * sv < 1.1 || u.abs() < 1.5;
        let noise = jitter(pixel_noise);
        let (r, gch, b) = if vein {
            (95.0, 150.0, 85.0)
        } else {
            (30.0 + 40.0 * stripe, 78.0 + 52.0 * stripe, 30.0 + 30.0 * stripe)
        };
        let c = |x: f64| (x + shade * 0.5 + noise).round().clamp(0.0, 150.0) as u8;
        *p = Rgb([c(r), c(gch), c(b)]);
    }
    img
}

/// Renders the whole benchmark (in parallel; output is independent of the
/// thread count).
pub fn generate(spec: &SynthSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for g in 0..spec.num_genera {
        for s in 0..spec.species_per_genus {
            for n in 0..spec.samples_per_species {
                jobs.push((g, s, n));
            }
        }
    }
    let rendered: Vec<(usize, LeafSample)> = jobs
        .par_iter()
        .map(|&(g, s, n)| {
            let species = spec.species_id(g, s);
            let id = format!("{species}_{n:03}");
            let img = render_sample(spec, g, s, n);
            (n, LeafSample::new(id, img, Some(species)).expect("non-empty image"))
        })
        .collect();
    let mut split = DatasetSplit {
        taxonomy: spec.taxonomy(),
        ..Default::default()
    };
    for (n, sample) in rendered {
        if n < spec.train_per_species {
            split.train.push(sample);
        } else {
            split.test.push(sample);
        }
    }
    Ok(split)
}

/// Writes `corpus/<species>/<id>.png`, `taxonomy.csv` and `test_manifest.txt`.
pub fn write_dataset(split: &DatasetSplit, root: &Path) -> Result<()> {
    let corpus = root.join("corpus");
    for s in split.train.iter().chain(&split.test) {
        let species = s.species_id.as_deref().unwrap_or("unlabeled");
        let dir = corpus.join(species);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_png(&dir.join(format!("{}.png", s.sample_id)), &s.image)?;
    }
    write_taxonomy(&root.join("taxonomy.csv"), &split.taxonomy)?;
    let test_ids: Vec<String> = split.test.iter().map(|s| s.sample_id.clone()).collect();
    write_manifest(&root.join("test_manifest.txt"), &test_ids)
}
