use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backbone::build_arch;
use super::network::{self, Arch, Layer};
use super::tensor::Real;
use crate::error::{Error, Result};
use crate::pairgen::Grouping;
use crate::preprocess::View;

/// Largest logit magnitude passed to the logistic; keeps scores strictly inside (0, 1).
pub const LOGIT_CLAMP: f64 = 30.0;

/// Backbone output for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Calibrated similarity in the open interval (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SimilarityScore(pub f64);

impl SimilarityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn logistic(z: f64) -> f64 {
    let z = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-z).exp())
}

/// Component-wise absolute difference of two embeddings.
pub fn l1_vector(left: &[f32], right: &[f32]) -> Result<Vec<f32>> {
    if left.len() != right.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("length {}", left.len()),
            actual: format!("length {}", right.len()),
        });
    }
    Ok(left.iter().zip(right).map(|(a, b)| (a - b).abs()).collect())
}

/// Scalar L1 distance, the sum of [`l1_vector`]. Diagnostic only.
pub fn l1_distance(left: &[f32], right: &[f32]) -> Result<f64> {
    Ok(l1_vector(left, right)?.iter().map(|&v| v as f64).sum())
}

/// Binary cross-entropy `-[y ln d + (1 - y) ln(1 - d)]`.
pub fn pair_loss(d_w: f64, y: u8) -> Result<f64> {
    if !(d_w > 0.0 && d_w < 1.0) {
        return Err(Error::InvalidArgument(format!("similarity {d_w} outside (0, 1)")));
    }
    match y {
        1 => Ok(-d_w.ln()),
        0 => Ok(-(1.0 - d_w).ln()),
        _ => Err(Error::InvalidArgument(format!("pair label {y} not in {{0, 1}}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub view: View,
    pub grouping: Grouping,
    pub input_height: u32,
    pub input_width: u32,
    pub embedding_dim: usize,
    pub backbone_id: String,
}

/// Twin backbones with one shared parameter vector, an L1 merge and a learned
/// logistic calibration `d = σ(w · |f_l - f_r| + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SiameseModel {
    meta: ModelMeta,
    arch: Arch,
    channel_mean: [f32; 3],
    /// Backbone parameters, then calibration weights (M), then the calibration bias.
    params: Vec<f32>,
}

impl SiameseModel {
    /// Fresh model with seeded He-normal backbone weights.
    pub fn new(meta: ModelMeta, seed: u64) -> Result<SiameseModel> {
        let arch = build_arch(
            &meta.backbone_id,
            meta.input_height as usize,
            meta.input_width as usize,
            meta.embedding_dim,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0f32; arch.param_count() + meta.embedding_dim + 1];
        let last = *arch.parametric_layers().last().unwrap();
        for i in arch.parametric_layers() {
            let (fan_in, n_w) = match arch.layers()[i] {
                Layer::Conv3x3 { in_ch, out_ch } => (in_ch * 9, in_ch * out_ch * 9),
                Layer::Dense { inputs, outputs } => (inputs, inputs * outputs),
                _ => unreachable!(),
            };
            let gain = if i == last { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
            let start = arch.param_range(i).start;
            for p in &mut params[start..start + n_w] {
                *p = normal.sample(&mut rng) as f32;
            }
        }
        // similarity starts as a decreasing function of the mean absolute difference
        let m = meta.embedding_dim;
        let head = arch.param_count();
        for w in &mut params[head..head + m] {
            *w = -2.0 / m as f32;
        }
        params[head + m] = 1.0;
        Ok(SiameseModel {
            meta,
            arch,
            channel_mean: [0.5; 3],
            params,
        })
    }

    pub(crate) fn from_parts(meta: ModelMeta, channel_mean: [f32; 3], params: Vec<f32>) -> Result<SiameseModel> {
        let arch = build_arch(
            &meta.backbone_id,
            meta.input_height as usize,
            meta.input_width as usize,
            meta.embedding_dim,
        )?;
        let want = arch.param_count() + meta.embedding_dim + 1;
        if params.len() != want {
            return Err(Error::Format(format!("expected {want} parameters, found {}", params.len())));
        }
        Ok(SiameseModel {
            meta,
            arch,
            channel_mean,
            params,
        })
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn channel_mean(&self) -> [f32; 3] {
        self.channel_mean
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn calibration_weights(&self) -> &[f32] {
        let head = self.arch.param_count();
        &self.params[head..head + self.meta.embedding_dim]
    }

    pub fn calibration_bias(&self) -> f32 {
        *self.params.last().unwrap()
    }

    /// Replaces the calibration head.
    pub fn set_calibration(&mut self, weights: &[f32], bias: f32) -> Result<()> {
        if weights.len() != self.meta.embedding_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} calibration weights", self.meta.embedding_dim),
                actual: format!("{}", weights.len()),
            });
        }
        let head = self.arch.param_count();
        self.params[head..head + weights.len()].copy_from_slice(weights);
        *self.params.last_mut().unwrap() = bias;
        Ok(())
    }

    /// Sets per-channel input means (pixel values scaled to [0, 1]).
    pub fn set_channel_mean(&mut self, mean: [f32; 3]) {
        self.channel_mean = mean;
    }

    /// Sets the channel means from a set of training rasters.
    pub fn fit_normalization<'a>(&mut self, images: impl IntoIterator<Item = &'a RgbImage>) {
        let mut sum = [0f64; 3];
        let mut n = 0u64;
        for img in images {
            for p in img.pixels() {
                for c in 0..3 {
                    sum[c] += p.0[c] as f64 / 255.0;
                }
                n += 1;
            }
        }
        if n > 0 {
            self.channel_mean = sum.map(|s| (s / n as f64) as f32);
        }
    }

    pub fn check_input(&self, image: &RgbImage) -> Result<()> {
        let want = (self.meta.input_width, self.meta.input_height);
        if image.dimensions() != want {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}x3", want.0, want.1),
                actual: format!("{}x{}x3", image.width(), image.height()),
            });
        }
        Ok(())
    }

    /// Channel-major, mean-subtracted input tensor.
    pub fn prepare<T: Real>(&self, image: &RgbImage) -> Result<Vec<T>> {
        self.check_input(image)?;
        let hw = (image.width() * image.height()) as usize;
        let mut out = vec![T::zero(); 3 * hw];
        for (i, p) in image.pixels().enumerate() {
            for c in 0..3 {
                out[c * hw + i] = T::lit(p.0[c] as f64 / 255.0 - self.channel_mean[c] as f64);
            }
        }
        Ok(out)
    }

    pub fn embed(&self, image: &RgbImage) -> Result<EmbeddingVector> {
        let x = self.prepare::<f32>(image)?;
        Ok(self.embed_prepared(&x))
    }

    pub(crate) fn embed_prepared(&self, x: &[f32]) -> EmbeddingVector {
        EmbeddingVector(network::forward(&self.arch, &self.params[..self.arch.param_count()], x))
    }

    /// Calibrated similarity of two cached embeddings.
    pub fn similarity_embeddings(&self, left: &EmbeddingVector, right: &EmbeddingVector) -> SimilarityScore {
        debug_assert_eq!(left.len(), right.len());
        let w = self.calibration_weights();
        let mut z = 0f64;
        for ((a, b), wi) in left.0.iter().zip(&right.0).zip(w) {
            z += *wi as f64 * (a - b).abs() as f64;
        }
        SimilarityScore(logistic(self.calibration_bias() as f64 + z))
    }

    pub fn similarity(&self, a: &RgbImage, b: &RgbImage) -> Result<SimilarityScore> {
        Ok(self.similarity_embeddings(&self.embed(a)?, &self.embed(b)?))
    }

    /// Content hash of the serialized model.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

/// Loss of one pair and accumulation of `scale * d loss / d params` into
/// `grads` (laid out like the model parameters: backbone, weights, bias).
///
/// Uses the logit form of the cross-entropy, which equals [`pair_loss`] of
/// `σ(z)` without the loss of precision near 0 and 1.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pair_loss_grad<T: Real>(
    arch: &Arch,
    params: &[T],
    left: &[T],
    right: &[T],
    label: u8,
    scale: T,
    grads: &mut [T],
    stop_at: usize,
) -> T {
    let n_net = arch.param_count();
    let (net_p, head) = params.split_at(n_net);
    let m = head.len() - 1;
    let (w, b) = (&head[..m], head[m]);

    let ta = network::forward_trace(arch, net_p, left);
    let tb = network::forward_trace(arch, net_p, right);
    let (fa, fb) = (ta.output(), tb.output());

    let mut z = b;
    for i in 0..m {
        z += w[i] * (fa[i] - fb[i]).abs();
    }
    let y = if label == 1 { T::one() } else { T::zero() };
    let loss = z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln();
    let d = T::one() / (T::one() + (-z).exp());
    let dz = (d - y) * scale;

    let (g_net, g_head) = grads.split_at_mut(n_net);
    let mut dfa = vec![T::zero(); m];
    for i in 0..m {
        let diff = fa[i] - fb[i];
        g_head[i] += dz * diff.abs();
        let sign = if diff > T::zero() {
            T::one()
        } else if diff < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        dfa[i] = dz * w[i] * sign;
    }
    g_head[m] += dz;
    network::backward(arch, net_p, &ta, &dfa, g_net, stop_at);
    let dfb: Vec<T> = dfa.iter().map(|&v| -v).collect();
    network::backward(arch, net_p, &tb, &dfb, g_net, stop_at);
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(h: u32) -> ModelMeta {
        ModelMeta {
            view: View::Local,
            grouping: Grouping::Species,
            input_height: h,
            input_width: h,
            embedding_dim: 16,
            backbone_id: "conv4".into(),
        }
    }

    fn noise(seed: u32, size: u32) -> RgbImage {
        RgbImage::from_fn(size, size, |x, y| {
            let v = (x.wrapping_mul(73) ^ y.wrapping_mul(151) ^ seed.wrapping_mul(977)) % 256;
            image::Rgb([v as u8, (v * 3 % 256) as u8, (v * 7 % 256) as u8])
        })
    }

    #[test]
    fn loss_values() {
        assert!((pair_loss(0.5, 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((pair_loss(0.5, 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(pair_loss(1.0 - 1e-12, 1).unwrap() < 1e-11);
        assert!(pair_loss(0.0, 1).is_err());
        assert!(pair_loss(1.0, 0).is_err());
        assert!(pair_loss(0.3, 2).is_err());
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_vector(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(l1_distance(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 3.0);
        assert_eq!(l1_vector(&[0.5, -1.0], &[0.5, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(l1_vector(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn embed_shape_and_determinism() {
        let m = SiameseModel::new(meta(32), 1).unwrap();
        let img = noise(1, 32);
        let a = m.embed(&img).unwrap();
        assert_eq!(a.len(), 16);
        assert!(a.0.iter().all(|v| v.is_finite()));
        assert_eq!(a, m.embed(&img).unwrap());
        assert!(m.embed(&noise(1, 64)).is_err());
    }

    #[test]
    fn self_similarity_is_logistic_of_bias() {
        let m = SiameseModel::new(meta(32), 2).unwrap();
        let img = noise(4, 32);
        let s = m.similarity(&img, &img).unwrap().value();
        assert_eq!(s, logistic(m.calibration_bias() as f64));
    }

    #[test]
    fn twins_share_parameters() {
        // both branches read the one parameter vector: embedding the same
        // image through either side of a pair gives the same output
        let m = SiameseModel::new(meta(32), 3).unwrap();
        let (a, b) = (noise(1, 32), noise(2, 32));
        let xa = m.prepare::<f32>(&a).unwrap();
        let xb = m.prepare::<f32>(&b).unwrap();
        let mut g = vec![0f32; m.params().len()];
        pair_loss_grad(m.arch(), m.params(), &xa, &xb, 1, 1.0, &mut g, 0);
        let mut g2 = vec![0f32; m.params().len()];
        pair_loss_grad(m.arch(), m.params(), &xb, &xa, 1, 1.0, &mut g2, 0);
        let max_diff = g.iter().zip(&g2).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
        assert!(max_diff < 1e-5, "{max_diff}");
    }
}
