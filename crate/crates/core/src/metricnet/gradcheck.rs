use image::RgbImage;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{pair_loss_grad, SiameseModel};
use crate::error::{Error, Result};

/// Which slice of the parameter vector to probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    CalibrationWeights,
    CalibrationBias,
    /// Weights and biases of the layer at this index of the backbone.
    BackboneLayer(usize),
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub group: ParamGroup,
    pub epsilon: f64,
    /// At most this many parameters of the group are probed (seeded subset).
    pub max_params: usize,
    pub seed: u64,
    /// Denominator floor of the relative deviation.
    pub floor: f64,
}

impl GradCheck {
    pub fn new(group: ParamGroup) -> GradCheck {
        GradCheck {
            group,
            epsilon: 1e-4,
            max_params: 64,
            seed: 0,
            floor: 1e-8,
        }
    }
}

/// Largest relative deviation `|a - n| / max(|a|, |n|, floor)` between analytic
/// and central-difference gradients of the pair loss, evaluated in f64.
pub fn gradient_check(
    model: &SiameseModel,
    left: &RgbImage,
    right: &RgbImage,
    label: u8,
    check: &GradCheck,
) -> Result<f64> {
    if label > 1 {
        return Err(Error::InvalidArgument(format!("pair label {label} not in {{0, 1}}")));
    }
    let arch = model.arch();
    let n_net = arch.param_count();
    let m = model.meta().embedding_dim;
    let range = match check.group {
        ParamGroup::CalibrationWeights => n_net..n_net + m,
        ParamGroup::CalibrationBias => n_net + m..n_net + m + 1,
        ParamGroup::BackboneLayer(i) => {
            if i >= arch.layers().len() || arch.param_range(i).is_empty() {
                return Err(Error::InvalidArgument(format!("layer {i} has no parameters")));
            }
            arch.param_range(i)
        }
    };
    let params: Vec<f64> = model.params().iter().map(|&p| p as f64).collect();
    let xl = model.prepare::<f64>(left)?;
    let xr = model.prepare::<f64>(right)?;

    let mut analytic = vec![0f64; params.len()];
    pair_loss_grad(arch, &params, &xl, &xr, label, 1.0, &mut analytic, 0);

    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let amount = check.max_params.min(range.len());
    let mut probe = params.clone();
    let mut scratch = vec![0f64; params.len()];
    let mut loss_at = |p: &[f64]| pair_loss_grad(arch, p, &xl, &xr, label, 0.0, &mut scratch, arch.layers().len());
    let mut worst = 0f64;
    for k in sample(&mut rng, range.len(), amount) {
        let i = range.start + k;
        probe[i] = params[i] + check.epsilon;
        let up = loss_at(&probe);
        probe[i] = params[i] - check.epsilon;
        let down = loss_at(&probe);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * check.epsilon);
        let a = analytic[i];
        let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(check.floor);
        worst = worst.max(dev);
    }
    Ok(worst)
}
