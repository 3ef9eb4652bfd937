use super::network::{Arch, Layer, Shape};
use crate::error::{Error, Result};

pub const DEFAULT_BACKBONE: &str = "conv4";
pub const DEFAULT_EMBEDDING_DIM: usize = 256;

const CONV4_WIDTHS: [usize; 4] = [8, 16, 32, 32];
/// Spatial size the conv4 stem pools large inputs down to (at most).
const CONV4_WORKING_SIZE: usize = 64;

/// Builds the layer list named by a backbone id.
///
/// * `conv4`: optional mean-pool stem bringing the input to at most 64 px,
///   then four conv3x3/ReLU/maxpool blocks (8, 16, 32, 32 channels) and a
///   dense projection to the embedding.
/// * `mlp2[-h<N>]`: dense(N) + ReLU + dense projection; N defaults to 32.
pub fn build_arch(backbone_id: &str, height: usize, width: usize, embedding_dim: usize) -> Result<Arch> {
    if embedding_dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
    }
    let input = Shape { c: 3, h: height, w: width };
    let layers = if backbone_id == "conv4" {
        let mut layers = Vec::new();
        let factor = height.max(width).div_ceil(CONV4_WORKING_SIZE);
        let mut s = input;
        if factor > 1 {
            layers.push(Layer::AvgPool { factor });
            s = Shape { c: 3, h: s.h / factor, w: s.w / factor };
        }
        let mut in_ch = 3;
        for out_ch in CONV4_WIDTHS {
            layers.extend([Layer::Conv3x3 { in_ch, out_ch }, Layer::Relu, Layer::MaxPool2]);
            in_ch = out_ch;
            s = Shape { c: out_ch, h: s.h / 2, w: s.w / 2 };
        }
        layers.push(Layer::Dense {
            inputs: s.len(),
            outputs: embedding_dim,
        });
        layers
    } else if let Some(rest) = backbone_id.strip_prefix("mlp2") {
        let hidden = match rest {
            "" => 32,
            r => r
                .strip_prefix("-h")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("bad backbone id '{backbone_id}'")))?,
        };
        vec![
            Layer::Dense {
                inputs: input.len(),
                outputs: hidden,
            },
            Layer::Relu,
            Layer::Dense {
                inputs: hidden,
                outputs: embedding_dim,
            },
        ]
    } else {
        return Err(Error::InvalidArgument(format!("unknown backbone '{backbone_id}'")));
    };
    Arch::new(input, layers).map_err(|e| Error::InvalidArgument(format!("backbone '{backbone_id}': {e}")))
}
