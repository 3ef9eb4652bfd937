//! Feed-forward backbone: a layer list over a flat parameter slice, with
//! explicit forward traces and reverse-mode gradients.

use super::tensor::Real;

/// Channel-major activation shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    /// Non-overlapping `factor`x`factor` mean pooling (floor).
    AvgPool { factor: usize },
    /// 3x3 convolution, stride 1, zero padding 1.
    Conv3x3 { in_ch: usize, out_ch: usize },
    Relu,
    /// 2x2 max pooling, stride 2 (floor).
    MaxPool2,
    /// Fully connected over the flattened input.
    Dense { inputs: usize, outputs: usize },
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Conv3x3 { in_ch, out_ch } => out_ch * in_ch * 9 + out_ch,
            Layer::Dense { inputs, outputs } => outputs * inputs + outputs,
            _ => 0,
        }
    }

    fn output_shape(&self, s: Shape) -> Shape {
        match *self {
            Layer::AvgPool { factor } => Shape { c: s.c, h: s.h / factor, w: s.w / factor },
            Layer::Conv3x3 { out_ch, .. } => Shape { c: out_ch, ..s },
            Layer::Relu => s,
            Layer::MaxPool2 => Shape { c: s.c, h: s.h / 2, w: s.w / 2 },
            Layer::Dense { outputs, .. } => Shape { c: outputs, h: 1, w: 1 },
        }
    }
}

/// Layer list with precomputed shapes and parameter offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Arch {
    layers: Vec<Layer>,
    /// Input shape of each layer, plus the final output shape.
    shapes: Vec<Shape>,
    offsets: Vec<usize>,
    param_count: usize,
}

impl Arch {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Arch, String> {
        let mut shapes = vec![input];
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for layer in &layers {
            let s = *shapes.last().unwrap();
            match *layer {
                Layer::Conv3x3 { in_ch, .. } if in_ch != s.c => {
                    return Err(format!("conv expects {in_ch} channels, got {}", s.c))
                }
                Layer::Dense { inputs, .. } if inputs != s.len() => {
                    return Err(format!("dense expects {inputs} inputs, got {}", s.len()))
                }
                Layer::AvgPool { factor } if factor == 0 => return Err("zero pooling factor".into()),
                _ => {}
            }
            let out = layer.output_shape(s);
            if out.len() == 0 {
                return Err(format!("layer {layer:?} collapses {s:?} to nothing"));
            }
            offsets.push(total);
            total += layer.param_count();
            shapes.push(out);
        }
        Ok(Arch {
            layers,
            shapes,
            offsets,
            param_count: total,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Parameter range owned by layer `i` (empty for parameter-free layers).
    pub fn param_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.layers[i].param_count()
    }

    /// Indices of layers that carry parameters, in order.
    pub fn parametric_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].param_count() > 0).collect()
    }
}

enum Cache<T> {
    None,
    Cols(Vec<T>),
    Argmax(Vec<u32>),
}

/// Activations kept for the backward pass.
pub struct Trace<T> {
    /// Input of each layer followed by the network output.
    acts: Vec<Vec<T>>,
    caches: Vec<Cache<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().unwrap()
    }
}

fn im2col<T: Real>(input: &[T], s: Shape) -> Vec<T> {
    let (h, w) = (s.h as isize, s.w as isize);
    let hw = s.h * s.w;
    let mut cols = vec![T::zero(); s.c * 9 * hw];
    for c in 0..s.c {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = (c * 9 + (ky * 3 + kx) as usize) * hw;
                let dst = &mut cols[row..row + hw];
                for y in 0..h {
                    let sy = y + ky - 1;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let x_lo = (1 - kx).max(0);
                    let x_hi = (w + 1 - kx).min(w);
                    let d = (y * w) as usize;
                    let src = (sy * w) as usize;
                    for x in x_lo..x_hi {
                        dst[d + x as usize] = plane[src + (x + kx - 1) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], s: Shape, out: &mut [T]) {
    let (h, w) = (s.h as isize, s.w as isize);
    let hw = s.h * s.w;
    for c in 0..s.c {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = (c * 9 + (ky * 3 + kx) as usize) * hw;
                let src = &cols[row..row + hw];
                for y in 0..h {
                    let sy = y + ky - 1;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let x_lo = (1 - kx).max(0);
                    let x_hi = (w + 1 - kx).min(w);
                    let d = (y * w) as usize;
                    let dst = (sy * w) as usize;
                    for x in x_lo..x_hi {
                        plane[dst + (x + kx - 1) as usize] += src[d + x as usize];
                    }
                }
            }
        }
    }
}

fn layer_forward<T: Real>(layer: &Layer, p: &[T], x: &[T], s: Shape, o: Shape, keep: bool) -> (Vec<T>, Cache<T>) {
    match *layer {
        Layer::AvgPool { factor } => {
            let mut out = vec![T::zero(); o.len()];
            let scale = T::lit(1.0 / (factor * factor) as f64);
            for c in 0..s.c {
                for oy in 0..o.h {
                    for ox in 0..o.w {
                        let mut acc = T::zero();
                        for dy in 0..factor {
                            let row = c * s.h * s.w + (oy * factor + dy) * s.w + ox * factor;
                            for dx in 0..factor {
                                acc += x[row + dx];
                            }
                        }
                        out[c * o.h * o.w + oy * o.w + ox] = acc * scale;
                    }
                }
            }
            (out, Cache::None)
        }
        Layer::Conv3x3 { in_ch, out_ch } => {
            let hw = s.h * s.w;
            let cols = im2col(x, s);
            let (wts, bias) = p.split_at(out_ch * in_ch * 9);
            let mut out = vec![T::zero(); out_ch * hw];
            for (co, chunk) in out.chunks_mut(hw).enumerate() {
                chunk.fill(bias[co]);
            }
            T::gemm(out_ch, in_ch * 9, hw, wts, false, &cols, false, &mut out, true);
            (out, if keep { Cache::Cols(cols) } else { Cache::None })
        }
        Layer::Relu => (x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(), Cache::None),
        Layer::MaxPool2 => {
            let mut out = vec![T::zero(); o.len()];
            let mut arg = vec![0u32; o.len()];
            for c in 0..s.c {
                for oy in 0..o.h {
                    for ox in 0..o.w {
                        let base = c * s.h * s.w + 2 * oy * s.w + 2 * ox;
                        let cand = [base, base + 1, base + s.w, base + s.w + 1];
                        let mut best = cand[0];
                        for &i in &cand[1..] {
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                        let oi = c * o.h * o.w + oy * o.w + ox;
                        out[oi] = x[best];
                        arg[oi] = best as u32;
                    }
                }
            }
            (out, if keep { Cache::Argmax(arg) } else { Cache::None })
        }
        Layer::Dense { inputs, outputs } => {
            let (wts, bias) = p.split_at(outputs * inputs);
            let out = (0..outputs)
                .map(|o| {
                    let row = &wts[o * inputs..(o + 1) * inputs];
                    bias[o] + row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>()
                })
                .collect();
            (out, Cache::None)
        }
    }
}

/// Forward pass without keeping activations.
pub fn forward<T: Real>(arch: &Arch, params: &[T], input: &[T]) -> Vec<T> {
    assert_eq!(input.len(), arch.input_shape().len());
    let mut x = input.to_vec();
    for (i, layer) in arch.layers.iter().enumerate() {
        let p = &params[arch.param_range(i)];
        x = layer_forward(layer, p, &x, arch.shapes[i], arch.shapes[i + 1], false).0;
    }
    x
}

pub fn forward_trace<T: Real>(arch: &Arch, params: &[T], input: &[T]) -> Trace<T> {
    assert_eq!(input.len(), arch.input_shape().len());
    let mut acts = Vec::with_capacity(arch.layers.len() + 1);
    let mut caches = Vec::with_capacity(arch.layers.len());
    acts.push(input.to_vec());
    for (i, layer) in arch.layers.iter().enumerate() {
        let p = &params[arch.param_range(i)];
        let (y, cache) = layer_forward(layer, p, acts.last().unwrap(), arch.shapes[i], arch.shapes[i + 1], true);
        acts.push(y);
        caches.push(cache);
    }
    Trace { acts, caches }
}

/// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
/// Layers before `stop_at` receive no gradient and are not traversed.
pub fn backward<T: Real>(arch: &Arch, params: &[T], trace: &Trace<T>, d_out: &[T], grads: &mut [T], stop_at: usize) {
    let mut dy = d_out.to_vec();
    for i in (stop_at..arch.layers.len()).rev() {
        let (s, o) = (arch.shapes[i], arch.shapes[i + 1]);
        let x = &trace.acts[i];
        let need_dx = i > stop_at;
        let range = arch.param_range(i);
        let dx = match arch.layers[i] {
            Layer::AvgPool { factor } => {
                if !need_dx {
                    break;
                }
                let mut dx = vec![T::zero(); s.len()];
                let scale = T::lit(1.0 / (factor * factor) as f64);
                for c in 0..s.c {
                    for oy in 0..o.h {
                        for ox in 0..o.w {
                            let g = dy[c * o.h * o.w + oy * o.w + ox] * scale;
                            for ddy in 0..factor {
                                let row = c * s.h * s.w + (oy * factor + ddy) * s.w + ox * factor;
                                for ddx in 0..factor {
                                    dx[row + ddx] += g;
                                }
                            }
                        }
                    }
                }
                dx
            }
            Layer::Conv3x3 { in_ch, out_ch } => {
                let hw = s.h * s.w;
                let cols = match &trace.caches[i] {
                    Cache::Cols(c) => c,
                    _ => unreachable!("conv trace without columns"),
                };
                let g = &mut grads[range.clone()];
                let (gw, gb) = g.split_at_mut(out_ch * in_ch * 9);
                T::gemm(out_ch, hw, in_ch * 9, &dy, false, cols, true, gw, true);
                for (co, chunk) in dy.chunks(hw).enumerate() {
                    gb[co] += chunk.iter().copied().sum::<T>();
                }
                if !need_dx {
                    break;
                }
                let wts = &params[range.start..range.start + out_ch * in_ch * 9];
                let mut dcols = vec![T::zero(); in_ch * 9 * hw];
                T::gemm(in_ch * 9, out_ch, hw, wts, true, &dy, false, &mut dcols, false);
                let mut dx = vec![T::zero(); s.len()];
                col2im(&dcols, s, &mut dx);
                dx
            }
            Layer::Relu => {
                if !need_dx {
                    break;
                }
                x.iter()
                    .zip(&dy)
                    .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
                    .collect()
            }
            Layer::MaxPool2 => {
                if !need_dx {
                    break;
                }
                let arg = match &trace.caches[i] {
                    Cache::Argmax(a) => a,
                    _ => unreachable!("maxpool trace without argmax"),
                };
                let mut dx = vec![T::zero(); s.len()];
                for (g, &a) in dy.iter().zip(arg) {
                    dx[a as usize] += *g;
                }
                dx
            }
            Layer::Dense { inputs, outputs } => {
                let g = &mut grads[range.clone()];
                let (gw, gb) = g.split_at_mut(outputs * inputs);
                for o in 0..outputs {
                    let d = dy[o];
                    gb[o] += d;
                    if d != T::zero() {
                        for (gwv, &xv) in gw[o * inputs..(o + 1) * inputs].iter_mut().zip(x) {
                            *gwv += d * xv;
                        }
                    }
                }
                if !need_dx {
                    break;
                }
                let wts = &params[range.start..range.start + outputs * inputs];
                let mut dx = vec![T::zero(); inputs];
                for o in 0..outputs {
                    let d = dy[o];
                    if d != T::zero() {
                        for (dxv, &wv) in dx.iter_mut().zip(&wts[o * inputs..(o + 1) * inputs]) {
                            *dxv += d * wv;
                        }
                    }
                }
                dx
            }
        };
        dy = dx;
    }
}
