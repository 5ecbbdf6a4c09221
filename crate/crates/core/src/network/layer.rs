//! Layers over single-sample `C x H x W` activations stored row-major.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(channels, height, width)`; dense layers use `(n, 1, 1)`.
pub type Shape = (usize, usize, usize);

fn numel(s: Shape) -> usize {
    s.0 * s.1 * s.2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerKind {
    /// Valid (unpadded) convolution.
    Conv { kernel: usize, channels: usize, stride: usize },
    /// Non-overlapping max pooling: stride equals the window.
    MaxPool { window: usize },
    Relu,
    Dense { out_dim: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub trainable: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        Self { kind, trainable: true }
    }
}

/// What the backward pass needs from the forward pass.
#[derive(Clone, Debug)]
pub enum Cache {
    Input(Vec<f64>),
    /// Flat input index of each pooled maximum.
    Argmax(Vec<usize>),
    /// Which inputs were positive.
    Mask(Vec<bool>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub trainable: bool,
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output shape of `kind` applied to `input`, or an error naming `index`.
pub fn output_shape(kind: LayerKind, input: Shape, index: usize) -> Result<Shape> {
    let (c, h, w) = input;
    let fail = |detail: String| Error::Shape {
        layer: format!("layer {index}"),
        detail,
    };
    match kind {
        LayerKind::Conv { kernel, channels, stride } => {
            if kernel == 0 || stride == 0 || channels == 0 {
                return Err(fail("convolution needs positive kernel, stride and channels".into()));
            }
            if h < kernel || w < kernel {
                return Err(fail(format!("{h}x{w} input is smaller than the {kernel}x{kernel} kernel")));
            }
            Ok((channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1))
        }
        LayerKind::MaxPool { window } => {
            if window == 0 || h < window || w < window {
                return Err(fail(format!("{h}x{w} input cannot be pooled by {window}")));
            }
            Ok((c, h / window, w / window))
        }
        LayerKind::Relu => Ok(input),
        LayerKind::Dense { out_dim } => {
            if out_dim == 0 {
                return Err(fail("dense layer needs a positive width".into()));
            }
            Ok((out_dim, 1, 1))
        }
    }
}

impl Layer {
    /// Glorot-uniform weights and zero biases.
    pub fn new(spec: LayerSpec, in_shape: Shape, index: usize, rng: &mut impl Rng) -> Result<Self> {
        let out_shape = output_shape(spec.kind, in_shape, index)?;
        let (fan_in, fan_out, n_weights, n_bias) = match spec.kind {
            LayerKind::Conv { kernel, channels, .. } => {
                let k2 = kernel * kernel;
                (in_shape.0 * k2, channels * k2, channels * in_shape.0 * k2, channels)
            }
            LayerKind::Dense { out_dim } => (numel(in_shape), out_dim, out_dim * numel(in_shape), out_dim),
            _ => (0, 0, 0, 0),
        };
        let weights = if n_weights > 0 {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n_weights).map(|_| rng.gen_range(-limit..limit)).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            kind: spec.kind,
            trainable: spec.trainable,
            in_shape,
            out_shape,
            weights,
            bias: vec![0.0; n_bias],
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            kind: self.kind,
            trainable: self.trainable,
        }
    }

    pub fn has_params(&self) -> bool {
        !self.weights.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        debug_assert_eq!(x.len(), numel(self.in_shape));
        match self.kind {
            LayerKind::Conv { kernel, stride, .. } => (self.conv_forward(x, kernel, stride), Cache::Input(x.to_vec())),
            LayerKind::MaxPool { window } => {
                let (y, arg) = self.pool_forward(x, window);
                (y, Cache::Argmax(arg))
            }
            LayerKind::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), Cache::Mask(x.iter().map(|&v| v > 0.0).collect())),
            LayerKind::Dense { .. } => (self.dense_forward(x), Cache::Input(x.to_vec())),
        }
    }

    /// Returns the input gradient when `need_input_grad` is set, and adds the
    /// parameter gradients into `grads` (weights, bias) when given.
    pub fn backward(&self, cache: &Cache, dy: &[f64], need_input_grad: bool, grads: Option<(&mut [f64], &mut [f64])>) -> Option<Vec<f64>> {
        match (self.kind, cache) {
            (LayerKind::Conv { kernel, stride, .. }, Cache::Input(x)) => self.conv_backward(x, dy, kernel, stride, need_input_grad, grads),
            (LayerKind::Dense { .. }, Cache::Input(x)) => self.dense_backward(x, dy, need_input_grad, grads),
            (LayerKind::MaxPool { .. }, Cache::Argmax(arg)) => need_input_grad.then(|| {
                let mut dx = vec![0.0; numel(self.in_shape)];
                for (&i, &g) in arg.iter().zip(dy) {
                    dx[i] += g;
                }
                dx
            }),
            (LayerKind::Relu, Cache::Mask(mask)) => {
                need_input_grad.then(|| dy.iter().zip(mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect())
            }
            _ => unreachable!("cache does not match layer kind"),
        }
    }

    fn conv_forward(&self, x: &[f64], k: usize, s: usize) -> Vec<f64> {
        let (ci, hi, wi) = self.in_shape;
        let (co, ho, wo) = self.out_shape;
        let mut y = vec![0.0; co * ho * wo];
        for o in 0..co {
            let out = &mut y[o * ho * wo..(o + 1) * ho * wo];
            out.iter_mut().for_each(|v| *v = self.bias[o]);
            for c in 0..ci {
                let plane = &x[c * hi * wi..(c + 1) * hi * wi];
                for ki in 0..k {
                    for kj in 0..k {
                        let wv = self.weights[((o * ci + c) * k + ki) * k + kj];
                        for oy in 0..ho {
                            let row = &plane[(oy * s + ki) * wi + kj..];
                            let dst = &mut out[oy * wo..(oy + 1) * wo];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d += wv * row[ox * s];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn conv_backward(
        &self,
        x: &[f64],
        dy: &[f64],
        k: usize,
        s: usize,
        need_input_grad: bool,
        mut grads: Option<(&mut [f64], &mut [f64])>,
    ) -> Option<Vec<f64>> {
        let (ci, hi, wi) = self.in_shape;
        let (co, ho, wo) = self.out_shape;
        let mut dx = if need_input_grad { vec![0.0; ci * hi * wi] } else { Vec::new() };
        for o in 0..co {
            let g = &dy[o * ho * wo..(o + 1) * ho * wo];
            if let Some((_, db)) = grads.as_mut() {
                db[o] += g.iter().sum::<f64>();
            }
            for c in 0..ci {
                let plane = &x[c * hi * wi..(c + 1) * hi * wi];
                for ki in 0..k {
                    for kj in 0..k {
                        let w_idx = ((o * ci + c) * k + ki) * k + kj;
                        let wv = self.weights[w_idx];
                        let mut acc = 0.0;
                        for oy in 0..ho {
                            let base = (oy * s + ki) * wi + kj;
                            let grow = &g[oy * wo..(oy + 1) * wo];
                            if grads.is_some() {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    acc += gv * plane[base + ox * s];
                                }
                            }
                            if need_input_grad {
                                let dplane = &mut dx[c * hi * wi..(c + 1) * hi * wi];
                                for (ox, &gv) in grow.iter().enumerate() {
                                    dplane[base + ox * s] += wv * gv;
                                }
                            }
                        }
                        if let Some((dw, _)) = grads.as_mut() {
                            dw[w_idx] += acc;
                        }
                    }
                }
            }
        }
        need_input_grad.then_some(dx)
    }

    fn pool_forward(&self, x: &[f64], p: usize) -> (Vec<f64>, Vec<usize>) {
        let (c, hi, wi) = self.in_shape;
        let (_, ho, wo) = self.out_shape;
        let mut y = Vec::with_capacity(c * ho * wo);
        let mut arg = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for dy in 0..p {
                        for dx in 0..p {
                            let i = (ch * hi + oy * p + dy) * wi + ox * p + dx;
                            if x[i] > best {
                                best = x[i];
                                at = i;
                            }
                        }
                    }
                    y.push(best);
                    arg.push(at);
                }
            }
        }
        (y, arg)
    }

    fn dense_forward(&self, x: &[f64]) -> Vec<f64> {
        let n_in = x.len();
        self.weights
            .chunks_exact(n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn dense_backward(&self, x: &[f64], dy: &[f64], need_input_grad: bool, mut grads: Option<(&mut [f64], &mut [f64])>) -> Option<Vec<f64>> {
        let n_in = x.len();
        let mut dx = if need_input_grad { vec![0.0; n_in] } else { Vec::new() };
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            if let Some((dw, db)) = grads.as_mut() {
                db[o] += g;
                for (d, v) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *d += g * v;
                }
            }
            if need_input_grad {
                let wr = &self.weights[o * n_in..(o + 1) * n_in];
                for (d, w) in dx.iter_mut().zip(wr) {
                    *d += g * w;
                }
            }
        }
        need_input_grad.then_some(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(kind: LayerKind, shape: Shape) -> Layer {
        Layer::new(LayerSpec::new(kind), shape, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn shapes() {
        assert_eq!(output_shape(LayerKind::Conv { kernel: 5, channels: 16, stride: 2 }, (3, 64, 64), 0).unwrap(), (16, 30, 30));
        assert_eq!(output_shape(LayerKind::MaxPool { window: 2 }, (16, 30, 30), 1).unwrap(), (16, 15, 15));
        assert_eq!(output_shape(LayerKind::Conv { kernel: 3, channels: 32, stride: 1 }, (16, 15, 15), 2).unwrap(), (32, 13, 13));
        assert!(matches!(
            output_shape(LayerKind::Conv { kernel: 5, channels: 1, stride: 1 }, (1, 4, 4), 7),
            Err(Error::Shape { layer, .. }) if layer == "layer 7"
        ));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let l = layer(LayerKind::Conv { kernel: 3, channels: 2, stride: 2 }, (2, 7, 6));
        let x: Vec<f64> = (0..84).map(|i| ((i * 37) % 11) as f64 / 5.0 - 1.0).collect();
        let (y, _) = l.forward(&x);
        let (co, ho, wo) = l.out_shape;
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = l.bias[o];
                    for c in 0..2 {
                        for a in 0..3 {
                            for b in 0..3 {
                                s += l.weights[((o * 2 + c) * 3 + a) * 3 + b] * x[(c * 7 + oy * 2 + a) * 6 + ox * 2 + b];
                            }
                        }
                    }
                    assert!((y[(o * ho + oy) * wo + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pool_picks_maxima() {
        let l = layer(LayerKind::MaxPool { window: 2 }, (1, 4, 5));
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(l.forward(&x).0, vec![6.0, 8.0, 16.0, 18.0]);
    }
}
