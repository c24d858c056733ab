//! Minimal dense-array neural net ops in f64 with hand-written backward
//! passes. Feature maps are (H, W, C); conv weights are (kh, kw, cin, cout)
//! so the innermost loop runs over output channels contiguously.

pub mod adam;

use ndarray::{Array1, Array2, Array3, Array4, ArrayViewMutD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Visitor access to one named parameter and its gradient accumulator.
pub struct ParamVisit<'a> {
    pub name: String,
    pub value: ArrayViewMutD<'a, f64>,
    pub grad: ArrayViewMutD<'a, f64>,
}

/// Anything holding trainable parameters.
pub trait Params {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>));

    fn zero_grads(&mut self) {
        self.visit("", &mut |mut p| p.grad.fill(0.0));
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |p| n += p.value.len());
        n
    }
}

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// 2-D convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// (kh, kw, cin, cout)
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array4<f64>,
    pub grad_bias: Array1<f64>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (kernel * kernel * cin) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weight = Array4::from_shape_fn((kernel, kernel, cin, cout), |_| {
            normal_sample(rng) * std
        });
        Self {
            grad_weight: Array4::zeros(weight.raw_dim()),
            weight,
            bias: Array1::zeros(cout),
            grad_bias: Array1::zeros(cout),
            stride,
            pad,
        }
    }

    pub fn cin(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn cout(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw) = (self.weight.shape()[0], self.weight.shape()[1]);
        let cout = self.cout();
        assert_eq!(cin, self.cin(), "conv input channels");
        let ho = conv_output_size(h, kh, self.stride, self.pad);
        let wo = conv_output_size(w, kw, self.stride, self.pad);
        let mut out = Array3::zeros((ho, wo, cout));
        let xs = x.as_slice().unwrap();
        let ws = self.weight.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        let bs = self.bias.as_slice().unwrap();
        for oy in 0..ho {
            for ox in 0..wo {
                let obase = (oy * wo + ox) * cout;
                os[obase..obase + cout].copy_from_slice(bs);
                for ky in 0..kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let ibase = (iy as usize * w + ix as usize) * cin;
                        let wbase = (ky * kw + kx) * cin * cout;
                        for ic in 0..cin {
                            let xv = xs[ibase + ic];
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = wbase + ic * cout;
                            for oc in 0..cout {
                                os[obase + oc] += ws[wrow + oc] * xv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias grads and returns the input gradient.
    pub fn backward(&mut self, x: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
        let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw) = (self.weight.shape()[0], self.weight.shape()[1]);
        let cout = self.cout();
        let (ho, wo) = (grad_out.shape()[0], grad_out.shape()[1]);
        let mut grad_x = Array3::zeros((h, w, cin));
        let xs = x.as_slice().unwrap();
        let ws = self.weight.as_slice().unwrap();
        let gos = grad_out.as_slice().unwrap();
        let gxs = grad_x.as_slice_mut().unwrap();
        let gws = self.grad_weight.as_slice_mut().unwrap();
        let gbs = self.grad_bias.as_slice_mut().unwrap();
        for oy in 0..ho {
            for ox in 0..wo {
                let obase = (oy * wo + ox) * cout;
                for oc in 0..cout {
                    gbs[oc] += gos[obase + oc];
                }
                for ky in 0..kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let ibase = (iy as usize * w + ix as usize) * cin;
                        let wbase = (ky * kw + kx) * cin * cout;
                        for ic in 0..cin {
                            let xv = xs[ibase + ic];
                            let wrow = wbase + ic * cout;
                            let mut gx = 0.0;
                            for oc in 0..cout {
                                let go = gos[obase + oc];
                                gws[wrow + oc] += xv * go;
                                gx += ws[wrow + oc] * go;
                            }
                            gxs[ibase + ic] += gx;
                        }
                    }
                }
            }
        }
        grad_x
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        f(ParamVisit {
            name: format!("{prefix}.weight"),
            value: self.weight.view_mut().into_dyn(),
            grad: self.grad_weight.view_mut().into_dyn(),
        });
        f(ParamVisit {
            name: format!("{prefix}.bias"),
            value: self.bias.view_mut().into_dyn(),
            grad: self.grad_bias.view_mut().into_dyn(),
        });
    }
}

/// Fully-connected layer.
#[derive(Debug, Clone)]
pub struct Linear {
    /// (out, in)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
}

impl Linear {
    pub fn new(dim_in: usize, dim_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (dim_in + dim_out) as f64).sqrt();
        let weight = Array2::from_shape_fn((dim_out, dim_in), |_| normal_sample(rng) * std);
        Self {
            grad_weight: Array2::zeros(weight.raw_dim()),
            weight,
            bias: Array1::zeros(dim_out),
            grad_bias: Array1::zeros(dim_out),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }

    pub fn backward(&mut self, x: &Array1<f64>, grad_out: &Array1<f64>) -> Array1<f64> {
        for (i, &go) in grad_out.iter().enumerate() {
            self.grad_bias[i] += go;
            for (j, &xv) in x.iter().enumerate() {
                self.grad_weight[[i, j]] += go * xv;
            }
        }
        self.weight.t().dot(grad_out)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        f(ParamVisit {
            name: format!("{prefix}.weight"),
            value: self.weight.view_mut().into_dyn(),
            grad: self.grad_weight.view_mut().into_dyn(),
        });
        f(ParamVisit {
            name: format!("{prefix}.bias"),
            value: self.bias.view_mut().into_dyn(),
            grad: self.grad_bias.view_mut().into_dyn(),
        });
    }
}

/// Box-Muller standard normal.
pub fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn relu3(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu3_backward(x: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

pub fn relu1(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu1_backward(x: &Array1<f64>, grad_out: &Array1<f64>) -> Array1<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Softmax over all spatial positions of a map.
pub fn spatial_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|v| v / sum);
    out
}

/// d(loss)/d(logits) given the softmax output and d(loss)/d(softmax).
pub fn spatial_softmax_backward(softmax: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let dot: f64 = softmax.iter().zip(grad_out.iter()).map(|(&s, &g)| s * g).sum();
    let mut grad = softmax.clone();
    grad.zip_mut_with(grad_out, |sv, &gv| *sv *= gv - dot);
    grad
}

/// z = sum_{h,w} weights[h,w] * x[h,w,:]
pub fn attention_pool(weights: &Array2<f64>, x: &Array3<f64>) -> Array1<f64> {
    let c = x.shape()[2];
    let mut out = Array1::zeros(c);
    for h in 0..x.shape()[0] {
        for w in 0..x.shape()[1] {
            let g = weights[[h, w]];
            if g == 0.0 {
                continue;
            }
            for ch in 0..c {
                out[ch] += g * x[[h, w, ch]];
            }
        }
    }
    out
}

/// Returns (grad_weights, grad_x_to_accumulate). `grad_x` is accumulated in
/// place so multiple pooling paths can share one buffer.
pub fn attention_pool_backward(
    weights: &Array2<f64>,
    x: &Array3<f64>,
    grad_z: &Array1<f64>,
    grad_weights: &mut Array2<f64>,
    grad_x: &mut Array3<f64>,
) {
    let c = x.shape()[2];
    for h in 0..x.shape()[0] {
        for w in 0..x.shape()[1] {
            let mut gw = 0.0;
            let g = weights[[h, w]];
            for ch in 0..c {
                gw += x[[h, w, ch]] * grad_z[ch];
                grad_x[[h, w, ch]] += g * grad_z[ch];
            }
            grad_weights[[h, w]] += gw;
        }
    }
}

pub fn mean_pool(x: &Array3<f64>) -> Array1<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Array1::zeros(c);
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                out[ch] += x[[y, xx, ch]];
            }
        }
    }
    out / (h * w) as f64
}

pub fn mean_pool_backward(shape: (usize, usize, usize), grad_out: &Array1<f64>) -> Array3<f64> {
    let (h, w, c) = shape;
    let scale = 1.0 / (h * w) as f64;
    Array3::from_shape_fn((h, w, c), |(_, _, ch)| grad_out[ch] * scale)
}

/// Bilinear resize of 2-D maps with precomputed taps; the backward pass is
/// the exact transpose of the forward operator.
#[derive(Debug, Clone)]
pub struct BilinearResize {
    pub in_shape: (usize, usize),
    pub out_shape: (usize, usize),
    taps_y: Vec<[(usize, f64); 2]>,
    taps_x: Vec<[(usize, f64); 2]>,
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 2]> {
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5)
                .clamp(0.0, n_in as f64 - 1.0);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            let f = src - i0 as f64;
            [(i0, 1.0 - f), (i1, f)]
        })
        .collect()
}

impl BilinearResize {
    pub fn new(in_shape: (usize, usize), out_shape: (usize, usize)) -> Self {
        Self {
            taps_y: axis_taps(in_shape.0, out_shape.0),
            taps_x: axis_taps(in_shape.1, out_shape.1),
            in_shape,
            out_shape,
        }
    }

    pub fn forward(&self, m: &Array2<f64>) -> Array2<f64> {
        assert_eq!(m.dim(), self.in_shape);
        Array2::from_shape_fn(self.out_shape, |(oy, ox)| {
            let mut v = 0.0;
            for (iy, wy) in self.taps_y[oy] {
                for (ix, wx) in self.taps_x[ox] {
                    v += wy * wx * m[[iy, ix]];
                }
            }
            v
        })
    }

    pub fn backward(&self, grad_out: &Array2<f64>) -> Array2<f64> {
        let mut grad = Array2::zeros(self.in_shape);
        for oy in 0..self.out_shape.0 {
            for ox in 0..self.out_shape.1 {
                let g = grad_out[[oy, ox]];
                if g == 0.0 {
                    continue;
                }
                for (iy, wy) in self.taps_y[oy] {
                    for (ix, wx) in self.taps_x[ox] {
                        grad[[iy, ix]] += wy * wx * g;
                    }
                }
            }
        }
        grad
    }
}
