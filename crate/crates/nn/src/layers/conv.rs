use rand::Rng;

use super::he_uniform;
use crate::gemm::{sgemm, View};
use crate::param::join;
use crate::{Module, Param, Tensor};

/// 2-D convolution with square kernels, computed as im2col followed by a GEMM.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

pub struct ConvCache {
    input: Tensor,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        assert!(k >= 1 && stride >= 1, "invalid convolution geometry");
        let fan_in = in_c * k * k;
        Self {
            weight: Param::trainable(&[out_c, in_c, k, k], he_uniform(out_c * fan_in, fan_in, rng)),
            bias: Param::trainable(&[out_c], vec![0.0; out_c]),
            in_c,
            out_c,
            k,
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_c
    }

    pub fn out_channels(&self) -> usize {
        self.out_c
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        assert!(h + 2 * self.pad >= self.k && w + 2 * self.pad >= self.k, "input smaller than kernel");
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ConvCache) {
        let y = self.infer(x);
        (y, ConvCache { input: x.clone() })
    }

    /// Forward pass without keeping anything for backpropagation.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c(), self.in_c, "conv input channels");
        let (ho, wo) = self.out_dims(x.h(), x.w());
        let ckk = self.in_c * self.k * self.k;
        let hw = ho * wo;
        let mut y = Tensor::zeros([x.n(), self.out_c, ho, wo]);
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![0.0; ckk * hw] };
        for i in 0..x.n() {
            let ys = y.sample_mut(i);
            for (o, b) in self.bias.value.iter().enumerate() {
                ys[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *b);
            }
            let b = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), x.h(), x.w(), ho, wo, &mut cols);
                &cols
            };
            sgemm(self.out_c, ckk, hw, 1.0, View::rm(&self.weight.value, ckk), View::rm(b, hw), 1.0, ys);
        }
        y
    }

    pub fn backward(&mut self, cache: ConvCache, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let x = cache.input;
        let (ho, wo) = self.out_dims(x.h(), x.w());
        assert_eq!(dy.shape(), [x.n(), self.out_c, ho, wo], "conv grad shape");
        let ckk = self.in_c * self.k * self.k;
        let hw = ho * wo;
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![0.0; ckk * hw] };
        let mut dcols = vec![0.0; ckk * hw];
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        for i in 0..x.n() {
            let dys = dy.sample(i);
            for o in 0..self.out_c {
                self.bias.grad[o] += dys[o * hw..(o + 1) * hw].iter().sum::<f32>();
            }
            let b = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), x.h(), x.w(), ho, wo, &mut cols);
                &cols
            };
            sgemm(self.out_c, hw, ckk, 1.0, View::rm(dys, hw), View::tr(b, hw), 1.0, &mut self.weight.grad);
            if let Some(dx) = dx.as_mut() {
                let wt = View::tr(&self.weight.value, ckk);
                if self.is_pointwise() {
                    sgemm(ckk, self.out_c, hw, 1.0, wt, View::rm(dys, hw), 0.0, dx.sample_mut(i));
                } else {
                    sgemm(ckk, self.out_c, hw, 1.0, wt, View::rm(dys, hw), 0.0, &mut dcols);
                    self.col2im(&dcols, x.h(), x.w(), ho, wo, dx.sample_mut(i));
                }
            }
        }
        dx
    }

    /// Input gradient only; parameters and their gradients are left untouched.
    pub fn input_grad(&self, cache: ConvCache, dy: &Tensor) -> Tensor {
        let shape = cache.input.shape();
        let (ho, wo) = self.out_dims(shape[2], shape[3]);
        assert_eq!(dy.shape(), [shape[0], self.out_c, ho, wo], "conv grad shape");
        let ckk = self.in_c * self.k * self.k;
        let hw = ho * wo;
        let mut dcols = vec![0.0; ckk * hw];
        let mut dx = Tensor::zeros(shape);
        let wt = View::tr(&self.weight.value, ckk);
        for i in 0..shape[0] {
            let dys = dy.sample(i);
            if self.is_pointwise() {
                sgemm(ckk, self.out_c, hw, 1.0, wt, View::rm(dys, hw), 0.0, dx.sample_mut(i));
            } else {
                sgemm(ckk, self.out_c, hw, 1.0, wt, View::rm(dys, hw), 0.0, &mut dcols);
                self.col2im(&dcols, shape[2], shape[3], ho, wo, dx.sample_mut(i));
            }
        }
        dx
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [f32]) {
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        for c in 0..self.in_c {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { 0.0 };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f32]) {
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        for c in 0..self.in_c {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed convolution with a 2x2 kernel and stride 2 (exact 2x upsampling).
#[derive(Clone, Debug)]
pub struct ConvTranspose2x2 {
    /// Shape `[in, out, 2, 2]`.
    pub weight: Param,
    pub bias: Param,
    in_c: usize,
    out_c: usize,
}

impl ConvTranspose2x2 {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::trainable(&[in_c, out_c, 2, 2], he_uniform(in_c * out_c * 4, in_c, rng)),
            bias: Param::trainable(&[out_c], vec![0.0; out_c]),
            in_c,
            out_c,
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ConvCache) {
        (self.infer(x), ConvCache { input: x.clone() })
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c(), self.in_c, "transposed conv input channels");
        let (h, w) = (x.h(), x.w());
        let hw = h * w;
        let o4 = self.out_c * 4;
        let mut t = vec![0.0; o4 * hw];
        let mut y = Tensor::zeros([x.n(), self.out_c, 2 * h, 2 * w]);
        for i in 0..x.n() {
            sgemm(o4, self.in_c, hw, 1.0, View::tr(&self.weight.value, o4), View::rm(x.sample(i), hw), 0.0, &mut t);
            let ys = y.sample_mut(i);
            for o in 0..self.out_c {
                let b = self.bias.value[o];
                for a in 0..2 {
                    for bb in 0..2 {
                        let row = &t[(o * 4 + a * 2 + bb) * hw..(o * 4 + a * 2 + bb + 1) * hw];
                        for iy in 0..h {
                            let out_row = &mut ys[(o * 2 * h + 2 * iy + a) * 2 * w..(o * 2 * h + 2 * iy + a + 1) * 2 * w];
                            for ix in 0..w {
                                out_row[2 * ix + bb] = row[iy * w + ix] + b;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: ConvCache, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let x = cache.input;
        let (h, w) = (x.h(), x.w());
        assert_eq!(dy.shape(), [x.n(), self.out_c, 2 * h, 2 * w], "transposed conv grad shape");
        let hw = h * w;
        let o4 = self.out_c * 4;
        let mut dt = vec![0.0; o4 * hw];
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        for i in 0..x.n() {
            let dys = dy.sample(i);
            for o in 0..self.out_c {
                for a in 0..2 {
                    for bb in 0..2 {
                        let row = &mut dt[(o * 4 + a * 2 + bb) * hw..(o * 4 + a * 2 + bb + 1) * hw];
                        for iy in 0..h {
                            let in_row = &dys[(o * 2 * h + 2 * iy + a) * 2 * w..(o * 2 * h + 2 * iy + a + 1) * 2 * w];
                            for ix in 0..w {
                                row[iy * w + ix] = in_row[2 * ix + bb];
                            }
                        }
                    }
                }
                self.bias.grad[o] += dys[o * 4 * hw..(o + 1) * 4 * hw].iter().sum::<f32>();
            }
            sgemm(self.in_c, hw, o4, 1.0, View::rm(x.sample(i), hw), View::tr(&dt, hw), 1.0, &mut self.weight.grad);
            if let Some(dx) = dx.as_mut() {
                sgemm(self.in_c, o4, hw, 1.0, View::rm(&self.weight.value, o4), View::rm(&dt, hw), 0.0, dx.sample_mut(i));
            }
        }
        dx
    }
}

impl Module for ConvTranspose2x2 {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
