use rand::Rng;

use crate::Tensor;

/// Leaky rectifier; the cache is the layer output (its sign equals the input's).
#[derive(Clone, Copy, Debug)]
pub struct LeakyRelu {
    pub slope: f32,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        Self { slope }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let s = self.slope;
        x.map(|v| if v > 0.0 { v } else { v * s })
    }

    pub fn backward(&self, y: &Tensor, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for (d, &o) in dx.data_mut().iter_mut().zip(y.data()) {
            if o <= 0.0 {
                *d *= self.slope;
            }
        }
        dx
    }
}

/// 2x2 max pooling with stride 2.
#[derive(Clone, Copy, Debug, Default)]
pub struct MaxPool2;

pub struct PoolCache {
    argmax: Vec<u32>,
    in_shape: [usize; 4],
}

impl MaxPool2 {
    pub fn forward(&self, x: &Tensor) -> (Tensor, PoolCache) {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Tensor::zeros([n, c, ho, wo]);
        let mut argmax = vec![0u32; n * c * ho * wo];
        let out = y.data_mut();
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (2 * oy) * w + 2 * ox;
                    for idx in [(2 * oy) * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox, (2 * oy + 1) * w + 2 * ox + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = plane * ho * wo + oy * wo + ox;
                    out[o] = src[best];
                    argmax[o] = best as u32;
                }
            }
        }
        (y, PoolCache { argmax, in_shape: x.shape() })
    }

    pub fn backward(&self, cache: PoolCache, dy: &Tensor) -> Tensor {
        let [_, _, h, w] = cache.in_shape;
        let per_plane = dy.h() * dy.w();
        let mut dx = Tensor::zeros(cache.in_shape);
        let dxd = dx.data_mut();
        for (o, (&g, &a)) in dy.data().iter().zip(&cache.argmax).enumerate() {
            let plane = o / per_plane;
            dxd[plane * h * w + a as usize] += g;
        }
        dx
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f32,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self { rate }
    }

    /// Samples a multiplicative mask for `len` activations.
    pub fn sample_mask<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f32> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..len).map(|_| if rng.gen::<f32>() < self.rate { 0.0 } else { keep }).collect()
    }

    pub fn apply(x: &Tensor, mask: &[f32]) -> Tensor {
        assert_eq!(x.numel(), mask.len(), "dropout mask length");
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
        y
    }
}
