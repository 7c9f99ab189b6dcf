use rand::Rng;

use super::he_uniform;
use crate::gemm::{sgemm, View};
use crate::param::join;
use crate::{Module, Param, Tensor};

/// Fully connected layer on `[n, in, 1, 1]` activations.
#[derive(Clone, Debug)]
pub struct Linear {
    /// Shape `[out, in]`.
    pub weight: Param,
    pub bias: Param,
    in_f: usize,
    out_f: usize,
}

pub struct LinearCache {
    input: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_f: usize, out_f: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::trainable(&[out_f, in_f], he_uniform(in_f * out_f, in_f, rng)),
            bias: Param::trainable(&[out_f], vec![0.0; out_f]),
            in_f,
            out_f,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_f
    }

    pub fn out_features(&self) -> usize {
        self.out_f
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, LinearCache) {
        (self.infer(x), LinearCache { input: x.clone() })
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.sample_len(), self.in_f, "linear input features");
        let n = x.n();
        let mut y = Tensor::zeros([n, self.out_f, 1, 1]);
        for row in y.data_mut().chunks_mut(self.out_f) {
            row.copy_from_slice(&self.bias.value);
        }
        sgemm(n, self.in_f, self.out_f, 1.0, View::rm(x.data(), self.in_f), View::tr(&self.weight.value, self.in_f), 1.0, y.data_mut());
        y
    }

    pub fn backward(&mut self, cache: LinearCache, dy: &Tensor) -> Tensor {
        let x = cache.input;
        let n = x.n();
        for row in dy.data().chunks(self.out_f) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        sgemm(self.out_f, n, self.in_f, 1.0, View::tr(dy.data(), self.out_f), View::rm(x.data(), self.in_f), 1.0, &mut self.weight.grad);
        let mut dx = Tensor::zeros(x.shape());
        sgemm(n, self.out_f, self.in_f, 1.0, View::rm(dy.data(), self.out_f), View::rm(&self.weight.value, self.in_f), 0.0, dx.data_mut());
        dx
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
