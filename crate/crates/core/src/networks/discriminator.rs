use rand::RngCore;
use vessel_nn::{join, sigmoid, BatchNorm2d, BnCache, Conv2d, ConvCache, LeakyRelu, Module, Param, Tensor};

use super::DiscriminatorSpec;
use crate::error::{Error, Result};

const LAYERS: usize = 3;

/// Patch discriminator: three stride-2 convolutions with batch norm and
/// leaky ReLU, then a 1x1 convolution and a sigmoid, giving one probability
/// per 8x8 input cell.
#[derive(Clone, Debug)]
pub struct Discriminator {
    convs: Vec<Conv2d>,
    norms: Vec<BatchNorm2d>,
    head: Conv2d,
    slope: f32,
}

pub struct DiscCache {
    layers: Vec<(ConvCache, BnCache, Tensor)>,
    head: ConvCache,
    probs: Tensor,
}

impl Discriminator {
    pub fn new(in_channels: usize, spec: &DiscriminatorSpec, rng: &mut dyn RngCore) -> Self {
        let mut convs = Vec::with_capacity(LAYERS);
        let mut norms = Vec::with_capacity(LAYERS);
        let mut c = in_channels;
        for l in 0..LAYERS {
            let out = spec.base_filters << l;
            convs.push(Conv2d::new(c, out, 4, 2, 1, rng));
            norms.push(BatchNorm2d::new(out));
            c = out;
        }
        Self { convs, norms, head: Conv2d::new(c, 1, 1, 1, 0, rng), slope: spec.slope }
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels()
    }

    /// Probability map of shape `[n, 1, h / 8, w / 8]` (rounded down).
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, DiscCache)> {
        let f = 1 << LAYERS;
        if x.c() != self.in_channels() {
            return Err(Error::shape("discriminator input channels", self.in_channels(), x.c()));
        }
        if x.h() < f || x.w() < f {
            return Err(Error::BadInputDims(format!("discriminator needs sides of at least {f}, got {}x{}", x.h(), x.w())));
        }
        let act = LeakyRelu::new(self.slope);
        let mut h = x.clone();
        let mut layers = Vec::with_capacity(LAYERS);
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            let (y, cc) = conv.forward(&h);
            let (y, bc) = bn.forward(&y, train);
            h = act.forward(&y);
            layers.push((cc, bc, h.clone()));
        }
        let (logits, head) = self.head.forward(&h);
        let probs = logits.map(sigmoid);
        Ok((probs.clone(), DiscCache { layers, head, probs }))
    }

    fn dlogits(cache: &DiscCache, dprobs: &Tensor) -> Tensor {
        let mut d = dprobs.clone();
        for (g, &p) in d.data_mut().iter_mut().zip(cache.probs.data()) {
            *g *= p * (1.0 - p);
        }
        d
    }

    /// Accumulates parameter gradients; the input gradient is not needed
    /// when training the discriminator on detached features.
    pub fn backward(&mut self, cache: DiscCache, dprobs: &Tensor) {
        let act = LeakyRelu::new(self.slope);
        let dl = Self::dlogits(&cache, dprobs);
        let mut d = self.head.backward(cache.head, &dl, true).expect("requested");
        for (l, (cc, bc, out)) in cache.layers.into_iter().enumerate().rev() {
            let dy = act.backward(&out, &d);
            let dy = self.norms[l].backward(bc, &dy);
            match self.convs[l].backward(cc, &dy, l > 0) {
                Some(next) => d = next,
                None => break,
            }
        }
    }

    /// Gradient with respect to the input, leaving parameters, gradients and
    /// running statistics untouched.
    pub fn input_grad(&self, cache: DiscCache, dprobs: &Tensor) -> Tensor {
        let act = LeakyRelu::new(self.slope);
        let dl = Self::dlogits(&cache, dprobs);
        let mut d = self.head.input_grad(cache.head, &dl);
        for (l, (cc, bc, out)) in cache.layers.into_iter().enumerate().rev() {
            let dy = act.backward(&out, &d);
            let dy = self.norms[l].input_grad(bc, &dy);
            d = self.convs[l].input_grad(cc, &dy);
        }
        d
    }
}

impl Module for Discriminator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (l, (c, b)) in self.convs.iter().zip(&self.norms).enumerate() {
            c.visit(&join(prefix, &format!("conv{l}")), f);
            b.visit(&join(prefix, &format!("bn{l}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (l, (c, b)) in self.convs.iter_mut().zip(self.norms.iter_mut()).enumerate() {
            c.visit_mut(&join(prefix, &format!("conv{l}")), f);
            b.visit_mut(&join(prefix, &format!("bn{l}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
