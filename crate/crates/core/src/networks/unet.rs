use rand::{Rng, RngCore};
use vessel_nn::{
    join, sigmoid, BatchNorm2d, BnCache, Conv2d, ConvCache, ConvTranspose2x2, Dropout, LeakyRelu, MaxPool2, Module,
    Param, PoolCache, Tensor,
};

use super::{DropoutPlacement, UNetSpec};

const SLOPE: f32 = 0.01;

/// Two 3x3 convolutions, each followed by batch norm and a leaky ReLU.
#[derive(Clone, Debug)]
pub(crate) struct ConvBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

pub(crate) struct BlockCache {
    c1: ConvCache,
    n1: BnCache,
    a1: Tensor,
    mid: Option<Vec<f32>>,
    c2: ConvCache,
    n2: BnCache,
    a2: Tensor,
}

impl ConvBlock {
    pub(crate) fn new(in_c: usize, out_c: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            conv1: Conv2d::new(in_c, out_c, 3, 1, 1, rng),
            bn1: BatchNorm2d::new(out_c),
            conv2: Conv2d::new(out_c, out_c, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(out_c),
        }
    }

    /// `mid` is an optional dropout mask applied after the first activation.
    pub(crate) fn forward(&self, x: &Tensor, train: bool, mid: Option<Vec<f32>>) -> (Tensor, BlockCache) {
        let act = LeakyRelu::new(SLOPE);
        let (h, c1) = self.conv1.forward(x);
        let (h, n1) = self.bn1.forward(&h, train);
        let a1 = act.forward(&h);
        let h = match &mid {
            Some(m) => Dropout::apply(&a1, m),
            None => a1.clone(),
        };
        let (h, c2) = self.conv2.forward(&h);
        let (h, n2) = self.bn2.forward(&h, train);
        let a2 = act.forward(&h);
        (a2.clone(), BlockCache { c1, n1, a1, mid, c2, n2, a2 })
    }

    pub(crate) fn backward(&mut self, cache: BlockCache, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let act = LeakyRelu::new(SLOPE);
        let d = act.backward(&cache.a2, dy);
        let d = self.bn2.backward(cache.n2, &d);
        let mut d = self.conv2.backward(cache.c2, &d, true).expect("requested");
        if let Some(m) = &cache.mid {
            d = Dropout::apply(&d, m);
        }
        let d = act.backward(&cache.a1, &d);
        let d = self.bn1.backward(cache.n1, &d);
        self.conv1.backward(cache.c1, &d, need_dx)
    }
}

impl Module for ConvBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
    }
}

/// Contracting path: `depth` pooled stages followed by the bottleneck block.
#[derive(Clone, Debug)]
pub struct Encoder {
    blocks: Vec<ConvBlock>,
}

pub struct EncoderCache {
    blocks: Vec<BlockCache>,
    pools: Vec<PoolCache>,
}

impl Encoder {
    pub fn new(spec: &UNetSpec, rng: &mut dyn RngCore) -> Self {
        let mut blocks = Vec::with_capacity(spec.depth + 1);
        let mut in_c = spec.in_channels;
        for level in 0..=spec.depth {
            let out_c = spec.channels(level);
            blocks.push(ConvBlock::new(in_c, out_c, rng));
            in_c = out_c;
        }
        Self { blocks }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len() - 1
    }

    /// Returns the bottleneck features and the skip tensors (finest first).
    pub fn forward(&self, x: &Tensor, train: bool) -> (Tensor, Vec<Tensor>, EncoderCache) {
        let depth = self.depth();
        let mut skips = Vec::with_capacity(depth);
        let mut caches = Vec::with_capacity(depth + 1);
        let mut pools = Vec::with_capacity(depth);
        let mut h = x.clone();
        for (level, block) in self.blocks.iter().enumerate() {
            let (out, cache) = block.forward(&h, train, None);
            caches.push(cache);
            if level < depth {
                let (pooled, pc) = MaxPool2.forward(&out);
                pools.push(pc);
                skips.push(out);
                h = pooled;
            } else {
                h = out;
            }
        }
        (h, skips, EncoderCache { blocks: caches, pools })
    }

    /// Backpropagates gradients arriving at the bottleneck and at each skip.
    pub fn backward(&mut self, cache: EncoderCache, dz: &Tensor, mut dskips: Vec<Tensor>) {
        let depth = self.depth();
        let mut blocks = cache.blocks;
        let mut pools = cache.pools;
        let mut d = self.blocks[depth].backward(blocks.pop().expect("bottleneck cache"), dz, true).expect("requested");
        for level in (0..depth).rev() {
            let mut up = MaxPool2.backward(pools.pop().expect("pool cache"), &d);
            up.add_assign(&dskips.pop().expect("skip gradient"));
            let need_dx = level > 0;
            match self.blocks[level].backward(blocks.pop().expect("block cache"), &up, need_dx) {
                Some(next) => d = next,
                None => break,
            }
        }
    }
}

impl Module for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}

/// Where Monte Carlo dropout masks are drawn during a stochastic pass.
pub struct McDropout<'a> {
    pub rate: f32,
    pub placement: DropoutPlacement,
    pub rng: &'a mut dyn RngCore,
}

impl McDropout<'_> {
    fn mask(&mut self, len: usize) -> Vec<f32> {
        Dropout::new(self.rate).sample_mask(len, &mut *self.rng)
    }
}

/// Expanding path with skip connections and a sigmoid head.
#[derive(Clone, Debug)]
pub struct Decoder {
    ups: Vec<ConvTranspose2x2>,
    blocks: Vec<ConvBlock>,
    head: Conv2d,
}

struct StageCache {
    up: ConvCache,
    up_mask: Option<Vec<f32>>,
    skip_mask: Option<Vec<f32>>,
    block: BlockCache,
    out_mask: Option<Vec<f32>>,
    skip_channels: usize,
}

pub struct DecoderCache {
    stages: Vec<StageCache>,
    head: ConvCache,
    probs: Tensor,
}

impl Decoder {
    pub fn new(spec: &UNetSpec, rng: &mut dyn RngCore) -> Self {
        let mut ups = Vec::new();
        let mut blocks = Vec::new();
        for level in (0..spec.depth).rev() {
            let (lower, c) = (spec.channels(level + 1), spec.channels(level));
            ups.push(ConvTranspose2x2::new(lower, c, rng));
            blocks.push(ConvBlock::new(2 * c, c, rng));
        }
        let head = Conv2d::new(spec.channels(0), spec.out_channels, 1, 1, 0, rng);
        Self { ups, blocks, head }
    }

    /// Number of stages, i.e. the encoder depth.
    pub fn stages(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward(&self, z: &Tensor, skips: &[Tensor], train: bool, mut mc: Option<McDropout<'_>>) -> (Tensor, DecoderCache) {
        let n_stages = self.stages();
        assert_eq!(skips.len(), n_stages, "one skip tensor per decoder stage");
        let mut h = z.clone();
        let mut stages = Vec::with_capacity(n_stages);
        for k in 0..n_stages {
            let level = n_stages - 1 - k;
            let last = k + 1 == n_stages;
            let (mut u, up) = self.ups[k].forward(&h);
            let mut skip = skips[level].clone();
            let final_sites = matches!(&mc, Some(m) if m.placement == DropoutPlacement::FinalStage) && last;
            let per_stage = matches!(&mc, Some(m) if m.placement == DropoutPlacement::PerDecoderStage);
            let mut take = |len: usize, on: bool| -> Option<Vec<f32>> {
                if on {
                    mc.as_mut().map(|m| m.mask(len))
                } else {
                    None
                }
            };
            let up_mask = take(u.numel(), final_sites);
            let skip_mask = take(skip.numel(), final_sites);
            if let Some(m) = &up_mask {
                u = Dropout::apply(&u, m);
            }
            if let Some(m) = &skip_mask {
                skip = Dropout::apply(&skip, m);
            }
            let skip_channels = skip.c();
            let cat = Tensor::concat_channels(&u, &skip);
            let mid_len = cat.n() * self.blocks[k].bn1.channels() * cat.h() * cat.w();
            let mid = take(mid_len, final_sites);
            let (mut out, block) = self.blocks[k].forward(&cat, train, mid);
            let out_mask = take(out.numel(), final_sites || per_stage);
            if let Some(m) = &out_mask {
                out = Dropout::apply(&out, m);
            }
            stages.push(StageCache { up, up_mask, skip_mask, block, out_mask, skip_channels });
            h = out;
        }
        let (logits, head) = self.head.forward(&h);
        let probs = logits.map(sigmoid);
        (probs.clone(), DecoderCache { stages, head, probs })
    }

    /// Takes the gradient with respect to the output probabilities and
    /// returns gradients for the bottleneck input and every skip (finest first).
    pub fn backward(&mut self, cache: DecoderCache, dprobs: &Tensor) -> (Tensor, Vec<Tensor>) {
        let mut dlogits = dprobs.clone();
        for (g, &p) in dlogits.data_mut().iter_mut().zip(cache.probs.data()) {
            *g *= p * (1.0 - p);
        }
        let mut d = self.head.backward(cache.head, &dlogits, true).expect("requested");
        let n_stages = self.stages();
        let mut dskips = vec![Tensor::zeros([0, 0, 0, 0]); n_stages];
        for (k, st) in cache.stages.into_iter().enumerate().rev() {
            let level = n_stages - 1 - k;
            if let Some(m) = &st.out_mask {
                d = Dropout::apply(&d, m);
            }
            let dcat = self.blocks[k].backward(st.block, &d, true).expect("requested");
            let up_c = dcat.c() - st.skip_channels;
            let (mut du, mut ds) = dcat.split_channels(up_c);
            if let Some(m) = &st.up_mask {
                du = Dropout::apply(&du, m);
            }
            if let Some(m) = &st.skip_mask {
                ds = Dropout::apply(&ds, m);
            }
            dskips[level] = ds;
            d = self.ups[k].backward(st.up, &du, true).expect("requested");
        }
        (d, dskips)
    }
}

impl Module for Decoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (k, (u, b)) in self.ups.iter().zip(&self.blocks).enumerate() {
            u.visit(&join(prefix, &format!("up{k}")), f);
            b.visit(&join(prefix, &format!("block{k}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (k, (u, b)) in self.ups.iter_mut().zip(self.blocks.iter_mut()).enumerate() {
            u.visit_mut(&join(prefix, &format!("up{k}")), f);
            b.visit_mut(&join(prefix, &format!("block{k}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Uniform noise on the open interval `(-sigma, sigma)`.
pub(crate) fn open_uniform(rng: &mut dyn RngCore, sigma: f32) -> f32 {
    let u: f32 = rng.sample(rand::distributions::Open01);
    sigma * (2.0 * u - 1.0)
}
