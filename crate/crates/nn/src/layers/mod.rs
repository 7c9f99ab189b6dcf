mod activation;
mod conv;
mod linear;
mod norm;

pub use activation::{Dropout, LeakyRelu, MaxPool2, PoolCache};
pub use conv::{Conv2d, ConvCache, ConvTranspose2x2};
pub use linear::{Linear, LinearCache};
pub use norm::{BatchNorm2d, BnCache};

use rand::Rng;

/// He-uniform initialisation for a layer with the given fan-in.
pub(crate) fn he_uniform<R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<f32> {
    let bound = (6.0 / fan_in as f32).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}
