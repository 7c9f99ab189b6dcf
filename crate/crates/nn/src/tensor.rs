use serde::{Deserialize, Serialize};

/// Dense `f32` tensor in NCHW layout.
///
/// Fully connected activations use `[n, features, 1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Self { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data does not match shape {shape:?}");
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of elements in one sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Channel `ch` of sample `i` as an `h * w` slice.
    pub fn plane(&self, i: usize, ch: usize) -> &[f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (i * self.shape[1] + ch) * hw;
        &self.data[start..start + hw]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Stacks tensors along the batch axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Tensor {
        let first = parts.first().expect("concat_batch needs at least one tensor");
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.numel()).sum());
        for t in parts {
            assert_eq!([t.c(), t.h(), t.w()], [c, h, w], "concat_batch shape mismatch");
            n += t.n();
            data.extend_from_slice(&t.data);
        }
        Tensor { shape: [n, c, h, w], data }
    }

    /// Samples `start..start + len` as a new tensor.
    pub fn slice_batch(&self, start: usize, len: usize) -> Tensor {
        assert!(start + len <= self.n(), "slice_batch out of range");
        let s = self.sample_len();
        Tensor {
            shape: [len, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[start * s..(start + len) * s].to_vec(),
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!([a.n(), a.h(), a.w()], [b.n(), b.h(), b.w()], "concat_channels shape mismatch");
        let (sa, sb) = (a.sample_len(), b.sample_len());
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for i in 0..a.n() {
            data.extend_from_slice(&a.data[i * sa..(i + 1) * sa]);
            data.extend_from_slice(&b.data[i * sb..(i + 1) * sb]);
        }
        Tensor { shape: [a.n(), a.c() + b.c(), a.h(), a.w()], data }
    }

    /// Inverse of [`Tensor::concat_channels`]: first `ca` channels, remainder.
    pub fn split_channels(&self, ca: usize) -> (Tensor, Tensor) {
        let [n, c, h, w] = self.shape;
        assert!(ca <= c, "split_channels out of range");
        let hw = h * w;
        let mut a = Vec::with_capacity(n * ca * hw);
        let mut b = Vec::with_capacity(n * (c - ca) * hw);
        for i in 0..n {
            let s = &self.data[i * c * hw..(i + 1) * c * hw];
            a.extend_from_slice(&s[..ca * hw]);
            b.extend_from_slice(&s[ca * hw..]);
        }
        (Tensor { shape: [n, ca, h, w], data: a }, Tensor { shape: [n, c - ca, h, w], data: b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn channel_split_inverts_concat(n in 1usize..3, ca in 1usize..4, cb in 1usize..4, hw in 1usize..4) {
            let a = Tensor::from_vec([n, ca, hw, hw], (0..n * ca * hw * hw).map(|v| v as f32).collect());
            let b = Tensor::from_vec([n, cb, hw, hw], (0..n * cb * hw * hw).map(|v| -(v as f32)).collect());
            let (a2, b2) = Tensor::concat_channels(&a, &b).split_channels(ca);
            prop_assert_eq!(a2, a);
            prop_assert_eq!(b2, b);
        }
    }

    #[test]
    fn batch_slices_recover_parts() {
        let a = Tensor::full([2, 1, 2, 2], 1.0);
        let b = Tensor::full([3, 1, 2, 2], 2.0);
        let cat = Tensor::concat_batch(&[&a, &b]);
        assert_eq!(cat.n(), 5);
        assert_eq!(cat.slice_batch(0, 2), a);
        assert_eq!(cat.slice_batch(2, 3), b);
    }
}
