use crate::param::join;
use crate::{Module, Param, Tensor};

/// Per-channel batch normalisation over the `(n, h, w)` axes.
///
/// In training mode the batch statistics are returned inside the cache and
/// folded into the running statistics when the batch is backpropagated, so
/// `forward` never needs mutable access.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    momentum: f32,
    eps: f32,
}

pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    batch: Option<(Vec<f32>, Vec<f32>, usize)>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::trainable(&[channels], vec![1.0; channels]),
            beta: Param::trainable(&[channels], vec![0.0; channels]),
            running_mean: Param::buffer(&[channels], vec![0.0; channels]),
            running_var: Param::buffer(&[channels], vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> (Tensor, BnCache) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels(), "batch norm channels");
        let hw = h * w;
        let count = n * hw;
        let (mean, var, batch) = if train {
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for i in 0..n {
                for ch in 0..c {
                    mean[ch] += x.plane(i, ch).iter().map(|&v| v as f64).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for i in 0..n {
                for ch in 0..c {
                    let m = mean[ch];
                    var[ch] += x.plane(i, ch).iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            let mean: Vec<f32> = mean.into_iter().map(|v| v as f32).collect();
            let var: Vec<f32> = var.into_iter().map(|v| v as f32).collect();
            (mean.clone(), var.clone(), Some((mean, var, count)))
        } else {
            (self.running_mean.value.clone(), self.running_var.value.clone(), None)
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = Tensor::zeros(x.shape());
        for i in 0..n {
            let xs = xhat.sample_mut(i);
            let ys = y.sample_mut(i);
            for ch in 0..c {
                let (m, s, g, b) = (mean[ch], inv_std[ch], self.gamma.value[ch], self.beta.value[ch]);
                for j in ch * hw..(ch + 1) * hw {
                    let z = (xs[j] - m) * s;
                    xs[j] = z;
                    ys[j] = g * z + b;
                }
            }
        }
        (y, BnCache { xhat, inv_std, batch })
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        self.forward(x, false).0
    }

    pub fn backward(&mut self, cache: BnCache, dy: &Tensor) -> Tensor {
        let (dx, sum_dy, sum_dy_xhat) = self.grads(&cache, dy);
        for ch in 0..self.channels() {
            self.gamma.grad[ch] += sum_dy_xhat[ch] as f32;
            self.beta.grad[ch] += sum_dy[ch] as f32;
        }
        if let Some((mean, var, count)) = &cache.batch {
            let mom = self.momentum;
            for ch in 0..self.channels() {
                let unbiased = if *count > 1 { var[ch] * *count as f32 / (*count - 1) as f32 } else { var[ch] };
                self.running_mean.value[ch] = (1.0 - mom) * self.running_mean.value[ch] + mom * mean[ch];
                self.running_var.value[ch] = (1.0 - mom) * self.running_var.value[ch] + mom * unbiased;
            }
        }
        dx
    }

    /// Input gradient only: no parameter gradients and no running-stat update.
    pub fn input_grad(&self, cache: BnCache, dy: &Tensor) -> Tensor {
        self.grads(&cache, dy).0
    }

    fn grads(&self, cache: &BnCache, dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let [n, c, h, w] = dy.shape();
        let hw = h * w;
        let xhat = &cache.xhat;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for i in 0..n {
            for ch in 0..c {
                let d = dy.plane(i, ch);
                let xh = xhat.plane(i, ch);
                sum_dy[ch] += d.iter().map(|&v| v as f64).sum::<f64>();
                sum_dy_xhat[ch] += d.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>();
            }
        }
        let mut dx = Tensor::zeros(dy.shape());
        match &cache.batch {
            Some((_, _, count)) => {
                let m = *count as f64;
                for i in 0..n {
                    let dxs = dx.sample_mut(i);
                    for ch in 0..c {
                        let g = self.gamma.value[ch] as f64;
                        let s = cache.inv_std[ch] as f64;
                        let d = dy.plane(i, ch);
                        let xh = xhat.plane(i, ch);
                        for j in 0..hw {
                            let dxhat = d[j] as f64 * g;
                            let v = s / m * (m * dxhat - g * sum_dy[ch] - xh[j] as f64 * g * sum_dy_xhat[ch]);
                            dxs[ch * hw + j] = v as f32;
                        }
                    }
                }
            }
            None => {
                for i in 0..n {
                    let dxs = dx.sample_mut(i);
                    for ch in 0..c {
                        let k = self.gamma.value[ch] * cache.inv_std[ch];
                        for (o, &d) in dxs[ch * hw..(ch + 1) * hw].iter_mut().zip(dy.plane(i, ch)) {
                            *o = d * k;
                        }
                    }
                }
            }
        }
        (dx, sum_dy, sum_dy_xhat)
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::*;

    #[test]
    fn train_mode_normalises_each_channel() {
        let x = Tensor::from_vec([2, 2, 2, 2], (0..16).map(|v| v as f32).collect());
        let bn = BatchNorm2d::new(2);
        let (y, _) = bn.forward(&x, true);
        for ch in 0..2 {
            let vals: Vec<f32> = (0..2).flat_map(|i| y.plane(i, ch).to_vec()).collect();
            let mean: f32 = vals.iter().sum::<f32>() / 8.0;
            let var: f32 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 8.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_fold_in_on_backward() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let mut bn = BatchNorm2d::new(1);
        let (y, cache) = bn.forward(&x, true);
        assert_eq!(bn.running_mean.value, vec![0.0]);
        bn.backward(cache, &Tensor::zeros(y.shape()));
        assert!((bn.running_mean.value[0] - 0.25).abs() < 1e-6);
        // unbiased variance of 1..4 is 5/3
        assert!((bn.running_var.value[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let shape = [3, 2, 3, 3];
        let x: Vec<f32> = projection(54, 21).iter().map(|v| v * 4.0).collect();
        let mut bn = BatchNorm2d::new(2);
        bn.gamma.value = vec![1.5, 0.7];
        bn.beta.value = vec![0.1, -0.3];
        let proj = projection(54, 22);
        let (_, cache) = bn.forward(&Tensor::from_vec(shape, x.clone()), true);
        let dx = bn.backward(cache, &Tensor::from_vec(shape, proj.clone()));
        let reference = {
            let mut b = bn.clone();
            b.running_mean.value = vec![0.0; 2];
            b
        };
        let mut xv = x.clone();
        for i in 0..xv.len() {
            let num = central(&mut xv, i, 1e-2, |v| dot(&reference.forward(&Tensor::from_vec(shape, v.to_vec()), true).0, &proj));
            assert_close(dx.data()[i] as f64, num, "bn dx");
        }
        let mut g = bn.gamma.value.clone();
        for i in 0..2 {
            let num = central(&mut g, i, 1e-2, |v| {
                let mut b = reference.clone();
                b.gamma.value = v.to_vec();
                dot(&b.forward(&Tensor::from_vec(shape, x.clone()), true).0, &proj)
            });
            assert_close(bn.gamma.grad[i] as f64, num, "bn dgamma");
        }
    }

    #[test]
    fn input_grad_matches_backward_without_side_effects() {
        let x = Tensor::from_vec([2, 1, 2, 2], projection(8, 5));
        let dy = Tensor::from_vec([2, 1, 2, 2], projection(8, 6));
        let mut bn = BatchNorm2d::new(1);
        let frozen = bn.clone();
        let dx_frozen = frozen.input_grad(frozen.forward(&x, true).1, &dy);
        let dx = bn.backward(bn.forward(&x, true).1, &dy);
        assert_eq!(dx, dx_frozen);
        assert_eq!(frozen.running_mean.value, vec![0.0]);
        assert_eq!(frozen.gamma.grad, vec![0.0]);
    }
}
