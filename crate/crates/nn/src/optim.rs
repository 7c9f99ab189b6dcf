use serde::{Deserialize, Serialize};

use crate::{Module, ParamKind};

/// Adam with bias correction, updating every trainable parameter of a module.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    state: AdamState,
}

/// Moment estimates in the module's parameter visiting order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, state: AdamState::default() }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn set_state(&mut self, state: AdamState) {
        self.state = state;
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) {
        let st = &mut self.state;
        st.step += 1;
        let t = st.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let mut idx = 0;
        module.visit_mut("", &mut |_, p| {
            if p.kind() != ParamKind::Trainable {
                return;
            }
            if st.m.len() <= idx {
                st.m.push(vec![0.0; p.len()]);
                st.v.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut st.m[idx], &mut st.v[idx]);
            assert_eq!(m.len(), p.len(), "optimizer state does not match parameter {idx}");
            for j in 0..p.len() {
                let g = p.grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.value[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.zero_grad();
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Param;

    struct Scalar(Param);

    impl Module for Scalar {
        fn visit(&self, _: &str, f: &mut dyn FnMut(&str, &Param)) {
            f("x", &self.0);
        }
        fn visit_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Param)) {
            f("x", &mut self.0);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = Scalar(Param::trainable(&[1], vec![1.0]));
        s.0.grad[0] = 3.0;
        let mut adam = Adam::new(0.1, 0.9, 0.999);
        adam.step(&mut s);
        assert!((s.0.value[0] - 0.9).abs() < 1e-6);
        assert_eq!(s.0.grad[0], 0.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut s = Scalar(Param::trainable(&[1], vec![5.0]));
        let mut adam = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            s.0.grad[0] = 2.0 * (s.0.value[0] - 2.0);
            adam.step(&mut s);
        }
        assert!((s.0.value[0] - 2.0).abs() < 1e-2);
    }
}
