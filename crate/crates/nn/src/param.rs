use serde::{Deserialize, Serialize};

/// Whether a parameter is updated by the optimizer or only tracked as state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Trainable,
    /// Running statistics and similar non-gradient state.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    shape: Vec<usize>,
    kind: ParamKind,
}

impl Param {
    pub fn new(shape: &[usize], value: Vec<f32>, kind: ParamKind) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "param value does not match shape");
        let grad = match kind {
            ParamKind::Trainable => vec![0.0; value.len()],
            ParamKind::Buffer => Vec::new(),
        };
        Self { value, grad, shape: shape.to_vec(), kind }
    }

    pub fn trainable(shape: &[usize], value: Vec<f32>) -> Self {
        Self::new(shape, value, ParamKind::Trainable)
    }

    pub fn buffer(shape: &[usize], value: Vec<f32>) -> Self {
        Self::new(shape, value, ParamKind::Buffer)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// A container of named parameters visited in a fixed order.
///
/// The visiting order defines checkpoint layout, optimizer state layout and
/// EMA pairing, so implementations must never reorder fields.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.kind() == ParamKind::Trainable {
                n += p.len();
            }
        });
        n
    }

    /// `(name, shape)` for every parameter in visiting order.
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p.shape().to_vec())));
        out
    }
}

/// Joins a module path with a child name.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
