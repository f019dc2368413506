use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::tensor::Matrix;

/// Affine layer `x · W + b` with `W: in × out`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    /// Xavier-uniform weights, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..limit));
        Dense {
            weight: store.add(format!("{name}.weight"), group, w, true),
            bias: store.add(format!("{name}.bias"), group, Matrix::zeros(1, fan_out), false),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

/// Row-wise layer norm with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, width: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), group, Matrix::from_vec(1, width, vec![1.0; width]), false),
            shift: store.add(format!("{name}.shift"), group, Matrix::zeros(1, width), false),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm_rows(x);
        let gain = g.param(self.gain);
        let shift = g.param(self.shift);
        let scaled = g.mul_row(n, gain);
        g.add_row(scaled, shift)
    }
}

/// Inverted dropout mask: entries are `0` or `1 / (1 - p)`.
pub fn dropout_mask(rng: &mut dyn rand::RngCore, rows: usize, cols: usize, p: f64) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    Matrix::from_fn(rows, cols, |_, _| if rng.gen_bool(p) { 0.0 } else { keep })
}
