//! Warmup-then-decay learning rate and AdamW on a one-parameter problem.

use std::collections::BTreeMap;

use memefuse::autograd::{Gradients, Graph, ParamGroup, ParamStore};
use memefuse::optim::{lr_schedule, warmup_steps, AdamW};
use memefuse::tensor::Matrix;

fn main() -> memefuse::error::Result<()> {
    let total = 50;
    let base = 1e-3;
    println!("warmup steps: {}", warmup_steps(total, 0.1));
    for step in [0, 1, 3, 5, 10, 25, 49, 50] {
        println!("step {step:>2}: lr {:.6}", lr_schedule(step, total, base)?);
    }

    // minimize (w - 3)^2
    let mut store = ParamStore::new();
    let w = store.add("w", ParamGroup::Fusion, Matrix::zeros(1, 1), false);
    let mut opt = AdamW::new(&store, 0.0);
    for step in 0..200 {
        let mut g = Graph::new(&store);
        let x = g.param(w);
        let target = g.constant(Matrix::from_vec(1, 1, vec![-3.0]));
        let d = g.add(x, target);
        let dt = g.transpose(d);
        let sq = g.matmul(d, dt);
        let grads: Gradients = g.backward(sq);
        let lrs = BTreeMap::from([(ParamGroup::Fusion, lr_schedule(step, 200, 0.5)?)]);
        opt.step(&mut store, &grads, &lrs)?;
    }
    println!("w after 200 steps: {:.4}", store.value(w).get(0, 0));
    Ok(())
}
