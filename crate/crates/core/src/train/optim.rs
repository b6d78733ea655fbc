//! First-order optimizers over named parameter collections.

use std::collections::BTreeMap;

use crate::params::Params;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub enum OptimKind {
    /// Adaptive moments, beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    Adam { lr: f64 },
    Sgd { lr: f64, momentum: f64 },
}

#[derive(Clone, Debug, Default)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimKind,
    state: BTreeMap<String, Slot>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimKind) -> Self {
        Optimizer { kind, state: BTreeMap::new(), steps: 0 }
    }

    /// Apply one update to every trainable parameter whose name starts with
    /// one of `prefixes` (all parameters when empty).
    pub fn step(
        &mut self,
        params: &mut Params,
        grads: &BTreeMap<String, Tensor>,
        prefixes: &[String],
    ) {
        self.steps += 1;
        for (name, tensor) in params.iter_mut() {
            if !tensor.requires_grad() {
                continue;
            }
            if !prefixes.is_empty() && !prefixes.iter().any(|p| name.starts_with(p.as_str())) {
                continue;
            }
            let g = match grads.get(name) {
                Some(g) => g.data(),
                None => continue,
            };
            let slot = self
                .state
                .entry(name.clone())
                .or_insert_with(|| Slot { m: vec![0.0; g.len()], v: vec![0.0; g.len()] });
            match self.kind {
                OptimKind::Adam { lr } => {
                    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                    let bc1 = 1.0 - b1.powi(self.steps as i32);
                    let bc2 = 1.0 - b2.powi(self.steps as i32);
                    for ((x, &gi), (m, v)) in tensor
                        .data_mut()
                        .iter_mut()
                        .zip(g)
                        .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
                    {
                        *m = b1 * *m + (1.0 - b1) * gi;
                        *v = b2 * *v + (1.0 - b2) * gi * gi;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *x -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                OptimKind::Sgd { lr, momentum } => {
                    for ((x, &gi), m) in
                        tensor.data_mut().iter_mut().zip(g).zip(slot.m.iter_mut())
                    {
                        *m = momentum * *m + gi;
                        *x -= lr * *m;
                    }
                }
            }
        }
    }
}

/// L2 norm of the gradients under the given prefixes.
pub fn grad_norm(grads: &BTreeMap<String, Tensor>, prefixes: &[String]) -> f64 {
    grads
        .iter()
        .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p.as_str())))
        .flat_map(|(_, t)| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_descends_a_quadratic() {
        let mut params = Params::new();
        params.insert("x", Tensor::vector(vec![5.0]));
        let mut opt = Optimizer::new(OptimKind::Sgd { lr: 0.1, momentum: 0.0 });
        for _ in 0..100 {
            let x = params.get("x").data()[0];
            let mut grads = BTreeMap::new();
            grads.insert("x".to_string(), Tensor::vector(vec![2.0 * x]));
            opt.step(&mut params, &grads, &[]);
        }
        assert!(params.get("x").data()[0].abs() < 1e-6);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut params = Params::new();
        params.insert("x", Tensor::vector(vec![3.0]));
        let mut opt = Optimizer::new(OptimKind::Adam { lr: 0.1 });
        for _ in 0..300 {
            let x = params.get("x").data()[0];
            let mut grads = BTreeMap::new();
            grads.insert("x".to_string(), Tensor::vector(vec![2.0 * x]));
            opt.step(&mut params, &grads, &[]);
        }
        assert!(params.get("x").data()[0].abs() < 1e-3);
    }

    #[test]
    fn prefix_filter_leaves_other_parameters_alone() {
        let mut params = Params::new();
        params.insert("a.x", Tensor::vector(vec![1.0]));
        params.insert("b.x", Tensor::vector(vec![1.0]));
        let mut grads = BTreeMap::new();
        grads.insert("a.x".to_string(), Tensor::vector(vec![1.0]));
        grads.insert("b.x".to_string(), Tensor::vector(vec![1.0]));
        let mut opt = Optimizer::new(OptimKind::Sgd { lr: 0.5, momentum: 0.0 });
        opt.step(&mut params, &grads, &[String::from("a.")]);
        assert_eq!(params.get("a.x").data()[0], 0.5);
        assert_eq!(params.get("b.x").data()[0], 1.0);
    }
}
