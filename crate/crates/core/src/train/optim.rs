use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::nnet::{BranchedNet, Gradients};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Default)]
struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
    steps: u64,
}

/// Per-parameter optimizer state keyed by tensor name. State is created the first time
/// a parameter receives a gradient, so heads that never see a sample keep no state and
/// are never modified; Adam bias correction uses each parameter's own step count.
#[derive(Debug, Clone)]
pub struct Optimizer {
    params: OptimizerParams,
    slots: BTreeMap<String, Slot>,
}

impl Optimizer {
    pub fn new(params: OptimizerParams) -> Self {
        Optimizer {
            params,
            slots: BTreeMap::new(),
        }
    }

    /// One update of every parameter present in `grads`; trunk tensors are left alone
    /// when `freeze_trunk` is set.
    pub fn step(&mut self, net: &mut BranchedNet<f32>, grads: &Gradients<f32>, lr: f64, freeze_trunk: bool) {
        let p = self.params;
        let trunk: Vec<String> = net.trunk.tensors().into_iter().map(|(n, _)| n).collect();
        let slots = &mut self.slots;
        net.apply_gradients(grads, |name, param, grad| {
            if freeze_trunk && trunk.iter().any(|t| t == name) {
                return;
            }
            let slot = slots.entry(name.to_string()).or_insert_with(|| Slot {
                m: vec![0.0; grad.len()],
                v: if p.kind == OptimizerKind::Adam { vec![0.0; grad.len()] } else { Vec::new() },
                steps: 0,
            });
            slot.steps += 1;
            let lr = lr as f32;
            match p.kind {
                OptimizerKind::SgdMomentum => {
                    let mu = p.momentum as f32;
                    for ((w, &g), m) in param.data_mut().iter_mut().zip(grad.data()).zip(&mut slot.m) {
                        *m = mu * *m + g;
                        *w -= lr * *m;
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2) = (p.beta1 as f32, p.beta2 as f32);
                    let c1 = 1.0 - p.beta1.powi(slot.steps as i32) as f32;
                    let c2 = 1.0 - p.beta2.powi(slot.steps as i32) as f32;
                    let eps = p.eps as f32;
                    let it = param.data_mut().iter_mut().zip(grad.data()).zip(slot.m.iter_mut().zip(&mut slot.v));
                    for ((w, &g), (m, v)) in it {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        });
    }

    /// Number of optimizer steps applied to parameter `name`.
    pub fn steps(&self, name: &str) -> u64 {
        self.slots.get(name).map_or(0, |s| s.steps)
    }
}
