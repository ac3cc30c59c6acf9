use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers for every parameter tensor of a group of networks.
#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    kind: OptimizerKind,
    step: i32,
    moments: Vec<Vec<(Array2<F>, Array2<F>, Array1<F>, Array1<F>)>>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(kind: OptimizerKind, models: &[Mlp<F>]) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam { .. } => models
                .iter()
                .map(|m| {
                    m.layers
                        .iter()
                        .map(|l| {
                            (
                                Array2::zeros(l.weight.raw_dim()),
                                Array2::zeros(l.weight.raw_dim()),
                                Array1::zeros(l.bias.len()),
                                Array1::zeros(l.bias.len()),
                            )
                        })
                        .collect()
                })
                .collect(),
        };
        OptimizerState { kind, step: 0, moments }
    }

    pub fn apply(&mut self, models: &mut [Mlp<F>], grads: &[Gradients<F>], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = F::from_f(lr);
                for (m, g) in models.iter_mut().zip(grads) {
                    for (l, (gw, gb)) in m.layers.iter_mut().zip(&g.layers) {
                        Zip::from(&mut l.weight).and(gw).for_each(|w, &d| *w = *w - lr * d);
                        Zip::from(&mut l.bias).and(gb).for_each(|w, &d| *w = *w - lr * d);
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let step = F::from_f(lr * c2.sqrt() / c1);
                let (b1, b2, eps) = (F::from_f(beta1), F::from_f(beta2), F::from_f(eps * c2.sqrt()));
                let one = F::one();
                for ((m, g), mom) in models.iter_mut().zip(grads).zip(&mut self.moments) {
                    for ((l, (gw, gb)), (mw, vw, mb, vb)) in m.layers.iter_mut().zip(&g.layers).zip(mom) {
                        Zip::from(&mut l.weight).and(gw).and(mw).and(vw).for_each(|w, &d, m1, v1| {
                            *m1 = b1 * *m1 + (one - b1) * d;
                            *v1 = b2 * *v1 + (one - b2) * d * d;
                            *w = *w - step * *m1 / (v1.sqrt() + eps);
                        });
                        Zip::from(&mut l.bias).and(gb).and(mb).and(vb).for_each(|w, &d, m1, v1| {
                            *m1 = b1 * *m1 + (one - b1) * d;
                            *v1 = b2 * *v1 + (one - b2) * d * d;
                            *w = *w - step * *m1 / (v1.sqrt() + eps);
                        });
                    }
                }
            }
        }
    }
}
