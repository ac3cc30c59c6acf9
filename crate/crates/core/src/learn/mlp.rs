use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LearnError, Real};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu,
    Tanh,
}

impl Activation {
    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu => {
                if x > F::zero() {
                    x
                } else {
                    x * F::from_f(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative<F: Real>(self, x: F, y: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::LeakyRelu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::from_f(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => F::one() - y * y,
        }
    }
}

/// Fully connected layer, `y = act(W x + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: Real> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// A chain of dense layers. This is the parameter store every learned model
/// in the crate is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
}

/// Per-layer inputs and pre-activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    inputs: Vec<Array2<F>>,
    pre: Vec<Array2<F>>,
    pub output: Array2<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<(Array2<F>, Array1<F>)>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(mlp: &Mlp<F>) -> Self {
        Gradients {
            layers: mlp
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.zip_mut_with(ow, |a, &b| *a = *a + b);
            b.zip_mut_with(ob, |a, &c| *a = *a + c);
        }
    }

    pub fn scale(&mut self, k: F) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * k);
            b.mapv_inplace(|v| v * k);
        }
    }

    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
    }
}

impl<F: Real> Mlp<F> {
    /// Layer widths `sizes[0] → … → sizes[n]`, `hidden` activation between
    /// layers and `output` on the last one. Weights use fan-in scaled uniform
    /// initialization, biases start at zero.
    pub fn new<R: Rng>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and output width");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                let fan_in = sizes[i] as f64;
                let gain = if act == Activation::LeakyRelu { 6.0 } else { 3.0 };
                let bound = (gain / fan_in).sqrt();
                let weight = Array2::from_shape_fn((sizes[i + 1], sizes[i]), |_| {
                    F::from_f(rng.random_range(-bound..bound))
                });
                Dense { weight, bias: Array1::zeros(sizes[i + 1]), activation: act }
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Dense<F>>) -> Result<Self, LearnError> {
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(LearnError::Shape(format!(
                    "layer emits {} values but next expects {}",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(LearnError::Shape("bias length differs from layer width".into()));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, Dense::inputs)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_width()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<(), LearnError> {
        if x.ncols() != self.input_width() {
            return Err(LearnError::Shape(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Batched forward pass; rows are samples.
    pub fn forward_batch(&self, x: ArrayView2<F>) -> Result<ForwardCache<F>, LearnError> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let z = h.dot(&layer.weight.t()) + &layer.bias;
            let act = layer.activation;
            let y = z.mapv(|v| act.apply(v));
            inputs.push(h);
            pre.push(z);
            h = y;
        }
        Ok(ForwardCache { inputs, pre, output: h })
    }

    /// Batched inference without keeping a cache.
    pub fn predict(&self, x: ArrayView2<F>) -> Result<Array2<F>, LearnError> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut z = h.dot(&layer.weight.t()) + &layer.bias;
            let act = layer.activation;
            z.mapv_inplace(|v| act.apply(v));
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[F]) -> Result<Vec<F>, LearnError> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| LearnError::Shape(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. `upstream` is dLoss/dOutput for every sample of the
    /// cached batch; returns parameter gradients summed over the batch and the
    /// gradient with respect to the input rows.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        upstream: ArrayView2<F>,
    ) -> Result<(Gradients<F>, Array2<F>), LearnError> {
        if upstream.dim() != cache.output.dim() || cache.pre.len() != self.layers.len() {
            return Err(LearnError::Shape(format!(
                "upstream gradient {:?} does not match cached output {:?}",
                upstream.dim(),
                cache.output.dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            if act != Activation::Identity {
                let y = if i + 1 < self.layers.len() { &cache.inputs[i + 1] } else { &cache.output };
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre[i])
                    .and(y)
                    .for_each(|d, &x, &y| *d = *d * act.derivative(x, y));
            }
            let gw = delta.t().dot(&cache.inputs[i]);
            let gb = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weight);
            grads.push((gw, gb));
            delta = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Flat parameter view in layer order, weights row-major then bias.
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[F]) -> Result<(), LearnError> {
        if values.len() != self.n_params() {
            return Err(LearnError::Shape("flat parameter length mismatch".into()));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|v| G::from_f(v.to_f64().unwrap())),
                    bias: l.bias.mapv(|v| G::from_f(v.to_f64().unwrap())),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut layer = Dense::<f64>::zeros(3, 3, Activation::Identity);
        layer.weight = Array2::eye(3);
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        assert_eq!(mlp.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::from_layers(vec![
            Dense::<f64>::zeros(4, 5, Activation::LeakyRelu),
            Dense::zeros(5, 2, Activation::Identity),
        ])
        .unwrap();
        assert_eq!(mlp.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn two_by_two_arithmetic() {
        let layer = Dense { weight: array![[1.0, 2.0], [3.0, 4.0]], bias: array![0.0, 0.0], activation: Activation::Identity };
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        assert_eq!(mlp.forward(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::<f32>::new(&[3, 4, 2], Activation::LeakyRelu, Activation::Identity, &mut rng);
        assert!(matches!(mlp.forward(&[1.0, 2.0]), Err(LearnError::Shape(_))));
        let cache = mlp.forward_batch(Array2::zeros((2, 3)).view()).unwrap();
        assert!(mlp.backward(&cache, Array2::zeros((2, 3)).view()).is_err());
        assert!(Mlp::from_layers(vec![
            Dense::<f32>::zeros(3, 4, Activation::Identity),
            Dense::zeros(5, 2, Activation::Identity)
        ])
        .is_err());
    }

    #[test]
    fn linear_mse_gradient_matches_hand_formula() {
        let layer: Dense<f64> = Dense { weight: array![[0.5, -1.0], [2.0, 0.25]], bias: array![0.1, -0.2], activation: Activation::Identity };
        let mlp = Mlp::from_layers(vec![layer.clone()]).unwrap();
        let x: Array2<f64> = array![[1.5, -0.5]];
        let t: Array2<f64> = array![[1.0, 1.0]];
        let cache = mlp.forward_batch(x.view()).unwrap();
        // d/dy of sum (y - t)^2
        let up = (&cache.output - &t) * 2.0;
        let (g, _) = mlp.backward(&cache, up.view()).unwrap();
        let r = layer.weight.dot(&x.row(0)) + &layer.bias - t.row(0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((g.layers[0].0[[i, j]] - 2.0 * r[i] * x[[0, j]]).abs() < 1e-12);
            }
            assert!((g.layers[0].1[i] - 2.0 * r[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::<f64>::new(&[3, 6, 2], Activation::LeakyRelu, Activation::Identity, &mut rng);
        let cache = mlp.forward_batch(array![[0.3, -0.1, 0.8]].view()).unwrap();
        let (g, gx) = mlp.backward(&cache, Array2::zeros((1, 2)).view()).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
        assert!(gx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::<f32>::new(&[3, 4, 2], Activation::LeakyRelu, Activation::Identity, &mut rng);
        let mut other = Mlp::<f32>::new(&[3, 4, 2], Activation::LeakyRelu, Activation::Identity, &mut rng);
        other.set_flat(&mlp.flatten()).unwrap();
        assert_eq!(mlp, other);
    }
}
