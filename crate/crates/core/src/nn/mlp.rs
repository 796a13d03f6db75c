use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::{axpy, dot, Scalar};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_sizes: &[usize], activation: Activation) -> Result<Self, NnError> {
        let spec = Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_sizes.len() < 3 {
            return Err(NnError::Spec(
                "need input, at least one hidden, and output layer".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(NnError::Spec("layer sizes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }
}

/// Per-dimension affine map from `[lo, hi]` onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn new(bounds: &[(f64, f64)]) -> Result<Self, NnError> {
        if let Some((lo, hi)) = bounds
            .iter()
            .find(|(lo, hi)| !(hi > lo && lo.is_finite() && hi.is_finite()))
        {
            return Err(NnError::Spec(format!("degenerate normalization range [{lo}, {hi}]")));
        }
        Ok(Self {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn normalize(&self, i: usize, x: f64) -> f64 {
        (x - self.lo[i]) / (self.hi[i] - self.lo[i])
    }

    pub fn denormalize(&self, i: usize, y: f64) -> f64 {
        self.lo[i] + y * (self.hi[i] - self.lo[i])
    }
}

/// Dense layer computing `y = x W + b`; `w` is row-major `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![T::zero(); inputs * outputs],
            b: vec![T::zero(); outputs],
        }
    }

    /// `out` is `batch x outputs`, `x` is `batch x inputs`.
    fn forward(&self, x: &[T], batch: usize, out: &mut Vec<T>) {
        out.clear();
        out.reserve(batch * self.outputs);
        for _ in 0..batch {
            out.extend_from_slice(&self.b);
        }
        for s in 0..batch {
            let xs = &x[s * self.inputs..(s + 1) * self.inputs];
            let ys = &mut out[s * self.outputs..(s + 1) * self.outputs];
            for (i, &xi) in xs.iter().enumerate() {
                if xi != T::zero() {
                    axpy(xi, &self.w[i * self.outputs..(i + 1) * self.outputs], ys);
                }
            }
        }
    }
}

/// Feedforward network with a linear output layer, plus the normalization
/// constants that map raw inputs and targets onto the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub spec: MlpSpec,
    pub layers: Vec<Layer<T>>,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
}

/// Gradient with the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }
}

fn activate<T: Scalar>(act: Activation, v: &mut [T]) {
    match act {
        Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(T::zero())),
    }
}

/// Derivative expressed through the activation output.
#[inline]
fn activation_slope<T: Scalar>(act: Activation, a: T) -> T {
    match act {
        Activation::Tanh => T::one() - a * a,
        Activation::Relu => {
            if a > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights, zero biases, identity normalization.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                for w in &mut layer.w {
                    *w = T::of(rng.random_range(-limit..=limit));
                }
                layer
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
            input_norm: Normalizer::identity(spec.inputs()),
            output_norm: Normalizer::identity(spec.outputs()),
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    pub fn param_mut(&mut self, mut k: usize) -> &mut T {
        for l in &mut self.layers {
            if k < l.w.len() {
                return &mut l.w[k];
            }
            k -= l.w.len();
            if k < l.b.len() {
                return &mut l.b[k];
            }
            k -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Activations of every layer; element 0 is the input batch.
    fn activations(&self, x: &[T], batch: usize) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.forward(&acts[k], batch, &mut out);
            if k < last {
                activate(self.spec.activation, &mut out);
            }
            acts.push(out);
        }
        acts
    }

    fn check_batch(&self, x: &[T], dim: usize) -> Result<usize, NnError> {
        if x.len() % dim != 0 {
            return Err(NnError::Dimension {
                expected: dim,
                got: x.len(),
            });
        }
        Ok(x.len() / dim)
    }

    /// Network outputs for a row-major batch in normalized units.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, NnError> {
        let batch = self.check_batch(x, self.spec.inputs())?;
        Ok(self.activations(x, batch).pop().expect("output layer"))
    }

    /// Weighted MSE `Σ wᵢ‖yᵢ − tᵢ‖² / Σ wᵢ` and its gradient by backpropagation.
    pub fn grad(&self, x: &[T], targets: &[T], weights: &[T]) -> Result<(Gradients<T>, T), NnError> {
        let batch = self.check_batch(x, self.spec.inputs())?;
        let outs = self.spec.outputs();
        if targets.len() != batch * outs {
            return Err(NnError::Dimension {
                expected: batch * outs,
                got: targets.len(),
            });
        }
        if weights.len() != batch {
            return Err(NnError::Dimension {
                expected: batch,
                got: weights.len(),
            });
        }
        let wsum: T = weights.iter().copied().sum();
        let acts = self.activations(x, batch);
        let y = acts.last().expect("output layer");
        let two = T::one() + T::one();
        let mut loss = T::zero();
        let mut delta: Vec<T> = Vec::with_capacity(y.len());
        for s in 0..batch {
            let scale = two * weights[s] / wsum;
            for o in 0..outs {
                let e = y[s * outs + o] - targets[s * outs + o];
                loss += weights[s] * e * e;
                delta.push(scale * e);
            }
        }
        loss /= wsum;

        let mut grads: Vec<Layer<T>> = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &acts[k];
            let g = &mut grads[k];
            for s in 0..batch {
                let ds = &delta[s * layer.outputs..(s + 1) * layer.outputs];
                axpy(T::one(), ds, &mut g.b);
                let xs = &input[s * layer.inputs..(s + 1) * layer.inputs];
                for (i, &xi) in xs.iter().enumerate() {
                    if xi != T::zero() {
                        axpy(xi, ds, &mut g.w[i * layer.outputs..(i + 1) * layer.outputs]);
                    }
                }
            }
            if k > 0 {
                let mut prev = vec![T::zero(); batch * layer.inputs];
                for s in 0..batch {
                    let ds = &delta[s * layer.outputs..(s + 1) * layer.outputs];
                    for i in 0..layer.inputs {
                        let a = input[s * layer.inputs + i];
                        let back = dot(&layer.w[i * layer.outputs..(i + 1) * layer.outputs], ds);
                        prev[s * layer.inputs + i] = back * activation_slope(self.spec.activation, a);
                    }
                }
                delta = prev;
            }
        }
        Ok((Gradients { layers: grads }, loss))
    }

    /// Map a raw input row to raw outputs through both normalizers.
    pub fn predict(&self, raw: &[f64]) -> Result<Vec<f64>, NnError> {
        let out = self.predict_batch(raw)?;
        Ok(out)
    }

    /// Raw row-major batch in, raw row-major outputs out.
    pub fn predict_batch(&self, raw: &[f64]) -> Result<Vec<f64>, NnError> {
        let d = self.spec.inputs();
        if raw.len() % d != 0 {
            return Err(NnError::Dimension {
                expected: d,
                got: raw.len(),
            });
        }
        let x: Vec<T> = raw
            .iter()
            .enumerate()
            .map(|(k, &v)| T::of(self.input_norm.normalize(k % d, v)))
            .collect();
        let y = self.forward(&x)?;
        let o = self.spec.outputs();
        Ok(y.iter()
            .enumerate()
            .map(|(k, v)| self.output_norm.denormalize(k % o, v.f64()))
            .collect())
    }
}
