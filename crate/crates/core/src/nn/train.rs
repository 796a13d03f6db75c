use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::mlp::{Layer, Mlp, Normalizer};
use super::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty on weights (not biases), added to the gradient.
    pub weight_decay: f64,
    /// Learning rate at the last epoch as a fraction of the initial one
    /// (cosine schedule). 1.0 keeps it constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-6,
            final_lr_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(NnError::Spec(
                "learning_rate must be > 0, epochs and batch_size >= 1".into(),
            ));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_fraction >= 1.0 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        let f = self.final_lr_fraction;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

/// Raw training data, row-major, with the value ranges used for normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    pub input_bounds: Vec<(f64, f64)>,
    pub target_bounds: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn check(&self) -> Result<(), NnError> {
        let (din, dout, n) = (self.input_bounds.len(), self.target_bounds.len(), self.len());
        if n == 0 {
            return Err(NnError::EmptyDataset);
        }
        if self.inputs.len() != n * din {
            return Err(NnError::Dimension {
                expected: n * din,
                got: self.inputs.len(),
            });
        }
        if self.targets.len() != n * dout {
            return Err(NnError::Dimension {
                expected: n * dout,
                got: self.targets.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub model: Mlp<T>,
    /// Weighted mean training loss per epoch, in normalized units.
    pub loss_trace: Vec<f64>,
}

struct Adam<T> {
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(mlp: &Mlp<T>) -> Self {
        let zero = |l: &Layer<T>| Layer {
            inputs: l.inputs,
            outputs: l.outputs,
            w: vec![T::zero(); l.w.len()],
            b: vec![T::zero(); l.b.len()],
        };
        Self {
            m: mlp.layers.iter().map(zero).collect(),
            v: mlp.layers.iter().map(zero).collect(),
            t: 0,
        }
    }

    fn step(&mut self, mlp: &mut Mlp<T>, grads: &[Layer<T>], cfg: &TrainConfig, lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let one = T::one();
        let c1 = T::of(1.0 - cfg.beta1.powi(self.t));
        let c2 = T::of(1.0 - cfg.beta2.powi(self.t));
        let (lr, eps, wd) = (T::of(lr), T::of(cfg.epsilon), T::of(cfg.weight_decay));
        let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], decay: T| {
            for k in 0..p.len() {
                let gk = g[k] + decay * p[k];
                m[k] = b1 * m[k] + (one - b1) * gk;
                v[k] = b2 * v[k] + (one - b2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
        };
        for (k, layer) in mlp.layers.iter_mut().enumerate() {
            update(&mut layer.w, &grads[k].w, &mut self.m[k].w, &mut self.v[k].w, wd);
            update(&mut layer.b, &grads[k].b, &mut self.m[k].b, &mut self.v[k].b, T::zero());
        }
    }
}

/// Flush-to-zero for the current thread while alive. Idle ReLU units drive
/// gradients and moments into subnormal range, where arithmetic is several
/// times slower; flushing them does not change results in practice.
struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

impl FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    fn enable() -> Self {
        let mut saved: u32 = 0;
        // FTZ (bit 15) and DAZ (bit 6)
        unsafe {
            std::arch::asm!("stmxcsr [{}]", in(reg) &mut saved, options(nostack));
            let flushed = saved | 0x8040;
            std::arch::asm!("ldmxcsr [{}]", in(reg) &flushed, options(nostack));
        }
        Self { saved }
    }

    #[cfg(not(target_arch = "x86_64"))]
    fn enable() -> Self {
        Self {}
    }
}

#[cfg(target_arch = "x86_64")]
impl Drop for FlushDenormals {
    fn drop(&mut self) {
        unsafe {
            std::arch::asm!("ldmxcsr [{}]", in(reg) &self.saved, options(nostack));
        }
    }
}

/// Mini-batch Adam on a weighted MSE, with per-epoch seeded shuffling.
///
/// Inputs and targets are mapped onto `[0, 1]` through the dataset bounds; the
/// resulting normalizers are stored in the returned model.
pub fn train<T: Scalar>(mut mlp: Mlp<T>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome<T>, NnError> {
    cfg.validate()?;
    data.check()?;
    let _ftz = FlushDenormals::enable();
    let (din, dout) = (mlp.spec.inputs(), mlp.spec.outputs());
    if data.input_bounds.len() != din || data.target_bounds.len() != dout {
        return Err(NnError::Dimension {
            expected: din,
            got: data.input_bounds.len(),
        });
    }
    mlp.input_norm = Normalizer::new(&data.input_bounds)?;
    mlp.output_norm = Normalizer::new(&data.target_bounds)?;
    let x: Vec<T> = data
        .inputs
        .iter()
        .enumerate()
        .map(|(k, &v)| T::of(mlp.input_norm.normalize(k % din, v)))
        .collect();
    let y: Vec<T> = data
        .targets
        .iter()
        .enumerate()
        .map(|(k, &v)| T::of(mlp.output_norm.normalize(k % dout, v)))
        .collect();
    let w: Vec<T> = data.weights.iter().map(|&v| T::of(v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = Adam::new(&mlp);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let (mut bx, mut by, mut bw) = (Vec::new(), Vec::new(), Vec::new());
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            bw.clear();
            for &i in chunk {
                bx.extend_from_slice(&x[i * din..(i + 1) * din]);
                by.extend_from_slice(&y[i * dout..(i + 1) * dout]);
                bw.push(w[i]);
            }
            let (g, loss) = mlp.grad(&bx, &by, &bw)?;
            let batch_weight: f64 = bw.iter().map(|v| v.f64()).sum();
            loss_sum += loss.f64() * batch_weight;
            weight_sum += batch_weight;
            if !loss.is_finite() {
                return Err(NnError::NonFinite { epoch });
            }
            adam.step(&mut mlp, &g.layers, cfg, lr);
        }
        let epoch_loss = loss_sum / weight_sum;
        if !epoch_loss.is_finite() {
            return Err(NnError::NonFinite { epoch });
        }
        trace.push(epoch_loss);
    }
    Ok(TrainOutcome {
        model: mlp,
        loss_trace: trace,
    })
}
