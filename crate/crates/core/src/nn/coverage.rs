use serde::{Deserialize, Serialize};

use crate::extrapolation::DenseTrainingSet;
use crate::grid::{DenseField, GridSpec, RSRP_MAX_DBM};
use crate::scalar::Scalar;

use super::mlp::{Activation, Mlp, MlpSpec};
use super::train::{train, Dataset, TrainConfig};
use super::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    /// Lower clamp of the modeled field and lower end of target normalization.
    pub floor_dbm: f64,
    /// Sine/cosine encodings of each coordinate at 1, 2, 4, ... half-cycles
    /// across the grid, appended to the raw coordinates. 0 feeds the raw
    /// coordinates only.
    pub fourier_octaves: usize,
}

impl Default for CoverageParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            train: TrainConfig::default(),
            floor_dbm: -140.0,
            fourier_octaves: 0,
        }
    }
}

/// Per-cell field model `(row, col) -> RSRP`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageModel<T> {
    pub mlp: Mlp<T>,
    pub spec: GridSpec,
    pub floor_dbm: f64,
    pub fourier_octaves: usize,
    pub loss_trace: Vec<f64>,
}

fn input_width(octaves: usize) -> usize {
    2 + 4 * octaves
}

fn input_bounds(spec: &GridSpec, octaves: usize) -> Vec<(f64, f64)> {
    let mut b = vec![(0.0, spec.rows as f64), (0.0, spec.cols as f64)];
    b.resize(input_width(octaves), (-1.0, 1.0));
    b
}

fn element_inputs(spec: &GridSpec, octaves: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.len() * input_width(octaves));
    for c in spec.coords() {
        let u = [
            (c.row as f64 + 0.5) / spec.rows as f64,
            (c.col as f64 + 0.5) / spec.cols as f64,
        ];
        out.push(c.row as f64 + 0.5);
        out.push(c.col as f64 + 0.5);
        for k in 0..octaves {
            let f = std::f64::consts::PI * (1u64 << k) as f64;
            for x in u {
                out.push((f * x).sin());
                out.push((f * x).cos());
            }
        }
    }
    out
}

/// Fit one cell's coverage network to its dense training set.
pub fn coverage_model<T: Scalar>(
    dense: &DenseTrainingSet,
    params: &CoverageParams,
) -> Result<CoverageModel<T>, NnError> {
    let spec = dense.spec;
    if dense.len() != spec.len() {
        return Err(NnError::Dimension {
            expected: spec.len(),
            got: dense.len(),
        });
    }
    let mut sizes = vec![input_width(params.fourier_octaves)];
    sizes.extend(&params.hidden);
    sizes.push(1);
    let mlp_spec = MlpSpec::new(&sizes, params.activation)?;
    let data = Dataset {
        inputs: element_inputs(&spec, params.fourier_octaves),
        targets: dense.values.clone(),
        weights: dense.weights.clone(),
        input_bounds: input_bounds(&spec, params.fourier_octaves),
        target_bounds: vec![(params.floor_dbm, RSRP_MAX_DBM)],
    };
    let init = Mlp::init(&mlp_spec, params.train.seed)?;
    let out = train(init, &data, &params.train)?;
    Ok(CoverageModel {
        mlp: out.model,
        spec,
        floor_dbm: params.floor_dbm,
        fourier_octaves: params.fourier_octaves,
        loss_trace: out.loss_trace,
    })
}

impl<T: Scalar> CoverageModel<T> {
    /// Evaluate on every grid element, clamped to `[floor_dbm, -20]`.
    pub fn field(&self) -> DenseField {
        let inputs = element_inputs(&self.spec, self.fourier_octaves);
        let values = self
            .mlp
            .predict_batch(&inputs)
            .expect("input width matches the encoding")
            .into_iter()
            .map(|v| v.clamp(self.floor_dbm, RSRP_MAX_DBM))
            .collect();
        DenseField {
            spec: self.spec,
            values,
        }
    }
}
