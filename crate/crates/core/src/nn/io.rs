//! Versioned JSON model files. Weights are written as shortest round-trip
//! decimals of their `f64` value, so a save/load cycle is bit-exact for both
//! `f32` and `f64` models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::GridSpec;
use crate::scalar::Scalar;

use super::locator::Locator;
use super::mlp::{Layer, Mlp, MlpSpec, Normalizer};
use super::NnError;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    /// Row-major, `inputs x outputs`.
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MlpFile {
    version: u32,
    scalar: String,
    spec: MlpSpec,
    input_norm: Normalizer,
    output_norm: Normalizer,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LocatorFile {
    version: u32,
    pcis: Vec<u32>,
    floor_dbm: f64,
    grid: GridSpec,
    mlp: MlpFile,
}

fn to_file<T: Scalar>(m: &Mlp<T>) -> MlpFile {
    MlpFile {
        version: MODEL_VERSION,
        scalar: T::NAME.into(),
        spec: m.spec.clone(),
        input_norm: m.input_norm.clone(),
        output_norm: m.output_norm.clone(),
        layers: m
            .layers
            .iter()
            .map(|l| LayerFile {
                inputs: l.inputs,
                outputs: l.outputs,
                w: l.w.iter().map(|v| v.f64()).collect(),
                b: l.b.iter().map(|v| v.f64()).collect(),
            })
            .collect(),
    }
}

fn from_file<T: Scalar>(f: MlpFile) -> Result<Mlp<T>, NnError> {
    if f.version != MODEL_VERSION {
        return Err(NnError::Format(format!("unsupported model version {}", f.version)));
    }
    if f.scalar != T::NAME {
        return Err(NnError::Format(format!(
            "model stored as {}, requested {}",
            f.scalar,
            T::NAME
        )));
    }
    f.spec.validate()?;
    let sizes = &f.spec.layer_sizes;
    if f.layers.len() != sizes.len() - 1 {
        return Err(NnError::Format("layer count does not match spec".into()));
    }
    let mut layers = Vec::with_capacity(f.layers.len());
    for (k, l) in f.layers.into_iter().enumerate() {
        if l.inputs != sizes[k]
            || l.outputs != sizes[k + 1]
            || l.w.len() != l.inputs * l.outputs
            || l.b.len() != l.outputs
        {
            return Err(NnError::Format(format!("layer {k} shape does not match spec")));
        }
        layers.push(Layer {
            inputs: l.inputs,
            outputs: l.outputs,
            w: l.w.into_iter().map(T::of).collect(),
            b: l.b.into_iter().map(T::of).collect(),
        });
    }
    if f.input_norm.dim() != f.spec.inputs() || f.output_norm.dim() != f.spec.outputs() {
        return Err(NnError::Format("normalizer width does not match spec".into()));
    }
    Ok(Mlp {
        spec: f.spec,
        layers,
        input_norm: f.input_norm,
        output_norm: f.output_norm,
    })
}

pub fn mlp_to_json<T: Scalar>(m: &Mlp<T>) -> String {
    serde_json::to_string_pretty(&to_file(m)).expect("model serializes") + "\n"
}

pub fn mlp_from_json<T: Scalar>(s: &str) -> Result<Mlp<T>, NnError> {
    from_file(serde_json::from_str(s)?)
}

pub fn locator_to_json<T: Scalar>(l: &Locator<T>) -> String {
    let f = LocatorFile {
        version: MODEL_VERSION,
        pcis: l.pcis.clone(),
        floor_dbm: l.floor_dbm,
        grid: l.spec,
        mlp: to_file(&l.mlp),
    };
    serde_json::to_string_pretty(&f).expect("model serializes") + "\n"
}

pub fn locator_from_json<T: Scalar>(s: &str) -> Result<Locator<T>, NnError> {
    let f: LocatorFile = serde_json::from_str(s)?;
    if f.version != MODEL_VERSION {
        return Err(NnError::Format(format!("unsupported locator version {}", f.version)));
    }
    let mlp = from_file::<T>(f.mlp)?;
    if mlp.spec.inputs() != f.pcis.len() || mlp.spec.outputs() != 2 {
        return Err(NnError::Format("locator shape does not match its PCI list".into()));
    }
    if f.pcis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(NnError::Format("locator PCIs must be strictly ascending".into()));
    }
    f.grid.validate().map_err(|e| NnError::Format(e.to_string()))?;
    Ok(Locator {
        mlp,
        pcis: f.pcis,
        floor_dbm: f.floor_dbm,
        spec: f.grid,
    })
}

pub fn save_locator<T: Scalar>(l: &Locator<T>, path: &Path) -> Result<(), NnError> {
    std::fs::write(path, locator_to_json(l))?;
    Ok(())
}

pub fn load_locator<T: Scalar>(path: &Path) -> Result<Locator<T>, NnError> {
    locator_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GeoPoint;
    use crate::nn::Activation;

    fn trained_like<T: Scalar>() -> Mlp<T> {
        let spec = MlpSpec::new(&[3, 5, 2], Activation::Relu).unwrap();
        let mut m = Mlp::<T>::init(&spec, 11).unwrap();
        m.layers[0].b = (0..5).map(|k| T::of(0.1 / (k as f64 + 3.0))).collect();
        m.input_norm = Normalizer::new(&[(-140.0, -20.0); 3]).unwrap();
        m.output_norm = Normalizer::new(&[(0.0, 5000.0), (0.0, 1234.5)]).unwrap();
        m
    }

    #[test]
    fn mlp_round_trip_is_exact() {
        let a = trained_like::<f64>();
        assert_eq!(mlp_from_json::<f64>(&mlp_to_json(&a)).unwrap(), a);
        let b = trained_like::<f32>();
        assert_eq!(mlp_from_json::<f32>(&mlp_to_json(&b)).unwrap(), b);
        assert!(mlp_from_json::<f32>(&mlp_to_json(&a)).is_err());
    }

    #[test]
    fn rejects_shape_tampering() {
        let a = trained_like::<f64>();
        let mut v: serde_json::Value = serde_json::from_str(&mlp_to_json(&a)).unwrap();
        v["layers"][0]["b"].as_array_mut().unwrap().pop();
        assert!(matches!(mlp_from_json::<f64>(&v.to_string()), Err(NnError::Format(_))));
        v["version"] = 99.into();
        assert!(mlp_from_json::<f64>(&v.to_string()).is_err());
    }

    #[test]
    fn locator_file_round_trip() {
        let l = Locator {
            mlp: trained_like::<f64>(),
            pcis: vec![1, 4, 9],
            floor_dbm: -140.0,
            spec: GridSpec::new(GeoPoint::new(40.0, -3.7), 50.0, 10, 10).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loc.json");
        save_locator(&l, &p).unwrap();
        assert_eq!(load_locator::<f64>(&p).unwrap(), l);
    }
}
