//! JSON checkpoints. Floats use shortest round-trip formatting, so a saved
//! model loads back bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{output_shape, Layer, LayerKind, LayerSpec};
use super::model::{LabelSpace, Model};
use crate::data::AggregationMatrix;
use crate::error::{Error, Result};

const FORMAT: &str = "semctx-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    spec: LayerSpec,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AggregationEntry {
    rows: usize,
    parents: Vec<usize>,
    weights: Vec<f64>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    input_size: usize,
    label_space: LabelSpace,
    steps: u64,
    hierarchy_id: Option<String>,
    layers: Vec<TensorEntry>,
    head: TensorEntry,
    aggregation: Option<AggregationEntry>,
}

fn entry(l: &Layer) -> TensorEntry {
    TensorEntry {
        spec: l.spec(),
        weights: l.weights.clone(),
        bias: l.bias.clone(),
    }
}

pub fn model_to_string(m: &Model) -> String {
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        input_size: m.input_size,
        label_space: m.label_space,
        steps: m.steps,
        hierarchy_id: m.hierarchy_id.clone(),
        layers: m.layers.iter().map(entry).collect(),
        head: entry(&m.head),
        aggregation: m.aggregation.as_ref().map(|w| AggregationEntry {
            rows: w.rows(),
            parents: w.parents().to_vec(),
            weights: w.weights().to_vec(),
            trainable: w.trainable,
        }),
    };
    let mut text = serde_json::to_string(&file).expect("model serializes");
    text.push('\n');
    text
}

fn rebuild(e: TensorEntry, in_shape: (usize, usize, usize), index: usize) -> std::result::Result<Layer, String> {
    let out_shape = output_shape(e.spec.kind, in_shape, index).map_err(|err| err.to_string())?;
    let (n_w, n_b) = match e.spec.kind {
        LayerKind::Conv { kernel, channels, .. } => (channels * in_shape.0 * kernel * kernel, channels),
        LayerKind::Dense { out_dim } => (out_dim * in_shape.0 * in_shape.1 * in_shape.2, out_dim),
        _ => (0, 0),
    };
    if e.weights.len() != n_w || e.bias.len() != n_b {
        return Err(format!("layer {index}: expected {n_w} weights and {n_b} biases"));
    }
    if e.weights.iter().chain(&e.bias).any(|v| !v.is_finite()) {
        return Err(format!("layer {index}: non-finite parameter"));
    }
    Ok(Layer {
        kind: e.spec.kind,
        trainable: e.spec.trainable,
        in_shape,
        out_shape,
        weights: e.weights,
        bias: e.bias,
    })
}

pub fn model_from_str(text: &str) -> std::result::Result<Model, String> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(format!("unsupported format {} v{}", file.format, file.version));
    }
    let mut shape = (3, file.input_size, file.input_size);
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, e) in file.layers.into_iter().enumerate() {
        let layer = rebuild(e, shape, i)?;
        shape = layer.out_shape;
        layers.push(layer);
    }
    if !matches!(file.head.spec.kind, LayerKind::Dense { .. }) {
        return Err("head must be a dense layer".into());
    }
    let head = rebuild(file.head, (shape.0 * shape.1 * shape.2, 1, 1), layers.len())?;
    let aggregation = match file.aggregation {
        Some(a) => {
            let w = AggregationMatrix::from_parts(a.rows, a.parents, a.weights, a.trainable).map_err(|e| e.to_string())?;
            if w.cols() != head.out_shape.0 {
                return Err("aggregation width does not match the head".into());
            }
            Some(w)
        }
        None => None,
    };
    Ok(Model {
        input_size: file.input_size,
        layers,
        head,
        label_space: file.label_space,
        aggregation,
        steps: file.steps,
        hierarchy_id: file.hierarchy_id,
    })
}

pub fn save_checkpoint(path: &Path, m: &Model) -> Result<()> {
    fs::write(path, model_to_string(m)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text).map_err(|detail| Error::format(path, 0, detail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelHierarchy;
    use crate::hierarchy::build_aggregation_matrix;
    use crate::network::default_architecture;

    #[test]
    fn round_trips_exactly() {
        let mut m = Model::new(32, &default_architecture(), 3, LabelSpace::Subclass, 5).unwrap();
        m.add_hierarchy_head(build_aggregation_matrix(&LabelHierarchy::identity(3))).unwrap();
        m.set_w_trainable(true).unwrap();
        m.set_hierarchy_id(Some("abc".into()));
        m.layers_mut()[0].trainable = false;
        m.head_mut().weights[0] = 1.0 / 3.0;
        let text = model_to_string(&m);
        let back = model_from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_string(&back), text);
    }

    #[test]
    fn tampered_shapes_are_rejected() {
        let m = Model::new(32, &default_architecture(), 3, LabelSpace::Class, 5).unwrap();
        let text = model_to_string(&m).replace("\"input_size\":32", "\"input_size\":40");
        assert!(model_from_str(&text).is_err());
    }
}
