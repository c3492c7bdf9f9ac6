//! Inference with a trained checkpoint: scaffold, then refine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::network::DepthNetwork;
use super::{check_resolution, ModelConfig, ModelError};
use crate::diffgraph::checkpoint::Checkpoint;
use crate::diffgraph::{Array, Graph, NodeId};
use crate::scaffold::{scaffold, DenseDepthMap, SparseDepthMap};

/// Metadata format tag of model checkpoints.
pub const MODEL_FORMAT: &str = "sdc-model-1";

/// `[2, H, W]` network depth input: scaffold depth and its hull validity.
pub fn depth_input(sparse: &SparseDepthMap) -> Result<Array, ModelError> {
    let map = scaffold(sparse).map_err(|e| ModelError::Data(format!("scaffolding failed: {e}")))?;
    let mut data = map.depth.clone();
    data.extend(map.validity.iter().map(|&v| if v { 1.0 } else { 0.0 }));
    Ok(Array::from_vec(&[2, map.height, map.width], data)?)
}

/// Wraps parameter arrays with the model description inference needs.
pub fn model_checkpoint(config: &ModelConfig, arrays: Vec<(String, Array)>, extra: serde_json::Value) -> Checkpoint {
    Checkpoint::new(json!({ "format": MODEL_FORMAT, "model": config, "extra": extra }), arrays)
}

pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<ModelConfig, ModelError> {
    if ckpt.metadata.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
        return Err(ModelError::CheckpointMismatch(format!("metadata format is not {MODEL_FORMAT}")));
    }
    let model = ckpt.metadata.get("model").cloned().unwrap_or_default();
    serde_json::from_value(model).map_err(|e| ModelError::CheckpointMismatch(format!("model description: {e}")))
}

/// A depth network loaded from a checkpoint, built once for one resolution.
#[derive(Debug)]
pub struct Predictor {
    pub config: ModelConfig,
    graph: Graph,
    image: NodeId,
    depth_input: NodeId,
    output: NodeId,
    height: usize,
    width: usize,
}

impl Predictor {
    pub fn new(ckpt: &Checkpoint, height: usize, width: usize) -> Result<Self, ModelError> {
        let config = checkpoint_config(ckpt)?;
        check_resolution(height, width)?;
        let mut g = Graph::new();
        let net = DepthNetwork::new(&mut g, config.encoder, &mut ChaCha8Rng::seed_from_u64(0));
        for &p in &g.params().to_vec() {
            let name = g.name(p).unwrap_or_default().to_string();
            let value =
                ckpt.get(&name).ok_or_else(|| ModelError::CheckpointMismatch(format!("missing parameter {name}")))?;
            if value.shape() != g.value(p)?.shape() {
                return Err(ModelError::CheckpointMismatch(format!(
                    "parameter {name} has shape {:?}, network expects {:?}",
                    value.shape(),
                    g.value(p)?.shape()
                )));
            }
            g.set_value(p, value.clone())?;
        }
        let image = g.input("image", &[1, 3, height, width]);
        let depth_input = g.input("depth_input", &[1, 2, height, width]);
        let output = net.apply(&mut g, image, depth_input)?;
        Ok(Self { config, graph: g, image, depth_input, output, height, width })
    }

    /// Refines a precomputed `[2, H, W]` scaffold input.
    pub fn predict_scaffolded(&mut self, image: &Array, depth_input: &Array) -> Result<DenseDepthMap, ModelError> {
        let (h, w) = (self.height, self.width);
        if image.shape() != [3, h, w] || depth_input.shape() != [2, h, w] {
            return Err(ModelError::Data(format!(
                "expected image [3, {h}, {w}] and depth input [2, {h}, {w}], got {:?} and {:?}",
                image.shape(),
                depth_input.shape()
            )));
        }
        self.graph.set_input(self.image, image.clone().reshaped(&[1, 3, h, w])?)?;
        self.graph.set_input(self.depth_input, depth_input.clone().reshaped(&[1, 2, h, w])?)?;
        let out = self.graph.eval(self.output)?;
        Ok(DenseDepthMap::from_depth(w, h, out.data().to_vec()))
    }

    pub fn predict(&mut self, image: &Array, sparse: &SparseDepthMap) -> Result<DenseDepthMap, ModelError> {
        if (sparse.width(), sparse.height()) != (self.width, self.height) {
            return Err(ModelError::Data(format!(
                "sparse depth is {}×{}, model runs at {}×{}",
                sparse.width(),
                sparse.height(),
                self.width,
                self.height
            )));
        }
        let input = depth_input(sparse)?;
        self.predict_scaffolded(image, &input)
    }
}

/// Scaffolds `sparse` and refines it with the checkpoint's depth network.
/// `image` is `[3, H, W]` in `[0, 1]`.
pub fn infer(ckpt: &Checkpoint, image: &Array, sparse: &SparseDepthMap) -> Result<DenseDepthMap, ModelError> {
    let (h, w) = match image.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(ModelError::Data(format!("image must be [3, H, W], got {s:?}"))),
    };
    Predictor::new(ckpt, h, w)?.predict(image, sparse)
}
