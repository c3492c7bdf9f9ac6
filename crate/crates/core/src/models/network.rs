//! Graph builders for the depth completion and pose networks.

use std::collections::HashMap;

use rand::Rng;

use super::arch::{ArchitectureTable, LayerKind, LayerSpec, DECODER, POSE_NETWORK};
use super::{EncoderVariant, PoseParameterization};
use crate::diffgraph::{Array, Graph, GraphError, NodeId};
use crate::losses::PoseNodes;

/// Negative slope of the hidden-layer activation.
pub const LEAKY_SLOPE: f64 = 0.1;
/// Predicted depth range in meters.
pub const MIN_DEPTH: f64 = 0.1;
pub const MAX_DEPTH: f64 = 100.0;
/// Scale applied to the initial weights of the pose output layer.
pub const POSE_OUTPUT_INIT_SCALE: f64 = 0.01;

pub fn weight_name(prefix: &str, layer: &str) -> String {
    format!("{prefix}.{layer}.weight")
}

pub fn bias_name(prefix: &str, layer: &str) -> String {
    format!("{prefix}.{layer}.bias")
}

/// He-uniform weights (`U(±√(6/fan_in))`, `fan_in = cin·k·k`) and zero bias.
fn init_layer(spec: &LayerSpec, rng: &mut impl Rng, scale: f64) -> (Array, Array) {
    let shape = spec.weight_shape().expect("layer has parameters");
    let bound = (6.0 / (spec.in_channels * spec.kernel * spec.kernel) as f64).sqrt();
    let w = Array::from_fn(&shape, |_| scale * rng.random_range(-bound..bound));
    (w, Array::zeros(&[spec.out_channels]))
}

/// Parameters of one table, registered on a graph.
#[derive(Debug, Clone)]
struct LayerParams {
    table: &'static ArchitectureTable,
    params: HashMap<&'static str, (NodeId, NodeId)>,
}

impl LayerParams {
    fn new(
        g: &mut Graph,
        prefix: &str,
        table: &'static ArchitectureTable,
        rng: &mut impl Rng,
        scale: impl Fn(&LayerSpec) -> f64,
    ) -> Self {
        let mut params = HashMap::new();
        for spec in table.layers.iter().filter(|l| l.has_params()) {
            let (w, b) = init_layer(spec, rng, scale(spec));
            let w = g.param(&weight_name(prefix, spec.name), w);
            let b = g.param(&bias_name(prefix, spec.name), b);
            params.insert(spec.name, (w, b));
        }
        Self { table, params }
    }

    /// Applies every row in order, reading and extending `nodes`.
    fn apply(&self, g: &mut Graph, nodes: &mut HashMap<&'static str, NodeId>) -> Result<(), GraphError> {
        for spec in self.table.layers {
            let inputs = spec
                .inputs
                .iter()
                .map(|n| {
                    nodes.get(n).copied().ok_or_else(|| GraphError::ShapeMismatch(format!("unknown layer input {n}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut out = match spec.kind {
                LayerKind::Conv => {
                    let (w, b) = self.params[spec.name];
                    g.conv2d(inputs[0], w, b, spec.stride)?
                }
                LayerKind::Deconv => {
                    let (w, b) = self.params[spec.name];
                    g.conv_transpose2d(inputs[0], w, b, spec.stride)?
                }
                LayerKind::Concat => g.concat(&inputs, 1)?,
                LayerKind::Upsample => g.upsample2x(inputs[0])?,
            };
            if spec.activated {
                out = g.leaky_relu(out, LEAKY_SLOPE);
            }
            nodes.insert(spec.name, out);
        }
        Ok(())
    }
}

/// Late-fusion encoder (image and depth branches) plus the shared decoder.
///
/// Inputs: image `[B, 3, H, W]` in `[0, 1]`, depth input `[B, 2, H, W]`
/// (scaffold depth in meters and its validity). Output: depth
/// `[B, 1, H, W]` in `[MIN_DEPTH, MAX_DEPTH]`.
#[derive(Debug, Clone)]
pub struct DepthNetwork {
    pub variant: EncoderVariant,
    encoder: LayerParams,
    decoder: LayerParams,
}

impl DepthNetwork {
    pub const PREFIX: &'static str = "depth";

    pub fn new(g: &mut Graph, variant: EncoderVariant, rng: &mut impl Rng) -> Self {
        let encoder = LayerParams::new(g, Self::PREFIX, variant.table(), rng, |_| 1.0);
        let decoder = LayerParams::new(g, Self::PREFIX, &DECODER, rng, |_| 1.0);
        Self { variant, encoder, decoder }
    }

    /// Names and shapes of every parameter, in creation order.
    pub fn parameter_shapes(variant: EncoderVariant) -> Vec<(String, Vec<usize>)> {
        table_parameter_shapes(Self::PREFIX, &[variant.table(), &DECODER])
    }

    pub fn apply(&self, g: &mut Graph, image: NodeId, depth_input: NodeId) -> Result<NodeId, GraphError> {
        let mut nodes = HashMap::from([("image", image), ("depth", depth_input)]);
        self.encoder.apply(g, &mut nodes)?;
        self.decoder.apply(g, &mut nodes)?;
        let raw = nodes["output"];
        let positive = g.softplus(raw);
        Ok(g.clamp(positive, MIN_DEPTH, MAX_DEPTH))
    }
}

/// Regresses the motion between two images.
///
/// `apply(a, b)` returns the pose that maps points from camera `a` into
/// camera `b`; swapping the arguments estimates the reverse motion.
#[derive(Debug, Clone)]
pub struct PoseNetwork {
    pub parameterization: PoseParameterization,
    layers: LayerParams,
}

impl PoseNetwork {
    pub const PREFIX: &'static str = "pose";

    pub fn new(g: &mut Graph, parameterization: PoseParameterization, rng: &mut impl Rng) -> Self {
        let layers = LayerParams::new(g, Self::PREFIX, &POSE_NETWORK, rng, |l| {
            if l.activated {
                1.0
            } else {
                POSE_OUTPUT_INIT_SCALE
            }
        });
        Self { parameterization, layers }
    }

    pub fn parameter_shapes() -> Vec<(String, Vec<usize>)> {
        table_parameter_shapes(Self::PREFIX, &[&POSE_NETWORK])
    }

    /// Raw 6-vector per batch element: rotation parameters then translation.
    pub fn apply_raw(&self, g: &mut Graph, image_a: NodeId, image_b: NodeId) -> Result<NodeId, GraphError> {
        let pair = g.concat(&[image_a, image_b], 1)?;
        let mut nodes = HashMap::from([("image_pair", pair)]);
        self.layers.apply(g, &mut nodes)?;
        g.spatial_mean(nodes["output"])
    }

    pub fn apply(&self, g: &mut Graph, image_a: NodeId, image_b: NodeId) -> Result<PoseNodes, GraphError> {
        let raw = self.apply_raw(g, image_a, image_b)?;
        let angles = g.slice(raw, 1, 0, 3)?;
        let translation = g.slice(raw, 1, 3, 6)?;
        let rotation = match self.parameterization {
            PoseParameterization::Exponential => g.exp_so3(angles)?,
            PoseParameterization::Euler => g.euler_to_rotation(angles)?,
        };
        Ok(PoseNodes { rotation, translation })
    }
}

fn table_parameter_shapes(prefix: &str, tables: &[&ArchitectureTable]) -> Vec<(String, Vec<usize>)> {
    tables
        .iter()
        .flat_map(|t| t.layers.iter())
        .filter_map(|l| l.weight_shape().map(|s| (l, s)))
        .flat_map(|(l, s)| {
            [(weight_name(prefix, l.name), s.to_vec()), (bias_name(prefix, l.name), vec![l.out_channels])]
        })
        .collect()
}
