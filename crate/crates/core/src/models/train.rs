//! Training on the unsupervised objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::infer::{depth_input, model_checkpoint};
use super::network::{DepthNetwork, PoseNetwork};
use super::optim::{Adam, LrSchedule};
use super::{check_resolution, parallel_map, EncoderVariant, ModelConfig, ModelError, PoseParameterization};
use crate::dataio::DatasetManifest;
use crate::diffgraph::checkpoint::Checkpoint;
use crate::diffgraph::{Array, Graph, GraphError, NodeId};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::losses::{
    sparse_arrays, total_loss, FrameTriplet, LossTerms, LossWeights, ObjectiveInputs, ObjectiveOptions, PoseNodes,
};

/// Where the relative poses of the photometric term come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseSource {
    /// The pose network, with the forward/backward consistency term.
    Network,
    /// Poses stored with each sample (e.g. from a VIO/SLAM system). The pose
    /// network and the consistency term are not used.
    Given,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub encoder: EncoderVariant,
    pub pose_parameterization: PoseParameterization,
    pub pose_source: PoseSource,
    pub weights: LossWeights,
    pub rotation_only_pose_consistency: bool,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early after this many optimizer steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub learning_rate: f64,
    /// Epochs at which the learning rate halves.
    pub lr_milestones: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Outdoor driving schedule: 30 epochs, halving at 18 and 24.
    pub fn kitti() -> Self {
        Self {
            encoder: EncoderVariant::Vgg11,
            pose_parameterization: PoseParameterization::Exponential,
            pose_source: PoseSource::Network,
            weights: LossWeights::kitti(),
            rotation_only_pose_consistency: false,
            batch_size: 8,
            epochs: 30,
            max_steps: None,
            learning_rate: 1.2e-4,
            lr_milestones: vec![18, 24],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }

    /// Visual-inertial schedule: 10 epochs, halving at 6 and 8.
    pub fn void() -> Self {
        Self {
            weights: LossWeights::void(),
            epochs: 10,
            learning_rate: 1e-4,
            lr_milestones: vec![6, 8],
            ..Self::kitti()
        }
    }

    /// Small synthetic runs on one CPU: VGG8, batch 2, at most 2000 steps,
    /// given poses.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderVariant::Vgg8,
            pose_source: PoseSource::Given,
            weights: LossWeights::void(),
            batch_size: 2,
            epochs: 80,
            max_steps: Some(2000),
            learning_rate: 2e-4,
            lr_milestones: vec![48, 64],
            ..Self::kitti()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "kitti" => Some(Self::kitti()),
            "void" => Some(Self::void()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.weights.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        let bad = |what: &str| Err(ModelError::Config(what.to_string()));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }

    /// TOML with an optional `preset = "kitti" | "void" | "desk"` (default
    /// desk); any other key overrides the preset. A `[weights]` table may
    /// override single weights.
    pub fn from_toml_str(s: &str) -> Result<Self, ModelError> {
        let config_err = |e: &dyn std::fmt::Display| ModelError::Config(e.to_string());
        let mut overrides: toml::Table = toml::from_str(s).map_err(|e| config_err(&e))?;
        let base = match overrides.remove("preset") {
            None => Self::desk(),
            Some(toml::Value::String(p)) => {
                Self::preset(&p).ok_or_else(|| ModelError::Config(format!("unknown preset {p:?}")))?
            }
            Some(v) => return Err(ModelError::Config(format!("preset must be a string, got {v}"))),
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| config_err(&e))?;
        merge(&mut merged, overrides);
        let cfg: Self = merged.try_into().map_err(|e| config_err(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn model_config(&self, height: usize, width: usize) -> ModelConfig {
        ModelConfig::new(self.encoder, self.pose_parameterization, height, width)
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// One preprocessed triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `[3, H, W]` images.
    pub image_prev: Array,
    pub image_curr: Array,
    pub image_next: Array,
    /// `[2, H, W]` scaffold depth and validity.
    pub depth_input: Array,
    /// `[1, H, W]` sparse depth and its support.
    pub sparse_depth: Array,
    pub sparse_mask: Array,
    /// Motion from the current camera into the previous / next one.
    pub pose_prev: Option<Pose>,
    pub pose_next: Option<Pose>,
}

impl TrainingSample {
    pub fn new(triplet: &FrameTriplet, pose_prev: Option<Pose>, pose_next: Option<Pose>) -> Result<Self, ModelError> {
        triplet.validate().map_err(|e| ModelError::Data(e.to_string()))?;
        let (h, w) = (triplet.height(), triplet.width());
        let (z, m) = sparse_arrays(&triplet.sparse);
        Ok(Self {
            image_prev: triplet.image_prev.clone(),
            image_curr: triplet.image_curr.clone(),
            image_next: triplet.image_next.clone(),
            depth_input: depth_input(&triplet.sparse)?,
            sparse_depth: z.reshaped(&[1, h, w])?,
            sparse_mask: m.reshaped(&[1, h, w])?,
            pose_prev,
            pose_next,
        })
    }
}

/// Samples sharing one resolution and one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub intrinsics: CameraIntrinsics,
    pub samples: Vec<TrainingSample>,
}

impl TrainingSet {
    /// Scaffolds every triplet on up to `workers` threads. The result does
    /// not depend on `workers`.
    pub fn from_triplets(
        items: &[(FrameTriplet, Option<Pose>, Option<Pose>)],
        workers: usize,
    ) -> Result<Self, ModelError> {
        let first = items.first().ok_or_else(|| ModelError::Data("no training triplets".into()))?;
        let intrinsics = first.0.intrinsics;
        if let Some(i) = items.iter().position(|t| t.0.intrinsics != intrinsics) {
            return Err(ModelError::Data(format!("triplet {i} uses different intrinsics; one camera per set")));
        }
        let samples = parallel_map(items, workers, |(t, p, n)| TrainingSample::new(t, *p, *n))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { intrinsics, samples })
    }

    pub fn from_manifest(manifest: &DatasetManifest, workers: usize) -> Result<Self, ModelError> {
        let indices: Vec<usize> = (0..manifest.len()).collect();
        let items = parallel_map(&indices, workers, |&i| {
            manifest
                .load_record(i)
                .map(|r| (r.triplet, r.pose_prev, r.pose_next))
                .map_err(|e| ModelError::Data(format!("record {i}: {e}")))
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        Self::from_triplets(&items, workers)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }
}

/// Loss values after one optimizer step's forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub photometric: f64,
    pub sparse: f64,
    pub pose: f64,
    pub smoothness: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepRecord>,
}

struct GivenPoseInputs {
    rot_prev: NodeId,
    t_prev: NodeId,
    rot_next: NodeId,
    t_next: NodeId,
}

struct TrainingGraph {
    g: Graph,
    image_t: NodeId,
    image_prev: NodeId,
    image_next: NodeId,
    depth_input: NodeId,
    sparse_depth: NodeId,
    sparse_mask: NodeId,
    given: Option<GivenPoseInputs>,
    terms: LossTerms,
}

impl TrainingGraph {
    fn build(cfg: &TrainConfig, k: &CameraIntrinsics, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let (b, h, w) = (cfg.batch_size, k.height, k.width);
        let mut g = Graph::new();
        let depth_net = DepthNetwork::new(&mut g, cfg.encoder, rng);
        let pose_net = match cfg.pose_source {
            PoseSource::Network => Some(PoseNetwork::new(&mut g, cfg.pose_parameterization, rng)),
            PoseSource::Given => None,
        };
        let image_t = g.input("image_t", &[b, 3, h, w]);
        let image_prev = g.input("image_prev", &[b, 3, h, w]);
        let image_next = g.input("image_next", &[b, 3, h, w]);
        let depth_input = g.input("depth_input", &[b, 2, h, w]);
        let sparse_depth = g.input("sparse_depth", &[b, 1, h, w]);
        let sparse_mask = g.input("sparse_mask", &[b, 1, h, w]);
        let depth = depth_net.apply(&mut g, image_t, depth_input)?;

        let (neighbours, pose_pairs, given) = match &pose_net {
            Some(net) => {
                let fwd_prev = net.apply(&mut g, image_t, image_prev)?;
                let bwd_prev = net.apply(&mut g, image_prev, image_t)?;
                let fwd_next = net.apply(&mut g, image_t, image_next)?;
                let bwd_next = net.apply(&mut g, image_next, image_t)?;
                (
                    vec![(image_prev, fwd_prev), (image_next, fwd_next)],
                    vec![(fwd_prev, bwd_prev), (fwd_next, bwd_next)],
                    None,
                )
            }
            None => {
                let p = GivenPoseInputs {
                    rot_prev: g.input("rotation_prev", &[b, 3, 3]),
                    t_prev: g.input("translation_prev", &[b, 3]),
                    rot_next: g.input("rotation_next", &[b, 3, 3]),
                    t_next: g.input("translation_next", &[b, 3]),
                };
                let prev = PoseNodes { rotation: p.rot_prev, translation: p.t_prev };
                let next = PoseNodes { rotation: p.rot_next, translation: p.t_next };
                (vec![(image_prev, prev), (image_next, next)], Vec::new(), Some(p))
            }
        };
        let inputs = ObjectiveInputs { image_t, neighbours, pose_pairs, depth, sparse_depth, sparse_mask };
        let options = ObjectiveOptions { rotation_only_pose_consistency: cfg.rotation_only_pose_consistency };
        let terms = total_loss(&mut g, &inputs, k, &cfg.weights, options)?;
        Ok(Self { g, image_t, image_prev, image_next, depth_input, sparse_depth, sparse_mask, given, terms })
    }

    fn feed(&mut self, batch: &[&TrainingSample]) -> Result<(), ModelError> {
        let stack = |pick: &dyn Fn(&TrainingSample) -> &Array| -> Result<Array, ModelError> {
            let mut shape = vec![batch.len()];
            shape.extend_from_slice(pick(batch[0]).shape());
            let data = batch.iter().flat_map(|s| pick(s).data().iter().copied()).collect();
            Ok(Array::from_vec(&shape, data)?)
        };
        let feeds = [
            (self.image_t, stack(&|s| &s.image_curr)?),
            (self.image_prev, stack(&|s| &s.image_prev)?),
            (self.image_next, stack(&|s| &s.image_next)?),
            (self.depth_input, stack(&|s| &s.depth_input)?),
            (self.sparse_depth, stack(&|s| &s.sparse_depth)?),
            (self.sparse_mask, stack(&|s| &s.sparse_mask)?),
        ];
        for (id, value) in feeds {
            self.g.set_input(id, value)?;
        }
        if let Some(p) = &self.given {
            let poses = |pick: fn(&TrainingSample) -> Option<Pose>| -> Result<Vec<Pose>, ModelError> {
                batch.iter().map(|s| pick(s).ok_or_else(|| ModelError::Data("sample without poses".into()))).collect()
            };
            for (rot, t, list) in
                [(p.rot_prev, p.t_prev, poses(|s| s.pose_prev)?), (p.rot_next, p.t_next, poses(|s| s.pose_next)?)]
            {
                let r = Array::from_fn(&[list.len(), 3, 3], |i| list[i / 9].rotation.0[((i % 9) / 3, i % 3)]);
                let tr = Array::from_fn(&[list.len(), 3], |i| list[i / 3].translation[i % 3]);
                self.g.set_input(rot, r)?;
                self.g.set_input(t, tr)?;
            }
        }
        Ok(())
    }

    fn outputs(&self) -> Vec<NodeId> {
        let t = &self.terms;
        [t.photometric, t.sparse, t.pose, t.smoothness].into_iter().flatten().chain([t.total]).collect()
    }

    /// Term value, 0 for absent terms and NaN when not evaluated.
    fn value(&self, id: Option<NodeId>) -> f64 {
        id.map_or(0.0, |n| self.g.value(n).map_or(f64::NAN, Array::item))
    }

    fn diagnostic(&self, record: &StepRecord, reason: &str) -> String {
        let params: Vec<_> = self
            .g
            .params()
            .iter()
            .map(|&p| {
                let value = self.g.value(p).expect("param value");
                let max_abs = value.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let grad_norm = self.g.grad(p).map(|gr| gr.data().iter().map(|x| x * x).sum::<f64>().sqrt());
                json!({ "name": self.g.name(p), "max_abs": max_abs, "finite": value.all_finite(), "grad_norm": grad_norm })
            })
            .collect();
        let dump = json!({ "reason": reason, "step": record, "parameters": params });
        serde_json::to_string_pretty(&dump).expect("diagnostic serializes")
    }
}

/// Runs Adam on the objective. `on_step` sees every step's losses.
pub fn train(
    data: &TrainingSet,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainReport, ModelError> {
    cfg.validate()?;
    check_resolution(data.height(), data.width())?;
    if data.len() < cfg.batch_size {
        return Err(ModelError::Data(format!("{} samples cannot fill a batch of {}", data.len(), cfg.batch_size)));
    }
    if cfg.pose_source == PoseSource::Given {
        if let Some(i) = data.samples.iter().position(|s| s.pose_prev.is_none() || s.pose_next.is_none()) {
            return Err(ModelError::Data(format!("sample {i} has no poses but pose_source is given")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tg = TrainingGraph::build(cfg, &data.intrinsics, &mut rng)?;
    let outputs = tg.outputs();
    let schedule = LrSchedule { base: cfg.learning_rate, milestones: cfg.lr_milestones.clone() };
    let mut adam = Adam::new(cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let learning_rate = schedule.rate(epoch);
        for chunk in order.chunks_exact(cfg.batch_size) {
            if log.len() >= max_steps {
                break 'epochs;
            }
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &data.samples[i]).collect();
            tg.feed(&batch)?;
            let forward = tg.g.forward(&outputs);
            let record = StepRecord {
                step: log.len(),
                epoch,
                learning_rate,
                total: tg.value(Some(tg.terms.total)),
                photometric: tg.value(tg.terms.photometric),
                sparse: tg.value(tg.terms.sparse),
                pose: tg.value(tg.terms.pose),
                smoothness: tg.value(tg.terms.smoothness),
            };
            match forward {
                Err(GraphError::EmptyMask(reason)) => {
                    return Err(ModelError::DivergedLoss { step: record.step, dump: tg.diagnostic(&record, &reason) })
                }
                Err(e) => return Err(e.into()),
                Ok(()) if !record.total.is_finite() => {
                    return Err(ModelError::DivergedLoss {
                        step: record.step,
                        dump: tg.diagnostic(&record, "non-finite loss"),
                    })
                }
                Ok(()) => {}
            }
            tg.g.backward(tg.terms.total)?;
            let grads_finite = tg.g.params().iter().all(|&p| tg.g.grad(p).is_none_or(Array::all_finite));
            if !grads_finite {
                return Err(ModelError::DivergedLoss {
                    step: record.step,
                    dump: tg.diagnostic(&record, "non-finite gradient"),
                });
            }
            adam.step(&mut tg.g, learning_rate)?;
            on_step(&record);
            log.push(record);
        }
    }

    let model = cfg.model_config(data.height(), data.width());
    let extra = json!({ "steps": log.len(), "training": cfg });
    Ok(TrainReport { checkpoint: model_checkpoint(&model, tg.g.param_values(), extra), log })
}
