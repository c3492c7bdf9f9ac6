//! Ray-cast synthetic scenes with exact depth and camera motion.
//!
//! A scene is a closed, axis-aligned room (floor, ceiling, four walls) with
//! optional boxes standing on the floor. Every surface carries a smooth
//! procedural texture that depends only on the 3-D surface point, so colors
//! are view independent (Lambertian) and warping a neighbour frame with the
//! true depth and pose reproduces the middle frame up to resampling. Without
//! boxes the room is convex and no surface is ever occluded.
//!
//! Coordinates: camera x right, y down, z forward; the world uses the same
//! axes with the floor at `y = floor_y`.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestRecord, PoseRecord};
use super::{subsample_sparse, write_depth_png, write_intrinsics, write_rgb_png, write_sparse, DataError};
use crate::diffgraph::Array;
use crate::geometry::{exp_se3, CameraIntrinsics, Pose, Twist, Vec3};
use crate::losses::FrameTriplet;
use crate::scaffold::{DenseDepthMap, SparseDepthMap, SparsePoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Focal length as a fraction of the image width.
    pub focal_fraction: f64,
    /// Room extent: `x ∈ [−half_width, half_width]`, `y ∈ [ceiling_y, floor_y]`,
    /// `z ∈ [front_z, back_z]`, meters.
    pub half_width: f64,
    pub floor_y: f64,
    pub ceiling_y: f64,
    pub front_z: f64,
    pub back_z: f64,
    /// Upper bound on boxes per scene; each scene draws `0..=max_boxes`.
    pub max_boxes: usize,
    /// Typical per-frame camera translation (m) and rotation (rad).
    pub step_translation: f64,
    pub step_rotation: f64,
    /// Texture spatial frequency range, cycles per meter.
    pub min_frequency: f64,
    pub max_frequency: f64,
    /// Fraction of pixels kept as sparse depth.
    pub sparse_density: f64,
    /// Standard deviation of additive sparse-depth noise, meters.
    pub depth_noise: f64,
    /// Standard deviation of additive image noise.
    pub image_noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            focal_fraction: 0.8,
            half_width: 2.5,
            floor_y: 1.2,
            ceiling_y: -1.6,
            front_z: -2.0,
            back_z: 4.0,
            max_boxes: 3,
            step_translation: 0.12,
            step_rotation: 0.03,
            min_frequency: 0.1,
            max_frequency: 0.25,
            sparse_density: 0.02,
            depth_noise: 0.0,
            image_noise: 0.0,
        }
    }
}

impl SceneConfig {
    /// Convex room without boxes: nothing is ever occluded.
    pub fn occlusion_free() -> Self {
        Self { max_boxes: 0, ..Self::default() }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let f = self.focal_fraction * self.width as f64;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidArgument(format!("scene: {m}")));
        if self.width < 4 || self.height < 4 {
            return bad("image must be at least 4×4");
        }
        if !(self.focal_fraction > 0.0) {
            return bad("focal fraction must be positive");
        }
        if !(self.half_width > 1.0
            && self.floor_y > 0.5
            && self.ceiling_y < -0.5
            && self.front_z < -1.0
            && self.back_z > 3.0)
        {
            return bad("room must enclose the camera region with margin");
        }
        if !(self.min_frequency > 0.0 && self.max_frequency >= self.min_frequency) {
            return bad("texture frequency range is invalid");
        }
        if !(self.sparse_density > 0.0 && self.sparse_density <= 1.0) {
            return bad("sparse density must lie in (0, 1]");
        }
        if self.step_translation < 0.0 || self.step_rotation < 0.0 || self.depth_noise < 0.0 || self.image_noise < 0.0 {
            return bad("motion and noise magnitudes must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Wave {
    frequency: Vec3,
    phase: f64,
    amplitude: f64,
}

#[derive(Debug, Clone)]
struct Texture {
    base: [f64; 3],
    waves: [Vec<Wave>; 3],
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Self {
        let channel = |rng: &mut ChaCha8Rng| {
            (0..3)
                .map(|_| {
                    let dir = Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let f = rng.random_range(cfg.min_frequency..=cfg.max_frequency);
                    Wave {
                        frequency: dir.normalize() * (f * TAU),
                        phase: rng.random_range(0.0..TAU),
                        amplitude: rng.random_range(0.05..0.12),
                    }
                })
                .collect()
        };
        let base = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)];
        Self { base, waves: [channel(rng), channel(rng), channel(rng)] }
    }

    fn color(&self, p: &Vec3) -> [f64; 3] {
        std::array::from_fn(|c| {
            let v: f64 = self.waves[c].iter().map(|w| w.amplitude * (w.frequency.dot(p) + w.phase).sin()).sum();
            (self.base[c] + v).clamp(0.0, 1.0)
        })
    }
}

#[derive(Debug, Clone)]
struct BoxShape {
    min: Vec3,
    max: Vec3,
}

/// Geometry and appearance of one scene.
#[derive(Debug, Clone)]
pub struct Scene {
    config: SceneConfig,
    boxes: Vec<BoxShape>,
    /// One texture shared by the room faces followed by one per box. The
    /// room texture is a function of the world point, so color stays
    /// continuous across the room's corners.
    textures: Vec<Texture>,
}

impl Scene {
    pub fn random(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Self {
        let n_boxes = if config.max_boxes == 0 { 0 } else { rng.random_range(0..=config.max_boxes) };
        let boxes = (0..n_boxes)
            .map(|_| {
                let sx = rng.random_range(0.4..1.2);
                let sy = rng.random_range(0.4..1.4);
                let sz = rng.random_range(0.4..1.0);
                let x = rng.random_range(-config.half_width + 0.2..config.half_width - 0.2 - sx);
                let z = rng.random_range(config.front_z + 3.5..(config.back_z - 0.2 - sz).max(config.front_z + 3.6));
                BoxShape { min: Vec3::new(x, config.floor_y - sy, z), max: Vec3::new(x + sx, config.floor_y, z + sz) }
            })
            .collect();
        let textures = (0..1 + n_boxes).map(|_| Texture::random(rng, config)).collect();
        Self { config: config.clone(), boxes, textures }
    }

    /// Distance along `dir` to the first surface and that surface's index.
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
        let c = &self.config;
        let mut best: Option<(f64, usize)> = None;
        let mut consider = |t: f64, id: usize| {
            if t > 1e-9 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, id));
            }
        };
        let planes =
            [(1, c.floor_y), (1, c.ceiling_y), (0, -c.half_width), (0, c.half_width), (2, c.front_z), (2, c.back_z)];
        for &(axis, value) in &planes {
            if dir[axis] != 0.0 {
                consider((value - origin[axis]) / dir[axis], 0);
            }
        }
        for (k, b) in self.boxes.iter().enumerate() {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            for a in 0..3 {
                if dir[a] == 0.0 {
                    if origin[a] < b.min[a] || origin[a] > b.max[a] {
                        t0 = f64::INFINITY;
                    }
                    continue;
                }
                let (ta, tb) = ((b.min[a] - origin[a]) / dir[a], (b.max[a] - origin[a]) / dir[a]);
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
            if t0 <= t1 && t0 > 0.0 {
                consider(t0, 1 + k);
            }
        }
        best
    }

    /// Renders RGB (`[3, H, W]`) and depth for a camera with
    /// camera-to-world pose `camera`.
    pub fn render(&self, camera: &Pose) -> (Array, DenseDepthMap) {
        let k = self.config.intrinsics();
        let (w, h) = (k.width, k.height);
        let mut image = Array::zeros(&[3, h, w]);
        let mut depth = vec![0.0; w * h];
        let origin = camera.translation;
        for v in 0..h {
            for u in 0..w {
                // camera ray with unit z so the hit distance is the depth
                let ray = Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                let dir = camera.rotation.0 * ray;
                let Some((t, id)) = self.intersect(&origin, &dir) else { continue };
                let p = origin + dir * t;
                let color = self.textures[id].color(&p);
                let idx = v * w + u;
                depth[idx] = t;
                for (c, value) in color.into_iter().enumerate() {
                    image.data_mut()[c * w * h + idx] = value;
                }
            }
        }
        (image, DenseDepthMap::from_depth(w, h, depth))
    }
}

/// One rendered triplet with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticTriplet {
    pub triplet: FrameTriplet,
    pub ground_truth: DenseDepthMap,
    /// Motion from the middle camera to the previous one.
    pub pose_prev: Pose,
    /// Motion from the middle camera to the next one.
    pub pose_next: Pose,
    /// Camera-to-world poses of the previous, middle and next frames.
    pub cameras: [Pose; 3],
}

fn random_twist(rng: &mut ChaCha8Rng, translation: f64, rotation: f64) -> Twist {
    let mut unit = || {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 1e-6 {
            v.normalize()
        } else {
            Vec3::z()
        }
    };
    let w = unit() * rotation;
    let t = unit() * translation;
    Twist::new(w, t)
}

fn scaled(t: &Twist, s: f64) -> Twist {
    Twist::new(t.rotational * s, t.translational * s)
}

fn add_twists(a: &Twist, b: &Twist) -> Twist {
    Twist::new(a.rotational + b.rotational, a.translational + b.translational)
}

fn render_triplet(cfg: &SceneConfig, seed: u64, index: usize) -> Result<SyntheticTriplet, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let scene = Scene::random(cfg, &mut rng);

    let position = Vec3::new(
        rng.random_range(-0.3 * cfg.half_width..0.3 * cfg.half_width),
        rng.random_range(-0.2..0.2),
        rng.random_range(cfg.front_z + 1.0..cfg.front_z + 2.5),
    );
    let orientation =
        Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.35..0.35), rng.random_range(-0.05..0.05));
    let middle = exp_se3(&Twist::new(orientation, Vec3::zeros()));
    let middle = Pose::new(middle.rotation, position);

    let step_t = cfg.step_translation * rng.random_range(0.5..1.0);
    let step_r = cfg.step_rotation * rng.random_range(0.0..1.0);
    let forward = random_twist(&mut rng, step_t, step_r);
    let jitter = random_twist(&mut rng, 0.2 * cfg.step_translation, 0.2 * cfg.step_rotation);
    let backward = scaled(&add_twists(&forward, &jitter), -1.0);
    let next = middle.compose(&exp_se3(&forward));
    let prev = middle.compose(&exp_se3(&backward));

    let (image_curr, ground_truth) = scene.render(&middle);
    let (image_prev, _) = scene.render(&prev);
    let (image_next, _) = scene.render(&next);
    let (image_prev, image_curr, image_next) = if cfg.image_noise > 0.0 {
        let noise = Normal::new(0.0, cfg.image_noise).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
        let mut add = |mut a: Array| {
            for v in a.data_mut() {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            a
        };
        (add(image_prev), add(image_curr), add(image_next))
    } else {
        (image_prev, image_curr, image_next)
    };

    let sparse_seed = rng.random::<u64>();
    let mut sparse = subsample_sparse(&ground_truth, cfg.sparse_density, sparse_seed)?;
    if cfg.depth_noise > 0.0 {
        let noise = Normal::new(0.0, cfg.depth_noise).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
        let points: Vec<SparsePoint> =
            sparse.points().iter().map(|p| SparsePoint { z: (p.z + noise.sample(&mut rng)).max(0.05), ..*p }).collect();
        sparse = SparseDepthMap::new(cfg.width, cfg.height, points)
            .map_err(|e| DataError::InvalidArgument(e.to_string()))?;
    }

    Ok(SyntheticTriplet {
        triplet: FrameTriplet { image_prev, image_curr, image_next, sparse, intrinsics: cfg.intrinsics() },
        ground_truth,
        pose_prev: prev.inverse().compose(&middle),
        pose_next: next.inverse().compose(&middle),
        cameras: [prev, middle, next],
    })
}

/// Renders `n` independent triplets. Triplet `i` depends only on `(seed, i)`,
/// so results are identical for any worker count.
pub fn generate_triplets(
    cfg: &SceneConfig,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<SyntheticTriplet>, DataError> {
    cfg.validate()?;
    let workers = workers.clamp(1, n.max(1));
    let mut slots: Vec<Option<Result<SyntheticTriplet, DataError>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        for (w, chunk) in slots.chunks_mut(n.div_ceil(workers).max(1)).enumerate() {
            let start = w * n.div_ceil(workers).max(1);
            s.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(render_triplet(cfg, seed, start + k));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot rendered")).collect()
}

/// Renders `n` triplets into `out_dir` and writes `manifest.jsonl` there.
pub fn generate_synthetic(
    cfg: &SceneConfig,
    n: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
    workers: usize,
) -> Result<DatasetManifest, DataError> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let triplets = generate_triplets(cfg, n, seed, workers)?;
    write_intrinsics(dir.join("intrinsics.json"), &cfg.intrinsics())?;
    let mut records = Vec::with_capacity(n);
    for (i, t) in triplets.iter().enumerate() {
        let name = |suffix: &str| format!("{i:05}_{suffix}");
        write_rgb_png(dir.join(name("prev.png")), &t.triplet.image_prev)?;
        write_rgb_png(dir.join(name("curr.png")), &t.triplet.image_curr)?;
        write_rgb_png(dir.join(name("next.png")), &t.triplet.image_next)?;
        write_sparse(dir.join(name("sparse.json")), &t.triplet.sparse)?;
        write_depth_png(dir.join(name("gt.png")), &t.ground_truth)?;
        records.push(ManifestRecord {
            image_prev: name("prev.png"),
            image_curr: name("curr.png"),
            image_next: name("next.png"),
            sparse_depth: name("sparse.json"),
            ground_truth: Some(name("gt.png")),
            intrinsics: "intrinsics.json".into(),
            pose_prev: Some(PoseRecord::from(&t.pose_prev)),
            pose_next: Some(PoseRecord::from(&t.pose_next)),
        });
    }
    let manifest = DatasetManifest::new(dir, records);
    manifest.save(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
