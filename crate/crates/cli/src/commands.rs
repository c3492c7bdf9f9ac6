use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use sdc::dataio::{
    generate_synthetic, read_depth_png, read_intrinsics, read_rgb_png, read_sparse, write_depth_png,
    write_depth_preview, write_mask_png, DatasetManifest, SceneConfig,
};
use sdc::diffgraph::checkpoint::Checkpoint;
use sdc::losses::LossWeights;
use sdc::metrics::{ate, ate_5f, depth_errors, error_vs_distance, rpe, rre, Trajectory};
use sdc::models::{ModelError, TrainConfig, TrainingSet};
use sdc::parallel::parallel_map;
use sdc::scaffold::{scaffold as build_scaffold, DenseDepthMap, SparseDepthMap};
use serde_json::{json, Value};

use crate::{usage, EvalDepthArgs, EvalPoseArgs, Failure, InferArgs, ScaffoldArgs, SynthArgs, TrainArgs};

fn positive(name: &str, v: usize) -> Result<(), Failure> {
    if v == 0 {
        return Err(usage(format!("--{name} must be positive")));
    }
    Ok(())
}

/// Prints the report on stdout and optionally writes it to `path`.
pub fn emit_json(report: &Value, path: Option<&Path>) -> Result<(), Failure> {
    println!("{}", serde_json::to_string(report)?);
    if let Some(p) = path {
        let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        serde_json::to_writer_pretty(&mut w, report)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Scaffold with the mean fill marked valid, as evaluated and as fed to the
/// network.
fn filled_scaffold(sparse: &SparseDepthMap) -> anyhow::Result<(DenseDepthMap, Vec<bool>)> {
    let map = build_scaffold(sparse).context("scaffolding")?;
    let hull = map.validity.clone();
    Ok((DenseDepthMap::from_depth(map.width, map.height, map.depth), hull))
}

pub fn scaffold(a: ScaffoldArgs) -> Result<(), Failure> {
    positive("workers", a.workers)?;
    match (&a.sparse, &a.manifest) {
        (Some(sparse_path), None) => {
            let out = a.out.as_ref().ok_or_else(|| usage("--out is required with --sparse"))?;
            let sparse = read_sparse(sparse_path)?;
            if let Some(k) = &a.intrinsics {
                let k = read_intrinsics(k)?;
                if (k.width, k.height) != (sparse.width(), sparse.height()) {
                    return Err(Failure::Data(anyhow::anyhow!(
                        "intrinsics describe {}×{} but sparse depth is {}×{}",
                        k.width,
                        k.height,
                        sparse.width(),
                        sparse.height()
                    )));
                }
            }
            let (map, hull) = filled_scaffold(&sparse)?;
            write_depth_png(out, &map)?;
            if let Some(m) = &a.hull_mask {
                write_mask_png(m, map.width, map.height, &hull)?;
            }
            eprintln!("scaffolded {} points into {}", sparse.points().len(), out.display());
            Ok(())
        }
        (None, Some(manifest)) => {
            let dir = a.out_dir.as_ref().ok_or_else(|| usage("--out-dir is required with --manifest"))?;
            let m = DatasetManifest::load(manifest)?;
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let indices: Vec<usize> = (0..m.len()).collect();
            let results = parallel_map(&indices, a.workers, |&i| -> anyhow::Result<()> {
                let sparse = read_sparse(m.resolve(&m.records[i].sparse_depth))?;
                let (map, hull) = filled_scaffold(&sparse)?;
                write_depth_png(dir.join(format!("{i:05}_scaffold.png")), &map)?;
                if a.hull_mask.is_some() {
                    write_mask_png(dir.join(format!("{i:05}_hull.png")), map.width, map.height, &hull)?;
                }
                Ok(())
            });
            for (i, r) in results.into_iter().enumerate() {
                r.with_context(|| format!("record {i}"))?;
            }
            eprintln!("scaffolded {} records into {}", m.len(), dir.display());
            Ok(())
        }
        _ => Err(usage("give either --sparse with --out, or --manifest with --out-dir")),
    }
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    positive("count", a.count)?;
    positive("workers", a.workers)?;
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SceneConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None if a.occlusion_free => SceneConfig::occlusion_free(),
        None => SceneConfig::default(),
    };
    if a.occlusion_free {
        cfg.max_boxes = 0;
    }
    if let Some(w) = a.width {
        cfg.width = w;
    }
    if let Some(h) = a.height {
        cfg.height = h;
    }
    if let Some(d) = a.density {
        cfg.sparse_density = d;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = generate_synthetic(&cfg, a.count, a.seed, &a.out_dir, a.workers)?;
    eprintln!("wrote {} triplets to {}", manifest.len(), a.out_dir.join("manifest.jsonl").display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(p), _) => TrainConfig::load(p).map_err(|e| usage(e.to_string()))?,
        (None, Some(name)) => TrainConfig::preset(name).ok_or_else(|| usage(format!("unknown preset {name:?}")))?,
        (None, None) => TrainConfig::desk(),
    };
    if let Some(w) = &a.weights {
        cfg.weights = LossWeights::load(w).map_err(|e| usage(format!("{}: {e}", w.display())))?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.max_steps {
        cfg.max_steps = Some(n);
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    positive("workers", a.workers)?;
    let cfg = train_config(&a)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let set = TrainingSet::from_manifest(&manifest, a.workers)?;
    eprintln!("training {:?} on {} triplets ({}×{})", cfg.encoder, set.len(), set.width(), set.height());
    let mut log = match &a.log {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let mut log_error = None;
    let result = sdc::models::train(&set, &cfg, |r| {
        if a.progress > 0 && r.step % a.progress == 0 {
            eprintln!(
                "step {:>5} epoch {:>3} lr {:.2e} loss {:.5} (ph {:.5} sz {:.5} pc {:.5} sm {:.5})",
                r.step, r.epoch, r.learning_rate, r.total, r.photometric, r.sparse, r.pose, r.smoothness
            );
        }
        if let Some(w) = log.as_mut() {
            if let Err(e) =
                serde_json::to_writer(&mut *w, r).map_err(anyhow::Error::from).and_then(|_| Ok(writeln!(w)?))
            {
                log_error.get_or_insert(e);
            }
        }
    });
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    if let Some(e) = log_error {
        return Err(e.context("writing the training log").into());
    }
    let report = match result {
        Ok(r) => r,
        Err(ModelError::DivergedLoss { step, dump }) => {
            let path = a.dump.clone().unwrap_or_else(|| PathBuf::from(format!("{}.diverged.json", a.out.display())));
            std::fs::write(&path, dump).with_context(|| format!("writing {}", path.display()))?;
            return Err(Failure::Data(anyhow::anyhow!(
                "loss diverged at step {step}; diagnostics in {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    report.checkpoint.save(&a.out)?;
    if let (Some(first), Some(last)) = (report.log.first(), report.log.last()) {
        eprintln!(
            "{} steps, loss {:.5} -> {:.5}; wrote {}",
            report.log.len(),
            first.total,
            last.total,
            a.out.display()
        );
    }
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let image = read_rgb_png(&a.image)?;
    let sparse = read_sparse(&a.sparse)?;
    let pred = sdc::models::infer(&ckpt, &image, &sparse)?;
    write_depth_png(&a.out, &pred)?;
    if let Some(p) = &a.preview {
        let max = pred.depth.iter().copied().fold(0.0, f64::max);
        write_depth_preview(p, &pred, max)?;
    }
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn parse_edges(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| usage(format!("bad bin edge {s:?}")))).collect()
}

pub fn eval_depth(a: EvalDepthArgs) -> Result<(), Failure> {
    let edges = a.bins.as_deref().map(parse_edges).transpose()?;
    let pred = read_depth_png(&a.pred)?;
    let gt = read_depth_png(&a.gt)?;
    let report = depth_errors(&pred, &gt)?;
    let mut json = serde_json::to_value(report)?;
    eprintln!("{:>12} {:>12} {:>14} {:>14} {:>9}", "MAE [mm]", "RMSE [mm]", "iMAE [1/km]", "iRMSE [1/km]", "pixels");
    eprintln!(
        "{:>12.3} {:>12.3} {:>14.3} {:>14.3} {:>9}",
        report.mae_mm, report.rmse_mm, report.imae_per_km, report.irmse_per_km, report.count
    );
    if let Some(edges) = edges {
        let bins = error_vs_distance(&pred, &gt, &edges).map_err(|e| match e {
            sdc::metrics::MetricsError::BadBins => usage("--bins must be at least two increasing edges"),
            e => e.into(),
        })?;
        eprintln!("{:>16} {:>9} {:>14}", "distance [m]", "pixels", "mean |e| [m]");
        for b in &bins {
            let mean = b.mean_abs_error.map_or("-".to_string(), |m| format!("{m:.4}"));
            eprintln!("{:>16} {:>9} {:>14}", format!("[{}, {})", b.lo, b.hi), b.count, mean);
        }
        json["bins"] = serde_json::to_value(bins)?;
    }
    emit_json(&json, a.json.as_deref())
}

pub fn eval_pose(a: EvalPoseArgs) -> Result<(), Failure> {
    positive("delta", a.delta)?;
    let est = Trajectory::load(&a.est)?;
    let gt = Trajectory::load(&a.gt)?;
    let ate_m = ate(&est, &gt)?;
    let ate5f_m = if est.len() >= 5 { Some(ate_5f(&est, &gt, a.scaled_ate5f)?) } else { None };
    let rpe_m = rpe(&est, &gt, a.delta)?;
    let rre_deg = rre(&est, &gt, a.delta)?.to_degrees();
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    eprintln!("{:>12} {:>12} {:>12} {:>12}", "ATE [m]", "ATE-5F [m]", "RPE [m]", "RRE [deg]");
    eprintln!("{:>12.6} {:>12} {:>12.6} {:>12.6}", ate_m, fmt(ate5f_m), rpe_m, rre_deg);
    let json = json!({
        "ate_m": ate_m,
        "ate5f_m": ate5f_m,
        "rpe_m": rpe_m,
        "rre_deg": rre_deg,
        "frames": est.len(),
        "delta": a.delta,
        "scaled_ate5f": a.scaled_ate5f,
    });
    emit_json(&json, a.json.as_deref())
}
