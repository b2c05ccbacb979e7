use std::path::{Path, PathBuf};

use goldisim::annotations::{self, AnnotationRecord, PredictionRecord};
use goldisim::bayesopt::{self, BoSettings, ParamSpace};
use goldisim::compositor::{
    generate_dataset_with, insert_lesion, phantom_normal, AnnotatedDataset, SimParams,
};
use goldisim::curriculum::{self, uniform_draws, PhantomEnv, Strategy};
use goldisim::lesion::make_lesion;
use goldisim::metrics::{froc, MetricSummary};
use goldisim::seed::{mix, mix_all};
use goldisim::training::{self, DetectorParams, EvalSet};
use goldisim::{Error, GrayImage, Result};
use rayon::prelude::*;
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::{Invocation, Manifest};

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(dir: &Path, name: &str, text: &str, outputs: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}

fn parameter_ranges() -> serde_json::Value {
    json!({
        "persistence": SimParams::PERSISTENCE,
        "lacunarity": SimParams::LACUNARITY,
        "res": SimParams::RES,
        "alpha": SimParams::ALPHA,
        "beta": SimParams::BETA,
    })
}

/// Normal images from `run.normals_dir` (`.pgm` / `.png`, sorted by name) or
/// freshly generated phantoms.
pub fn load_normals(cfg: &RunConfig) -> Result<Vec<GrayImage>> {
    match &cfg.run.normals_dir {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| io_err(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                        Some("pgm" | "png")
                    )
                })
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::DataShape(format!(
                    "no .pgm or .png images in {}",
                    dir.display()
                )));
            }
            paths.par_iter().map(|p| GrayImage::read(p)).collect()
        }
        None => (0..cfg.run.phantom_count)
            .into_par_iter()
            .map(|i| {
                phantom_normal(
                    cfg.run.phantom_size,
                    cfg.run.phantom_size,
                    mix_all(cfg.run.seed, &[100, i as u64]),
                )
            })
            .collect(),
    }
}

pub fn cmd_phantom(n: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    let mut outputs = Vec::with_capacity(n);
    let images = (0..n)
        .into_par_iter()
        .map(|i| phantom_normal(size, size, mix(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    for (i, img) in images.iter().enumerate() {
        let name = format!("normal_{i:05}.pgm");
        img.write_pgm(&out.join(&name))?;
        outputs.push(name);
    }
    Manifest::write(out, &Invocation::Phantom { n, size, seed }, None, outputs)?;
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig, uniform: bool, out: &Path) -> Result<()> {
    let normals = load_normals(cfg)?;
    if normals.is_empty() {
        return Err(Error::DataShape("no normal images".into()));
    }
    let seed = mix(cfg.run.seed, 200);
    let phis = if uniform {
        uniform_draws(normals.len(), mix(seed, 0))
    } else {
        vec![cfg.simulator.phi()?; normals.len()]
    };
    let ds = generate_dataset_with(&normals, |i| phis[i], cfg.run.lesions_per_image, mix(seed, 1))?;
    let mut outputs = Vec::new();
    let mut records = Vec::with_capacity(ds.len());
    for it in &ds.items {
        let name = format!("abnormal_{:05}.pgm", it.index);
        it.image.write_pgm(&out.join(&name))?;
        outputs.push(name.clone());
        records.push(AnnotationRecord {
            image: name,
            boxes: it.boxes.clone(),
            phi: it.phi,
        });
    }
    write_text(out, "annotations.jsonl", &annotations::to_jsonl(&records), &mut outputs)?;
    Manifest::write(
        out,
        &Invocation::Simulate {
            config: cfg.clone(),
            uniform,
        },
        Some(parameter_ranges()),
        outputs,
    )?;
    Ok(())
}

pub fn cmd_train(
    cfg: &RunConfig,
    train: &Path,
    val: &Path,
    init: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let train_ds = annotations::load_dataset(train)?;
    let val_ds = annotations::load_dataset(val)?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::DataShape("training and validation sets must be non-empty".into()));
    }
    let params0 = match init {
        Some(p) => DetectorParams::load(p)?,
        None => DetectorParams::prior(),
    };
    let samples = training::sample_windows(&train_ds, mix(cfg.run.seed, 300))?;
    let report = training::train(&params0, &samples, &EvalSet::new(&val_ds), &cfg.optimizer.config()?)?;
    let mut outputs = Vec::new();
    write_text(out, "checkpoint.json", &report.params.to_json(), &mut outputs)?;
    write_text(out, "training.csv", &report.to_csv(), &mut outputs)?;
    Manifest::write(
        out,
        &Invocation::Train {
            config: cfg.clone(),
            train: train.to_path_buf(),
            val: val.to_path_buf(),
            init: init.map(Path::to_path_buf),
        },
        None,
        outputs,
    )?;
    Ok(())
}

pub fn cmd_eval(
    data: &Path,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let records: Vec<AnnotationRecord> = annotations::read_jsonl(data)?;
    if records.is_empty() {
        return Err(Error::DataShape(format!("{} has no images", data.display())));
    }
    let names: Vec<String> = records.iter().map(|r| r.image.clone()).collect();
    let gts: Vec<_> = records.iter().map(|r| r.boxes.clone()).collect();
    let mut outputs = Vec::new();
    let preds = match (checkpoint, predictions) {
        (Some(c), None) => {
            let params = DetectorParams::load(c)?;
            let ds = annotations::load_dataset(data)?;
            let preds = EvalSet::new(&ds).predictions(&params);
            let recs: Vec<PredictionRecord> = names
                .iter()
                .zip(&preds)
                .map(|(n, p)| PredictionRecord {
                    image: n.clone(),
                    predictions: p.clone(),
                })
                .collect();
            write_text(out, "predictions.jsonl", &annotations::to_jsonl(&recs), &mut outputs)?;
            preds
        }
        (None, Some(p)) => annotations::load_predictions(p, &names)?,
        _ => {
            return Err(Error::Parameter(
                "eval needs exactly one of --checkpoint or --predictions".into(),
            ))
        }
    };
    let curve = froc(&preds, &gts, records.len())?;
    let summary = MetricSummary::of(&curve);
    write_text(out, "froc.csv", &curve.to_csv(), &mut outputs)?;
    write_text(out, "froc.svg", &curve.to_svg(), &mut outputs)?;
    let mut metrics = serde_json::to_string_pretty(&summary).expect("metrics serialize");
    metrics.push('\n');
    write_text(out, "metrics.json", &metrics, &mut outputs)?;
    Manifest::write(
        out,
        &Invocation::Eval {
            data: data.to_path_buf(),
            checkpoint: checkpoint.map(Path::to_path_buf),
            predictions: predictions.map(Path::to_path_buf),
        },
        None,
        outputs,
    )?;
    Ok(())
}

/// Split normals into training and held-out validation images and build the
/// curriculum environment.
pub fn build_env(cfg: &RunConfig) -> Result<PhantomEnv> {
    let mut normals = load_normals(cfg)?;
    let n_val = cfg.run.val_normals;
    if n_val == 0 || n_val >= normals.len() {
        return Err(Error::Parameter(format!(
            "run.val_normals={n_val} must be in [1, {})",
            normals.len()
        )));
    }
    let val_normals = normals.split_off(normals.len() - n_val);
    let val_seed = mix(cfg.run.seed, 400);
    let phis = uniform_draws(val_normals.len(), mix(val_seed, 0));
    let val = generate_dataset_with(
        &val_normals,
        |i| phis[i],
        cfg.run.lesions_per_image,
        mix(val_seed, 1),
    )?;
    let mut env = PhantomEnv::new(
        normals,
        cfg.curriculum.probe_normals,
        EvalSet::new(&val),
        cfg.optimizer.config()?,
    )?;
    env.lesions_per_image = cfg.run.lesions_per_image;
    Ok(env)
}

pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let env = build_env(cfg)?;
    let outcome = curriculum::run(&cfg.curriculum, &env, &DetectorParams::prior())?;
    let mut outputs = Vec::new();
    write_text(out, "trace.csv", &outcome.trace.to_csv(), &mut outputs)?;
    let mut trace_json = serde_json::to_string_pretty(&outcome.trace).expect("trace serializes");
    trace_json.push('\n');
    write_text(out, "trace.json", &trace_json, &mut outputs)?;
    for (i, cp) in outcome.checkpoints.iter().enumerate() {
        write_text(out, &format!("theta_t{}.json", i + 1), &cp.to_json(), &mut outputs)?;
    }
    write_text(out, "final.json", &outcome.params.to_json(), &mut outputs)?;
    for (i, bo) in outcome.bo_traces.iter().enumerate() {
        let name = match cfg.curriculum.strategy {
            Strategy::Bayrn => "bo_trace.csv".to_string(),
            _ => format!("bo_t{}.csv", i + 1),
        };
        write_text(out, &name, &bo.to_csv(), &mut outputs)?;
    }
    Manifest::write(
        out,
        &Invocation::Run {
            config: cfg.clone(),
        },
        Some(parameter_ranges()),
        outputs,
    )?;
    Ok(())
}

/// One GDR search step: BO of `-|V - k|` for the given detector.
pub fn cmd_bo_trace(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<()> {
    let env = build_env(cfg)?;
    let params = match checkpoint {
        Some(p) => DetectorParams::load(p)?,
        None => DetectorParams::prior(),
    };
    let c = &cfg.curriculum;
    let settings = BoSettings {
        n_init: c.n_init,
        total: c.bo_budget(),
        n_candidates: c.n_candidates,
        seed: mix_all(c.seed, &[1, 0]),
    };
    let k = c.target_k;
    let trace = bayesopt::maximize(&ParamSpace::simulator(), &settings, |x, iter| {
        let phi = bayesopt::vec_to_sim(x)?;
        let v = curriculum::Environment::probe(&env, &params, &phi, mix_all(c.seed, &[1, iter as u64, 1]))?;
        Ok(-(v - k).abs())
    })?;
    let mut outputs = Vec::new();
    write_text(out, "bo_trace.csv", &trace.to_csv(), &mut outputs)?;
    Manifest::write(
        out,
        &Invocation::BoTrace {
            config: cfg.clone(),
            checkpoint: checkpoint.map(Path::to_path_buf),
        },
        Some(parameter_ranges()),
        outputs,
    )?;
    Ok(())
}

/// Render one lesion (scaled to 0..255) and the same lesion composited onto a
/// phantom.
pub fn cmd_lesion_preview(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let phi = cfg.simulator.phi()?;
    let size = cfg.run.phantom_size;
    let normal = phantom_normal(size, size, mix(seed, 0))?;
    let ds: AnnotatedDataset =
        generate_dataset_with(std::slice::from_ref(&normal), |_| phi, 1, mix(seed, 1))?;
    let lesion = make_lesion(&phi.lesion_params(size, mix(seed, 2), mix(seed, 3)), mix(seed, 4))?;
    let px: Vec<u8> = lesion
        .values()
        .iter()
        .map(|v| goldisim::compositor::quantize(v * 255.0))
        .collect();
    let patch = GrayImage::new(lesion.width(), lesion.height(), px)?;
    let centered = insert_lesion(
        &normal,
        &lesion,
        (size / 2, size / 2),
        phi.beta,
    )?;
    let mut outputs = Vec::new();
    for (name, img) in [
        ("lesion.pgm", &patch),
        ("centered.pgm", &centered),
        ("placed.pgm", &ds.items[0].image),
    ] {
        img.write_pgm(&out.join(name))?;
        outputs.push(name.to_string());
    }
    Manifest::write(
        out,
        &Invocation::LesionPreview {
            config: cfg.clone(),
            seed,
        },
        Some(parameter_ranges()),
        outputs,
    )?;
    Ok(())
}

pub fn execute(inv: &Invocation, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    match inv {
        Invocation::Phantom { n, size, seed } => cmd_phantom(*n, *size, *seed, out),
        Invocation::Simulate { config, uniform } => cmd_simulate(config, *uniform, out),
        Invocation::Train {
            config,
            train,
            val,
            init,
        } => cmd_train(config, train, val, init.as_deref(), out),
        Invocation::Eval {
            data,
            checkpoint,
            predictions,
        } => cmd_eval(data, checkpoint.as_deref(), predictions.as_deref(), out),
        Invocation::Run { config } => cmd_run(config, out),
        Invocation::BoTrace { config, checkpoint } => {
            cmd_bo_trace(config, checkpoint.as_deref(), out)
        }
        Invocation::LesionPreview { config, seed } => cmd_lesion_preview(config, *seed, out),
    }
}

/// Re-execute a manifest into `out` and compare every output digest.
pub fn cmd_replay(manifest_path: &Path, out: &Path) -> Result<Vec<String>> {
    let original = Manifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    execute(&original.resolved_invocation(dir), out)?;
    let again = Manifest::read(&out.join(crate::manifest::MANIFEST_NAME))?;
    let mismatched: Vec<String> = original
        .outputs
        .iter()
        .filter(|o| !again.outputs.contains(o))
        .map(|o| o.path.clone())
        .chain(
            again
                .outputs
                .iter()
                .filter(|o| !original.outputs.iter().any(|x| x.path == o.path))
                .map(|o| o.path.clone()),
        )
        .collect();
    Ok(mismatched)
}
