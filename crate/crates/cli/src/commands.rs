use std::path::{Path, PathBuf};

use panoptic_core::augment::{tta_average, Predictor, StainBasis, TrainSample, TtaPlan};
use panoptic_core::imagecore::LabeledInstances;
use panoptic_core::metrics::evaluate as evaluate_pairs;
use panoptic_core::model::{load_checkpoint, save_checkpoint, train as train_model, LogRow, Mode};
use panoptic_core::postprocess::{coordinate_search, postprocess as run_postprocess, PostprocessConfig, SearchRow, ValidationItem};
use panoptic_core::sampler::{occupancy, sampling_distribution};
use panoptic_core::synth::{generate, SceneConfig};
use panoptic_core::targets::{encode_center_vectors, encode_three_label};
use panoptic_core::{rng, Error, Raster, Result, SemanticMap, ToyModel, CLASS_NAMES};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::dataset as ds;

pub const COUNTS_CSV: &str = "counts.csv";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const PRIOR_CSV: &str = "prior.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const BEST_PARAMS: &str = "best_postprocess.toml";
pub const TUNE_SCORES: &str = "tune_scores.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TXT: &str = "metrics.txt";

fn stem_of(k: usize) -> String {
    format!("tile_{k:05}")
}

fn counts_header() -> String {
    std::iter::once("tile").chain(CLASS_NAMES).collect::<Vec<_>>().join(",")
}

/// Runs `f` over the stems in parallel and returns results in stem order.
fn par_map<R: Send>(stems: &[String], f: impl Fn(&str) -> Result<R> + Sync) -> Result<Vec<R>> {
    stems.par_iter().map(|s| f(s)).collect()
}

pub fn synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    ds::create_dir(out)?;
    cfg.echo(out)?;
    let scene = &cfg.synth.scene;
    let num_classes = scene.num_nucleus_classes() + 1;
    let stems: Vec<String> = (0..cfg.synth.tiles).map(stem_of).collect();
    let counts = par_map(&stems, |stem| {
        let k: usize = stem["tile_".len()..].parse().expect("generated stem");
        let tile = generate::<f32>(&SceneConfig { seed: rng::derive(scene.seed, k as u64), ..scene.clone() })?;
        ds::write_image(out, stem, &tile.image)?;
        ds::write_instances(out, stem, &tile.instances)?;
        ds::write_semantic(out, stem, ds::SEMANTIC, &tile.semantic)?;
        Ok(tile.counts)
    })?;
    let mut csv = counts_header() + "\n";
    for (stem, c) in stems.iter().zip(&counts) {
        csv += &format!("{stem},{}\n", c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    }
    ds::write_text(&out.join(COUNTS_CSV), &csv)?;
    eprintln!("synth: wrote {} tiles ({} classes) to {}", stems.len(), num_classes, out.display());
    Ok(())
}

pub fn encode_targets(cfg: &PipelineConfig, data: &Path, out: &Path) -> Result<()> {
    let stems = ds::stems(data, ds::INSTANCES)?;
    ds::create_dir(out)?;
    cfg.echo(out)?;
    par_map(&stems, |stem| {
        let inst = ds::read_instances(data, stem)?;
        let tri = encode_three_label(&inst.map, cfg.targets.boundary_width);
        ds::write_semantic(out, stem, ds::THREE_LABEL, tri.as_semantic())?;
        ds::write_raster(out, stem, ds::VECTORS, encode_center_vectors::<f32>(&inst.map).raster())
    })?;
    eprintln!("encode-targets: encoded {} tiles into {}", stems.len(), out.display());
    Ok(())
}

fn semantic_of(inst: &LabeledInstances, num_classes: usize) -> Result<SemanticMap> {
    SemanticMap::from_instances(&inst.map, &inst.classes, num_classes)
}

/// Occupancy table and sampling probabilities as CSV.
pub fn sample_stats(cfg: &PipelineConfig, data: &Path, out: Option<&Path>) -> Result<String> {
    let c = cfg.model.num_classes;
    let stems = ds::stems(data, ds::INSTANCES)?;
    let maps = par_map(&stems, |stem| semantic_of(&ds::read_instances(data, stem)?, c))?;
    let occ = occupancy::<f64>(&maps, c)?;
    let dist = sampling_distribution(&occ)?;
    let mut csv = std::iter::once("image_id".to_string()).chain((0..c).map(|k| format!("X_{k}"))).chain(["p_n".to_string()]).collect::<Vec<_>>().join(",");
    csv.push('\n');
    for (n, stem) in stems.iter().enumerate() {
        let row: Vec<String> = occ.row(n).iter().map(|v| format!("{v:.9}")).collect();
        csv += &format!("{stem},{},{:.12}\n", row.join(","), dist.probs()[n]);
    }
    if let Some(file) = out {
        let dir = file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        ds::create_dir(dir)?;
        cfg.echo(dir)?;
        ds::write_text(file, &csv)?;
    }
    Ok(csv)
}

fn load_train_samples(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<TrainSample<f32>>> {
    let stems = ds::stems(dir, ds::INSTANCES)?;
    par_map(&stems, |stem| {
        let inst = ds::read_instances(dir, stem)?;
        let image = ds::read_image(dir, stem)?;
        let sem = semantic_of(&inst, cfg.model.num_classes)?;
        Ok(TrainSample::new(image, sem, inst.map, cfg.targets.boundary_width))
    })
}

fn load_pairs(dir: &Path) -> Result<Vec<(Raster<f32>, LabeledInstances)>> {
    let stems = ds::stems(dir, ds::INSTANCES)?;
    par_map(&stems, |stem| Ok((ds::read_image(dir, stem)?, ds::read_instances(dir, stem)?)))
}

pub fn train(cfg: &PipelineConfig, data: &Path, val: Option<&Path>, out: &Path) -> Result<()> {
    let train_set = load_train_samples(cfg, data)?;
    let val_set = match val {
        Some(v) => load_pairs(v)?,
        None => Vec::new(),
    };
    ds::create_dir(out)?;
    cfg.echo(out)?;
    eprintln!("train: {} training tiles, {} validation tiles, {} steps", train_set.len(), val_set.len(), cfg.train.steps);
    let outcome = train_model(&cfg.model, &cfg.train, &train_set, &val_set)?;
    let mut log = LogRow::CSV_HEADER.to_string() + "\n";
    for row in &outcome.log {
        log += &row.csv();
        log.push('\n');
    }
    ds::write_text(&out.join(TRAIN_LOG), &log)?;
    let prior: Vec<String> = outcome.prior.values().iter().enumerate().map(|(k, v)| format!("{k},{v:.9}")).collect();
    ds::write_text(&out.join(PRIOR_CSV), &format!("class,prior\n{}\n", prior.join("\n")))?;
    let mut extra = vec![("best_step".to_string(), outcome.best_step.to_string()), ("train_seed".to_string(), cfg.train.seed.to_string())];
    if let Some(v) = outcome.best_val_mpq {
        extra.push(("best_val_mpq".to_string(), format!("{v:.6}")));
    }
    save_checkpoint(out.join(CHECKPOINT_DIR), &outcome.model, &extra)?;
    eprintln!("train: best step {} (validation mPQ+ {:?}); checkpoint in {}", outcome.best_step, outcome.best_val_mpq, out.join(CHECKPOINT_DIR).display());
    Ok(())
}

/// Resolves a checkpoint argument: either the checkpoint itself or a
/// training output directory containing one.
fn checkpoint_dir(p: &Path) -> PathBuf {
    let nested = p.join(CHECKPOINT_DIR);
    if nested.is_dir() {
        nested
    } else {
        p.to_path_buf()
    }
}

pub fn infer(cfg: &PipelineConfig, checkpoints: &[PathBuf], data: &Path, out: &Path) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::Config("infer needs at least one --checkpoint".into()));
    }
    let models: Vec<ToyModel> = checkpoints.iter().map(|c| load_checkpoint(checkpoint_dir(c))).collect::<Result<_>>()?;
    if let Some(m) = models.iter().find(|m| m.num_classes() != cfg.model.num_classes) {
        return Err(Error::Config(format!("checkpoint predicts {} classes, config expects {}", m.num_classes(), cfg.model.num_classes)));
    }
    let stems = ds::stems(data, ds::IMAGE)?;
    ds::create_dir(out)?;
    cfg.echo(out)?;
    let basis = StainBasis::<f32>::new(cfg.synth.scene.stain_matrix)?;
    let inf = &cfg.infer;
    let plan = (inf.tta_passes > 0).then(|| TtaPlan::random(inf.tta_passes, inf.hed_range, models.len(), inf.seed));
    let predictors: Vec<&dyn Predictor<f32>> = models.iter().map(|m| m as &dyn Predictor<f32>).collect();
    for stem in &stems {
        let img = ds::read_image(data, stem)?;
        let (sem, tri) = match &plan {
            Some(plan) => {
                let o = tta_average(&predictors, &img, plan, &basis)?;
                (o.semantic, o.three_label)
            }
            None => eval_average(&models, &img)?,
        };
        ds::write_raster(out, stem, ds::SEMANTIC_PROBS, &sem)?;
        ds::write_raster(out, stem, ds::THREE_LABEL_PROBS, &tri)?;
    }
    let how = plan.as_ref().map_or("one eval pass".to_string(), |p| format!("{} TTA passes", p.passes.len()));
    eprintln!("infer: {} tiles with {} model(s), {how}, into {}", stems.len(), models.len(), out.display());
    Ok(())
}

/// Mean eval-mode probabilities over the models.
fn eval_average(models: &[ToyModel], img: &Raster<f32>) -> Result<(Raster<f32>, Raster<f32>)> {
    let mut acc: Option<(Raster<f32>, Raster<f32>)> = None;
    for m in models {
        let (s, t) = m.probabilities(img, Mode::Eval)?;
        match acc.as_mut() {
            None => acc = Some((s, t)),
            Some((a, b)) => {
                a.data_mut().iter_mut().zip(s.data()).for_each(|(x, y)| *x += *y);
                b.data_mut().iter_mut().zip(t.data()).for_each(|(x, y)| *x += *y);
            }
        }
    }
    let (mut s, mut t) = acc.expect("at least one model");
    let inv = 1.0 / models.len() as f32;
    s.data_mut().iter_mut().for_each(|v| *v *= inv);
    t.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok((s, t))
}

/// Post-processing parameters from a file written by `tune`.
pub fn read_params(file: &Path) -> Result<PostprocessConfig> {
    let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    let cfg: PostprocessConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", file.display(), e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn postprocess(cfg: &PipelineConfig, probs: &Path, params: Option<&Path>, out: &Path) -> Result<()> {
    let pp = match params {
        Some(f) => read_params(f)?,
        None => cfg.postprocess.clone(),
    };
    let stems = ds::stems(probs, ds::SEMANTIC_PROBS)?;
    ds::create_dir(out)?;
    cfg.echo(out)?;
    par_map(&stems, |stem| {
        let sem = ds::read_raster(probs, stem, ds::SEMANTIC_PROBS)?;
        let tri = ds::read_raster(probs, stem, ds::THREE_LABEL_PROBS)?;
        ds::write_instances(out, stem, &run_postprocess(&sem, &tri, &pp)?)
    })?;
    eprintln!("postprocess: {} tiles into {}", stems.len(), out.display());
    Ok(())
}

pub fn tune(cfg: &PipelineConfig, probs: &Path, gt: &Path, out: &Path) -> Result<()> {
    let stems = ds::stems(probs, ds::SEMANTIC_PROBS)?;
    let items = par_map(&stems, |stem| {
        Ok(ValidationItem {
            semantic: ds::read_raster(probs, stem, ds::SEMANTIC_PROBS)?,
            three_label: ds::read_raster(probs, stem, ds::THREE_LABEL_PROBS)?,
            truth: ds::read_instances(gt, stem)?,
        })
    })?;
    ds::create_dir(out)?;
    cfg.echo(out)?;
    let t = &cfg.tune;
    let (best, score, rows) = coordinate_search(&cfg.postprocess, &t.grid, &items, t.objective, t.crop, t.rounds)?;
    let mut csv = SearchRow::CSV_HEADER.to_string() + "\n";
    for r in &rows {
        csv += &r.csv();
        csv.push('\n');
    }
    ds::write_text(&out.join(TUNE_SCORES), &csv)?;
    ds::write_text(&out.join(BEST_PARAMS), &toml::to_string(&best).map_err(|e| Error::Config(e.to_string()))?)?;
    eprintln!("tune: best {:?} {score:.4} over {} tiles; parameters in {}", t.objective, items.len(), out.join(BEST_PARAMS).display());
    Ok(())
}

/// Scores predictions against ground truth; returns the text table.
pub fn evaluate(cfg: &PipelineConfig, pred: &Path, gt: &Path, out: Option<&Path>) -> Result<String> {
    let stems = ds::stems(gt, ds::INSTANCES)?;
    let pairs = par_map(&stems, |stem| Ok((ds::read_instances(pred, stem)?, ds::read_instances(gt, stem)?)))?;
    let report = evaluate_pairs(&pairs, cfg.model.num_classes, cfg.evaluate.crop)?;
    let table = report.to_table();
    if let Some(dir) = out {
        ds::create_dir(dir)?;
        cfg.echo(dir)?;
        ds::write_text(&dir.join(METRICS_CSV), &report.to_csv())?;
        ds::write_text(&dir.join(METRICS_TXT), &table)?;
    }
    Ok(table)
}
