//! Oracles and generators shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeMap;

use panoptic_core::imagecore::{InstanceMap, LabeledInstances, Mask, Raster, SemanticMap};
use panoptic_core::loss::{instance_loss, weighted_smoothed_ce, LossWeights};
use panoptic_core::model::{Mode, Model, ModelConfig, Targets};
use panoptic_core::rng;
use panoptic_core::targets::{encode_center_vectors, encode_three_label};
use rand::Rng;

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Random rectangles with random labels in `1..=max_label`; later
/// rectangles overwrite earlier ones, so instances may be disconnected.
pub fn random_instances(r: &mut impl Rng, h: usize, w: usize, rects: usize, max_label: u32, num_classes: u8) -> LabeledInstances {
    let mut map = InstanceMap::new(h, w);
    for _ in 0..rects {
        let (y0, x0) = (r.random_range(0..h), r.random_range(0..w));
        let (y1, x1) = (r.random_range(y0..h) + 1, r.random_range(x0..w) + 1);
        let l = r.random_range(1..=max_label);
        for y in y0..y1 {
            for x in x0..x1 {
                map.set(y, x, l);
            }
        }
    }
    let classes = map.ids().into_iter().map(|l| (l, r.random_range(1..num_classes))).collect();
    LabeledInstances::new(map, classes)
}

#[derive(Debug, PartialEq)]
pub struct BruteMatch {
    /// `(pred, gt, class, iou)` sorted by pred then gt.
    pub matches: Vec<(u32, u32, u8, f64)>,
    pub fp: Vec<(u32, u8)>,
    pub fn_: Vec<(u32, u8)>,
}

/// Every pred/gt pair, IoU by a full pixel scan.
pub fn brute_force_match(pred: &LabeledInstances, gt: &LabeledInstances) -> BruteMatch {
    let (p, g) = (pred.map.labels(), gt.map.labels());
    let mut matches = Vec::new();
    for pl in pred.map.ids() {
        for gl in gt.map.ids() {
            let (mut inter, mut union) = (0usize, 0usize);
            for i in 0..p.len() {
                let (a, b) = (p[i] == pl, g[i] == gl);
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
            let iou = inter as f64 / union as f64;
            let class = pred.class_of(pl);
            if class != 0 && class == gt.class_of(gl) && iou > 0.5 {
                matches.push((pl, gl, class, iou));
            }
        }
    }
    let fp = pred.map.ids().into_iter().filter(|l| !matches.iter().any(|m| m.0 == *l)).map(|l| (l, pred.class_of(l))).collect();
    let fn_ = gt.map.ids().into_iter().filter(|l| !matches.iter().any(|m| m.1 == *l)).map(|l| (l, gt.class_of(l))).collect();
    BruteMatch { matches, fp, fn_ }
}

fn random_raster(r: &mut impl Rng, h: usize, w: usize, c: usize, scale: f64) -> Raster<f64> {
    Raster::from_vec(h, w, c, (0..h * w * c).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

/// Worst relative error of the `f32` semantic loss gradient against `f64`
/// central differences (step 1e-3) over `cases` random 4x4x3 problems.
pub fn ce_gradient_worst(cases: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for k in 0..cases {
        // f32-representable inputs, so both precisions see the same problem
        let logits: Raster<f64> = random_raster(&mut r, 4, 4, 3, 3.0).cast::<f32>().cast();
        let target = SemanticMap::from_vec(4, 4, 3, (0..16).map(|_| r.random_range(0..3u8)).collect()).unwrap();
        let weights = LossWeights {
            weights: (0..3).map(|_| r.random_range(0.0..1.0)).collect(),
            rho: 3.0,
            smoothing: r.random_range(0.0..0.2),
            focal_gamma: (k % 2 == 1).then(|| r.random_range(0.5..3.0)),
        };
        let w32 = LossWeights { weights: weights.weights.iter().map(|&v| v as f32).collect(), rho: 3.0, smoothing: weights.smoothing as f32, focal_gamma: weights.focal_gamma.map(|g| g as f32) };
        let (_, grad) = weighted_smoothed_ce(&logits.cast::<f32>(), &target, &w32).unwrap();
        let grad: Raster<f64> = grad.cast();
        let f = |z: &Raster<f64>| weighted_smoothed_ce(z, &target, &weights).unwrap().0;
        let fd: Vec<f64> = (0..logits.data().len())
            .map(|i| {
                let (mut a, mut b) = (logits.clone(), logits.clone());
                a.data_mut()[i] += 1e-3;
                b.data_mut()[i] -= 1e-3;
                (f(&a) - f(&b)) / 2e-3
            })
            .collect();
        worst = worst.max(rel_err(grad.data(), &fd));
    }
    worst
}

/// Worst relative error of the `f32` instance loss gradients (both heads)
/// against `f64` central differences over `cases` random 5x5 problems.
pub fn instance_gradient_worst(cases: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let inst = random_instances(&mut r, 5, 5, 3, 3, 2).map;
        let tri_t = encode_three_label(&inst, 1);
        let vec_t = encode_center_vectors::<f64>(&inst);
        let fg = inst.foreground();
        let tri: Raster<f64> = random_raster(&mut r, 5, 5, 3, 3.0).cast::<f32>().cast();
        let vec: Raster<f64> = random_raster(&mut r, 5, 5, 2, 3.0).cast::<f32>().cast();
        let out = instance_loss(&tri.cast::<f32>(), &tri_t, &vec.cast::<f32>(), &encode_center_vectors::<f32>(&inst), &fg).unwrap();
        let f = |t: &Raster<f64>, v: &Raster<f64>| instance_loss(t, &tri_t, v, &vec_t, &fg).unwrap().total;
        let mut analytic: Vec<f64> = out.grad_tri.data().iter().map(|&v| v as f64).collect();
        analytic.extend(out.grad_vec.data().iter().map(|&v| v as f64));
        let mut fd = Vec::new();
        for i in 0..tri.data().len() {
            let (mut a, mut b) = (tri.clone(), tri.clone());
            a.data_mut()[i] += 1e-3;
            b.data_mut()[i] -= 1e-3;
            fd.push((f(&a, &vec) - f(&b, &vec)) / 2e-3);
        }
        for i in 0..vec.data().len() {
            let (mut a, mut b) = (vec.clone(), vec.clone());
            a.data_mut()[i] += 1e-3;
            b.data_mut()[i] -= 1e-3;
            fd.push((f(&tri, &a) - f(&tri, &b)) / 2e-3);
        }
        worst = worst.max(rel_err(&analytic, &fd));
    }
    worst
}

pub struct ModelCase {
    pub image: Raster<f64>,
    pub semantic: SemanticMap,
    pub instances: InstanceMap,
    pub weights: Vec<f64>,
    pub smoothing: f64,
}

pub fn model_case(r: &mut impl Rng, h: usize, w: usize, num_classes: u8) -> ModelCase {
    let li = random_instances(r, h, w, 3, 3, num_classes);
    let semantic = SemanticMap::from_instances(&li.map, &li.classes, num_classes as usize).unwrap();
    let image = Raster::from_vec(h, w, 3, (0..h * w * 3).map(|_| r.random::<f64>()).collect()).unwrap();
    let weights = (0..num_classes).map(|_| r.random_range(0.1..1.0)).collect();
    ModelCase { image, semantic, instances: li.map, weights, smoothing: 0.05 }
}

/// Total loss of `model` on `case`, in the model's precision, returned as f64.
pub fn model_loss<T: panoptic_core::Scalar>(model: &Model<T>, case: &ModelCase, mode: Mode) -> f64 {
    let tri = encode_three_label(&case.instances, 2);
    let vec = encode_center_vectors::<T>(&case.instances);
    let fg: Mask = case.instances.foreground();
    let t = Targets { semantic: &case.semantic, three_label: &tri, vectors: &vec, foreground: &fg };
    let w = LossWeights { weights: case.weights.iter().map(|&v| T::lit(v)).collect(), rho: T::lit(3.0), smoothing: T::lit(case.smoothing), focal_gamma: None };
    model.backward(&case.image.cast(), t, &w, mode).unwrap().0.total.as_f64()
}

/// Analytic `f32` model gradient against `f64` central differences, on
/// `coords` random parameters plus one random direction per case. Returns
/// the worst relative error over `cases` random 8x8 problems.
pub fn model_gradient_worst(cases: usize, coords: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for k in 0..cases {
        let cfg = ModelConfig { init_seed: rng::derive(seed, k as u64), ..ModelConfig::default() };
        let mut m64 = Model::<f64>::new(cfg.clone()).unwrap();
        // non-zero biases so every term is exercised
        for l in m64.layers.iter_mut() {
            l.bias.iter_mut().for_each(|b| *b = r.random_range(-0.3..0.3));
        }
        let m32 = Model::<f32> {
            config: cfg,
            layers: m64.layers.clone().map(|l| panoptic_core::model::Conv {
                kernel: l.kernel,
                cin: l.cin,
                cout: l.cout,
                weight: l.weight.iter().map(|&v| v as f32).collect(),
                bias: l.bias.iter().map(|&v| v as f32).collect(),
            }),
        };
        // the f64 oracle runs on exactly the f32 parameter values
        for (a, b) in m64.params_mut().zip(m32.params()) {
            *a = *b as f64;
        }
        let case = model_case(&mut r, 8, 8, 7);
        let mode = if k % 2 == 0 { Mode::Train(k as u64) } else { Mode::Eval };
        let tri = encode_three_label(&case.instances, 2);
        let vec = encode_center_vectors::<f32>(&case.instances);
        let fg = case.instances.foreground();
        let t = Targets { semantic: &case.semantic, three_label: &tri, vectors: &vec, foreground: &fg };
        let w = LossWeights { weights: case.weights.iter().map(|&v| v as f32).collect(), rho: 3.0, smoothing: 0.05, focal_gamma: None };
        let (_, g) = m32.backward(&case.image.cast(), t, &w, mode).unwrap();
        let grad: Vec<f64> = g.params().map(|&v| v as f64).collect();
        let n = grad.len();
        let eval_at = |delta: &dyn Fn(usize) -> f64| {
            let mut m = m64.clone();
            for (i, p) in m.params_mut().enumerate() {
                *p += delta(i);
            }
            model_loss(&m, &case, mode)
        };
        let h = 1e-3;
        let idx: Vec<usize> = (0..coords).map(|_| r.random_range(0..n)).collect();
        let fd: Vec<f64> = idx
            .iter()
            .map(|&j| (eval_at(&|i| if i == j { h } else { 0.0 }) - eval_at(&|i| if i == j { -h } else { 0.0 })) / (2.0 * h))
            .collect();
        let picked: Vec<f64> = idx.iter().map(|&j| grad[j]).collect();
        worst = worst.max(rel_err(&picked, &fd));
        let dir: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dd = (eval_at(&|i| h * dir[i] / norm) - eval_at(&|i| -h * dir[i] / norm)) / (2.0 * h);
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d / norm).sum();
        worst = worst.max(rel_err(&[analytic], &[dd]));
    }
    worst
}

pub fn class_map(classes: &[(u32, u8)]) -> BTreeMap<u32, u8> {
    classes.iter().copied().collect()
}

/// A random gt map of at most 12x12 and a prediction derived from it by
/// pixel noise, or an unrelated random map.
pub fn random_pair(seed: u64) -> (LabeledInstances, LabeledInstances) {
    let mut r = rng::seeded(seed);
    let (h, w) = (r.random_range(1..=12), r.random_range(1..=12));
    let k = r.random_range(0..6);
    let gt = random_instances(&mut r, h, w, k, 6, 4);
    // predictions: jittered copies of gt rectangles plus noise rectangles
    let mut pred = gt.clone();
    for _ in 0..r.random_range(0..4) {
        let (y, x) = (r.random_range(0..h), r.random_range(0..w));
        let l = r.random_range(0..8);
        pred.map.set(y, x, l);
        if l > 0 {
            pred.classes.entry(l).or_insert(r.random_range(1..4));
        }
    }
    let ids = pred.map.ids();
    pred.classes.retain(|l, _| ids.contains(l));
    if r.random_bool(0.3) {
        let k = r.random_range(0..6);
        pred = random_instances(&mut r, h, w, k, 6, 4);
    }
    (pred, gt)
}

/// One-hot semantic and three-label planes of a ground truth, the input a
/// perfect model would hand to post-processing.
pub fn one_hot_planes(gt: &LabeledInstances, num_classes: usize, boundary_width: usize) -> (Raster<f64>, Raster<f64>) {
    let (h, w) = (gt.map.height(), gt.map.width());
    let sem_map = SemanticMap::from_instances(&gt.map, &gt.classes, num_classes).unwrap();
    let tri_t = encode_three_label(&gt.map, boundary_width);
    let mut sem = Raster::zeros(h, w, num_classes);
    let mut tri = Raster::zeros(h, w, 3);
    for i in 0..h * w {
        sem.pixel_mut(i)[sem_map.classes()[i] as usize] = 1.0;
        tri.pixel_mut(i)[tri_t.labels()[i] as usize] = 1.0;
    }
    (sem, tri)
}

/// Sampling probabilities of a row-wise occupancy table.
pub fn sampling_probs(rows: Vec<Vec<f64>>) -> Vec<f64> {
    let c = rows[0].len();
    panoptic_core::sampler::sampling_distribution(&panoptic_core::sampler::ClassOccupancy::from_rows(c, rows).unwrap()).unwrap().probs().to_vec()
}
