//! Two-head convolutional model with manual backpropagation.
//!
//! A shared trunk of two tanh convolutions with inverted dropout feeds a
//! semantic head (one logit plane per class) and an instance head (three
//! tri-label logit planes followed by two center-vector planes).

mod checkpoint;
mod conv;
mod optim;
mod train;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE};
pub use conv::Conv;
pub use optim::{cosine_lr, AdamW};
pub use train::{train, validation_mpq, LogRow, TrainConfig, TrainOutcome};

use crate::augment::Predictor;
use crate::error::{Error, Result};
use crate::imagecore::{Mask, Raster, SemanticMap};
use crate::loss::{instance_loss, weighted_smoothed_ce, LossWeights};
use crate::rng;
use crate::scalar::{softmax_into, Scalar};
use crate::targets::{CenterVectorField, ThreeLabelTarget};
use crate::NUM_CLASSES;

/// Planes of the instance head.
pub const INSTANCE_PLANES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub width: usize,
    pub trunk_kernel: usize,
    pub head_kernel: usize,
    pub dropout: f64,
    pub semantic_loss_weight: f64,
    pub instance_loss_weight: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: NUM_CLASSES,
            width: 16,
            trunk_kernel: 3,
            head_kernel: 3,
            dropout: 0.2,
            semantic_loss_weight: 1.0,
            instance_loss_weight: 1.0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.width == 0 {
            return Err(Error::Config("model needs at least 2 classes and a positive width".into()));
        }
        if self.trunk_kernel.is_multiple_of(2) || self.head_kernel.is_multiple_of(2) {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train(u64),
    Eval,
    McDropout(u64),
}

impl Mode {
    fn dropout_seed(self) -> Option<u64> {
        match self {
            Mode::Train(s) | Mode::McDropout(s) => Some(s),
            Mode::Eval => None,
        }
    }
}

/// Raw head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Outputs<T> {
    pub semantic: Raster<T>,
    pub tri: Raster<T>,
    pub vectors: Raster<T>,
}

/// Per-image training targets.
#[derive(Clone, Copy, Debug)]
pub struct Targets<'a, T> {
    pub semantic: &'a SemanticMap,
    pub three_label: &'a ThreeLabelTarget,
    pub vectors: &'a CenterVectorField<T>,
    pub foreground: &'a Mask,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown<T> {
    pub semantic: T,
    pub instance_ce: T,
    pub vector_l2: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    fn add_scaled(&mut self, o: &Self, s: T) {
        self.semantic += o.semantic * s;
        self.instance_ce += o.instance_ce * s;
        self.vector_l2 += o.vector_l2 * s;
        self.total += o.total * s;
    }
}

/// Layer order: trunk 1, trunk 2, semantic head, instance head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layers: [Conv<T>; 4],
}

pub const LAYER_NAMES: [&str; 4] = ["trunk1", "trunk2", "semantic_head", "instance_head"];

struct Cache<T> {
    input: Vec<T>,
    /// Post-tanh activations and dropout multipliers (`None` in eval mode).
    act: [Vec<T>; 2],
    mult: [Option<Vec<T>>; 2],
    /// Trunk outputs after dropout, feeding the next layer.
    out: [Vec<T>; 2],
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (w, tk, hk) = (config.width, config.trunk_kernel, config.head_kernel);
        let s = config.init_seed;
        let layers = [
            Conv::glorot(tk, 3, w, rng::derive(s, 0)),
            Conv::glorot(tk, w, w, rng::derive(s, 1)),
            Conv::glorot(hk, w, config.num_classes, rng::derive(s, 2)),
            Conv::glorot(hk, w, INSTANCE_PLANES, rng::derive(s, 3)),
        ];
        Ok(Self { config, layers })
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config)?;
        for l in m.layers.iter_mut() {
            *l = Conv::zeros(l.kernel, l.cin, l.cout);
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Conv::num_params).sum()
    }

    /// Zero-valued gradient accumulator with this model's shapes.
    pub fn zero_grad(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            layers: self.layers.clone().map(|l| Conv::zeros(l.kernel, l.cin, l.cout)),
        }
    }

    /// All parameters in a fixed order: per layer, weights then biases.
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// FNV-1a hash over the bit patterns of all parameters (as `f64`).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params() {
            for b in p.as_f64().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    fn dropout_mask(&self, layer: usize, len: usize, seed: u64) -> Vec<T> {
        let p = self.config.dropout;
        let keep = T::lit(1.0 / (1.0 - p));
        let mut r = rng::seeded(rng::derive(seed, layer as u64));
        (0..len).map(|_| if r.random::<f64>() < p { T::zero() } else { keep }).collect()
    }

    fn run(&self, img: &Raster<T>, mode: Mode) -> Result<(Outputs<T>, Cache<T>)> {
        if img.channels() != 3 {
            return Err(Error::shape("3 image channels", img.channels()));
        }
        let (h, w) = (img.height(), img.width());
        // inputs centered to [-1, 1]
        let input: Vec<T> = img.data().iter().map(|&v| v + v - T::one()).collect();
        let mut act: [Vec<T>; 2] = [Vec::new(), Vec::new()];
        let mut mult: [Option<Vec<T>>; 2] = [None, None];
        let mut out: [Vec<T>; 2] = [Vec::new(), Vec::new()];
        for l in 0..2 {
            let src = if l == 0 { &input } else { &out[0] };
            let a: Vec<T> = self.layers[l].forward(src, h, w).into_iter().map(T::tanh).collect();
            let m = match mode.dropout_seed() {
                Some(seed) if self.config.dropout > 0.0 => Some(self.dropout_mask(l, a.len(), seed)),
                _ => None,
            };
            out[l] = match &m {
                Some(m) => a.iter().zip(m).map(|(&x, &k)| x * k).collect(),
                None => a.clone(),
            };
            act[l] = a;
            mult[l] = m;
        }
        let c = self.num_classes();
        let semantic = Raster::from_vec(h, w, c, self.layers[2].forward(&out[1], h, w))?;
        let inst = self.layers[3].forward(&out[1], h, w);
        let mut tri = Vec::with_capacity(h * w * 3);
        let mut vec = Vec::with_capacity(h * w * 2);
        for px in inst.chunks_exact(INSTANCE_PLANES) {
            tri.extend_from_slice(&px[..3]);
            vec.extend_from_slice(&px[3..]);
        }
        let outputs = Outputs { semantic, tri: Raster::from_vec(h, w, 3, tri)?, vectors: Raster::from_vec(h, w, 2, vec)? };
        Ok((outputs, Cache { input, act, mult, out }))
    }

    /// Deterministic per `(parameters, image, mode)`.
    pub fn forward(&self, img: &Raster<T>, mode: Mode) -> Result<Outputs<T>> {
        Ok(self.run(img, mode)?.0)
    }

    /// Loss components and exact parameter gradients for one image:
    /// `total = a * semantic + b * (instance_ce + vector_l2)` with the
    /// configured head weights `a`, `b`.
    pub fn backward(&self, img: &Raster<T>, targets: Targets<'_, T>, weights: &LossWeights<T>, mode: Mode) -> Result<(LossBreakdown<T>, Model<T>)> {
        let (h, w) = (img.height(), img.width());
        let (outputs, cache) = self.run(img, mode)?;
        let a = T::lit(self.config.semantic_loss_weight);
        let b = T::lit(self.config.instance_loss_weight);
        let (sem_loss, sem_grad) = weighted_smoothed_ce(&outputs.semantic, targets.semantic, weights)?;
        let inst = instance_loss(&outputs.tri, targets.three_label, &outputs.vectors, targets.vectors, targets.foreground)?;
        let losses = LossBreakdown {
            semantic: sem_loss,
            instance_ce: inst.ce,
            vector_l2: inst.l2,
            total: a * sem_loss + b * (inst.ce + inst.l2),
        };

        let g_sem: Vec<T> = sem_grad.data().iter().map(|&g| g * a).collect();
        let mut g_inst = Vec::with_capacity(h * w * INSTANCE_PLANES);
        for i in 0..h * w {
            g_inst.extend(inst.grad_tri.pixel(i).iter().chain(inst.grad_vec.pixel(i)).map(|&g| g * b));
        }
        let mut grad = self.zero_grad();
        let [g1, g2, gs, gi] = &mut grad.layers;
        let mut d = self.layers[2].backward(&cache.out[1], &g_sem, h, w, gs, true).expect("input grad requested");
        let di = self.layers[3].backward(&cache.out[1], &g_inst, h, w, gi, true).expect("input grad requested");
        for (x, y) in d.iter_mut().zip(di) {
            *x += y;
        }
        for l in (0..2).rev() {
            if let Some(m) = &cache.mult[l] {
                d.iter_mut().zip(m).for_each(|(x, &k)| *x *= k);
            }
            for (x, &a) in d.iter_mut().zip(&cache.act[l]) {
                *x *= T::one() - a * a;
            }
            if l == 1 {
                d = self.layers[1].backward(&cache.out[0], &d, h, w, g2, true).expect("input grad requested");
            } else {
                self.layers[0].backward(&cache.input, &d, h, w, g1, false);
            }
        }
        Ok((losses, grad))
    }

    /// Mean loss and gradient over a batch. Items run in parallel; the
    /// reduction follows batch order.
    pub fn backward_batch(&self, items: &[(&Raster<T>, Targets<'_, T>, Mode)], weights: &LossWeights<T>) -> Result<(LossBreakdown<T>, Model<T>)>
    where
        T: Send + Sync,
    {
        if items.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let results: Vec<Result<(LossBreakdown<T>, Model<T>)>> =
            items.par_iter().map(|(img, t, mode)| self.backward(img, *t, weights, *mode)).collect();
        let inv = T::one() / T::from_usize_lossy(items.len());
        let mut loss = LossBreakdown::default();
        let mut grad = self.zero_grad();
        for r in results {
            let (l, g) = r?;
            loss.add_scaled(&l, inv);
            for (acc, v) in grad.params_mut().zip(g.params()) {
                *acc += *v * inv;
            }
        }
        Ok((loss, grad))
    }

    /// Softmax probabilities of both classification heads.
    pub fn probabilities(&self, img: &Raster<T>, mode: Mode) -> Result<(Raster<T>, Raster<T>)> {
        let o = self.forward(img, mode)?;
        Ok((softmax_planes(&o.semantic), softmax_planes(&o.tri)))
    }

    /// Eval-mode predictor, for single deterministic passes under TTA plans.
    pub fn eval_predictor(&self) -> EvalPredictor<'_, T> {
        EvalPredictor(self)
    }
}

pub fn softmax_planes<T: Scalar>(logits: &Raster<T>) -> Raster<T> {
    let mut out = logits.clone();
    for i in 0..logits.pixels() {
        softmax_into(logits.pixel(i), out.pixel_mut(i));
    }
    out
}

/// Monte-Carlo dropout predictions keyed by the pass's dropout seed.
impl<T: Scalar> Predictor<T> for Model<T> {
    fn predict(&self, img: &Raster<T>, dropout_seed: u64) -> Result<(Raster<T>, Raster<T>)> {
        self.probabilities(img, Mode::McDropout(dropout_seed))
    }
}

pub struct EvalPredictor<'a, T>(&'a Model<T>);

impl<T: Scalar> Predictor<T> for EvalPredictor<'_, T> {
    fn predict(&self, img: &Raster<T>, _dropout_seed: u64) -> Result<(Raster<T>, Raster<T>)> {
        self.0.probabilities(img, Mode::Eval)
    }
}
