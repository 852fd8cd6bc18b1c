use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dihedral, StainBasis, RUIFROK_HED};
use crate::error::Result;
use crate::imagecore::{InstanceMap, Raster, SemanticMap};
use crate::rng;
use crate::scalar::Scalar;
use crate::targets::{CenterVectorField, ThreeLabelTarget};

/// Ranges and probabilities of the training-time augmentations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Stain concentration scale drawn from `[1 - hed_scale, 1 + hed_scale]` per channel.
    pub hed_scale: f64,
    /// Additive stain concentration offset drawn from `[-hed_bias, hed_bias]`.
    pub hed_bias: f64,
    /// Per-channel RGB gain range `[1 - rgb_gain, 1 + rgb_gain]`.
    pub rgb_gain: f64,
    /// Per-channel RGB offset range.
    pub rgb_offset: f64,
    pub blur_probability: f64,
    pub blur_sigma_max: f64,
    /// Upper bound of the Gaussian noise standard deviation.
    pub noise_std_max: f64,
    /// Random flips and 90 degree rotations.
    pub dihedral: bool,
    /// Maximum integer shift in pixels along each axis.
    pub max_translation: usize,
    /// Stain optical-density rows (H, E, DAB).
    pub stain_matrix: [[f64; 3]; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hed_scale: 0.05,
            hed_bias: 0.02,
            rgb_gain: 0.05,
            rgb_offset: 0.02,
            blur_probability: 0.2,
            blur_sigma_max: 1.0,
            noise_std_max: 0.01,
            dihedral: true,
            max_translation: 0,
            stain_matrix: RUIFROK_HED,
        }
    }
}

impl AugmentConfig {
    /// Configuration under which augmentation returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            hed_scale: 0.0,
            hed_bias: 0.0,
            rgb_gain: 0.0,
            rgb_offset: 0.0,
            blur_probability: 0.0,
            blur_sigma_max: 0.0,
            noise_std_max: 0.0,
            dihedral: false,
            max_translation: 0,
            stain_matrix: RUIFROK_HED,
        }
    }
}

/// Image with all of its aligned training targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<T> {
    pub image: Raster<T>,
    pub semantic: SemanticMap,
    pub instances: InstanceMap,
    pub three_label: ThreeLabelTarget,
    pub vectors: CenterVectorField<T>,
}

impl<T: Scalar> TrainSample<T> {
    pub fn new(image: Raster<T>, semantic: SemanticMap, instances: InstanceMap, boundary_width: usize) -> Self {
        let three_label = crate::targets::encode_three_label(&instances, boundary_width);
        let vectors = crate::targets::encode_center_vectors(&instances);
        Self { image, semantic, instances, three_label, vectors }
    }

    fn transformed(&self, t: Dihedral) -> Self {
        Self {
            image: t.apply(&self.image),
            semantic: t.apply_semantic(&self.semantic),
            instances: t.apply_instances(&self.instances),
            three_label: t.apply_three_label(&self.three_label),
            vectors: t.apply_vectors(&self.vectors),
        }
    }

    /// Integer shift; uncovered pixels become background (image: channel mean).
    fn translated(&self, dy: isize, dx: isize) -> Self {
        let (h, w) = (self.image.height(), self.image.width());
        let c = self.image.channels();
        let n = T::from_usize_lossy(self.image.pixels().max(1));
        let mean: Vec<T> = (0..c).map(|k| self.image.plane(k).into_iter().sum::<T>() / n).collect();
        let mut image = Raster::zeros(h, w, c);
        (0..image.pixels()).for_each(|i| image.pixel_mut(i).copy_from_slice(&mean));
        let mut sem = vec![0u8; h * w];
        let mut inst = vec![0u32; h * w];
        let mut tri = vec![0u8; h * w];
        let mut vec_field = Raster::zeros(h, w, 2);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = (y as isize - dy, x as isize - dx);
                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                    continue;
                }
                let (src, dst) = (sy as usize * w + sx as usize, y * w + x);
                image.pixel_mut(dst).copy_from_slice(self.image.pixel(src));
                sem[dst] = self.semantic.classes()[src];
                inst[dst] = self.instances.labels()[src];
                tri[dst] = self.three_label.labels()[src];
                vec_field.pixel_mut(dst).copy_from_slice(self.vectors.raster().pixel(src));
            }
        }
        Self {
            image,
            semantic: SemanticMap::from_vec(h, w, self.semantic.num_classes(), sem).expect("classes unchanged"),
            instances: InstanceMap::from_vec(h, w, inst).expect("same size"),
            three_label: ThreeLabelTarget::from_semantic(SemanticMap::from_vec(h, w, 3, tri).expect("3 labels"))
                .expect("3 labels"),
            vectors: CenterVectorField::from_raster(vec_field).expect("2 channels"),
        }
    }
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur<T: Scalar>(img: &Raster<T>, sigma: f64) -> Raster<T> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<T> = kernel.into_iter().map(|k| T::lit(k / norm)).collect();
    let (h, w, c) = img.shape();
    let pass = |src: &Raster<T>, horizontal: bool| {
        let mut out = Raster::zeros(h, w, c);
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    let mut acc = T::zero();
                    for (j, &kv) in kernel.iter().enumerate() {
                        let d = j as isize - radius;
                        let (yy, xx) = if horizontal {
                            (y, (x as isize + d).clamp(0, w as isize - 1) as usize)
                        } else {
                            ((y as isize + d).clamp(0, h as isize - 1) as usize, x)
                        };
                        acc += kv * src.get(yy, xx, k);
                    }
                    out.set(y, x, k, acc);
                }
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

fn symmetric<R: Rng>(rng: &mut R, range: f64) -> f64 {
    if range > 0.0 {
        rng.random_range(-range..=range)
    } else {
        0.0
    }
}

/// Photometric jitter on the image only, then spatial transforms applied to
/// the image and every target alike. Deterministic for a given `seed`.
pub fn augment_train<T: Scalar>(sample: &TrainSample<T>, cfg: &AugmentConfig, seed: u64) -> Result<TrainSample<T>> {
    let mut rng = rng::seeded(seed);
    let mut out = sample.clone();

    if cfg.hed_scale > 0.0 || cfg.hed_bias > 0.0 {
        let basis = StainBasis::<T>::new(cfg.stain_matrix)?;
        let scales = [0; 3].map(|_| T::lit(1.0 + symmetric(&mut rng, cfg.hed_scale)));
        let bias = [0; 3].map(|_| T::lit(symmetric(&mut rng, cfg.hed_bias)));
        out.image = basis.scale_stains(&out.image, scales, bias)?;
    }
    if cfg.rgb_gain > 0.0 || cfg.rgb_offset > 0.0 {
        let c = out.image.channels();
        let gain: Vec<T> = (0..c).map(|_| T::lit(1.0 + symmetric(&mut rng, cfg.rgb_gain))).collect();
        let offset: Vec<T> = (0..c).map(|_| T::lit(symmetric(&mut rng, cfg.rgb_offset))).collect();
        for i in 0..out.image.pixels() {
            for (k, v) in out.image.pixel_mut(i).iter_mut().enumerate() {
                *v = (*v * gain[k] + offset[k]).max(T::zero()).min(T::one());
            }
        }
    }
    if cfg.blur_probability > 0.0 && rng.random_bool(cfg.blur_probability.min(1.0)) {
        let sigma = rng.random_range(0.0..=cfg.blur_sigma_max.max(0.0));
        out.image = gaussian_blur(&out.image, sigma);
    }
    if cfg.noise_std_max > 0.0 {
        let std = rng.random_range(0.0..=cfg.noise_std_max);
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in out.image.data_mut() {
            *v = (*v + T::lit(normal.sample(&mut rng))).max(T::zero()).min(T::one());
        }
    }

    if cfg.dihedral {
        let t = Dihedral::ALL[rng.random_range(0..8)];
        out = out.transformed(t);
    }
    if cfg.max_translation > 0 {
        let m = cfg.max_translation as i64;
        let (dy, dx) = (rng.random_range(-m..=m), rng.random_range(-m..=m));
        if dy != 0 || dx != 0 {
            out = out.translated(dy as isize, dx as isize);
        }
    }
    Ok(out)
}
