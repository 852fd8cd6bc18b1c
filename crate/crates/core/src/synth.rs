//! Synthetic H&E-like tiles with exact ground truth.
//!
//! Nuclei are non-overlapping ellipses whose classes and areas follow the
//! Lizard statistics (instance share and mean/std area per class). Stain
//! concentrations are painted in HED space and mapped to RGB through the
//! stain basis, so nuclei are hematoxylin-heavy on an eosin background.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{StainBasis, RUIFROK_HED};
use crate::error::{Error, Result};
use crate::imagecore::{fill_holes, label_mask, Connectivity, InstanceMap, LabeledInstances, Mask, Raster, SemanticMap};
use crate::rng;
use crate::scalar::Scalar;

/// Instance share of neu, epi, lym, pla, eos, con in percent.
pub const LIZARD_INSTANCE_SHARE: [f64; 6] = [0.89, 49.50, 21.22, 5.61, 0.68, 22.10];
/// Mean instance area in pixels per nucleus class.
pub const LIZARD_AREA_MEAN: [f64; 6] = [80.78, 119.29, 50.06, 56.30, 87.97, 79.86];
/// Standard deviation of instance area in pixels per nucleus class.
pub const LIZARD_AREA_STD: [f64; 6] = [41.71, 72.82, 19.60, 22.86, 45.91, 49.54];
/// Fraction of background pixels.
pub const LIZARD_BACKGROUND_SHARE: f64 = 0.8397;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Relative instance frequency per nucleus class; normalized on use.
    pub frequencies: Vec<f64>,
    pub area_mean: Vec<f64>,
    pub area_std: Vec<f64>,
    /// Expected fraction of nucleus pixels.
    pub density: f64,
    pub seed: u64,
    /// Minimum Chebyshev distance in pixels between two instances, minus one.
    pub gap: usize,
    /// Probability that a nucleus gets a concave notch.
    pub notch_probability: f64,
    /// Largest accepted major/minor axis ratio.
    pub max_aspect: f64,
    pub max_attempts: usize,
    /// HED concentrations of the background.
    pub background_stain: [f64; 3],
    /// HED concentrations per nucleus class.
    pub nucleus_stain: Vec<[f64; 3]>,
    /// Per-pixel Gaussian noise on HED concentrations.
    pub stain_noise: f64,
    /// Relative per-instance jitter of the nucleus concentrations.
    pub instance_jitter: f64,
    pub stain_matrix: [[f64; 3]; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            frequencies: LIZARD_INSTANCE_SHARE.to_vec(),
            area_mean: LIZARD_AREA_MEAN.to_vec(),
            area_std: LIZARD_AREA_STD.to_vec(),
            density: 1.0 - LIZARD_BACKGROUND_SHARE,
            seed: 0,
            gap: 1,
            notch_probability: 0.0,
            max_aspect: 1.8,
            max_attempts: 500,
            background_stain: [0.05, 0.30, 0.02],
            nucleus_stain: vec![
                [0.50, 0.60, 0.00],
                [0.90, 0.10, 0.00],
                [1.40, 0.00, 0.00],
                [0.70, 0.30, 0.40],
                [0.30, 1.10, 0.00],
                [0.60, 0.10, 0.20],
            ],
            stain_noise: 0.03,
            instance_jitter: 0.1,
            stain_matrix: RUIFROK_HED,
        }
    }
}

impl SceneConfig {
    pub fn num_nucleus_classes(&self) -> usize {
        self.frequencies.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_nucleus_classes();
        if k == 0 || k > u8::MAX as usize - 1 {
            return Err(Error::Config(format!("need 1..=254 nucleus classes, got {k}")));
        }
        if self.area_mean.len() != k || self.area_std.len() != k || self.nucleus_stain.len() != k {
            return Err(Error::Config(format!("per-class settings must all have {k} entries")));
        }
        if self.frequencies.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || self.frequencies.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("frequencies must be non-negative with a positive sum".into()));
        }
        if self.area_mean.iter().any(|m| !(m.is_finite() && *m > 0.0)) || self.area_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("areas must be positive and finite".into()));
        }
        if !(0.0..1.0).contains(&self.density) {
            return Err(Error::Config(format!("density {} outside [0,1)", self.density)));
        }
        if !(0.0..=1.0).contains(&self.notch_probability) || !(self.max_aspect >= 1.0) {
            return Err(Error::Config("notch_probability must be in [0,1] and max_aspect >= 1".into()));
        }
        if self.height == 0 || self.width == 0 || self.max_attempts == 0 {
            return Err(Error::Config("tile size and max_attempts must be positive".into()));
        }
        Ok(())
    }

    /// Frequencies normalized to sum to 1.
    pub fn shares(&self) -> Vec<f64> {
        let s: f64 = self.frequencies.iter().sum();
        self.frequencies.iter().map(|f| f / s).collect()
    }

    /// Expected instance count per tile: nucleus pixels over mean instance area.
    pub fn expected_instances(&self) -> f64 {
        let mean_area: f64 = self.shares().iter().zip(&self.area_mean).map(|(f, a)| f * a).sum();
        self.density * (self.height * self.width) as f64 / mean_area
    }
}

/// One placed nucleus.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub label: u32,
    /// Semantic class, 1-based.
    pub class: u8,
    pub pixels: Vec<usize>,
}

/// Instance layout of a tile, without rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
    pub placements: Vec<Placement>,
}

impl Layout {
    pub fn instances(&self) -> LabeledInstances {
        let mut map = InstanceMap::new(self.height, self.width);
        let mut classes = BTreeMap::new();
        for p in &self.placements {
            for &i in &p.pixels {
                map.labels_mut()[i] = p.label;
            }
            classes.insert(p.label, p.class);
        }
        LabeledInstances::new(map, classes)
    }

    pub fn counts(&self, num_nucleus_classes: usize) -> Vec<u64> {
        let mut counts = vec![0; num_nucleus_classes];
        for p in &self.placements {
            counts[p.class as usize - 1] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTile<T> {
    pub image: Raster<T>,
    pub instances: LabeledInstances,
    pub semantic: SemanticMap,
    /// Instance count per nucleus class (class `c` at index `c - 1`).
    pub counts: Vec<u64>,
}

/// Pixels of a rotated ellipse (pixel centers inside), optionally notched by
/// a disc centered on the end of the minor axis. Coordinates relative to the
/// center pixel.
fn ellipse_pixels(a: f64, b: f64, theta: f64, notch: Option<f64>) -> Vec<(i64, i64)> {
    let r = a.ceil() as i64 + 1;
    let (s, c) = theta.sin_cos();
    let notch_center = notch.map(|rad| ((-s) * b, c * b, rad));
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let (y, x) = (dy as f64, dx as f64);
            let u = x * c + y * s;
            let v = -x * s + y * c;
            if (u / a).powi(2) + (v / b).powi(2) > 1.0 {
                continue;
            }
            if let Some((ny, nx, rad)) = notch_center {
                if (y - ny).powi(2) + (x - nx).powi(2) <= rad * rad {
                    continue;
                }
            }
            out.push((dy, dx));
        }
    }
    out
}

/// True when the offsets form one 8-connected, hole-free region.
fn is_valid_offsets(shape: &[(i64, i64)]) -> bool {
    if shape.is_empty() {
        return false;
    }
    let y0 = shape.iter().map(|p| p.0).min().unwrap();
    let x0 = shape.iter().map(|p| p.1).min().unwrap();
    let bh = (shape.iter().map(|p| p.0).max().unwrap() - y0 + 1) as usize;
    let bw = (shape.iter().map(|p| p.1).max().unwrap() - x0 + 1) as usize;
    let mut mask = Mask::new(bh, bw);
    for &(y, x) in shape {
        mask.set((y - y0) as usize, (x - x0) as usize, true);
    }
    label_mask(&mask, Connectivity::Eight).num_instances() == 1 && fill_holes(&mask).count() == shape.len()
}

const SHAPE_REDRAWS: usize = 8;

/// Draws a valid (connected, hole-free) nucleus shape, or an empty one after
/// `max_attempts` invalid draws.
fn draw_shape(cfg: &SceneConfig, class: usize, area_dist: Option<&LogNormal<f64>>, rng: &mut rng::Rng) -> Vec<(i64, i64)> {
    for _ in 0..cfg.max_attempts {
        let area = area_dist.map_or(cfg.area_mean[class], |d| d.sample(rng)).max(4.0);
        let aspect = rng.random_range(1.0..=cfg.max_aspect);
        let a = (area * aspect / std::f64::consts::PI).sqrt();
        let b = (area / (aspect * std::f64::consts::PI)).sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let notch = rng.random_bool(cfg.notch_probability).then_some(0.6 * b);
        let shape = ellipse_pixels(a, b, theta, notch);
        if is_valid_offsets(&shape) {
            return shape;
        }
    }
    Vec::new()
}

/// Tries random centers until the shape lies inside the tile on unblocked pixels.
fn place(shape: &[(i64, i64)], blocked: &[bool], h: usize, w: usize, attempts: usize, rng: &mut rng::Rng) -> Option<Vec<usize>> {
    'attempt: for _ in 0..attempts {
        let cy = rng.random_range(0..h) as i64;
        let cx = rng.random_range(0..w) as i64;
        let mut pixels = Vec::with_capacity(shape.len());
        for &(dy, dx) in shape {
            let (y, x) = (cy + dy, cx + dx);
            if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 || blocked[y as usize * w + x as usize] {
                continue 'attempt;
            }
            pixels.push(y as usize * w + x as usize);
        }
        return Some(pixels);
    }
    None
}

/// Places nuclei by rejection sampling: a Poisson number of instances,
/// classes drawn from the frequencies, lognormal areas with the configured
/// mean and std, uniform orientation and aspect ratio, fully inside the tile
/// and at least `gap` pixels from every other nucleus.
pub fn layout(cfg: &SceneConfig) -> Result<Layout> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = rng::seeded(cfg.seed);
    let lambda = cfg.expected_instances();
    let n = if lambda > 0.0 {
        Poisson::new(lambda).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize
    } else {
        0
    };
    let class_dist = WeightedIndex::new(cfg.shares()).map_err(|e| Error::Config(e.to_string()))?;
    let area_dists: Vec<Option<LogNormal<f64>>> = cfg
        .area_mean
        .iter()
        .zip(&cfg.area_std)
        .map(|(&m, &s)| {
            if s == 0.0 {
                return Ok(None);
            }
            let sigma2 = (1.0 + (s / m).powi(2)).ln();
            LogNormal::new(m.ln() - sigma2 / 2.0, sigma2.sqrt()).map(Some).map_err(|e| Error::Config(e.to_string()))
        })
        .collect::<Result<_>>()?;

    // blocked[i]: pixel lies within `gap` of a placed nucleus
    let mut blocked = vec![false; h * w];
    let mut placements = Vec::with_capacity(n);
    for k in 0..n {
        let class = class_dist.sample(&mut rng);
        // A shape is kept for up to `max_attempts` positions; resampling it on
        // every rejection would bias areas towards small nuclei. Only a shape
        // that fits nowhere is redrawn, a bounded number of times.
        let mut placed = None;
        for _ in 0..SHAPE_REDRAWS {
            let shape = draw_shape(cfg, class, area_dists[class].as_ref(), &mut rng);
            if shape.is_empty() {
                continue;
            }
            placed = place(&shape, &blocked, h, w, cfg.max_attempts, &mut rng);
            if placed.is_some() {
                break;
            }
        }
        let Some(pixels) = placed else {
            return Err(Error::InfeasibleDensity {
                placed: k,
                requested: n,
                detail: format!("no free spot for a class {} nucleus after {} shapes of {} attempts each", class + 1, SHAPE_REDRAWS, cfg.max_attempts),
            });
        };
        let g = cfg.gap as i64;
        for &i in &pixels {
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            for ny in (y - g).max(0)..=(y + g).min(h as i64 - 1) {
                for nx in (x - g).max(0)..=(x + g).min(w as i64 - 1) {
                    blocked[ny as usize * w + nx as usize] = true;
                }
            }
        }
        placements.push(Placement { label: k as u32 + 1, class: class as u8 + 1, pixels });
    }
    Ok(Layout { height: h, width: w, placements })
}

/// Lays out and renders one tile.
pub fn generate<T: Scalar>(cfg: &SceneConfig) -> Result<SyntheticTile<T>> {
    let lay = layout(cfg)?;
    let (h, w) = (cfg.height, cfg.width);
    let basis = StainBasis::<f64>::new(cfg.stain_matrix)?;
    // independent stream so rendering never perturbs the layout
    let mut rng = rng::seeded(rng::derive(cfg.seed, 1));
    let noise = Normal::new(0.0, cfg.stain_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut hed = vec![cfg.background_stain; h * w];
    for p in &lay.placements {
        let jitter = 1.0 + cfg.instance_jitter * rng.random_range(-1.0..=1.0);
        let stain = cfg.nucleus_stain[p.class as usize - 1].map(|v| v * jitter);
        for &i in &p.pixels {
            hed[i] = stain;
        }
    }
    let mut data = Vec::with_capacity(h * w * 3);
    for px in &hed {
        let c = px.map(|v| (v + noise.sample(&mut rng)).max(0.0));
        data.extend(basis.hed_to_rgb_pixel(c).map(|v| T::lit(v.clamp(0.0, 1.0))));
    }
    let image = Raster::from_vec(h, w, 3, data)?;
    let instances = lay.instances();
    let semantic = SemanticMap::from_instances(&instances.map, &instances.classes, cfg.num_nucleus_classes() + 1)?;
    let counts = lay.counts(cfg.num_nucleus_classes());
    Ok(SyntheticTile { image, instances, semantic, counts })
}

/// Generates `n` tiles in parallel; tile `k` uses seed `derive(cfg.seed, k)`.
pub fn generate_corpus<T: Scalar>(cfg: &SceneConfig, n: usize) -> Result<Vec<SyntheticTile<T>>> {
    (0..n)
        .into_par_iter()
        .map(|k| generate(&SceneConfig { seed: rng::derive(cfg.seed, k as u64), ..cfg.clone() }))
        .collect()
}
