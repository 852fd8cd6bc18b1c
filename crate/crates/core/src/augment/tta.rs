use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dihedral, StainBasis};
use crate::error::{Error, Result};
use crate::imagecore::Raster;
use crate::rng;
use crate::scalar::Scalar;

/// One forward pass of test-time augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtaPass {
    pub transform: Dihedral,
    /// Multiplicative stain intensity per HED channel.
    pub hed_scales: [f64; 3],
    pub dropout_seed: u64,
    /// Index into the model list; several models act as extra passes.
    pub model: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtaPlan {
    pub passes: Vec<TtaPass>,
}

impl TtaPlan {
    /// `passes` identity passes on model 0 with distinct dropout seeds.
    pub fn identity(passes: usize, seed: u64) -> Self {
        let passes = (0..passes)
            .map(|k| TtaPass {
                transform: Dihedral::Identity,
                hed_scales: [1.0; 3],
                dropout_seed: rng::derive(seed, k as u64),
                model: 0,
            })
            .collect();
        Self { passes }
    }

    /// Random flips/rotations and stain intensities in `[1 - hed_range, 1 + hed_range]`.
    /// Passes cycle through `num_models` models.
    pub fn random(passes: usize, hed_range: f64, num_models: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let passes = (0..passes)
            .map(|k| {
                let transform = Dihedral::ALL[r.random_range(0..8)];
                let hed_scales = [0; 3].map(|_| {
                    if hed_range > 0.0 {
                        1.0 + r.random_range(-hed_range..=hed_range)
                    } else {
                        1.0
                    }
                });
                TtaPass { transform, hed_scales, dropout_seed: r.random(), model: k % num_models.max(1) }
            })
            .collect();
        Self { passes }
    }
}

/// Something that maps an RGB raster to `(semantic, three-label)` per-pixel
/// probabilities, deterministically for a given dropout seed.
pub trait Predictor<T>: Sync {
    fn predict(&self, img: &Raster<T>, dropout_seed: u64) -> Result<(Raster<T>, Raster<T>)>;
}

impl<T, F> Predictor<T> for F
where
    F: Fn(&Raster<T>, u64) -> Result<(Raster<T>, Raster<T>)> + Sync,
{
    fn predict(&self, img: &Raster<T>, dropout_seed: u64) -> Result<(Raster<T>, Raster<T>)> {
        self(img, dropout_seed)
    }
}

/// Pixel-wise mean probabilities over all passes.
#[derive(Clone, Debug, PartialEq)]
pub struct TtaOutput<T> {
    pub semantic: Raster<T>,
    pub three_label: Raster<T>,
}

/// Runs every pass (transform, stain scaling, forward with the pass's dropout
/// seed, inverse transform) and averages the probability planes. Passes run
/// in parallel; accumulation is in plan order.
pub fn tta_average<T: Scalar>(
    models: &[&dyn Predictor<T>],
    img: &Raster<T>,
    plan: &TtaPlan,
    basis: &StainBasis<T>,
) -> Result<TtaOutput<T>> {
    if plan.passes.is_empty() {
        return Err(Error::invalid("TTA plan has no passes"));
    }
    if let Some(p) = plan.passes.iter().find(|p| p.model >= models.len()) {
        return Err(Error::invalid(format!("TTA pass refers to model {} of {}", p.model, models.len())));
    }
    let outputs: Vec<Result<(Raster<T>, Raster<T>)>> = plan
        .passes
        .par_iter()
        .map(|pass| {
            let mut input = pass.transform.apply(img);
            if pass.hed_scales != [1.0; 3] {
                input = basis.scale_stains(&input, pass.hed_scales.map(T::lit), [T::zero(); 3])?;
            }
            let (sem, tri) = models[pass.model].predict(&input, pass.dropout_seed)?;
            let back = pass.transform.inverse();
            Ok((back.apply(&sem), back.apply(&tri)))
        })
        .collect();

    let mut acc: Option<(Raster<T>, Raster<T>)> = None;
    for out in outputs {
        let (sem, tri) = out?;
        match acc.as_mut() {
            None => acc = Some((sem, tri)),
            Some((s, t)) => {
                if !s.same_shape(&sem) || !t.same_shape(&tri) {
                    return Err(Error::shape(format!("{:?}", s.shape()), format!("{:?}", sem.shape())));
                }
                s.data_mut().iter_mut().zip(sem.data()).for_each(|(a, b)| *a += *b);
                t.data_mut().iter_mut().zip(tri.data()).for_each(|(a, b)| *a += *b);
            }
        }
    }
    let (mut semantic, mut three_label) = acc.expect("at least one pass");
    let inv = T::one() / T::from_usize_lossy(plan.passes.len());
    semantic.data_mut().iter_mut().for_each(|v| *v *= inv);
    three_label.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok(TtaOutput { semantic, three_label })
}
