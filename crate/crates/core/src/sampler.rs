//! Image-level importance sampling.
//!
//! Each image gets probability `p_n = 1/|C| * sum_c X[c,n] / sum_n X[c,n]`,
//! where `X[c,n]` is the fraction of image `n` covered by class `c`
//! (background included). Images holding a large share of a rare class are
//! drawn more often.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::imagecore::SemanticMap;
use crate::rng;
use crate::scalar::Scalar;

/// Per-image class occupancy, one row of `num_classes` fractions per image.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassOccupancy<T> {
    num_classes: usize,
    rows: Vec<T>,
}

impl<T: Scalar> ClassOccupancy<T> {
    pub fn from_rows(num_classes: usize, rows: Vec<Vec<T>>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != num_classes) {
            return Err(Error::invalid("occupancy rows must have num_classes entries"));
        }
        Ok(Self { num_classes, rows: rows.into_iter().flatten().collect() })
    }

    pub fn num_images(&self) -> usize {
        self.rows.len() / self.num_classes.max(1)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, n: usize) -> &[T] {
        &self.rows[n * self.num_classes..(n + 1) * self.num_classes]
    }

    /// Column sums over images.
    pub fn class_totals(&self) -> Vec<T> {
        let mut totals = vec![T::zero(); self.num_classes];
        for n in 0..self.num_images() {
            for (t, &x) in totals.iter_mut().zip(self.row(n)) {
                *t += x;
            }
        }
        totals
    }

    /// Mean occupancy over a subset of images (e.g. a training batch).
    pub fn mean_of(&self, images: &[usize]) -> Vec<T> {
        let mut mean = vec![T::zero(); self.num_classes];
        for &n in images {
            for (m, &x) in mean.iter_mut().zip(self.row(n)) {
                *m += x;
            }
        }
        let k = T::from_usize_lossy(images.len().max(1));
        mean.iter_mut().for_each(|m| *m /= k);
        mean
    }
}

/// Fraction of pixels of each class, per image.
pub fn class_fractions<T: Scalar>(map: &SemanticMap, num_classes: usize) -> Result<Vec<T>> {
    if map.num_classes() > num_classes {
        return Err(Error::invalid(format!("map has {} classes, expected at most {num_classes}", map.num_classes())));
    }
    let mut counts = vec![0usize; num_classes];
    for &c in map.classes() {
        counts[c as usize] += 1;
    }
    let total = T::from_usize_lossy(map.classes().len().max(1));
    Ok(counts.into_iter().map(|k| T::from_usize_lossy(k) / total).collect())
}

pub fn occupancy<T: Scalar>(maps: &[SemanticMap], num_classes: usize) -> Result<ClassOccupancy<T>> {
    let first = maps.first().ok_or_else(|| Error::invalid("occupancy needs at least one image"))?;
    let mut rows = Vec::with_capacity(maps.len() * num_classes);
    for m in maps {
        if (m.height(), m.width()) != (first.height(), first.width()) {
            return Err(Error::shape(
                format!("{}x{}", first.height(), first.width()),
                format!("{}x{}", m.height(), m.width()),
            ));
        }
        rows.extend(class_fractions::<T>(m, num_classes)?);
    }
    Ok(ClassOccupancy { num_classes, rows })
}

/// Per-image draw probabilities; they sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingDistribution<T> {
    probs: Vec<T>,
}

impl<T: Scalar> SamplingDistribution<T> {
    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![T::one() / T::from_usize_lossy(n.max(1)); n] }
    }

    pub fn from_probs(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < T::zero()) {
            return Err(Error::invalid("sampling probabilities must be finite and non-negative"));
        }
        let sum: T = probs.iter().copied().sum();
        if sum <= T::zero() {
            return Err(Error::invalid("sampling probabilities sum to zero"));
        }
        Ok(Self { probs: probs.into_iter().map(|p| p / sum).collect() })
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

/// Classes with zero total occupancy are left out of the class average.
pub fn sampling_distribution<T: Scalar>(occ: &ClassOccupancy<T>) -> Result<SamplingDistribution<T>> {
    let totals = occ.class_totals();
    let active: Vec<usize> = (0..occ.num_classes()).filter(|&c| totals[c] > T::zero()).collect();
    if active.is_empty() || occ.num_images() == 0 {
        return Err(Error::invalid("occupancy table is all zero"));
    }
    let k = T::from_usize_lossy(active.len());
    let probs = (0..occ.num_images())
        .map(|n| {
            let row = occ.row(n);
            active.iter().map(|&c| row[c] / totals[c]).sum::<T>() / k
        })
        .collect();
    SamplingDistribution::from_probs(probs)
}

/// Draws `epoch_size` image indices with replacement.
pub fn draw_epoch<T: Scalar>(dist: &SamplingDistribution<T>, epoch_size: usize, seed: u64) -> Result<Vec<usize>> {
    let weights: Vec<f64> = dist.probs().iter().map(|p| p.as_f64()).collect();
    let index = WeightedIndex::new(&weights).map_err(|e| Error::invalid(format!("sampling weights: {e}")))?;
    let mut rng = rng::seeded(seed);
    Ok((0..epoch_size).map(|_| index.sample(&mut rng)).collect())
}
