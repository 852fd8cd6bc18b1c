//! From averaged probability planes to labeled, classified instances.

mod filter;
mod search;
mod watershed;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use filter::{filter_instances, FilterStages};
pub use search::{coordinate_search, evaluate_config, grid_search, GridResult, Objective, ParameterGrid, SearchRow, ValidationItem};
pub use watershed::{recover_unseeded, seeds, watershed_instances};

use crate::error::{Error, Result};
use crate::imagecore::{split_labels, Connectivity, InstanceMap, LabeledInstances, Raster, SemanticMap};
use crate::scalar::Scalar;
use crate::targets::{BOUNDARY, INTERIOR};
use crate::NUM_CLASSES;

/// Per-class watershed thresholds, indexed by semantic class (index 0 applies
/// to pixels whose semantic argmax is background).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatershedConfig {
    pub seed: Vec<f64>,
    pub foreground: Vec<f64>,
    pub min_seed_area: usize,
}

impl WatershedConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        Self { seed: vec![0.6; num_classes], foreground: vec![0.5; num_classes], min_seed_area: 2 }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.seed.len() != num_classes || self.foreground.len() != num_classes {
            return Err(Error::Config(format!(
                "watershed thresholds need {num_classes} entries, got seed={} foreground={}",
                self.seed.len(),
                self.foreground.len()
            )));
        }
        for (c, (&s, &f)) in self.seed.iter().zip(&self.foreground).enumerate() {
            if !(s > 0.0 && s < 1.0 && f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("class {c}: thresholds must lie in (0,1), got seed={s} foreground={f}")));
            }
            if s < f {
                return Err(Error::Config(format!("class {c}: seed threshold {s} below foreground threshold {f}")));
            }
        }
        Ok(())
    }
}

impl Default for WatershedConfig {
    fn default() -> Self {
        Self::with_classes(NUM_CLASSES)
    }
}

/// Per-class instance filters, indexed by class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub min_area: Vec<usize>,
    pub max_area: Vec<usize>,
    pub min_solidity: Vec<f64>,
}

impl FilterConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        Self { min_area: vec![8; num_classes], max_area: vec![1000; num_classes], min_solidity: vec![0.75; num_classes] }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.min_area.len() != num_classes || self.max_area.len() != num_classes || self.min_solidity.len() != num_classes {
            return Err(Error::Config(format!("filter settings need {num_classes} entries per field")));
        }
        for c in 0..num_classes {
            if self.min_area[c] >= self.max_area[c] {
                return Err(Error::Config(format!(
                    "class {c}: min_area {} must be below max_area {}",
                    self.min_area[c], self.max_area[c]
                )));
            }
            if !(0.0..=1.0).contains(&self.min_solidity[c]) {
                return Err(Error::Config(format!("class {c}: solidity threshold {} outside [0,1]", self.min_solidity[c])));
            }
        }
        Ok(())
    }

    /// Classes beyond the configured range are never filtered.
    fn area_ok(&self, class: usize, area: usize) -> bool {
        match (self.min_area.get(class), self.max_area.get(class)) {
            (Some(&lo), Some(&hi)) => area >= lo && area <= hi,
            _ => true,
        }
    }

    fn solidity_for(&self, class: usize) -> f64 {
        self.min_solidity.get(class).copied().unwrap_or(0.0)
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::with_classes(NUM_CLASSES)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub watershed: WatershedConfig,
    pub filter: FilterConfig,
    /// Turn seedless foreground components into instances after flooding.
    pub recover_unseeded: bool,
    pub split_components: bool,
    pub fill_holes: bool,
    pub size_filter: bool,
    pub solidity_filter: bool,
}

impl PostprocessConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        Self {
            watershed: WatershedConfig::with_classes(num_classes),
            filter: FilterConfig::with_classes(num_classes),
            recover_unseeded: true,
            split_components: true,
            fill_holes: true,
            size_filter: true,
            solidity_filter: true,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.watershed.seed.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_classes();
        self.watershed.validate(n)?;
        self.filter.validate(n)
    }

    pub fn stages(&self) -> FilterStages {
        FilterStages { fill_holes: self.fill_holes, size: self.size_filter, solidity: self.solidity_filter }
    }
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self::with_classes(NUM_CLASSES)
    }
}

/// Splits every instance into its 8-connected pieces, relabeled in raster order.
pub fn split_disconnected(inst: &InstanceMap) -> InstanceMap {
    split_labels(inst, Connectivity::Eight).0
}

/// Class of every instance: the non-background class with the largest summed
/// probability over the instance's pixels, lowest index on ties.
pub fn assign_classes<T: Scalar>(inst: &InstanceMap, semantic_probs: &Raster<T>) -> Result<BTreeMap<u32, u8>> {
    let c = semantic_probs.channels();
    if (semantic_probs.height(), semantic_probs.width()) != (inst.height(), inst.width()) || c < 2 {
        return Err(Error::shape(
            format!("{}x{}xC (C >= 2)", inst.height(), inst.width()),
            format!("{}x{}x{}", semantic_probs.height(), semantic_probs.width(), c),
        ));
    }
    let mut out = BTreeMap::new();
    for (label, pixels) in inst.pixels_by_label() {
        let mut sums = vec![T::zero(); c - 1];
        for &i in &pixels {
            for (s, &p) in sums.iter_mut().zip(&semantic_probs.pixel(i)[1..]) {
                *s += p;
            }
        }
        out.insert(label, crate::scalar::argmax(&sums) as u8 + 1);
    }
    Ok(out)
}

/// Watershed, recovery of seedless components, component split, class
/// assignment, filtering, then class reassignment on the final masks. Output labels are consecutive in raster
/// order.
pub fn postprocess<T: Scalar>(semantic_probs: &Raster<T>, three_label_probs: &Raster<T>, cfg: &PostprocessConfig) -> Result<LabeledInstances> {
    cfg.validate()?;
    let (h, w, c) = semantic_probs.shape();
    if c != cfg.num_classes() {
        return Err(Error::shape(format!("{} semantic planes", cfg.num_classes()), format!("{c}")));
    }
    if three_label_probs.shape() != (h, w, 3) {
        let (th, tw, tc) = three_label_probs.shape();
        return Err(Error::shape(format!("{h}x{w}x3"), format!("{th}x{tw}x{tc}")));
    }
    let class_map = SemanticMap::argmax_of(semantic_probs)?;
    let p_int = Raster::from_vec(h, w, 1, three_label_probs.plane(INTERIOR as usize))?;
    let p_bnd = Raster::from_vec(h, w, 1, three_label_probs.plane(BOUNDARY as usize))?;
    let mut inst = watershed_instances(&p_int, &p_bnd, &class_map, &cfg.watershed)?;
    if cfg.recover_unseeded {
        inst = recover_unseeded(&inst, &p_int, &p_bnd, &class_map, &cfg.watershed)?;
    }
    if cfg.split_components {
        inst = split_disconnected(&inst);
    }
    let classes = assign_classes(&inst, semantic_probs)?;
    let filtered = filter_instances(&inst, &classes, &cfg.filter, cfg.stages())?;
    let (map, _) = filtered.relabel_raster_order();
    let classes = assign_classes(&map, semantic_probs)?;
    Ok(LabeledInstances::new(map, classes))
}
