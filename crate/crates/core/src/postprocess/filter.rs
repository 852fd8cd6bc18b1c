use std::collections::BTreeMap;

use super::FilterConfig;
use crate::error::Result;
use crate::imagecore::{fill_holes, solidity, InstanceMap, Mask};

/// Which stages of [`filter_instances`] run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterStages {
    pub fill_holes: bool,
    pub size: bool,
    pub solidity: bool,
}

impl Default for FilterStages {
    fn default() -> Self {
        Self { fill_holes: true, size: true, solidity: true }
    }
}

/// Hole-fills every instance, then drops instances outside their class's area
/// range, then those below the class's solidity threshold. Area and solidity
/// are measured on the filled mask. Filled pixels never take over a surviving
/// instance; a pixel claimed by several filled instances goes to the smallest
/// one (lowest label on ties). Labels are kept, removed instances become
/// background. The result is a fixed point of the function.
pub fn filter_instances(inst: &InstanceMap, classes: &BTreeMap<u32, u8>, cfg: &FilterConfig, stages: FilterStages) -> Result<InstanceMap> {
    let (h, w) = (inst.height(), inst.width());
    let by_label = inst.pixels_by_label();
    let mut filled: BTreeMap<u32, Mask> = BTreeMap::new();
    let mut kept: Vec<(u32, usize)> = Vec::new();
    for (&label, pixels) in &by_label {
        let mut mask = Mask::new(h, w);
        for &i in pixels {
            mask.data_mut()[i] = true;
        }
        if stages.fill_holes {
            mask = fill_holes(&mask);
        }
        let area = mask.count();
        let c = classes.get(&label).copied().unwrap_or(0) as usize;
        let keep_size = !stages.size || cfg.area_ok(c, area);
        let keep_solid = !stages.solidity || solidity(&mask)? >= cfg.solidity_for(c);
        if keep_size && keep_solid {
            kept.push((label, area));
            filled.insert(label, mask);
        }
    }
    let survives: BTreeMap<u32, usize> = kept.iter().copied().collect();
    let mut out = InstanceMap::new(h, w);
    // innermost (smallest) filled instance wins contested pixels
    kept.sort_by_key(|&(l, a)| (a, l));
    let labels = out.labels_mut();
    for (i, slot) in labels.iter_mut().enumerate() {
        let own = inst.labels()[i];
        if own > 0 && survives.contains_key(&own) {
            *slot = own;
        }
    }
    for &(label, _) in &kept {
        for (i, &m) in filled[&label].data().iter().enumerate() {
            if m && labels[i] == 0 {
                labels[i] = label;
            }
        }
    }
    Ok(out)
}
