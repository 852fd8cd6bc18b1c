use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::WatershedConfig;
use crate::error::{Error, Result};
use crate::imagecore::{label_mask, Connectivity, InstanceMap, Mask, Raster, SemanticMap};
use crate::scalar::Scalar;

/// Queue entry; ordering is (elevation, insertion sequence), both ascending.
#[derive(Clone, Copy, Debug)]
struct Entry {
    elevation: f64,
    seq: u64,
    index: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.elevation.total_cmp(&other.elevation).then(self.seq.cmp(&other.seq))
    }
}

fn check_plane<T: Scalar>(name: &str, plane: &Raster<T>, h: usize, w: usize) -> Result<()> {
    if plane.shape() != (h, w, 1) {
        let (ph, pw, pc) = plane.shape();
        return Err(Error::shape(format!("{name} {h}x{w}x1"), format!("{ph}x{pw}x{pc}")));
    }
    Ok(())
}

/// Seed mask `p_interior >= t_seed(class)` labeled with 8-connectivity; seeds
/// smaller than `min_seed_area` are dropped and the rest relabeled in raster
/// order.
pub fn seeds<T: Scalar>(p_interior: &Raster<T>, class_map: &SemanticMap, cfg: &WatershedConfig) -> Result<InstanceMap> {
    cfg.validate(class_map.num_classes())?;
    let (h, w) = (class_map.height(), class_map.width());
    check_plane("interior", p_interior, h, w)?;
    let mut mask = Mask::new(h, w);
    for (i, m) in mask.data_mut().iter_mut().enumerate() {
        let c = class_map.classes()[i] as usize;
        *m = p_interior.data()[i].as_f64() >= cfg.seed[c];
    }
    let labeled = label_mask(&mask, Connectivity::Eight);
    if cfg.min_seed_area <= 1 {
        return Ok(labeled);
    }
    let areas = labeled.areas();
    let mut kept = labeled;
    for l in kept.labels_mut() {
        if *l > 0 && areas[l] < cfg.min_seed_area {
            *l = 0;
        }
    }
    Ok(kept.relabel_raster_order().0)
}

/// Seeded watershed on elevation `-p_interior`, flooding only the foreground
/// `p_interior + p_boundary >= t_fg(class)`. A pixel takes the label of the
/// first queued neighbor that reaches it; foreground not connected to any seed
/// stays background.
pub fn watershed_instances<T: Scalar>(
    p_interior: &Raster<T>,
    p_boundary: &Raster<T>,
    class_map: &SemanticMap,
    cfg: &WatershedConfig,
) -> Result<InstanceMap> {
    let (h, w) = (class_map.height(), class_map.width());
    check_plane("boundary", p_boundary, h, w)?;
    let mut out = seeds(p_interior, class_map, cfg)?;
    let interior = p_interior.data();
    let fg: Vec<bool> = (0..h * w)
        .map(|i| {
            let c = class_map.classes()[i] as usize;
            (interior[i] + p_boundary.data()[i]).as_f64() >= cfg.foreground[c]
        })
        .collect();

    let mut queued = vec![false; h * w];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (i, &l) in out.labels().iter().enumerate() {
        if l > 0 {
            queued[i] = true;
            heap.push(Reverse(Entry { elevation: -interior[i].as_f64(), seq, index: i }));
            seq += 1;
        }
    }
    let offsets = Connectivity::Eight.offsets();
    let labels = out.labels_mut();
    while let Some(Reverse(e)) = heap.pop() {
        let (y, x) = ((e.index / w) as isize, (e.index % w) as isize);
        let label = labels[e.index];
        for &(dy, dx) in offsets {
            let (ny, nx) = (y + dy, x + dx);
            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if queued[j] || !fg[j] {
                continue;
            }
            queued[j] = true;
            labels[j] = label;
            heap.push(Reverse(Entry { elevation: -interior[j].as_f64(), seq, index: j }));
            seq += 1;
        }
    }
    Ok(out)
}

/// Gives every 8-connected foreground component that received no label from
/// the flood a fresh label (raster order, after the existing ones). Thin
/// nuclei whose target has no interior ring are otherwise lost.
pub fn recover_unseeded<T: Scalar>(
    inst: &InstanceMap,
    p_interior: &Raster<T>,
    p_boundary: &Raster<T>,
    class_map: &SemanticMap,
    cfg: &WatershedConfig,
) -> Result<InstanceMap> {
    cfg.validate(class_map.num_classes())?;
    let (h, w) = (inst.height(), inst.width());
    check_plane("interior", p_interior, h, w)?;
    check_plane("boundary", p_boundary, h, w)?;
    let mut orphan = Mask::new(h, w);
    for (i, m) in orphan.data_mut().iter_mut().enumerate() {
        let c = class_map.classes()[i] as usize;
        *m = inst.labels()[i] == 0 && (p_interior.data()[i] + p_boundary.data()[i]).as_f64() >= cfg.foreground[c];
    }
    let extra = label_mask(&orphan, Connectivity::Eight);
    let base = inst.labels().iter().copied().max().unwrap_or(0);
    let mut out = inst.clone();
    for (o, &e) in out.labels_mut().iter_mut().zip(extra.labels()) {
        if e > 0 {
            *o = base + e;
        }
    }
    Ok(out)
}
