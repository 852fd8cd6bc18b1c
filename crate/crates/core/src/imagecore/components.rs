use super::{InstanceMap, Mask, Raster};
use crate::error::Result;
use crate::scalar::Scalar;

/// Pixel adjacency used for labeling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    /// Neighbor offsets `(dy, dx)`.
    pub fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }

    /// Neighbors already visited in a raster scan.
    fn causal_offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
        }
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn with_capacity(n: usize) -> Self {
        Self { parent: Vec::with_capacity(n) }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller id as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling. Pixels `i` and `j` are joined when both are
/// foreground, adjacent, and `same(i, j)`. Output labels follow the raster
/// order of each component's first pixel.
fn label_with<F, S>(height: usize, width: usize, conn: Connectivity, is_fg: F, same: S) -> InstanceMap
where
    F: Fn(usize) -> bool,
    S: Fn(usize, usize) -> bool,
{
    const NONE: u32 = u32::MAX;
    let mut provisional = vec![NONE; height * width];
    let mut sets = DisjointSet::with_capacity(64);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !is_fg(i) {
                continue;
            }
            let mut current = NONE;
            for &(dy, dx) in conn.causal_offsets() {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || nx >= width as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                let lj = provisional[j];
                if lj == NONE || !same(i, j) {
                    continue;
                }
                if current == NONE {
                    current = lj;
                } else {
                    sets.union(current, lj);
                }
            }
            provisional[i] = if current == NONE { sets.make() } else { current };
        }
    }

    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let labels = provisional
        .iter()
        .map(|&p| {
            if p == NONE {
                return 0;
            }
            let root = sets.find(p) as usize;
            if final_of_root[root] == 0 {
                next += 1;
                final_of_root[root] = next;
            }
            final_of_root[root]
        })
        .collect();
    InstanceMap { height, width, labels }
}

/// Labels the connected foreground regions of a boolean mask.
pub fn label_mask(mask: &Mask, conn: Connectivity) -> InstanceMap {
    let data = mask.data();
    label_with(mask.height(), mask.width(), conn, |i| data[i], |_, _| true)
}

/// Labels the connected regions of a binary plane (values exactly 0 or 1).
pub fn connected_components<T: Scalar>(plane: &Raster<T>, conn: Connectivity) -> Result<InstanceMap> {
    let mask = Mask::from_plane(plane)?;
    Ok(label_mask(&mask, conn))
}

/// Splits every instance into its connected pieces. Returns the relabeled map
/// (raster order) and the original label of each new label (`parent[new - 1]`).
pub fn split_labels(inst: &InstanceMap, conn: Connectivity) -> (InstanceMap, Vec<u32>) {
    let labels = inst.labels();
    let out = label_with(inst.height(), inst.width(), conn, |i| labels[i] > 0, |i, j| labels[i] == labels[j]);
    let n = out.labels().iter().copied().max().unwrap_or(0) as usize;
    let mut parent = vec![0u32; n];
    for (i, &l) in out.labels().iter().enumerate() {
        if l > 0 {
            parent[l as usize - 1] = labels[i];
        }
    }
    (out, parent)
}
