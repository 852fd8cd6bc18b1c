use serde::{Deserialize, Serialize};

use crate::imagecore::{InstanceMap, Mask, Raster, SemanticMap};
use crate::scalar::Scalar;
use crate::targets::{CenterVectorField, ThreeLabelTarget};

/// The eight symmetries of the square. Rotations are clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dihedral {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipLeftRight,
    FlipUpDown,
    Transpose,
    AntiTranspose,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipLeftRight,
        Dihedral::FlipUpDown,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    pub fn inverse(self) -> Self {
        match self {
            Dihedral::Rot90 => Dihedral::Rot270,
            Dihedral::Rot270 => Dihedral::Rot90,
            other => other,
        }
    }

    fn swaps_axes(self) -> bool {
        matches!(self, Dihedral::Rot90 | Dihedral::Rot270 | Dihedral::Transpose | Dihedral::AntiTranspose)
    }

    pub fn output_shape(self, h: usize, w: usize) -> (usize, usize) {
        if self.swaps_axes() {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Destination of source pixel `(y, x)` in an `h x w` image.
    #[inline]
    pub fn map_coord(self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Dihedral::Identity => (y, x),
            Dihedral::Rot90 => (x, h - 1 - y),
            Dihedral::Rot180 => (h - 1 - y, w - 1 - x),
            Dihedral::Rot270 => (w - 1 - x, y),
            Dihedral::FlipLeftRight => (y, w - 1 - x),
            Dihedral::FlipUpDown => (h - 1 - y, x),
            Dihedral::Transpose => (x, y),
            Dihedral::AntiTranspose => (w - 1 - x, h - 1 - y),
        }
    }

    /// Linear part of the transform applied to a `(dy, dx)` displacement.
    #[inline]
    pub fn map_vector<T: Scalar>(self, dy: T, dx: T) -> (T, T) {
        match self {
            Dihedral::Identity => (dy, dx),
            Dihedral::Rot90 => (dx, -dy),
            Dihedral::Rot180 => (-dy, -dx),
            Dihedral::Rot270 => (-dx, dy),
            Dihedral::FlipLeftRight => (dy, -dx),
            Dihedral::FlipUpDown => (-dy, dx),
            Dihedral::Transpose => (dx, dy),
            Dihedral::AntiTranspose => (-dx, -dy),
        }
    }

    /// Permutes `channels`-interleaved pixels.
    pub fn apply_slice<V: Copy>(self, data: &[V], h: usize, w: usize, channels: usize) -> Vec<V> {
        if self == Dihedral::Identity {
            return data.to_vec();
        }
        let (_, w2) = self.output_shape(h, w);
        let mut out = data.to_vec();
        for y in 0..h {
            for x in 0..w {
                let (y2, x2) = self.map_coord(y, x, h, w);
                let (src, dst) = ((y * w + x) * channels, (y2 * w2 + x2) * channels);
                out[dst..dst + channels].copy_from_slice(&data[src..src + channels]);
            }
        }
        out
    }

    pub fn apply<T: Scalar>(self, r: &Raster<T>) -> Raster<T> {
        let (h2, w2) = self.output_shape(r.height(), r.width());
        let data = self.apply_slice(r.data(), r.height(), r.width(), r.channels());
        Raster::from_vec(h2, w2, r.channels(), data).expect("permutation keeps values")
    }

    pub fn apply_instances(self, m: &InstanceMap) -> InstanceMap {
        let (h2, w2) = self.output_shape(m.height(), m.width());
        InstanceMap::from_vec(h2, w2, self.apply_slice(m.labels(), m.height(), m.width(), 1)).expect("same size")
    }

    pub fn apply_semantic(self, m: &SemanticMap) -> SemanticMap {
        let (h2, w2) = self.output_shape(m.height(), m.width());
        let data = self.apply_slice(m.classes(), m.height(), m.width(), 1);
        SemanticMap::from_vec(h2, w2, m.num_classes(), data).expect("same classes")
    }

    pub fn apply_three_label(self, t: &ThreeLabelTarget) -> ThreeLabelTarget {
        ThreeLabelTarget::from_semantic(self.apply_semantic(t.as_semantic())).expect("3 classes")
    }

    pub fn apply_mask(self, m: &Mask) -> Mask {
        let (h2, w2) = self.output_shape(m.height(), m.width());
        Mask::from_vec(h2, w2, self.apply_slice(m.data(), m.height(), m.width(), 1)).expect("same size")
    }

    /// Moves vectors with their pixels and rotates their components.
    pub fn apply_vectors<T: Scalar>(self, f: &CenterVectorField<T>) -> CenterVectorField<T> {
        let mut moved = self.apply(f.raster());
        for i in 0..moved.pixels() {
            let p = moved.pixel_mut(i);
            let (dy, dx) = self.map_vector(p[0], p[1]);
            p[0] = dy;
            p[1] = dx;
        }
        CenterVectorField::from_raster(moved).expect("2 channels")
    }
}
