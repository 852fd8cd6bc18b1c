//! Instance training targets: three-label maps and center-point vectors.

use crate::error::Result;
use crate::imagecore::{InstanceMap, Raster, SemanticMap};
use crate::scalar::Scalar;

pub const BACKGROUND: u8 = 0;
pub const INTERIOR: u8 = 1;
pub const BOUNDARY: u8 = 2;

/// Per-pixel background / interior / boundary labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreeLabelTarget(SemanticMap);

impl ThreeLabelTarget {
    pub fn from_semantic(map: SemanticMap) -> Result<Self> {
        if map.num_classes() != 3 {
            return Err(crate::Error::shape("3 classes", map.num_classes()));
        }
        Ok(Self(map))
    }

    pub fn as_semantic(&self) -> &SemanticMap {
        &self.0
    }

    pub fn labels(&self) -> &[u8] {
        self.0.classes()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels().iter().filter(|&&l| l == label).count()
    }
}

/// Per-pixel `(dy, dx)` offset to the instance centroid; zero on background.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterVectorField<T>(Raster<T>);

impl<T: Scalar> CenterVectorField<T> {
    pub fn from_raster(r: Raster<T>) -> Result<Self> {
        if r.channels() != 2 {
            return Err(crate::Error::shape("2 channels", r.channels()));
        }
        Ok(Self(r))
    }

    pub fn raster(&self) -> &Raster<T> {
        &self.0
    }

    pub fn into_raster(self) -> Raster<T> {
        self.0
    }

    pub fn at(&self, y: usize, x: usize) -> (T, T) {
        (self.0.get(y, x, 0), self.0.get(y, x, 1))
    }
}

/// Marks instance pixels within `boundary_width` (Chebyshev) of any pixel
/// carrying a different label as boundary, the rest of the instance as
/// interior. Pixels beyond the image edge do not count as outside: the tile
/// border cuts nuclei, it does not delineate them.
pub fn encode_three_label(inst: &InstanceMap, boundary_width: usize) -> ThreeLabelTarget {
    let (h, w) = (inst.height(), inst.width());
    let labels = inst.labels();
    let r = boundary_width.max(1) as isize;
    let mut out = vec![BACKGROUND; h * w];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let y0 = (y as isize - r).max(0) as usize;
            let y1 = (y as isize + r).min(h as isize - 1) as usize;
            let x0 = (x as isize - r).max(0) as usize;
            let x1 = (x as isize + r).min(w as isize - 1) as usize;
            let touches_other = (y0..=y1).any(|yy| labels[yy * w + x0..=yy * w + x1].iter().any(|&m| m != l));
            out[y * w + x] = if touches_other { BOUNDARY } else { INTERIOR };
        }
    }
    ThreeLabelTarget(SemanticMap::from_vec(h, w, 3, out).expect("labels < 3"))
}

/// Offsets from each instance pixel to its instance's centroid, in pixels.
pub fn encode_center_vectors<T: Scalar>(inst: &InstanceMap) -> CenterVectorField<T> {
    let (h, w) = (inst.height(), inst.width());
    let mut field = Raster::zeros(h, w, 2);
    for pixels in inst.pixels_by_label().values() {
        let n = pixels.len() as f64;
        let (sy, sx) = pixels.iter().fold((0.0f64, 0.0f64), |(sy, sx), &i| (sy + (i / w) as f64, sx + (i % w) as f64));
        let (cy, cx) = (sy / n, sx / n);
        for &i in pixels {
            let v = field.pixel_mut(i);
            v[0] = T::lit(cy - (i / w) as f64);
            v[1] = T::lit(cx - (i % w) as f64);
        }
    }
    CenterVectorField(field)
}
