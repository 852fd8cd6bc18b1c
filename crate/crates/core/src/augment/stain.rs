use crate::error::{Error, Result};
use crate::imagecore::Raster;
use crate::scalar::Scalar;

/// Optical-density floor applied before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-6;

/// Hematoxylin, eosin and DAB optical-density vectors of Ruifrok & Johnston
/// (rows, RGB order), before normalization.
pub const RUIFROK_HED: [[f64; 3]; 3] = [[0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [0.27, 0.57, 0.78]];

/// Stain optical-density basis (one unit row per stain) and its inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct StainBasis<T> {
    matrix: [[T; 3]; 3],
    inverse: [[T; 3]; 3],
}

impl<T: Scalar> StainBasis<T> {
    /// Normalizes each row and inverts the matrix (in `f64`).
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        let mut m = rows;
        for row in m.iter_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::invalid("stain vectors must be non-zero and finite"));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let inv = invert3(&m).ok_or_else(|| Error::invalid("stain matrix is singular"))?;
        let cast = |a: [[f64; 3]; 3]| a.map(|r| r.map(T::lit));
        Ok(Self { matrix: cast(m), inverse: cast(inv) })
    }

    pub fn ruifrok() -> Self {
        Self::new(RUIFROK_HED).expect("reference basis is invertible")
    }

    pub fn matrix(&self) -> &[[T; 3]; 3] {
        &self.matrix
    }

    pub fn inverse(&self) -> &[[T; 3]; 3] {
        &self.inverse
    }

    /// Row vector times matrix.
    #[inline]
    fn mul(v: [T; 3], m: &[[T; 3]; 3]) -> [T; 3] {
        [0, 1, 2].map(|j| v[0] * m[0][j] + v[1] * m[1][j] + v[2] * m[2][j])
    }

    #[inline]
    pub fn rgb_to_hed_pixel(&self, rgb: [T; 3]) -> [T; 3] {
        let floor = T::lit(LOG_FLOOR);
        let od = rgb.map(|v| -(v.max(floor)).ln());
        Self::mul(od, &self.inverse)
    }

    #[inline]
    pub fn hed_to_rgb_pixel(&self, hed: [T; 3]) -> [T; 3] {
        Self::mul(hed, &self.matrix).map(|od| (-od).exp())
    }

    /// Color deconvolution: `HED = -ln(max(rgb, floor)) * M^-1`.
    pub fn rgb_to_hed(&self, img: &Raster<T>) -> Result<Raster<T>> {
        self.map_pixels(img, |p| self.rgb_to_hed_pixel(p))
    }

    /// Inverse of [`rgb_to_hed`](Self::rgb_to_hed): `rgb = exp(-HED * M)`.
    pub fn hed_to_rgb(&self, hed: &Raster<T>) -> Result<Raster<T>> {
        self.map_pixels(hed, |p| self.hed_to_rgb_pixel(p))
    }

    fn map_pixels(&self, img: &Raster<T>, f: impl Fn([T; 3]) -> [T; 3]) -> Result<Raster<T>> {
        if img.channels() != 3 {
            return Err(Error::shape("3 channels", img.channels()));
        }
        let mut out = img.clone();
        for i in 0..img.pixels() {
            let p = img.pixel(i);
            out.pixel_mut(i).copy_from_slice(&f([p[0], p[1], p[2]]));
        }
        Ok(out)
    }

    /// Multiplies each stain concentration by `scales` and maps back to RGB.
    pub fn scale_stains(&self, img: &Raster<T>, scales: [T; 3], bias: [T; 3]) -> Result<Raster<T>> {
        self.map_pixels(img, |p| {
            let hed = self.rgb_to_hed_pixel(p);
            let hed = [0, 1, 2].map(|k| hed[k] * scales[k] + bias[k]);
            self.hed_to_rgb_pixel(hed).map(|v| v.max(T::zero()).min(T::one()))
        })
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 1, 2, 2), -c(1, 0, 2, 2), c(1, 0, 2, 1)],
        [-c(0, 1, 2, 2), c(0, 0, 2, 2), -c(0, 0, 2, 1)],
        [c(0, 1, 1, 2), -c(0, 0, 1, 2), c(0, 0, 1, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    if det.abs() < 1e-12 {
        return None;
    }
    // inverse = adjugate / det, adjugate = cofactor transposed
    Some([0, 1, 2].map(|i| [0, 1, 2].map(|j| cof[j][i] / det)))
}
