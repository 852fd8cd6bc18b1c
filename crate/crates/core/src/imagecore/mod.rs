//! Raster types, label maps and the morphology used across the pipeline.

mod components;
mod hull;
mod morphology;
mod png;
mod tensorfile;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use components::{connected_components, label_mask, split_labels, Connectivity};
pub use hull::{convex_hull, polygon_area2, solidity};
pub use morphology::fill_holes;
pub use png::{read_rgb_png, write_rgb_png};
pub use tensorfile::{classes_from_csv, classes_to_csv, decode_tensor, encode_tensor, read_tensor, write_tensor, DType, Tensor, TensorData};

/// Dense row-major raster with interleaved channels (`[y][x][c]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Raster<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    /// Wraps `data`, checking the length and that every value is finite.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::shape(
                format!("{height}x{width}x{channels} = {expected} values"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Stacks single-channel planes into one interleaved raster.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<T>]) -> Result<Self> {
        let channels = planes.len();
        let mut data = vec![T::zero(); height * width * channels];
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != height * width {
                return Err(Error::shape(height * width, plane.len()));
            }
            for (i, &v) in plane.iter().enumerate() {
                data[i * channels + c] = v;
            }
        }
        Self::from_vec(height, width, channels, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: T) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Channel values of the pixel at flat index `i = y * width + x`.
    #[inline]
    pub fn pixel(&self, i: usize) -> &[T] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.channels;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn plane(&self, c: usize) -> Vec<T> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn cast<U: Scalar>(&self) -> Raster<U> {
        Raster {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Boolean plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(height * width, data.len()));
        }
        Ok(Self { height, width, data })
    }

    /// Converts a single-channel plane whose values are exactly 0 or 1.
    pub fn from_plane<T: Scalar>(plane: &Raster<T>) -> Result<Self> {
        if plane.channels() != 1 {
            return Err(Error::shape("1 channel", plane.channels()));
        }
        let mut data = Vec::with_capacity(plane.pixels());
        for (index, &v) in plane.data().iter().enumerate() {
            if v == T::zero() {
                data.push(false);
            } else if v == T::one() {
                data.push(true);
            } else {
                return Err(Error::NonBinary { index, value: v.as_f64() });
            }
        }
        Ok(Self { height: plane.height(), width: plane.width(), data })
    }

    pub fn to_plane<T: Scalar>(&self) -> Raster<T> {
        let data = self.data.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        Raster { height: self.height, width: self.width, channels: 1, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Per-pixel instance identities; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InstanceMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl InstanceMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, labels: vec![0; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(height * width, labels.len()));
        }
        Ok(Self { height, width, labels })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, label: u32) {
        self.labels[y * self.width + x] = label;
    }

    /// Sorted distinct positive labels.
    pub fn ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().copied().filter(|&l| l > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn num_instances(&self) -> usize {
        self.ids().len()
    }

    /// Flat pixel indices of each instance, in raster order.
    pub fn pixels_by_label(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out.entry(l).or_default().push(i);
            }
        }
        out
    }

    pub fn areas(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for &l in &self.labels {
            if l > 0 {
                *out.entry(l).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn mask_of(&self, label: u32) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.labels.iter().map(|&l| l == label && l > 0).collect(),
        }
    }

    pub fn foreground(&self) -> Mask {
        Mask { height: self.height, width: self.width, data: self.labels.iter().map(|&l| l > 0).collect() }
    }

    /// Renumbers labels to `1..=n` in order of each instance's first pixel.
    /// Returns the new map and `old_label[new_label - 1]`.
    pub fn relabel_raster_order(&self) -> (InstanceMap, Vec<u32>) {
        let mut mapping: BTreeMap<u32, u32> = BTreeMap::new();
        let mut order = Vec::new();
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if l == 0 {
                    return 0;
                }
                *mapping.entry(l).or_insert_with(|| {
                    order.push(l);
                    order.len() as u32
                })
            })
            .collect();
        (InstanceMap { height: self.height, width: self.width, labels }, order)
    }
}

/// Per-pixel semantic class index in `[0, num_classes)`; class 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SemanticMap {
    height: usize,
    width: usize,
    num_classes: usize,
    classes: Vec<u8>,
}

impl SemanticMap {
    pub fn new(height: usize, width: usize, num_classes: usize) -> Self {
        Self { height, width, num_classes, classes: vec![0; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, num_classes: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(Error::shape(height * width, classes.len()));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::invalid(format!("num_classes {num_classes} outside 1..=256")));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c as usize >= num_classes) {
            return Err(Error::invalid(format!("class {bad} >= num_classes {num_classes}")));
        }
        Ok(Self { height, width, num_classes, classes })
    }

    /// Paints each instance with its class; unlisted labels become background.
    pub fn from_instances(inst: &InstanceMap, classes: &BTreeMap<u32, u8>, num_classes: usize) -> Result<Self> {
        let data = inst.labels().iter().map(|l| classes.get(l).copied().unwrap_or(0)).collect();
        Self::from_vec(inst.height(), inst.width(), num_classes, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.classes[y * self.width + x]
    }

    /// Per-pixel argmax of a probability (or logit) stack.
    pub fn argmax_of<T: Scalar>(probs: &Raster<T>) -> Result<Self> {
        let c = probs.channels();
        let classes = (0..probs.pixels()).map(|i| crate::scalar::argmax(probs.pixel(i)) as u8).collect();
        Self::from_vec(probs.height(), probs.width(), c, classes)
    }
}

/// Instance map together with the class of every instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledInstances {
    pub map: InstanceMap,
    pub classes: BTreeMap<u32, u8>,
}

impl LabeledInstances {
    pub fn new(map: InstanceMap, classes: BTreeMap<u32, u8>) -> Self {
        Self { map, classes }
    }

    /// Class of `label`, 0 when the label has none.
    pub fn class_of(&self, label: u32) -> u8 {
        self.classes.get(&label).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_rejects_bad_length_and_nan() {
        assert!(matches!(Raster::<f32>::from_vec(2, 2, 1, vec![0.0; 3]), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(Raster::from_vec(1, 2, 1, vec![0.0f32, f32::NAN]), Err(Error::NonFinite(1))));
    }

    #[test]
    fn planes_round_trip() {
        let r = Raster::<f64>::from_planes(1, 2, &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(r.data(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(r.plane(1), vec![3.0, 4.0]);
    }

    #[test]
    fn mask_from_non_binary_plane_fails() {
        let r = Raster::<f32>::from_vec(1, 3, 1, vec![0.0, 1.0, 0.5]).unwrap();
        assert!(matches!(Mask::from_plane(&r), Err(Error::NonBinary { index: 2, .. })));
    }

    #[test]
    fn relabel_uses_first_pixel_order() {
        let m = InstanceMap::from_vec(2, 3, vec![7, 0, 3, 3, 9, 0]).unwrap();
        let (r, order) = m.relabel_raster_order();
        assert_eq!(r.labels(), &[1, 0, 2, 2, 3, 0]);
        assert_eq!(order, vec![7, 3, 9]);
    }

    #[test]
    fn semantic_map_checks_class_range() {
        assert!(SemanticMap::from_vec(1, 2, 3, vec![0, 3]).is_err());
        assert!(SemanticMap::from_vec(1, 2, 3, vec![0, 2]).is_ok());
    }
}
