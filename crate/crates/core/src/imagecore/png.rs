use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::Raster;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reads an 8-bit RGB PNG into `[0, 1]` values.
pub fn read_rgb_png<T: Scalar>(path: impl AsRef<Path>) -> Result<Raster<T>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = img.dimensions();
    let scale = T::lit(1.0 / 255.0);
    let data = img.into_raw().into_iter().map(|b| T::lit(b as f64) * scale).collect();
    Raster::from_vec(h as usize, w as usize, 3, data)
}

/// Writes a 3-channel raster as 8-bit RGB PNG, clamping to `[0, 1]`.
pub fn write_rgb_png<T: Scalar>(path: impl AsRef<Path>, img: &Raster<T>) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::shape("3 channels", img.channels()));
    }
    let bytes = img.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer matches dimensions");
    buf.save_with_format(path.as_ref(), ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.as_ref().display())))
}
