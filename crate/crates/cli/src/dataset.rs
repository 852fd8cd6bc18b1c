//! On-disk layout. A directory holds tiles keyed by a stem:
//!
//! - `<stem>.png`: RGB image
//! - `<stem>.inst.ntns`: instance map (u16 or u32)
//! - `<stem>.classes.csv`: instance label to class
//! - `<stem>.sem.ntns`: semantic map (u8)
//! - `<stem>.tri.ntns`, `<stem>.vec.ntns`: encoded targets
//! - `<stem>.semprob.ntns`, `<stem>.triprob.ntns`: predicted probabilities
//!
//! Stems are listed in sorted order so every command visits tiles identically.

use std::path::{Path, PathBuf};

use panoptic_core::imagecore::{classes_from_csv, classes_to_csv, read_rgb_png, read_tensor, write_rgb_png, write_tensor, Tensor};
use panoptic_core::{Error, LabeledInstances, Raster, Result, SemanticMap};

pub const IMAGE: &str = "png";
pub const INSTANCES: &str = "inst.ntns";
pub const CLASSES: &str = "classes.csv";
pub const SEMANTIC: &str = "sem.ntns";
pub const THREE_LABEL: &str = "tri.ntns";
pub const VECTORS: &str = "vec.ntns";
pub const SEMANTIC_PROBS: &str = "semprob.ntns";
pub const THREE_LABEL_PROBS: &str = "triprob.ntns";

pub fn path(dir: &Path, stem: &str, kind: &str) -> PathBuf {
    dir.join(format!("{stem}.{kind}"))
}

/// Sorted stems of all `<stem>.<kind>` files in `dir`.
pub fn stems(dir: &Path, kind: &str) -> Result<Vec<String>> {
    let suffix = format!(".{kind}");
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        if let Some(stem) = e.file_name().to_str().and_then(|n| n.strip_suffix(&suffix)) {
            if !stem.is_empty() && !stem.contains('.') {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, format!("no *{suffix} files"))));
    }
    Ok(out)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_image(dir: &Path, stem: &str) -> Result<Raster<f32>> {
    read_rgb_png(path(dir, stem, IMAGE))
}

pub fn write_image(dir: &Path, stem: &str, img: &Raster<f32>) -> Result<()> {
    write_rgb_png(path(dir, stem, IMAGE), img)
}

pub fn read_instances(dir: &Path, stem: &str) -> Result<LabeledInstances> {
    let map = read_tensor(path(dir, stem, INSTANCES))?.to_instances()?;
    let p = path(dir, stem, CLASSES);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let classes = classes_from_csv(&text)?;
    let ids = map.ids();
    if ids.len() != classes.len() || ids.iter().any(|l| !classes.contains_key(l)) {
        return Err(Error::InvalidInput(format!("{}: class table does not match the instance map", p.display())));
    }
    Ok(LabeledInstances::new(map, classes))
}

pub fn write_instances(dir: &Path, stem: &str, inst: &LabeledInstances) -> Result<()> {
    write_tensor(path(dir, stem, INSTANCES), &Tensor::from_instances(&inst.map)?)?;
    write_text(&path(dir, stem, CLASSES), &classes_to_csv(&inst.classes))
}

pub fn write_semantic(dir: &Path, stem: &str, kind: &str, map: &SemanticMap) -> Result<()> {
    write_tensor(path(dir, stem, kind), &Tensor::from_semantic(map))
}

pub fn read_raster(dir: &Path, stem: &str, kind: &str) -> Result<Raster<f32>> {
    read_tensor(path(dir, stem, kind))?.to_raster()
}

pub fn write_raster(dir: &Path, stem: &str, kind: &str, r: &Raster<f32>) -> Result<()> {
    write_tensor(path(dir, stem, kind), &Tensor::from_raster(r))
}
