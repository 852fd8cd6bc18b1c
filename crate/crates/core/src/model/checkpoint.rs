use std::collections::BTreeMap;
use std::path::Path;

use super::{Conv, Model, ModelConfig, LAYER_NAMES};
use crate::error::{Error, Result};
use crate::imagecore::{read_tensor, write_tensor, Tensor, TensorData};
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.txt";

fn tensor_of<T: Scalar>(dims: Vec<usize>, values: &[T]) -> Result<Tensor> {
    Tensor::new(dims, TensorData::F32(values.iter().map(|v| v.as_f64() as f32).collect()))
}

fn values_of<T: Scalar>(t: &Tensor, dims: &[usize], name: &str) -> Result<Vec<T>> {
    if t.dims != dims {
        return Err(Error::shape(format!("{name} {dims:?}"), format!("{:?}", t.dims)));
    }
    match &t.data {
        TensorData::F32(v) => Ok(v.iter().map(|&x| T::lit(x as f64)).collect()),
        other => Err(Error::DtypeMismatch { expected: "f32", found: other.dtype().name() }),
    }
}

/// Writes one f32 TensorFile per weight and bias plus a `key=value` manifest
/// holding the model config, parameter shapes and any `extra` entries.
pub fn save_checkpoint<T: Scalar>(dir: impl AsRef<Path>, model: &Model<T>, extra: &[(String, String)]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = &model.config;
    let mut lines = vec![
        "format_version=1".to_string(),
        format!("num_classes={}", c.num_classes),
        format!("width={}", c.width),
        format!("trunk_kernel={}", c.trunk_kernel),
        format!("head_kernel={}", c.head_kernel),
        format!("dropout={}", c.dropout),
        format!("semantic_loss_weight={}", c.semantic_loss_weight),
        format!("instance_loss_weight={}", c.instance_loss_weight),
        format!("init_seed={}", c.init_seed),
        format!("num_params={}", model.num_params()),
    ];
    for (name, layer) in LAYER_NAMES.iter().zip(&model.layers) {
        let wdims = vec![layer.kernel, layer.kernel, layer.cin, layer.cout];
        lines.push(format!("{name}.weight={}", wdims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")));
        lines.push(format!("{name}.bias={}", layer.cout));
        write_tensor(dir.join(format!("{name}.weight.ntns")), &tensor_of(wdims, &layer.weight)?)?;
        write_tensor(dir.join(format!("{name}.bias.ntns")), &tensor_of(vec![layer.cout], &layer.bias)?)?;
    }
    for (k, v) in extra {
        lines.push(format!("{k}={v}"));
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, lines.join("\n") + "\n").map_err(|e| Error::io(&path, e))
}

fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::invalid(format!("manifest line without '=': {line}")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn field<F: std::str::FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<F> {
    let v = m.get(key).ok_or_else(|| Error::invalid(format!("manifest is missing {key}")))?;
    v.parse().map_err(|_| Error::invalid(format!("manifest {key}={v} is malformed")))
}

pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>) -> Result<Model<T>> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m = parse_manifest(&text)?;
    let config = ModelConfig {
        num_classes: field(&m, "num_classes")?,
        width: field(&m, "width")?,
        trunk_kernel: field(&m, "trunk_kernel")?,
        head_kernel: field(&m, "head_kernel")?,
        dropout: field(&m, "dropout")?,
        semantic_loss_weight: field(&m, "semantic_loss_weight")?,
        instance_loss_weight: field(&m, "instance_loss_weight")?,
        init_seed: field(&m, "init_seed")?,
    };
    let mut model = Model::<T>::zeros(config)?;
    for (name, layer) in LAYER_NAMES.iter().zip(model.layers.iter_mut()) {
        let Conv { kernel, cin, cout, .. } = *layer;
        let w = read_tensor(dir.join(format!("{name}.weight.ntns")))?;
        layer.weight = values_of(&w, &[kernel, kernel, cin, cout], name)?;
        let b = read_tensor(dir.join(format!("{name}.bias.ntns")))?;
        layer.bias = values_of(&b, &[cout], name)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::<f32>::new(ModelConfig { init_seed: 4, ..ModelConfig::default() }).unwrap();
        save_checkpoint(dir.path(), &m, &[("step".into(), "12".into())]).unwrap();
        let back = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(back, m);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("trunk2.weight=3x3x16x16") && text.contains("step=12"));
    }

    #[test]
    fn missing_checkpoint_names_path() {
        let err = load_checkpoint::<f32>("/nonexistent/ckpt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt"));
    }
}
