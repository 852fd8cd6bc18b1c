//! `NTNS` tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   magic   b"NTNS"
//! offset 4   dtype   u32   0 = u8, 1 = u16, 2 = f32
//! offset 8   ndim    u32
//! offset 12  dims    u32 * ndim
//! then       payload product(dims) * sizeof(dtype) bytes, row-major
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{InstanceMap, Raster, SemanticMap};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"NTNS";
const HEADER: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    U8 = 0,
    U16 = 1,
    F32 = 2,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U16 => 2,
            DType::F32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::U8 => "u8",
            DType::U16 => "u16",
            DType::F32 => "f32",
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(DType::U8),
            1 => Ok(DType::U16),
            2 => Ok(DType::F32),
            other => Err(Error::UnknownDtype(other)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::U8(_) => DType::U8,
            TensorData::U16(_) => DType::U16,
            TensorData::F32(_) => DType::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::U8(v) => v.len(),
            TensorData::U16(v) => v.len(),
            TensorData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(Error::shape(format!("{dims:?} = {n} elements"), data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    fn expect(&self, dtype: DType) -> Result<()> {
        if self.dtype() != dtype {
            return Err(Error::DtypeMismatch { expected: dtype.name(), found: self.dtype().name() });
        }
        Ok(())
    }

    fn hw(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            [h, w] => Ok((*h, *w)),
            [h, w, 1] => Ok((*h, *w)),
            other => Err(Error::shape("[H, W]", format!("{other:?}"))),
        }
    }

    /// `[H, W, C]` f32 tensor.
    pub fn from_raster(r: &Raster<f32>) -> Self {
        Self { dims: vec![r.height(), r.width(), r.channels()], data: TensorData::F32(r.data().to_vec()) }
    }

    pub fn to_raster(&self) -> Result<Raster<f32>> {
        self.expect(DType::F32)?;
        let TensorData::F32(v) = &self.data else { unreachable!() };
        match self.dims.as_slice() {
            [h, w] => Raster::from_vec(*h, *w, 1, v.clone()),
            [h, w, c] => Raster::from_vec(*h, *w, *c, v.clone()),
            other => Err(Error::shape("[H, W] or [H, W, C]", format!("{other:?}"))),
        }
    }

    /// `[H, W]` u16 tensor; labels above 65535 do not fit.
    pub fn from_instances(m: &InstanceMap) -> Result<Self> {
        let labels = m
            .labels()
            .iter()
            .map(|&l| u16::try_from(l).map_err(|_| Error::invalid(format!("instance label {l} exceeds u16"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dims: vec![m.height(), m.width()], data: TensorData::U16(labels) })
    }

    pub fn to_instances(&self) -> Result<InstanceMap> {
        let (h, w) = self.hw()?;
        let labels = match &self.data {
            TensorData::U16(v) => v.iter().map(|&l| l as u32).collect(),
            TensorData::U8(v) => v.iter().map(|&l| l as u32).collect(),
            TensorData::F32(_) => {
                return Err(Error::DtypeMismatch { expected: "u16", found: "f32" });
            }
        };
        InstanceMap::from_vec(h, w, labels)
    }

    /// `[H, W]` u8 tensor.
    pub fn from_semantic(m: &SemanticMap) -> Self {
        Self { dims: vec![m.height(), m.width()], data: TensorData::U8(m.classes().to_vec()) }
    }

    pub fn to_semantic(&self, num_classes: usize) -> Result<SemanticMap> {
        self.expect(DType::U8)?;
        let (h, w) = self.hw()?;
        let TensorData::U8(v) = &self.data else { unreachable!() };
        SemanticMap::from_vec(h, w, num_classes, v.clone())
    }
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimsOverflow(dims.iter().map(|&d| d as u32).collect()))
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let n = element_count(&t.dims)?;
    if n != t.data.len() {
        return Err(Error::shape(n, t.data.len()));
    }
    let mut out = Vec::with_capacity(HEADER + 4 * t.dims.len() + n * t.dtype().size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(t.dtype() as u32).to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        let d = u32::try_from(d).map_err(|_| Error::DimsOverflow(vec![u32::MAX]))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &t.data {
        TensorData::U8(v) => out.extend_from_slice(v),
        TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { expected: HEADER, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < HEADER {
        return Err(Error::Truncated { expected: HEADER, found: bytes.len() });
    }
    let dtype = DType::from_code(read_u32(bytes, 4))?;
    let ndim = read_u32(bytes, 8) as usize;
    let dims_end = ndim
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| Error::DimsOverflow(vec![ndim as u32]))?;
    if bytes.len() < dims_end {
        return Err(Error::Truncated { expected: dims_end, found: bytes.len() });
    }
    let raw_dims: Vec<u32> = (0..ndim).map(|i| read_u32(bytes, HEADER + 4 * i)).collect();
    let count = raw_dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::DimsOverflow(raw_dims.clone()))?;
    let payload = count
        .checked_mul(dtype.size())
        .and_then(|p| p.checked_add(dims_end))
        .ok_or_else(|| Error::DimsOverflow(raw_dims.clone()))?;
    if bytes.len() < payload {
        return Err(Error::Truncated { expected: payload, found: bytes.len() });
    }
    if bytes.len() > payload {
        return Err(Error::invalid(format!("{} trailing bytes after tensor payload", bytes.len() - payload)));
    }
    let body = &bytes[dims_end..];
    let data = match dtype {
        DType::U8 => TensorData::U8(body.to_vec()),
        DType::U16 => TensorData::U16(body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()),
        DType::F32 => {
            TensorData::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        }
    };
    Ok(Tensor { dims: raw_dims.into_iter().map(|d| d as usize).collect(), data })
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let bytes = encode_tensor(t)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    decode_tensor(&bytes)
}

/// Writes `label,class` rows (header included).
pub fn classes_to_csv(classes: &BTreeMap<u32, u8>) -> String {
    let mut s = String::from("label,class\n");
    for (l, c) in classes {
        s.push_str(&format!("{l},{c}\n"));
    }
    s
}

pub fn classes_from_csv(text: &str) -> Result<BTreeMap<u32, u8>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("label")) {
            continue;
        }
        let (l, c) = line.split_once(',').ok_or_else(|| Error::invalid(format!("line {}: expected label,class", n + 1)))?;
        let l: u32 = l.trim().parse().map_err(|_| Error::invalid(format!("line {}: bad label {l:?}", n + 1)))?;
        let c: u8 = c.trim().parse().map_err(|_| Error::invalid(format!("line {}: bad class {c:?}", n + 1)))?;
        out.insert(l, c);
    }
    Ok(out)
}
