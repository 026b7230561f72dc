//! Raw little-endian arrays described by a JSON manifest entry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HiadError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
            ArrayData::U32(_) => Dtype::U32,
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            ArrayData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::U32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    U32,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: ArrayData) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        NamedArray {
            name: name.into(),
            dims,
            data,
        }
    }
}

/// Manifest record of one array file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub dtype: Dtype,
    pub dims: Vec<usize>,
}

pub fn write_array(dir: &Path, file: &str, array: &NamedArray) -> Result<ArrayEntry> {
    let path = dir.join(file);
    std::fs::write(&path, array.data.to_bytes()).map_err(|e| HiadError::io(&path, e))?;
    Ok(ArrayEntry {
        name: array.name.clone(),
        file: file.to_string(),
        dtype: array.data.dtype(),
        dims: array.dims.clone(),
    })
}

pub fn read_array(dir: &Path, entry: &ArrayEntry) -> Result<NamedArray> {
    let path = dir.join(&entry.file);
    let bytes = std::fs::read(&path).map_err(|e| HiadError::io(&path, e))?;
    let count: usize = entry.dims.iter().product();
    if bytes.len() != count * entry.dtype.size() {
        return Err(HiadError::Format(format!(
            "{}: holds {} bytes, manifest dims {:?} ({:?}) need {}",
            path.display(),
            bytes.len(),
            entry.dims,
            entry.dtype,
            count * entry.dtype.size()
        )));
    }
    let data = match entry.dtype {
        Dtype::F32 => ArrayData::F32(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        ),
        Dtype::F64 => ArrayData::F64(
            bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect(),
        ),
        Dtype::U32 => ArrayData::U32(
            bytes
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        ),
    };
    Ok(NamedArray {
        name: entry.name.clone(),
        dims: entry.dims.clone(),
        data,
    })
}

/// Looks up an array by name and checks its type and shape.
pub fn take<'a>(arrays: &'a [NamedArray], name: &str, dims: &[usize]) -> Result<&'a NamedArray> {
    let a = arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| HiadError::Format(format!("missing array {name:?}")))?;
    if a.dims != dims {
        return Err(HiadError::Format(format!(
            "array {name:?} has dims {:?}, expected {dims:?}",
            a.dims
        )));
    }
    Ok(a)
}

pub fn take_f32(arrays: &[NamedArray], name: &str, dims: &[usize]) -> Result<Vec<f32>> {
    match &take(arrays, name, dims)?.data {
        ArrayData::F32(v) => Ok(v.clone()),
        other => Err(HiadError::Format(format!("array {name:?} is {:?}, expected f32", other.dtype()))),
    }
}

pub fn take_f64(arrays: &[NamedArray], name: &str, dims: &[usize]) -> Result<Vec<f64>> {
    match &take(arrays, name, dims)?.data {
        ArrayData::F64(v) => Ok(v.clone()),
        other => Err(HiadError::Format(format!("array {name:?} is {:?}, expected f64", other.dtype()))),
    }
}

pub fn take_u32(arrays: &[NamedArray], name: &str, dims: &[usize]) -> Result<Vec<u32>> {
    match &take(arrays, name, dims)?.data {
        ArrayData::U32(v) => Ok(v.clone()),
        other => Err(HiadError::Format(format!("array {name:?} is {:?}, expected u32", other.dtype()))),
    }
}
