//! Model weight containers and the `FCPW` dense model file format.
//!
//! `FCPW` layout, all integers little-endian:
//!
//! ```text
//! "FCPW" | version u16 | layer_count u32 |
//! per layer: name_len u16 | name (UTF-8) | rank u8 | dims u32 × rank | values f32 × Π dims
//! ```

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::io::Reader;

pub const MODEL_MAGIC: &[u8; 4] = b"FCPW";
pub const MODEL_VERSION: u16 = 1;

/// Extents of a dense tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorShape {
    dims: Vec<usize>,
}

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape must have positive extents, got {dims:?}"
            )));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Number of elements (the layer's parameter count).
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// A named dense tensor of `f32` values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensor {
    name: String,
    shape: TensorShape,
    values: Vec<f32>,
}

impl LayerTensor {
    pub fn new(name: impl Into<String>, shape: TensorShape, values: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if values.len() != shape.numel() {
            return Err(Error::ShapeMismatch(format!(
                "layer {name:?}: {} values for shape {:?}",
                values.len(),
                shape.dims()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "layer {name:?}: non-finite value at index {i}"
            )));
        }
        Ok(Self { name, shape, values })
    }

    pub fn zeros(name: impl Into<String>, shape: TensorShape) -> Self {
        let n = shape.numel();
        Self { name: name.into(), shape, values: vec![0.0; n] }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mutable access for in-crate updates; callers must keep values finite.
    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }
}

/// Ordered list of uniquely named layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    layers: Vec<LayerTensor>,
}

impl ModelWeights {
    pub fn new(layers: Vec<LayerTensor>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model has no layers".into()));
        }
        let mut seen = HashSet::new();
        for l in &layers {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate layer name {:?}", l.name)));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerTensor] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerTensor] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total parameter count N.
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerTensor::len).sum()
    }

    /// All values flattened in layer order.
    pub fn flat_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.layers.iter().flat_map(|l| l.values.iter().copied())
    }

    /// True when both models have the same layer names and shapes.
    pub fn same_structure(&self, other: &ModelWeights) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub(crate) fn check_same_structure(&self, other: &ModelWeights) -> Result<()> {
        if self.same_structure(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("models differ in layer names or shapes".into()))
        }
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ModelWeights) -> bool {
        self.same_structure(other)
            && self
                .flat_values()
                .zip(other.flat_values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Encodes the model in the `FCPW` format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.num_params() * 4);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.name.len() as u16).to_le_bytes());
            out.extend_from_slice(l.name.as_bytes());
            out.push(l.shape.rank() as u8);
            for &d in l.shape.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &l.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes an `FCPW` buffer. Errors carry the byte offset of the fault.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MODEL_MAGIC, "FCPW")?;
        let at = r.offset();
        let version = r.u16("version")?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion { offset: at, version });
        }
        let at = r.offset();
        let count = r.u32("layer count")? as usize;
        if count == 0 {
            return Err(Error::Malformed { offset: at, reason: "layer count is zero".into() });
        }
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.name()?;
            let (shape, at) = r.shape()?;
            let n = shape.numel();
            let raw = r.bytes(n.checked_mul(4).ok_or(Error::Malformed {
                offset: at,
                reason: "tensor too large".into(),
            })?, "tensor values")?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let at = r.offset();
            let layer = LayerTensor::new(name, shape, values)
                .map_err(|e| Error::Malformed { offset: at, reason: e.to_string() })?;
            layers.push(layer);
        }
        if r.remaining() != 0 {
            return Err(Error::Malformed { offset: r.offset(), reason: "trailing bytes".into() });
        }
        ModelWeights::new(layers).map_err(|e| Error::Malformed { offset: 0, reason: e.to_string() })
    }
}
