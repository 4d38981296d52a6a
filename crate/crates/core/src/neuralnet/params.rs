//! Flat parameter vectors, their canonical layouts and the checkpoint format.
//!
//! Checkpoint byte layout (all integers and reals little-endian):
//!
//! ```text
//! magic      4 bytes  "FTPV"
//! version    u32      1
//! tag_len    u16      then `tag_len` UTF-8 bytes (architecture tag)
//! n_tensors  u32
//!   per tensor: name_len u16, name bytes, ndim u8, ndim × u32 dims
//! n_values   u64
//! values     n_values × f64
//! ```

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{Architecture, ModelSpec, KERNEL};
use super::ModelError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FTPV";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered tensor descriptors; tensors occupy contiguous spans in order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    pub tag: String,
    pub tensors: Vec<TensorSpec>,
}

impl Layout {
    pub fn new(tag: impl Into<String>) -> Self {
        Self { tag: tag.into(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let offset = self.len();
        self.tensors.push(TensorSpec { name: name.into(), shape, offset });
        offset
    }

    pub fn len(&self) -> usize {
        self.tensors.last().map_or(0, |t| t.offset + t.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Canonical layout for a model spec.
    pub fn for_spec(spec: &ModelSpec) -> Self {
        let mut layout = Layout::new(spec.architecture.tag());
        let dense = |layout: &mut Layout, name: &str, i: usize, o: usize| {
            layout.push(format!("{name}.weight"), vec![o, i]);
            layout.push(format!("{name}.bias"), vec![o]);
        };
        match spec.architecture {
            Architecture::Mlp => {
                let mut prev = spec.input_size();
                for (k, &h) in spec.mlp_hidden.iter().enumerate() {
                    dense(&mut layout, &format!("dense{k}"), prev, h);
                    prev = h;
                }
                dense(&mut layout, "output", prev, spec.n_targets);
            }
            Architecture::Rnn | Architecture::Lstm | Architecture::Gru => {
                let h = spec.recurrent_units;
                let rows = spec.architecture.gates() * h;
                let tag = spec.architecture.tag();
                layout.push(format!("{tag}.weight_input"), vec![rows, spec.n_features]);
                layout.push(format!("{tag}.weight_hidden"), vec![rows, h]);
                layout.push(format!("{tag}.bias"), vec![rows]);
                dense(&mut layout, "head", h, spec.head_units);
                dense(&mut layout, "output", spec.head_units, spec.n_targets);
            }
            Architecture::Cnn => {
                let mut prev = 1;
                for (k, &f) in spec.conv_filters.iter().enumerate() {
                    layout.push(format!("conv{k}.weight"), vec![f, prev, KERNEL, KERNEL]);
                    layout.push(format!("conv{k}.bias"), vec![f]);
                    prev = f;
                }
                dense(&mut layout, "head", prev, spec.head_units);
                dense(&mut layout, "output", spec.head_units, spec.n_targets);
            }
        }
        layout
    }
}

/// All trainable parameters of a model, flattened in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != layout.len() {
            return Err(ModelError::LayoutMismatch { expected: layout.len(), found: values.len() });
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.values[t.span()])
    }

    pub fn check_same_layout(&self, other: &ParameterVector) -> Result<(), ModelError> {
        if self.layout != other.layout {
            return Err(ModelError::LayoutMismatch { expected: self.len(), found: other.len() });
        }
        Ok(())
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(self.layout.clone(), values)
    }

    /// Size in bytes of the serialized checkpoint.
    pub fn serialized_len(&self) -> usize {
        header_len(&self.layout) + 8 * self.len()
    }
}

fn header_len(layout: &Layout) -> usize {
    let tensors: usize = layout
        .tensors
        .iter()
        .map(|t| 2 + t.name.len() + 1 + 4 * t.shape.len())
        .sum();
    4 + 4 + 2 + layout.tag.len() + 4 + tensors + 8
}

/// Deterministic initialization for `(spec, seed)`.
///
/// Weights and biases are uniform in `±1/√fan_in`, where fan-in is the input
/// width for dense layers, `in_channels · 3 · 3` for convolutions and the
/// unit count for recurrent layers. LSTM forget-gate biases start at zero.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ParameterVector, ModelError> {
    spec.validate()?;
    let layout = Layout::for_spec(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(layout.len());
    let mut fan_in = 1;
    for t in &layout.tensors {
        if t.shape.len() > 1 {
            fan_in = match spec.architecture {
                Architecture::Rnn | Architecture::Lstm | Architecture::Gru if t.name.contains(".weight_") => {
                    spec.recurrent_units
                }
                _ => t.shape[1..].iter().product(),
            };
        }
        // Biases follow the weight tensor that precedes them.
        let bound = 1.0 / (fan_in as f64).sqrt();
        let forget_gate = (spec.architecture == Architecture::Lstm && t.name == "lstm.bias")
            .then(|| spec.recurrent_units..2 * spec.recurrent_units);
        for k in 0..t.len() {
            let v = rng.random_range(-bound..bound);
            let zeroed = forget_gate.as_ref().is_some_and(|r| r.contains(&k));
            values.push(if zeroed { 0.0 } else { v });
        }
    }
    ParameterVector::new(layout, values)
}

pub fn serialize_params(params: &ParameterVector) -> Vec<u8> {
    let layout = &params.layout;
    let mut out = Vec::with_capacity(params.serialized_len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(layout.tag.len() as u16).to_le_bytes());
    out.extend_from_slice(layout.tag.as_bytes());
    out.extend_from_slice(&(layout.tensors.len() as u32).to_le_bytes());
    for t in &layout.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &dim in &t.shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(ModelError::Truncated)?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn string(&mut self, len: usize) -> Result<String, ModelError> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| ModelError::Corrupt("invalid utf-8 name".into()))
    }
}

/// Parses a checkpoint, returning the layout stored in its header.
pub fn read_checkpoint(bytes: &[u8]) -> Result<ParameterVector, ModelError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Corrupt(format!("unsupported version {version}")));
    }
    let tag_len = u16::from_le_bytes(r.array()?) as usize;
    let mut layout = Layout::new(r.string(tag_len)?);
    let n_tensors = u32::from_le_bytes(r.array()?);
    for _ in 0..n_tensors {
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let name = r.string(name_len)?;
        let ndim = r.take(1)?[0] as usize;
        let shape = (0..ndim)
            .map(|_| Ok(u32::from_le_bytes(r.array()?) as usize))
            .collect::<Result<Vec<_>, ModelError>>()?;
        layout.push(name, shape);
    }
    let n_values = u64::from_le_bytes(r.array()?) as usize;
    if n_values != layout.len() {
        return Err(ModelError::Corrupt(format!(
            "header declares {n_values} values but layout holds {}",
            layout.len()
        )));
    }
    let payload = r.take(n_values.checked_mul(8).ok_or(ModelError::Truncated)?)?;
    if r.pos != bytes.len() {
        return Err(ModelError::Corrupt("trailing bytes".into()));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ParameterVector::new(layout, values)
}

/// Parses a checkpoint and checks it against the expected layout.
pub fn deserialize_params(bytes: &[u8], layout: &Layout) -> Result<ParameterVector, ModelError> {
    let params = read_checkpoint(bytes)?;
    if &params.layout != layout {
        return Err(ModelError::LayoutMismatch { expected: layout.len(), found: params.len() });
    }
    Ok(params)
}
