//! `.acepack` container: 8-byte magic, little-endian `u32` version, `u64`
//! header length, a JSON header, then raw little-endian `f32` tensor blobs in
//! header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{Dataset, DataError, Provenance, TrainingTuple};
use crate::learn::{Activation, Dense, Mlp};
use crate::sim::Observation;

pub const MAGIC: [u8; 8] = *b"ACEPACK\0";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("format error at byte {offset}: {kind}")]
pub struct FormatError {
    pub offset: u64,
    pub kind: FormatErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatErrorKind {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated input")]
    Truncated,
    #[error("bad header: {0}")]
    Header(String),
    #[error("bad tensor: {0}")]
    Tensor(String),
    #[error("expected a {expected} pack, found {found}")]
    Kind { expected: String, found: String },
}

impl FormatError {
    pub fn new(offset: u64, kind: FormatErrorKind) -> Self {
        FormatError { offset, kind }
    }

    pub(crate) fn header(msg: impl Into<String>) -> Self {
        FormatError::new(PREAMBLE as u64, FormatErrorKind::Header(msg.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset of the blob relative to the first blob byte.
    pub offset: u64,
}

impl TensorEntry {
    fn count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pack {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(TensorEntry, Vec<f32>)>,
}

impl Pack {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Pack { kind: kind.to_string(), meta, tensors: Vec::new() }
    }

    pub fn add_tensor(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor {name} shape/data mismatch");
        let offset = self.tensors.iter().map(|(e, _)| (e.count() * 4) as u64).sum();
        let entry = TensorEntry { name: name.to_string(), shape, dtype: "f32".into(), offset };
        self.tensors.push((entry, data));
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f32]), FormatError> {
        self.tensors
            .iter()
            .find(|(e, _)| e.name == name)
            .map(|(e, d)| (e.shape.as_slice(), d.as_slice()))
            .ok_or_else(|| FormatError::header(format!("missing tensor {name}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), FormatError> {
        if self.kind != kind {
            return Err(FormatError::new(
                PREAMBLE as u64,
                FormatErrorKind::Kind { expected: kind.into(), found: self.kind.clone() },
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(e, _)| e.clone()).collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let blob_len: usize = self.tensors.iter().map(|(_, d)| d.len() * 4).sum();
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + blob_len);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, data) in &self.tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Pack, FormatError> {
        let truncated = |at: usize| FormatError::new(at as u64, FormatErrorKind::Truncated);
        if bytes.len() < 8 {
            return Err(truncated(bytes.len()));
        }
        if bytes[..8] != MAGIC {
            return Err(FormatError::new(0, FormatErrorKind::BadMagic));
        }
        if bytes.len() < PREAMBLE {
            return Err(truncated(bytes.len()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(FormatError::new(8, FormatErrorKind::Version { found: version, expected: VERSION }));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = PREAMBLE.checked_add(header_len).ok_or_else(|| truncated(12))?;
        if bytes.len() < header_end {
            return Err(truncated(bytes.len()));
        }
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| FormatError::new(PREAMBLE as u64 + e.column() as u64, FormatErrorKind::Header(e.to_string())))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0u64;
        for entry in header.tensors {
            if entry.dtype != "f32" {
                return Err(FormatError::header(format!("unsupported dtype {}", entry.dtype)));
            }
            if entry.offset != expected_offset {
                return Err(FormatError::new(
                    header_end as u64 + entry.offset,
                    FormatErrorKind::Tensor(format!("{} is not contiguous", entry.name)),
                ));
            }
            let start = header_end + entry.offset as usize;
            let n = entry.count();
            let end = start.checked_add(n * 4).ok_or_else(|| truncated(start))?;
            if bytes.len() < end {
                return Err(truncated(bytes.len()));
            }
            let data = bytes[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            expected_offset += (n * 4) as u64;
            tensors.push((entry, data));
        }
        let end = header_end + expected_offset as usize;
        if bytes.len() != end {
            return Err(FormatError::new(end as u64, FormatErrorKind::Tensor("trailing bytes".into())));
        }
        Ok(Pack { kind: header.kind, meta: header.meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Pack, DataError> {
        Ok(Pack::from_bytes(&fs::read(path)?)?)
    }
}

/// Types stored as `.acepack` files.
pub trait Persist: Sized {
    const KIND: &'static str;
    fn to_pack(&self) -> Pack;
    fn from_pack(pack: &Pack) -> Result<Self, FormatError>;

    fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        self.to_pack().save(path)
    }

    fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let pack = Pack::load(path)?;
        pack.expect_kind(Self::KIND)?;
        Ok(Self::from_pack(&pack)?)
    }
}

pub(crate) fn meta_field<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str) -> Result<T, FormatError> {
    let v = meta.get(key).ok_or_else(|| FormatError::header(format!("missing field {key}")))?;
    serde_json::from_value(v.clone()).map_err(|e| FormatError::header(format!("field {key}: {e}")))
}

impl Persist for Dataset {
    const KIND: &'static str = "dataset";

    fn to_pack(&self) -> Pack {
        let side = self.observations.first().map_or(0, |o| o.side);
        let labels: Vec<Option<u32>> = self.observations.iter().map(|o| o.meta_label).collect();
        let mut pack = Pack::new(
            Self::KIND,
            json!({
                "side": side,
                "n_observations": self.observations.len(),
                "labels": labels,
                "tuples": self.tuples,
                "provenance": self.provenance,
            }),
        );
        let pixels: Vec<f32> = self.observations.iter().flat_map(|o| o.pixels.iter().copied()).collect();
        pack.add_tensor("pixels", vec![self.observations.len(), side, side, 3], pixels);
        pack
    }

    fn from_pack(pack: &Pack) -> Result<Self, FormatError> {
        pack.expect_kind(Self::KIND)?;
        let side: usize = meta_field(&pack.meta, "side")?;
        let n: usize = meta_field(&pack.meta, "n_observations")?;
        let labels: Vec<Option<u32>> = meta_field(&pack.meta, "labels")?;
        let tuples: Vec<TrainingTuple> = meta_field(&pack.meta, "tuples")?;
        let provenance: Provenance = meta_field(&pack.meta, "provenance")?;
        let (shape, pixels) = pack.tensor("pixels")?;
        if shape != [n, side, side, 3] || labels.len() != n {
            return Err(FormatError::header("pixel tensor does not match observation count"));
        }
        let per = side * side * 3;
        let observations = (0..n)
            .map(|i| Observation::new(side, pixels[i * per..(i + 1) * per].to_vec(), labels[i]))
            .collect();
        let ds = Dataset { observations, tuples, provenance };
        ds.validate().map_err(|e| FormatError::header(e.to_string()))?;
        Ok(ds)
    }
}

/// Store an MLP's tensors under `prefix` and return its architecture record.
pub(crate) fn pack_mlp(pack: &mut Pack, prefix: &str, mlp: &Mlp<f32>) -> serde_json::Value {
    let mut acts = Vec::new();
    for (i, l) in mlp.layers.iter().enumerate() {
        pack.add_tensor(&format!("{prefix}.{i}.weight"), vec![l.outputs(), l.inputs()], l.weight.iter().copied().collect());
        pack.add_tensor(&format!("{prefix}.{i}.bias"), vec![l.outputs()], l.bias.to_vec());
        acts.push(l.activation);
    }
    json!({ "sizes": mlp.sizes(), "activations": acts })
}

pub(crate) fn unpack_mlp(pack: &Pack, prefix: &str, arch: &serde_json::Value) -> Result<Mlp<f32>, FormatError> {
    let sizes: Vec<usize> = meta_field(arch, "sizes")?;
    let acts: Vec<Activation> = meta_field(arch, "activations")?;
    if sizes.len() != acts.len() + 1 {
        return Err(FormatError::header(format!("{prefix}: architecture is inconsistent")));
    }
    let mut layers = Vec::with_capacity(acts.len());
    for (i, act) in acts.iter().enumerate() {
        let (ws, w) = pack.tensor(&format!("{prefix}.{i}.weight"))?;
        let (bs, b) = pack.tensor(&format!("{prefix}.{i}.bias"))?;
        if ws != [sizes[i + 1], sizes[i]] || bs != [sizes[i + 1]] {
            return Err(FormatError::header(format!("{prefix}.{i}: tensor shape disagrees with architecture")));
        }
        let weight = Array2::from_shape_vec((sizes[i + 1], sizes[i]), w.to_vec())
            .map_err(|e| FormatError::header(e.to_string()))?;
        layers.push(Dense { weight, bias: Array1::from(b.to_vec()), activation: *act });
    }
    Mlp::from_layers(layers).map_err(|e| FormatError::header(e.to_string()))
}

impl Persist for Mlp<f32> {
    const KIND: &'static str = "mlp";

    fn to_pack(&self) -> Pack {
        let mut pack = Pack::new(Self::KIND, json!({}));
        let arch = pack_mlp(&mut pack, "net", self);
        pack.meta = json!({ "arch": arch });
        pack
    }

    fn from_pack(pack: &Pack) -> Result<Self, FormatError> {
        pack.expect_kind(Self::KIND)?;
        unpack_mlp(pack, "net", &meta_field(&pack.meta, "arch")?)
    }
}
