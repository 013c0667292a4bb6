//! The `LFSP` model container: one binary file that carries every layer of
//! a model in any mix of the three storage kinds, with the register specs
//! embedded so a sparse model decodes with no side files.
//!
//! ## Byte layout (all integers little-endian)
//!
//! ```text
//! magic           4 bytes  "LFSP"
//! version         u16      currently 1
//! layer_count     u16
//! per layer:
//!   kind          u8       0 = dense float32, 1 = register-replay sparse,
//!                          2 = value/index/pointer baseline
//!   rows          u32
//!   cols          u32
//!   payload       kind-specific, see below
//! ```
//!
//! Kind 0 (dense): `rows*cols` f32 weights row-major, then `cols` f32 bias.
//!
//! Kind 1 (replay sparse): row spec, col spec (each spec: width u8,
//! tap_count u8, taps u8 × tap_count descending, seed u32), nnz u32,
//! value_bits u8 (8 or 32), then the value payload — for 8: scale f32 and
//! nnz i8 codes; for 32: nnz f32 — then `cols` f32 bias. `value_bits` is
//! written *before* the values so the payload length is knowable during a
//! linear parse.
//!
//! Kind 2 (baseline): index_bits u8 (4 or 8), value_bits u8, slen u32
//! (stored entries, padding included), nnz u32 (true nonzeros), the S
//! payload (scale f32 + slen i8, or slen f32), the I payload (slen u8 for
//! 8-bit indices; 4-bit indices packed two per byte, low nibble first),
//! `cols+1` u32 pointers, then `cols` f32 bias. `slen` and `nnz` are stored
//! explicitly: S's length is not derivable from shape alone, and nnz is not
//! derivable from the payload once quantization may have zeroed entries.
//!
//! Every write of the same model produces identical bytes; reads reject
//! wrong magic, unknown versions or kinds, short payloads, and trailing
//! bytes.

use std::path::Path;

use thiserror::Error;

use crate::codec::{
    decode_baseline, decode_lfsr, BaselineCompressed, CodecError, LfsrSparseLayer, ValueStore,
};
use crate::lfsr::{LfsrError, LfsrSpec};
use crate::matrix::Matrix;
use crate::net::{Layer, Model, NetError};

pub const MAGIC: [u8; 4] = *b"LFSP";
pub const VERSION: u16 = 1;

const KIND_DENSE: u8 = 0;
const KIND_LFSR: u8 = 1;
const KIND_BASELINE: u8 = 2;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {0:?}, expected \"LFSP\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    BadVersion(u16),
    #[error("file truncated at byte {at}: need {needed} more bytes")]
    Truncated { at: usize, needed: usize },
    #[error("{extra} trailing bytes after the last layer")]
    TrailingBytes { extra: usize },
    #[error("unknown layer kind {0}")]
    BadKind(u8),
    #[error("layer {layer}: {source}")]
    BadSpec { layer: usize, source: LfsrError },
    #[error("layer {layer}: {source}")]
    Payload { layer: usize, source: CodecError },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A dense layer as stored: single-precision weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// One layer in any of the three storage kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredLayer {
    Dense(DenseLayer),
    Lfsr(LfsrSparseLayer),
    Baseline(BaselineCompressed),
}

impl StoredLayer {
    pub fn rows(&self) -> usize {
        match self {
            StoredLayer::Dense(d) => d.rows,
            StoredLayer::Lfsr(l) => l.rows,
            StoredLayer::Baseline(b) => b.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            StoredLayer::Dense(d) => d.cols,
            StoredLayer::Lfsr(l) => l.cols,
            StoredLayer::Baseline(b) => b.cols,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            StoredLayer::Dense(_) => "dense",
            StoredLayer::Lfsr(_) => "lfsr",
            StoredLayer::Baseline(_) => "baseline",
        }
    }

    /// Reconstructs the in-memory layer. Replay-sparse layers come back
    /// with their mask attached; the other kinds carry no mask.
    pub fn to_layer(&self) -> Result<Layer, CodecError> {
        match self {
            StoredLayer::Dense(d) => {
                let weights = Matrix::from_vec(
                    d.rows,
                    d.cols,
                    d.weights.iter().map(|&w| w as f64).collect(),
                );
                Ok(Layer {
                    weights,
                    bias: d.bias.iter().map(|&b| b as f64).collect(),
                    mask: None,
                })
            }
            StoredLayer::Lfsr(l) => decode_lfsr(l),
            StoredLayer::Baseline(b) => decode_baseline(b),
        }
    }
}

/// An ordered set of stored layers; the unit the file format serializes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelContainer {
    pub layers: Vec<StoredLayer>,
}

impl ModelContainer {
    /// Stores every layer densely (weights cast to single precision).
    pub fn from_model_dense(model: &Model) -> ModelContainer {
        let layers = model
            .layers
            .iter()
            .map(|l| {
                StoredLayer::Dense(DenseLayer {
                    rows: l.in_dim(),
                    cols: l.out_dim(),
                    weights: l.weights.data().iter().map(|&w| w as f32).collect(),
                    bias: l.bias.iter().map(|&b| b as f32).collect(),
                })
            })
            .collect();
        ModelContainer { layers }
    }

    /// Stores every layer in the register-replay format; each layer must
    /// carry a mask (prune first).
    pub fn from_model_lfsr(model: &Model, value_bits: u8) -> Result<ModelContainer, CodecError> {
        let layers = model
            .layers
            .iter()
            .map(|l| Ok(StoredLayer::Lfsr(crate::codec::encode_lfsr(l, value_bits)?)))
            .collect::<Result<_, CodecError>>()?;
        Ok(ModelContainer { layers })
    }

    /// Stores every layer in the baseline value/index/pointer format.
    pub fn from_model_baseline(
        model: &Model,
        index_bits: u8,
        value_bits: u8,
    ) -> Result<ModelContainer, CodecError> {
        let layers = model
            .layers
            .iter()
            .map(|l| {
                Ok(StoredLayer::Baseline(crate::codec::encode_baseline(
                    l, index_bits, value_bits,
                )?))
            })
            .collect::<Result<_, CodecError>>()?;
        Ok(ModelContainer { layers })
    }

    /// Decodes every stored layer and rebuilds the model.
    pub fn to_model(&self) -> Result<Model, ContainerError> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(li, sl)| {
                sl.to_layer()
                    .map_err(|source| ContainerError::Payload { layer: li, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Model::from_layers(layers)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u16).to_le_bytes());
        for layer in &self.layers {
            write_layer(&mut out, layer);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelContainer, ContainerError> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(ContainerError::BadMagic([
                magic[0], magic[1], magic[2], magic[3],
            ]));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(ContainerError::BadVersion(version));
        }
        let layer_count = r.u16()? as usize;
        let mut layers = Vec::with_capacity(layer_count);
        for li in 0..layer_count {
            layers.push(read_layer(&mut r, li)?);
        }
        if r.at != bytes.len() {
            return Err(ContainerError::TrailingBytes {
                extra: bytes.len() - r.at,
            });
        }
        Ok(ModelContainer { layers })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<ModelContainer, ContainerError> {
        let bytes = std::fs::read(path).map_err(|source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn write_spec(out: &mut Vec<u8>, spec: &LfsrSpec) {
    out.push(spec.width() as u8);
    out.push(spec.taps().len() as u8);
    for &t in spec.taps() {
        out.push(t as u8);
    }
    out.extend_from_slice(&spec.seed().to_le_bytes());
}

fn write_values(out: &mut Vec<u8>, values: &ValueStore) {
    out.push(values.value_bits());
    match values {
        ValueStore::Float(v) => {
            for &x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        ValueStore::Quantized { scale, codes } => {
            out.extend_from_slice(&scale.to_le_bytes());
            for &c in codes {
                out.push(c as u8);
            }
        }
    }
}

fn write_layer(out: &mut Vec<u8>, layer: &StoredLayer) {
    let kind = match layer {
        StoredLayer::Dense(_) => KIND_DENSE,
        StoredLayer::Lfsr(_) => KIND_LFSR,
        StoredLayer::Baseline(_) => KIND_BASELINE,
    };
    out.push(kind);
    out.extend_from_slice(&(layer.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(layer.cols() as u32).to_le_bytes());
    match layer {
        StoredLayer::Dense(d) => {
            for &w in &d.weights {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for &b in &d.bias {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        StoredLayer::Lfsr(l) => {
            write_spec(out, &l.row_spec);
            write_spec(out, &l.col_spec);
            out.extend_from_slice(&(l.nnz as u32).to_le_bytes());
            write_values(out, &l.values);
            for &b in &l.bias {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        StoredLayer::Baseline(b) => {
            out.push(b.index_bits);
            out.push(b.s.value_bits());
            out.extend_from_slice(&(b.s.len() as u32).to_le_bytes());
            out.extend_from_slice(&(b.nnz as u32).to_le_bytes());
            match &b.s {
                ValueStore::Float(v) => {
                    for &x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                ValueStore::Quantized { scale, codes } => {
                    out.extend_from_slice(&scale.to_le_bytes());
                    for &c in codes {
                        out.push(c as u8);
                    }
                }
            }
            match b.index_bits {
                8 => {
                    for &g in &b.i {
                        out.push(g as u8);
                    }
                }
                4 => {
                    // Two entries per byte, low nibble first.
                    for pair in b.i.chunks(2) {
                        let lo = pair[0] as u8 & 0x0F;
                        let hi = if pair.len() == 2 {
                            (pair[1] as u8 & 0x0F) << 4
                        } else {
                            0
                        };
                        out.push(lo | hi);
                    }
                }
                other => unreachable!("index_bits {other} rejected at encode time"),
            }
            for &ptr in &b.p {
                out.extend_from_slice(&ptr.to_le_bytes());
            }
            for &bias in &b.bias {
                out.extend_from_slice(&bias.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.bytes.len() - self.at < n {
            return Err(ContainerError::Truncated {
                at: self.at,
                needed: n - (self.bytes.len() - self.at),
            });
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32, ContainerError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>, ContainerError> {
        let b = self.take(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

fn read_spec(r: &mut Reader, layer: usize) -> Result<LfsrSpec, ContainerError> {
    let width = r.u8()? as u32;
    let tap_count = r.u8()? as usize;
    let tap_bytes = r.take(tap_count)?;
    let taps: Vec<u32> = tap_bytes.iter().map(|&t| t as u32).collect();
    let seed = r.u32()?;
    LfsrSpec::new(width, &taps, seed)
        .map_err(|source| ContainerError::BadSpec { layer, source })
}

fn read_values(r: &mut Reader, n: usize, layer: usize) -> Result<ValueStore, ContainerError> {
    let value_bits = r.u8()?;
    match value_bits {
        32 => Ok(ValueStore::Float(r.f32_vec(n)?)),
        8 => {
            let scale = r.f32()?;
            let codes = r.take(n)?.iter().map(|&b| b as i8).collect();
            Ok(ValueStore::Quantized { scale, codes })
        }
        other => Err(ContainerError::Payload {
            layer,
            source: CodecError::BadValueBits(other),
        }),
    }
}

fn read_layer(r: &mut Reader, li: usize) -> Result<StoredLayer, ContainerError> {
    let kind = r.u8()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    match kind {
        KIND_DENSE => {
            let weights = r.f32_vec(rows * cols)?;
            let bias = r.f32_vec(cols)?;
            Ok(StoredLayer::Dense(DenseLayer {
                rows,
                cols,
                weights,
                bias,
            }))
        }
        KIND_LFSR => {
            let row_spec = read_spec(r, li)?;
            let col_spec = read_spec(r, li)?;
            let nnz = r.u32()? as usize;
            let values = read_values(r, nnz, li)?;
            let bias = r.f32_vec(cols)?;
            Ok(StoredLayer::Lfsr(LfsrSparseLayer {
                rows,
                cols,
                row_spec,
                col_spec,
                nnz,
                values,
                bias,
            }))
        }
        KIND_BASELINE => {
            let index_bits = r.u8()?;
            if index_bits != 4 && index_bits != 8 {
                return Err(ContainerError::Payload {
                    layer: li,
                    source: CodecError::BadIndexBits(index_bits),
                });
            }
            let value_bits = r.u8()?;
            let slen = r.u32()? as usize;
            let nnz = r.u32()? as usize;
            let s = match value_bits {
                32 => ValueStore::Float(r.f32_vec(slen)?),
                8 => {
                    let scale = r.f32()?;
                    let codes = r.take(slen)?.iter().map(|&b| b as i8).collect();
                    ValueStore::Quantized { scale, codes }
                }
                other => {
                    return Err(ContainerError::Payload {
                        layer: li,
                        source: CodecError::BadValueBits(other),
                    })
                }
            };
            let i: Vec<u16> = match index_bits {
                8 => r.take(slen)?.iter().map(|&b| b as u16).collect(),
                _ => {
                    let packed = r.take(slen.div_ceil(2))?;
                    let mut i = Vec::with_capacity(slen);
                    for k in 0..slen {
                        let byte = packed[k / 2];
                        let nibble = if k % 2 == 0 { byte & 0x0F } else { byte >> 4 };
                        i.push(nibble as u16);
                    }
                    i
                }
            };
            let p_bytes = r.take((cols + 1) * 4)?;
            let p: Vec<u32> = p_bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let bias = r.f32_vec(cols)?;
            let layer = BaselineCompressed {
                rows,
                cols,
                index_bits,
                s,
                i,
                p,
                nnz,
                bias,
            };
            layer
                .validate()
                .map_err(|source| ContainerError::Payload { layer: li, source })?;
            Ok(StoredLayer::Baseline(layer))
        }
        other => Err(ContainerError::BadKind(other)),
    }
}
