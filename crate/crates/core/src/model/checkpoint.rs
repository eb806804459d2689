//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic    4 bytes  "PRNK"
//! version  u32      1
//! count    u32      number of tensor records
//! record × count:
//!   name_len u16, name (UTF-8)
//!   rank     u8, dims u64 × rank
//!   dtype    u8     0 = f32 little-endian
//!   payload  numel × 4 bytes
//! crc32    u32      over every preceding byte (optional on read)
//! ```
//!
//! Parameters are written in graph order, followed by masks (named
//! `<param>.mask`) in the same order.

use std::fs;
use std::path::Path;

use super::{build_mini_inception_from, build_plain_cnn, MiniInceptionSpec, ModelError, ModelGraph, PlainCnnSpec};
use crate::engine::Tensor;
use crate::pruning::MaskSet;

pub const MAGIC: &[u8; 4] = b"PRNK";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const MASK_SUFFIX: &str = ".mask";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("unknown dtype tag {tag} for tensor `{name}`")]
    UnknownDtype { name: String, tag: u8 },
    #[error("invalid tensor record: {0}")]
    Record(String),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checkpoint does not match a known architecture: {0}")]
    Architecture(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Raw decoded contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub warnings: Vec<String>,
}

pub struct LoadedCheckpoint {
    pub model: ModelGraph,
    pub masks: MaskSet,
    pub warnings: Vec<String>,
}

pub fn encode(tensors: &[(&str, &Tensor)]) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| CheckpointError::Record("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| CheckpointError::Record(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| CheckpointError::Record(format!("rank too large: {name}")))?;
        out.push(rank);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.push(DTYPE_F32);
        out.reserve(t.numel() * 4);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<RawCheckpoint, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(4096) as usize);
    for i in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CheckpointError::Record(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64("dims")?;
            dims.push(usize::try_from(d).map_err(|_| CheckpointError::Record(format!("`{name}`: dim {d}")))?);
        }
        let tag = r.u8("dtype")?;
        if tag != DTYPE_F32 {
            return Err(CheckpointError::UnknownDtype { name, tag });
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| CheckpointError::Record(format!("`{name}`: size overflow")))?;
        let payload = r.take(numel * 4, &format!("payload of `{name}`"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| CheckpointError::Record(format!("`{name}`: {e}")))?;
        tensors.push((name, t));
    }
    let mut warnings = Vec::new();
    match bytes.len() - r.pos {
        0 => warnings.push("checkpoint has no checksum".to_string()),
        4 => {
            let stored = r.u32("checksum")?;
            let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
            if stored != computed {
                warnings.push(format!(
                    "checksum mismatch: stored {stored:08x}, computed {computed:08x}"
                ));
            }
        }
        n => return Err(CheckpointError::TrailingBytes(n)),
    }
    Ok(RawCheckpoint { tensors, warnings })
}

pub fn to_bytes(model: &ModelGraph, masks: &MaskSet) -> Result<Vec<u8>, CheckpointError> {
    let mut records: Vec<(String, &Tensor)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), &p.tensor))
        .collect();
    for p in model.params() {
        if let Some(m) = masks.get(&p.name) {
            records.push((format!("{}{MASK_SUFFIX}", p.name), m));
        }
    }
    if let Some(stray) = masks.names().find(|n| model.param(n).is_none()) {
        return Err(CheckpointError::Record(format!("mask for unknown parameter `{stray}`")));
    }
    let refs: Vec<(&str, &Tensor)> = records.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    encode(&refs)
}

pub fn save_checkpoint(model: &ModelGraph, masks: &MaskSet, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let bytes = to_bytes(model, masks)?;
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<LoadedCheckpoint, CheckpointError> {
    let raw = decode(bytes)?;
    let (mask_records, params): (Vec<_>, Vec<_>) = raw
        .tensors
        .into_iter()
        .partition(|(name, _)| name.ends_with(MASK_SUFFIX));
    let mut model = rebuild(&params)?;
    if params.len() != model.params().len() {
        return Err(CheckpointError::Architecture(format!(
            "expected {} parameters, found {}",
            model.params().len(),
            params.len()
        )));
    }
    for (name, tensor) in params {
        let slot = model
            .param_mut(&name)
            .ok_or_else(|| CheckpointError::Architecture(format!("unexpected parameter `{name}`")))?;
        if slot.tensor.shape() != tensor.shape() {
            return Err(CheckpointError::Architecture(format!(
                "`{name}` has shape {:?}, architecture expects {:?}",
                tensor.shape(),
                slot.tensor.shape()
            )));
        }
        slot.tensor = tensor;
    }
    let mut masks = MaskSet::new();
    for (name, tensor) in mask_records {
        let param = name.trim_end_matches(MASK_SUFFIX);
        let target = model
            .param(param)
            .ok_or_else(|| CheckpointError::Record(format!("mask `{name}` has no parameter")))?;
        if target.tensor.shape() != tensor.shape() {
            return Err(CheckpointError::Record(format!("mask `{name}` shape differs from its parameter")));
        }
        masks
            .insert(param, tensor)
            .map_err(|e| CheckpointError::Record(e.to_string()))?;
    }
    Ok(LoadedCheckpoint {
        model,
        masks,
        warnings: raw.warnings,
    })
}

/// Recovers the builder that produced a parameter list from its names and
/// shapes, and builds an instance to overwrite.
fn rebuild(params: &[(String, Tensor)]) -> Result<ModelGraph, CheckpointError> {
    let shape = |name: &str| params.iter().find(|(n, _)| n == name).map(|(_, t)| t.shape().to_vec());
    let fc = shape("fc.weight").ok_or_else(|| CheckpointError::Architecture("no `fc.weight`".into()))?;
    let num_classes = fc[0];
    if let Some(stem) = shape("stem.conv.weight") {
        let spec = MiniInceptionSpec::new(stem[1], num_classes);
        return Ok(build_mini_inception_from(&spec, 0)?);
    }
    let mut widths = Vec::new();
    let mut in_channels = None;
    let mut kernel = None;
    while let Some(s) = shape(&format!("conv{}.weight", widths.len() + 1)) {
        in_channels.get_or_insert(s[1]);
        kernel.get_or_insert(s[2]);
        widths.push(s[0]);
    }
    match (in_channels, kernel) {
        (Some(in_channels), Some(kernel)) => {
            let spec = PlainCnnSpec {
                in_channels,
                widths,
                kernel,
                num_classes,
            };
            Ok(build_plain_cnn(&spec, 0)?)
        }
        _ => Err(CheckpointError::Architecture("unrecognised parameter names".into())),
    }
}
