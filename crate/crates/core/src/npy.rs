//! Minimal NPY (format version 1.0) reader and writer for C-ordered,
//! little-endian `f32`, `f64`, `u8` and `u32` tensors.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),

    #[error("unsupported NPY dtype `{0}`")]
    UnsupportedDtype(String),

    #[error("unsupported NPY layout: {0}")]
    UnsupportedLayout(String),

    #[error("truncated NPY payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unexpected NPY dtype: expected {expected}, found {found}")]
    DtypeMismatch { expected: &'static str, found: &'static str },

    #[error("npy i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U8,
    U32,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::U8 => "|u1",
            Dtype::U32 => "<u4",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }

    fn parse(descr: &str) -> Result<Self, NpyError> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "<f8" => Ok(Dtype::F64),
            "|u1" | "<u1" => Ok(Dtype::U8),
            "<u4" => Ok(Dtype::U32),
            other => Err(NpyError::UnsupportedDtype(other.to_string())),
        }
    }
}

/// Typed tensor payload.
#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl NpyData {
    pub fn dtype(&self) -> Dtype {
        match self {
            NpyData::F32(_) => Dtype::F32,
            NpyData::F64(_) => Dtype::F64,
            NpyData::U8(_) => Dtype::U8,
            NpyData::U32(_) => Dtype::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
            NpyData::U8(v) => v.len(),
            NpyData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An n-dimensional array with a shape and C-ordered data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Self {
        Self { shape, data }
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self::new(shape, NpyData::F32(data))
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        Self::new(shape, NpyData::U8(data))
    }

    pub fn u32(shape: Vec<usize>, data: Vec<u32>) -> Self {
        Self::new(shape, NpyData::U32(data))
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self::new(shape, NpyData::F64(data))
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    fn mismatch(&self, expected: Dtype) -> NpyError {
        NpyError::DtypeMismatch {
            expected: expected.descr(),
            found: self.dtype().descr(),
        }
    }

    /// Float data as `f32`; `f64` payloads are narrowed.
    pub fn into_f32(self) -> Result<(Vec<usize>, Vec<f32>), NpyError> {
        match self.data {
            NpyData::F32(v) => Ok((self.shape, v)),
            NpyData::F64(v) => Ok((self.shape, v.into_iter().map(|x| x as f32).collect())),
            _ => Err(self.mismatch(Dtype::F32)),
        }
    }

    pub fn into_u8(self) -> Result<(Vec<usize>, Vec<u8>), NpyError> {
        match self.data {
            NpyData::U8(v) => Ok((self.shape, v)),
            _ => Err(self.mismatch(Dtype::U8)),
        }
    }

    pub fn into_u32(self) -> Result<(Vec<usize>, Vec<u32>), NpyError> {
        match self.data {
            NpyData::U32(v) => Ok((self.shape, v)),
            _ => Err(self.mismatch(Dtype::U32)),
        }
    }
}

fn header_text(dtype: Dtype, shape: &[usize]) -> String {
    let dims = match shape.len() {
        1 => format!("{},", shape[0]),
        _ => shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
    };
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}), }}",
        dtype.descr(),
        dims
    );
    // magic(6) + version(2) + header length(2) + dict + padding + '\n'
    let unpadded = MAGIC.len() + 4 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    format!("{dict}{}\n", " ".repeat(pad))
}

/// Serializes a tensor to NPY bytes.
pub fn encode(tensor: &Tensor) -> Result<Vec<u8>, NpyError> {
    let expected: usize = tensor.shape.iter().product();
    if expected != tensor.data.len() {
        return Err(NpyError::MalformedHeader(format!(
            "shape {:?} holds {} values but data has {}",
            tensor.shape,
            expected,
            tensor.data.len()
        )));
    }
    let header = header_text(tensor.dtype(), &tensor.shape);
    let mut out = Vec::with_capacity(10 + header.len() + expected * tensor.dtype().size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &tensor.data {
        NpyData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::U8(v) => out.extend_from_slice(v),
        NpyData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

/// Value of `key` in a Python dict literal, as raw text.
fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str, NpyError> {
    let pat = format!("'{key}':");
    let start = dict
        .find(&pat)
        .ok_or_else(|| NpyError::MalformedHeader(format!("missing key `{key}`")))?
        + pat.len();
    let rest = dict[start..].trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else if let Some(quoted) = rest.strip_prefix('\'') {
        quoted.find('\'').map(|i| i + 2)
    } else {
        rest.find([',', '}'])
    }
    .ok_or_else(|| NpyError::MalformedHeader(format!("unterminated value for `{key}`")))?;
    Ok(rest[..end].trim())
}

fn parse_header(dict: &str) -> Result<(Dtype, Vec<usize>), NpyError> {
    let dict = dict.trim();
    if !dict.starts_with('{') || !dict.ends_with('}') {
        return Err(NpyError::MalformedHeader("header is not a dict literal".into()));
    }
    let descr = dict_value(dict, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|d| d.strip_suffix('\''))
        .ok_or_else(|| NpyError::MalformedHeader("descr is not a string".into()))?;
    match dict_value(dict, "fortran_order")? {
        "False" => {}
        "True" => return Err(NpyError::UnsupportedLayout("Fortran order".into())),
        other => return Err(NpyError::MalformedHeader(format!("bad fortran_order `{other}`"))),
    }
    let dtype = Dtype::parse(descr)?;
    let shape_text = dict_value(dict, "shape")?;
    let inner = shape_text
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| NpyError::MalformedHeader("shape is not a tuple".into()))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| NpyError::MalformedHeader(format!("bad dimension `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((dtype, shape))
}

/// Parses NPY bytes.
pub fn decode(bytes: &[u8]) -> Result<Tensor, NpyError> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(NpyError::MalformedHeader("missing magic string".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(NpyError::MalformedHeader(format!(
            "unsupported format version {major}.{minor}"
        )));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body = 10 + hlen;
    if bytes.len() < body {
        return Err(NpyError::MalformedHeader("header extends past end of file".into()));
    }
    let dict = std::str::from_utf8(&bytes[10..body])
        .map_err(|_| NpyError::MalformedHeader("header is not ASCII".into()))?;
    let (dtype, shape) = parse_header(dict)?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| NpyError::MalformedHeader("shape overflows".into()))?;
    let expected = count
        .checked_mul(dtype.size())
        .ok_or_else(|| NpyError::MalformedHeader("shape overflows".into()))?;
    let payload = &bytes[body..];
    if payload.len() < expected {
        return Err(NpyError::TruncatedPayload { expected, found: payload.len() });
    }
    let payload = &payload[..expected];
    let data = match dtype {
        Dtype::F32 => NpyData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ),
        Dtype::F64 => NpyData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ),
        Dtype::U8 => NpyData::U8(payload.to_vec()),
        Dtype::U32 => NpyData::U32(
            payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ),
    };
    Ok(Tensor { shape, data })
}

fn io_err(path: &Path, source: std::io::Error) -> NpyError {
    NpyError::Io { path: path.display().to_string(), source }
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<Tensor, NpyError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode(&bytes)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_npy(path: impl AsRef<Path>, tensor: &Tensor) -> Result<(), NpyError> {
    let path = path.as_ref();
    let bytes = encode(tensor)?;
    write_atomic(path, &bytes).map_err(|e| io_err(path, e))
}
