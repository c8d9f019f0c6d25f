use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised while decoding a volume file. Each variant names the header
/// field or payload property at fault.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("bad magic {found:?}: expected \"n+1\\0\"")]
    BadMagic { found: [u8; 4] },
    #[error("sizeof_hdr is {0}, expected 348")]
    BadHeaderSize(i32),
    #[error("unsupported datatype code {code} (bitpix {bitpix})")]
    UnsupportedDatatype { code: i16, bitpix: i16 },
    #[error("dim[{index}] = {value} is invalid")]
    BadDim { index: usize, value: i64 },
    #[error("pixdim[{index}] = {value} is not a positive finite spacing")]
    BadPixdim { index: usize, value: f64 },
    #[error("vox_offset {0} is invalid")]
    BadVoxOffset(f64),
    #[error("scl_slope/scl_inter ({slope}, {inter}) are not finite")]
    BadScaling { slope: f64, inter: f64 },
    #[error("payload truncated: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite intensity at voxel {index}")]
    NonFinite { index: usize },
    #[error("raw header: {0}")]
    RawHeader(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("degenerate annotation: {0}")]
    DegenerateAnnotation(String),
    #[error("degenerate test: {0}")]
    DegenerateTest(String),
    #[error("invalid phantom spec: {0}")]
    PhantomSpec(String),
    #[error("value {value} does not fit datatype {datatype}")]
    Overflow { value: f64, datatype: &'static str },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("failed to load {path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: LoadError,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by the data handed in rather than by the caller's
    /// configuration. Front ends use this to pick an exit status.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Load { .. }
                | Error::Io { .. }
                | Error::Manifest { .. }
                | Error::GeometryMismatch(_)
                | Error::DegenerateAnnotation(_)
                | Error::DegenerateTest(_)
                | Error::Overflow { .. }
        )
    }
}
