use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by image, packaging, runtime, provenance and bench operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("I/O error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid name {0:?}")]
    InvalidName(String),

    #[error("unknown {field} code {code}")]
    UnknownCode { field: &'static str, code: u32 },

    #[error("image already has a system-primary partition")]
    DuplicatePrimary,

    #[error("no partition with id {0}")]
    NoSuchPartition(u32),

    #[error("partition {id} is corrupt: checksum mismatch")]
    CorruptPartition { id: u32 },

    #[error("not a BOXI image")]
    NotABoxImage,

    #[error("truncated image: {0}")]
    TruncatedImage(String),

    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("unsupported image format version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported directory entry {0}")]
    UnsupportedEntry(PathBuf),

    #[error("malformed archive: {0}")]
    MalformedArchive(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("no runscript: {0}")]
    NoRunscript(String),

    #[error("recipe parse error at line {line}: {message}")]
    RecipeParse { line: usize, message: String },

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("invalid workflow: {0}")]
    InvalidWorkflow(String),

    #[error("binding references unknown component {0:?}")]
    UnknownComponent(String),

    #[error("bindings form a cycle through component {0:?}")]
    CyclicBinding(String),

    #[error("sandbox error: {0}")]
    Sandbox(String),

    #[error("partition {id} is not a {expected} partition")]
    WrongPartitionType { id: u32, expected: &'static str },

    #[error("component {0:?} was not written by this run")]
    NotAnOutputOfRun(String),

    #[error("image has no metadata partition")]
    NoMetadataPartition,

    #[error("malformed record trail: {0}")]
    MalformedTrail(String),

    #[error("benchmark aborted: {0}")]
    BenchAborted(String),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by damaged or foreign bytes rather than bad input.
    pub fn is_corruption(&self) -> bool {
        matches!(
            self,
            Error::CorruptPartition { .. }
                | Error::NotABoxImage
                | Error::TruncatedImage(_)
                | Error::MalformedImage(_)
                | Error::MalformedArchive(_)
                | Error::MalformedTrail(_)
                | Error::MalformedManifest(_)
        )
    }

    /// True when the error reports a missing path.
    pub fn is_not_found(&self) -> bool {
        match self {
            Error::Io(e) | Error::IoAt { source: e, .. } => e.kind() == io::ErrorKind::NotFound,
            Error::MissingFile(_) => true,
            _ => false,
        }
    }
}
