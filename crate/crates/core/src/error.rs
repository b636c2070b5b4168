//! Error categories shared across the toolkit.
//!
//! Every fallible public operation returns [`Result`]. Categories are stable:
//! the CLI maps them to exit codes and prints them in machine-parsable form,
//! so variants are never merged or renamed casually.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape or rank mismatch.
    #[error("shape error: {0}")]
    Shape(String),
    /// Input outside an operation's mathematical domain (log of a
    /// non-positive value, division by zero, invalid probability, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// Misuse of the recording graph: mixing graphs, reusing a consumed
    /// record, backward from a detached tensor.
    #[error("graph error: {0}")]
    Graph(String),
    /// A computation produced a non-finite value from finite inputs.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Incompatible sensor/output rates.
    #[error("rate error: {0}")]
    Rate(String),
    /// Sequence length not compatible with the requested chunking.
    #[error("alignment error: {0}")]
    Alignment(String),
    /// Resampling grid extends beyond the recorded data.
    #[error("extrapolation error: {0}")]
    Extrapolation(String),
    /// Sequence shorter than an operation requires.
    #[error("length error: {0}")]
    Length(String),
    /// Invalid filter design parameters.
    #[error("filter error: {0}")]
    Filter(String),
    /// Invalid frame calibration (non-unit quaternion, missing pose).
    #[error("calibration error: {0}")]
    Calib(String),
    /// Malformed data file; the message names the file and line.
    #[error("parse error: {0}")]
    Parse(String),
    /// Dataset manifest inconsistent with the files on disk.
    #[error("manifest error: {0}")]
    Manifest(String),
    /// Degenerate train/validation split.
    #[error("split error: {0}")]
    Split(String),
    /// Training loss exceeded the divergence threshold.
    #[error("divergence error: {0}")]
    Divergence(String),
    /// Invalid or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Filesystem failure.
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable lower-case category tag, used in CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Graph(_) => "graph",
            Error::Numerical(_) => "numerical",
            Error::Rate(_) => "rate",
            Error::Alignment(_) => "alignment",
            Error::Extrapolation(_) => "extrapolation",
            Error::Length(_) => "length",
            Error::Filter(_) => "filter",
            Error::Calib(_) => "calib",
            Error::Parse(_) => "parse",
            Error::Manifest(_) => "manifest",
            Error::Split(_) => "split",
            Error::Divergence(_) => "divergence",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code the CLI uses for this category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) | Error::Manifest(_) | Error::Parse(_) => 3,
            Error::Numerical(_) | Error::Divergence(_) => 4,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Io("x".into()).exit_code(), 3);
        assert_eq!(Error::Numerical("x".into()).exit_code(), 4);
        assert_eq!(Error::Shape("x".into()).exit_code(), 1);
    }

    #[test]
    fn categories_match_variants() {
        assert_eq!(Error::Alignment("x".into()).category(), "alignment");
        assert_eq!(Error::Divergence("x".into()).category(), "divergence");
    }
}
