use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("kernel rejected: hypothesis ({hypothesis}) fails: {detail}")]
    KernelRejected { hypothesis: &'static str, detail: String },

    #[error("evaluation at s = {s} beyond the last tabulated sample s = {last}")]
    Extrapolation { s: f64, last: f64 },

    #[error("source term overflow (solution blew up) at t = {t}")]
    Divergence { t: f64 },

    #[error("delay line sequencing: {0}")]
    Sequencing(String),

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("fit refused: {0}")]
    FitRefused(String),

    #[error("check unavailable: {0}")]
    CheckUnavailable(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
