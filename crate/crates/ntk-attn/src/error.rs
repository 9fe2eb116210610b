use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", file.display())]
    Parse { file: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", file.display())]
    Manifest { file: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] ntk_attn_core::Error),
}

impl IoError {
    pub(crate) fn json(file: &std::path::Path, e: serde_json::Error) -> Self {
        IoError::Parse { file: file.to_path_buf(), line: e.line(), msg: e.to_string() }
    }
}
