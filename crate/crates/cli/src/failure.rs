use std::fmt;
use std::path::{Path, PathBuf};

/// Error categories that map onto process exit codes.
#[derive(Debug)]
pub enum Failure {
    /// A self-check or verification failed.
    Check(String),
    Io { path: PathBuf, message: String },
    /// Inputs were readable but violate the data contract.
    Contract(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Io { .. } => 2,
            Failure::Contract(_) => 3,
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> anyhow::Error {
        Failure::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
        .into()
    }

    pub fn contract(message: impl Into<String>) -> anyhow::Error {
        Failure::Contract(message.into()).into()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Check(m) => write!(f, "check failed: {m}"),
            Failure::Io { path, message } => write!(f, "{}: {message}", path.display()),
            Failure::Contract(m) => write!(f, "data contract violation: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

pub fn read_to_string(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

pub fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

pub fn create_dir_all(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Failure::io(path, e))
}

/// Regular files in `dir`, sorted by name.
pub fn list_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::io(dir, e))?.path();
        if path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
