//! JSON-lines reading and appending shared by the record file and the
//! vector sidecar.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed entry on line {line}: {source}")]
    Malformed {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serialization failed: {0}")]
    Encode(#[from] serde_json::Error),
}

/// Items read from a JSON-lines file.
#[derive(Debug)]
pub struct Loaded<T> {
    pub items: Vec<T>,
    /// Unterminated final lines that failed to parse (an interrupted append).
    pub truncated_tail: usize,
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut reader = BufReader::new(file);
    let mut items = Vec::new();
    let mut truncated_tail = 0;
    let mut line_no = 0;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let terminated = buf.ends_with('\n');
        let text = buf.trim();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str(text) {
            Ok(item) => items.push(item),
            Err(_) if !terminated => {
                truncated_tail += 1;
                tracing::warn!(path = %path.display(), line = line_no, "ignoring partial trailing line");
            }
            Err(source) => {
                return Err(JsonlError::Malformed {
                    path: path.to_path_buf(),
                    line: line_no,
                    source,
                })
            }
        }
    }
    Ok(Loaded {
        items,
        truncated_tail,
    })
}

/// Overwrites `path` with one line per item.
pub fn write_all<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Append-only writer. Callers serialize access; each `append` writes and
/// flushes one complete line.
#[derive(Debug)]
pub struct Appender {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Appender {
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| JsonlError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append<T: Serialize>(&mut self, item: &T) -> Result<(), JsonlError> {
        let mut line = serde_json::to_vec(item)?;
        line.push(b'\n');
        self.out
            .write_all(&line)
            .and_then(|_| self.out.flush())
            .map_err(|source| JsonlError::Io {
                path: self.path.clone(),
                source,
            })
    }
}
