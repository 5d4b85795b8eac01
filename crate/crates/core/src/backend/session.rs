use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{request_hash, BackendError, ChatRequest, LlmBackend};

/// One line of a session file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub hash: String,
    pub request: ChatRequest,
    pub response: String,
}

/// Forwards to an inner backend and appends every successful exchange to a
/// JSON-lines session file.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    file: Mutex<File>,
}

impl<B: LlmBackend> RecordingBackend<B> {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(inner: B, path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(RecordingBackend { inner, path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let response = self.inner.complete(request)?;
        let entry = SessionEntry { hash: request_hash(request), request: request.clone(), response };
        let mut line = serde_json::to_string(&entry).expect("session entry serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| BackendError::Transport(format!("cannot append to {}: {e}", self.path.display())))?;
        Ok(entry.response)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("cannot read session {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("session {path} line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// Serves responses from a recorded session by request hash, never touching
/// the network. Repeated identical requests get the recorded responses in
/// order; once those run out the last one is repeated.
pub struct ReplayBackend {
    responses: HashMap<String, Vec<String>>,
    cursors: Mutex<HashMap<String, usize>>,
    served: Mutex<usize>,
}

impl ReplayBackend {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let io_err = |source| SessionError::Io { path: path.to_path_buf(), source };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: SessionEntry = serde_json::from_str(&line).map_err(|e| SessionError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn from_entries<I: IntoIterator<Item = SessionEntry>>(entries: I) -> Self {
        let mut responses: HashMap<String, Vec<String>> = HashMap::new();
        for e in entries {
            responses.entry(e.hash).or_default().push(e.response);
        }
        ReplayBackend { responses, cursors: Mutex::new(HashMap::new()), served: Mutex::new(0) }
    }

    /// Number of requests answered so far.
    pub fn served(&self) -> usize {
        *self.served.lock().unwrap()
    }
}

impl LlmBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let hash = request_hash(request);
        let Some(list) = self.responses.get(&hash) else {
            return Err(BackendError::ReplayMiss { hash });
        };
        let mut cursors = self.cursors.lock().unwrap();
        let cursor = cursors.entry(hash).or_insert(0);
        let reply = list[(*cursor).min(list.len() - 1)].clone();
        *cursor += 1;
        *self.served.lock().unwrap() += 1;
        Ok(reply)
    }
}
