use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

/// Append-only store for the exact frames a device emits.
pub trait LogSink: Send {
    fn append(&mut self, line: &str) -> io::Result<()>;
}

/// Newline-delimited frame file.
#[derive(Debug)]
pub struct FileLog {
    path: PathBuf,
    file: File,
}

impl FileLog {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)?;
        Ok(Self { path, file })
    }

    pub fn append_to(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl LogSink for FileLog {
    fn append(&mut self, line: &str) -> io::Result<()> {
        self.file.write_all(line.as_bytes())
    }
}

/// In-memory log; clones share the same lines, so a copy kept by the caller
/// sees what the device wrote.
#[derive(Debug, Default, Clone)]
pub struct MemoryLog(Arc<Mutex<Vec<String>>>);

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lines(&self) -> Vec<String> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// The log as it would appear on disk.
    pub fn contents(&self) -> String {
        self.lines().concat()
    }
}

impl LogSink for MemoryLog {
    fn append(&mut self, line: &str) -> io::Result<()> {
        self.0
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(line.to_string());
        Ok(())
    }
}

/// Fails every append (a missing or full card).
#[derive(Debug, Default, Clone, Copy)]
pub struct BrokenLog;

impl LogSink for BrokenLog {
    fn append(&mut self, _line: &str) -> io::Result<()> {
        Err(io::Error::other("storage unavailable"))
    }
}

impl<T: LogSink + ?Sized> LogSink for Box<T> {
    fn append(&mut self, line: &str) -> io::Result<()> {
        (**self).append(line)
    }
}
