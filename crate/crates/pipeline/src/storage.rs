//! On-disk layout shared by the service and the workers.
//!
//! ```text
//! <root>/uploads/<rid>.edf
//! <root>/uploads/<rid>.nights.json        optional night manifest
//! <root>/nights/<rid>/night-<n>.edf
//! <root>/bundles/<rid>/night-<n>/scoring.tar
//! <root>/bundles/<rid>/night-<n>/ml.tar
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place, so a
//! reader never sees a partial file and rewriting identical content is safe.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BundleKind {
    Scoring,
    Ml,
}

impl BundleKind {
    pub fn file_name(self) -> &'static str {
        match self {
            BundleKind::Scoring => "scoring.tar",
            BundleKind::Ml => "ml.tar",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BundleKind::Scoring => "scoring",
            BundleKind::Ml => "ml",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Storage {
    root: PathBuf,
}

impl Storage {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Storage { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path of a storage-relative reference.
    pub fn resolve(&self, reference: &str) -> PathBuf {
        self.root.join(reference)
    }

    pub fn upload_ref(recording_id: &str) -> String {
        format!("uploads/{recording_id}.edf")
    }

    pub fn manifest_ref(recording_id: &str) -> String {
        format!("uploads/{recording_id}.nights.json")
    }

    pub fn night_ref(recording_id: &str, night: usize) -> String {
        format!("nights/{recording_id}/night-{night}.edf")
    }

    pub fn bundle_ref(recording_id: &str, night: usize, kind: BundleKind) -> String {
        format!(
            "bundles/{recording_id}/night-{night}/{}",
            kind.file_name()
        )
    }

    pub fn bundle_path(&self, recording_id: &str, night: usize, kind: BundleKind) -> PathBuf {
        self.resolve(&Self::bundle_ref(recording_id, night, kind))
    }

    pub fn has_bundles(&self, recording_id: &str, night: usize) -> bool {
        [BundleKind::Scoring, BundleKind::Ml]
            .iter()
            .all(|&k| self.bundle_path(recording_id, night, k).is_file())
    }

    /// Writes `bytes` at `reference` through a temporary file and a rename.
    pub fn write_atomic(&self, reference: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        let path = self.resolve(reference);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    /// Starts a streamed write whose content only appears at `reference`
    /// once [`PendingFile::commit`] is called.
    pub fn create_pending(&self, reference: &str) -> io::Result<PendingFile> {
        let path = self.resolve(reference);
        let dir = parent_dir(&path);
        fs::create_dir_all(dir)?;
        Ok(PendingFile {
            tmp: tempfile::NamedTempFile::new_in(dir)?,
            path,
            written: 0,
        })
    }
}

/// A file being streamed to disk; dropped without commit, it disappears.
#[derive(Debug)]
pub struct PendingFile {
    tmp: tempfile::NamedTempFile,
    path: PathBuf,
    written: u64,
}

impl PendingFile {
    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn commit(self) -> io::Result<PathBuf> {
        self.tmp.as_file().sync_all()?;
        self.tmp.persist(&self.path).map_err(|e| e.error)?;
        Ok(self.path)
    }
}

impl Write for PendingFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.tmp.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.tmp.flush()
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = parent_dir(path);
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}
