//! Deterministic tar bundles: fixed mode, owner and mtime, so rewriting a
//! bundle from the same inputs reproduces it byte for byte.

use std::fs::File;
use std::io::{self, Read};
use std::path::PathBuf;

use crate::storage::Storage;

#[derive(Debug)]
pub enum BundleSource {
    Bytes(Vec<u8>),
    File(PathBuf),
}

#[derive(Debug)]
pub struct BundleEntry {
    pub name: String,
    pub source: BundleSource,
}

impl BundleEntry {
    pub fn bytes(name: &str, bytes: Vec<u8>) -> Self {
        BundleEntry {
            name: name.to_string(),
            source: BundleSource::Bytes(bytes),
        }
    }

    pub fn file(name: &str, path: PathBuf) -> Self {
        BundleEntry {
            name: name.to_string(),
            source: BundleSource::File(path),
        }
    }
}

/// Streams the entries into a tar at `reference`.
pub fn write_bundle(storage: &Storage, reference: &str, entries: &[BundleEntry]) -> io::Result<PathBuf> {
    let pending = storage.create_pending(reference)?;
    let mut builder = tar::Builder::new(pending);
    for entry in entries {
        let mut header = tar::Header::new_ustar();
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        header.set_entry_type(tar::EntryType::Regular);
        match &entry.source {
            BundleSource::Bytes(b) => {
                header.set_size(b.len() as u64);
                builder.append_data(&mut header, &entry.name, b.as_slice())?;
            }
            BundleSource::File(p) => {
                let file = File::open(p)?;
                header.set_size(file.metadata()?.len());
                builder.append_data(&mut header, &entry.name, file)?;
            }
        }
    }
    builder.into_inner()?.commit()
}

/// Name and content of every regular file in a tar.
pub fn read_bundle(r: impl Read) -> io::Result<Vec<(String, Vec<u8>)>> {
    let mut archive = tar::Archive::new(r);
    let mut out = Vec::new();
    for entry in archive.entries()? {
        let mut entry = entry?;
        let name = entry.path()?.to_string_lossy().into_owned();
        let mut content = Vec::new();
        entry.read_to_end(&mut content)?;
        out.push((name, content));
    }
    Ok(out)
}
