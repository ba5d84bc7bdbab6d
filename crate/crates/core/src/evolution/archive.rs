//! Append-only archive of raw execution branches, addressed by
//! `(offset, length)` locators.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchiveRef {
    pub offset: u64,
    pub length: u64,
}

enum Store {
    Memory(Vec<u8>),
    File { path: PathBuf, file: File, len: u64 },
}

pub struct Archive {
    store: Mutex<Store>,
}

impl Archive {
    pub fn in_memory() -> Self {
        Self { store: Mutex::new(Store::Memory(Vec::new())) }
    }

    /// Open (or create) an archive file; existing content is kept.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file =
            OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        Ok(Self { store: Mutex::new(Store::File { path, file, len }) })
    }

    pub fn append(&self, bytes: &[u8]) -> Result<ArchiveRef> {
        let mut store = self.store.lock();
        match &mut *store {
            Store::Memory(buf) => {
                let offset = buf.len() as u64;
                buf.extend_from_slice(bytes);
                Ok(ArchiveRef { offset, length: bytes.len() as u64 })
            }
            Store::File { path, file, len } => {
                let offset = *len;
                file.write_all(bytes).map_err(|e| Error::io(&*path, e))?;
                file.flush().map_err(|e| Error::io(&*path, e))?;
                *len += bytes.len() as u64;
                Ok(ArchiveRef { offset, length: bytes.len() as u64 })
            }
        }
    }

    pub fn read(&self, at: ArchiveRef) -> Result<Vec<u8>> {
        let mut store = self.store.lock();
        let out_of_range = |len: u64| at.offset.checked_add(at.length).is_none_or(|end| end > len);
        match &mut *store {
            Store::Memory(buf) => {
                if out_of_range(buf.len() as u64) {
                    return Err(Error::InvalidInput(format!("archive ref {at:?} out of range")));
                }
                Ok(buf[at.offset as usize..(at.offset + at.length) as usize].to_vec())
            }
            Store::File { path, file, len } => {
                if out_of_range(*len) {
                    return Err(Error::InvalidInput(format!("archive ref {at:?} out of range")));
                }
                let mut out = vec![0u8; at.length as usize];
                file.seek(SeekFrom::Start(at.offset)).map_err(|e| Error::io(&*path, e))?;
                file.read_exact(&mut out).map_err(|e| Error::io(&*path, e))?;
                Ok(out)
            }
        }
    }

    pub fn len(&self) -> u64 {
        match &*self.store.lock() {
            Store::Memory(buf) => buf.len() as u64,
            Store::File { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn file_archive_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("branches.archive");
        let a = Archive::open(&path).unwrap();
        let r1 = a.append(b"first").unwrap();
        let r2 = a.append(&[0, 159, 146, 150]).unwrap();
        drop(a);
        let b = Archive::open(&path).unwrap();
        assert_eq!(b.read(r1).unwrap(), b"first");
        assert_eq!(b.read(r2).unwrap(), vec![0, 159, 146, 150]);
        assert_eq!(b.append(b"x").unwrap().offset, 9);
    }

    #[test]
    fn out_of_range_ref_is_an_error() {
        let a = Archive::in_memory();
        a.append(b"abc").unwrap();
        assert!(a.read(ArchiveRef { offset: 2, length: 5 }).is_err());
        assert!(a.read(ArchiveRef { offset: u64::MAX, length: 2 }).is_err());
    }

    proptest! {
        #[test]
        fn every_blob_round_trips(blobs in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..64), 1..20)) {
            let a = Archive::in_memory();
            let refs: Vec<_> = blobs.iter().map(|b| a.append(b).unwrap()).collect();
            for (b, r) in blobs.iter().zip(refs) {
                prop_assert_eq!(&a.read(r).unwrap(), b);
            }
        }
    }
}
