//! Append-only directory of secure keys, one file per epoch:
//! `"QKEY" | epoch: u32 LE | bit length: u64 LE | bits packed MSB-first`.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::PrivacyError;
use crate::model::{pack_bits, unpack_bits, KeyBuffer, KeyStage};

const MAGIC: &[u8; 4] = b"QKEY";

pub fn encode_key(key: &KeyBuffer) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + key.len() / 8 + 1);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&key.epoch_id.to_le_bytes());
    out.extend_from_slice(&(key.len() as u64).to_le_bytes());
    out.extend_from_slice(&pack_bits(&key.bits));
    out
}

pub fn decode_key(bytes: &[u8]) -> Result<KeyBuffer, PrivacyError> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(PrivacyError::Malformed("bad header".into()));
    }
    let epoch = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() - 16 != n.div_ceil(8) {
        return Err(PrivacyError::Malformed(format!("{} payload bytes for {n} bits", bytes.len() - 16)));
    }
    Ok(KeyBuffer::new(unpack_bits(&bytes[16..], n), KeyStage::Secure, epoch))
}

#[derive(Debug, Clone)]
pub struct KeyStore {
    dir: PathBuf,
}

impl KeyStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<KeyStore, PrivacyError> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(KeyStore { dir: dir.as_ref().to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, epoch: u32) -> PathBuf {
        self.dir.join(format!("epoch_{epoch:08}.qkey"))
    }

    /// Writes a new key file; existing epochs are never overwritten.
    pub fn store(&self, key: &KeyBuffer) -> Result<PathBuf, PrivacyError> {
        let path = self.path(key.epoch_id);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                PrivacyError::Exists(key.epoch_id)
            } else {
                e.into()
            }
        })?;
        f.write_all(&encode_key(key))?;
        f.sync_all()?;
        Ok(path)
    }

    pub fn load(&self, epoch: u32) -> Result<KeyBuffer, PrivacyError> {
        let mut bytes = Vec::new();
        File::open(self.path(epoch))?.read_to_end(&mut bytes)?;
        decode_key(&bytes)
    }

    /// Stored epoch ids in ascending order.
    pub fn epochs(&self) -> Result<Vec<u32>, PrivacyError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_prefix("epoch_").and_then(|s| s.strip_suffix(".qkey")) {
                if let Ok(id) = id.parse() {
                    out.push(id);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn load_all(&self) -> Result<Vec<KeyBuffer>, PrivacyError> {
        self.epochs()?.into_iter().map(|e| self.load(e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let store = KeyStore::open(dir.path()).unwrap();
        let k = KeyBuffer::new(vec![true, false, true, true, false, false, true, false, true], KeyStage::Secure, 3);
        store.store(&k).unwrap();
        assert!(matches!(store.store(&k), Err(PrivacyError::Exists(3))));
        assert_eq!(store.load(3).unwrap(), k);
        let empty = KeyBuffer::new(vec![], KeyStage::Secure, 1);
        store.store(&empty).unwrap();
        assert_eq!(store.epochs().unwrap(), vec![1, 3]);
        assert_eq!(store.load_all().unwrap(), vec![empty, k]);
    }

    #[test]
    fn header_layout() {
        let k = KeyBuffer::new(vec![true; 3], KeyStage::Secure, 0x0102_0304);
        let b = encode_key(&k);
        assert_eq!(&b[..4], b"QKEY");
        assert_eq!(&b[4..8], &[4, 3, 2, 1]);
        assert_eq!(&b[8..16], &[3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(b[16], 0b1110_0000);
        assert!(decode_key(&b[..15]).is_err());
        assert!(decode_key(&b[..16]).is_err());
    }
}
