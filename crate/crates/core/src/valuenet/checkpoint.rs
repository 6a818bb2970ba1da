//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic         8 bytes  "EBNVCKPT"
//! version       u32
//! flags         u32      bit 0: entity-type one-hot enabled
//! reward hash   u64
//! shape table   4 x (u32 count, count x u32 sizes)   embed, interaction, attention, value
//! param count   u64
//! params        param count x f64
//! crc32         u32      over every preceding byte
//! ```

use std::path::Path;

use super::{NetworkShape, ValueNetwork};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"EBNVCKPT";
const FLAG_ENTITY_TYPE: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: ValueNetwork,
    pub reward_hash: u64,
}

impl Checkpoint {
    pub fn new(network: ValueNetwork, reward_hash: u64) -> Self {
        Checkpoint { network, reward_hash }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.network.shape();
        let mut out = Vec::with_capacity(64 + 8 * self.network.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let flags = if shape.include_entity_type { FLAG_ENTITY_TYPE } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&self.reward_hash.to_le_bytes());
        for sizes in [&shape.embed, &shape.interaction, &shape.attention, &shape.value] {
            out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
            for &s in sizes.iter() {
                out.extend_from_slice(&(s as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.network.param_count() as u64).to_le_bytes());
        for p in self.network.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint file (bad magic)".into());
        }
        let mut r = Reader { bytes, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!(
                "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
            ));
        }
        if bytes.len() < 12 {
            return Err("truncated file".into());
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(format!(
                "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
            ));
        }
        let mut r = Reader { bytes: body, pos: 12 };
        let flags = r.u32()?;
        if flags & !FLAG_ENTITY_TYPE != 0 {
            return Err(format!("unknown flag bits {flags:#x}"));
        }
        let reward_hash = r.u64()?;
        let mut table = Vec::with_capacity(4);
        for _ in 0..4 {
            let n = r.u32()? as usize;
            if n > 64 {
                return Err(format!("implausible layer count {n}"));
            }
            let sizes = (0..n)
                .map(|_| r.u32().map(|s| s as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            table.push(sizes);
        }
        let value = table.pop().expect("four entries");
        let attention = table.pop().expect("four entries");
        let interaction = table.pop().expect("four entries");
        let embed = table.pop().expect("four entries");
        let shape = NetworkShape {
            embed,
            interaction,
            attention,
            value,
            include_entity_type: flags & FLAG_ENTITY_TYPE != 0,
        };
        let mut network = ValueNetwork::zeroed(shape).map_err(|e| e.to_string())?;
        let count = r.u64()? as usize;
        if count != network.param_count() {
            return Err(format!(
                "shape table implies {} parameters but file stores {count}",
                network.param_count()
            ));
        }
        if r.remaining() != count * 8 {
            return Err(format!(
                "expected {} parameter bytes, found {}",
                count * 8,
                r.remaining()
            ));
        }
        for p in network.params_mut() {
            *p = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
        Ok(Checkpoint { network, reward_hash })
    }

    /// Confirms the checkpoint matches the run it is loaded into.
    pub fn ensure_compatible(&self, include_entity_type: bool, reward_hash: Option<u64>) -> Result<()> {
        let stored = self.network.shape().include_entity_type;
        if stored != include_entity_type {
            return Err(Error::InvalidConfig(format!(
                "checkpoint has include_entity_type = {stored} but the run config says {include_entity_type}"
            )));
        }
        if let Some(expected) = reward_hash {
            if expected != self.reward_hash {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint was trained with reward config {:016x}, run uses {expected:016x}",
                    self.reward_hash
                )));
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|reason| Error::checkpoint(path, reason))
}

/// Parses checkpoint bytes that did not come from a file.
pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    Checkpoint::from_bytes(bytes).map_err(|reason| Error::checkpoint(Path::new("<memory>"), reason))
}
