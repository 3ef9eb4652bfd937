//! Model file layout (all integers little-endian):
//!
//! ```text
//! magic      b"SCNN"
//! version    u32 (= 1)
//! view       u8   0 = global, 1 = local
//! grouping   u8   0 = species, 1 = genus
//! height     u32
//! width      u32
//! channels   u32 (= 3)
//! M          u32  embedding dimension
//! id_len     u32, then id_len bytes of UTF-8 backbone id
//! count      u64  number of f32 values that follow
//! values     f32 x count:
//!              channel means (3)
//!              backbone layers in order, each weights (row-major) then biases
//!              calibration weights (M)
//!              calibration bias (1)
//! ```

use std::fs;
use std::path::Path;

use super::model::{ModelMeta, SiameseModel};
use crate::error::{Error, Result};
use crate::pairgen::Grouping;
use crate::preprocess::View;

pub const MODEL_MAGIC: &[u8; 4] = b"SCNN";
pub const MODEL_VERSION: u32 = 1;

impl SiameseModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.meta();
        let mut out = Vec::with_capacity(64 + 4 * (self.params().len() + 3));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.push(match meta.view {
            View::Global => 0,
            View::Local => 1,
        });
        out.push(match meta.grouping {
            Grouping::Species => 0,
            Grouping::Genus => 1,
        });
        out.extend_from_slice(&meta.input_height.to_le_bytes());
        out.extend_from_slice(&meta.input_width.to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        out.extend_from_slice(&(meta.embedding_dim as u32).to_le_bytes());
        out.extend_from_slice(&(meta.backbone_id.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.backbone_id.as_bytes());
        let count = 3 + self.params().len();
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for v in self.channel_mean().iter().chain(self.params()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SiameseModel> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let view = match r.u8()? {
            0 => View::Global,
            1 => View::Local,
            v => return Err(Error::Format(format!("bad view tag {v}"))),
        };
        let grouping = match r.u8()? {
            0 => Grouping::Species,
            1 => Grouping::Genus,
            v => return Err(Error::Format(format!("bad grouping tag {v}"))),
        };
        let input_height = r.u32()?;
        let input_width = r.u32()?;
        if r.u32()? != 3 {
            return Err(Error::Format("only 3-channel inputs are supported".into()));
        }
        let embedding_dim = r.u32()? as usize;
        let id_len = r.u32()? as usize;
        let backbone_id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|_| Error::Format("backbone id is not UTF-8".into()))?;
        let count = r.u64()? as usize;
        if count < 3 || r.remaining() != count.saturating_mul(4) {
            return Err(Error::Format(format!(
                "parameter block holds {} bytes, header declares {count} values",
                r.remaining()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
        }
        let mean = [values[0], values[1], values[2]];
        let meta = ModelMeta {
            view,
            grouping,
            input_height,
            input_width,
            embedding_dim,
            backbone_id,
        };
        SiameseModel::from_parts(meta, mean, values.split_off(3))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SiameseModel> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        SiameseModel::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("truncated model file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
