//! Binary form of a weight upload or download.
//!
//! ```text
//! "EFDL" | version u8 | epoch u32 | user_id u32 | block_count u8
//! per block: tag u8 | ndim u8 | dims u32 * ndim | values f32 * prod(dims)
//! ```
//! All integers and floats are little-endian. Values travel at single
//! precision.

use crate::error::{Error, Result};
use crate::extractor::{BundleEntry, ParamTag, WeightBundle};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"EFDL";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 1;

/// Exact encoded size of `bundle`.
pub fn encoded_len(bundle: &WeightBundle) -> usize {
    HEADER_LEN
        + bundle
            .entries
            .iter()
            .map(|e| 2 + 4 * e.tensor.rank() + 4 * e.tensor.len())
            .sum::<usize>()
}

pub fn encode_weight_message(bundle: &WeightBundle, epoch: u32, user_id: u32) -> Result<Vec<u8>> {
    let blocks = u8::try_from(bundle.entries.len())
        .map_err(|_| Error::Config(format!("{} blocks exceed the 255-block message limit", bundle.entries.len())))?;
    let mut out = Vec::with_capacity(encoded_len(bundle));
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&user_id.to_le_bytes());
    out.push(blocks);
    for entry in &bundle.entries {
        let shape = entry.tensor.shape();
        let ndim = u8::try_from(shape.len())
            .map_err(|_| Error::Config(format!("tensor rank {} exceeds 255", shape.len())))?;
        out.push(entry.tag.to_byte());
        out.push(ndim);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| Error::Config(format!("dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in entry.tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Malformed {
                offset: self.pos,
                reason: format!("truncated {what}: need {n} bytes, {available} left"),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Inverse of [`encode_weight_message`]; returns `(bundle, epoch, user_id)`.
pub fn decode_weight_message(bytes: &[u8]) -> Result<(WeightBundle, u32, u32)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Malformed {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = c.u8("version")?;
    if version != VERSION {
        return Err(Error::Malformed {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let epoch = c.u32("epoch")?;
    let user_id = c.u32("user id")?;
    let blocks = c.u8("block count")?;
    let mut entries = Vec::with_capacity(blocks as usize);
    for b in 0..blocks {
        let tag_at = c.pos;
        let tag_byte = c.u8("block tag")?;
        let tag = ParamTag::from_byte(tag_byte).ok_or_else(|| Error::Malformed {
            offset: tag_at,
            reason: format!("block {b}: invalid tag byte {tag_byte:#04x}"),
        })?;
        let ndim = c.u8("dimension count")?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(c.u32("dimension")? as usize);
        }
        let payload_at = c.pos;
        let bytes_needed = shape
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Malformed {
                offset: payload_at,
                reason: format!("block {b}: shape {shape:?} overflows"),
            })?;
        let payload = c.take(bytes_needed, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|ch| f32::from_le_bytes(ch.try_into().expect("4 bytes")) as f64)
            .collect();
        let tensor = Tensor::from_vec(&shape, data).expect("payload sized from shape");
        entries.push(BundleEntry::new(tag, tensor));
    }
    if c.pos != bytes.len() {
        return Err(Error::Malformed {
            offset: c.pos,
            reason: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    Ok((WeightBundle::new(epoch, entries), epoch, user_id))
}

/// Rounds every value to single precision, as a trip through the codec does.
pub fn quantize(bundle: &WeightBundle) -> WeightBundle {
    WeightBundle::new(
        bundle.epoch,
        bundle
            .entries
            .iter()
            .map(|e| BundleEntry::new(e.tag, e.tensor.map(|v| v as f32 as f64)))
            .collect(),
    )
}
