//! SAPB: a little-endian binary container for labeled clips.
//!
//! ```text
//! magic    b"SAPB"
//! version  u32
//! C V U M K u32 each
//! count    u64
//! count records:
//!   verb u32, noun u32
//!   verb feature  C x f32
//!   noun feature  C x f32
//!   confidences   M*K x f32
//!   bank          M*K*C x f32, row-major
//! ```
//!
//! Frame indices are implicit: row `r` belongs to frame `r / K`.

use super::Episode;
use crate::sap::{BranchFeature, ObjectBank};
use crate::training::Labels;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SAPB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 5 * 4 + 8;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}, expected \"SAPB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}, expected {VERSION}")]
    UnsupportedVersion(u32),
    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: u64, available: u64 },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("record {index}: {reason}")]
    InvalidRecord { index: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankDims {
    pub channels: usize,
    pub verbs: usize,
    pub nouns: usize,
    pub frames: usize,
    pub per_frame: usize,
}

impl BankDims {
    pub fn rows(&self) -> usize {
        self.frames * self.per_frame
    }

    fn record_len(&self) -> Option<u64> {
        let floats = (self.channels as u64)
            .checked_mul(2)?
            .checked_add(self.rows() as u64)?
            .checked_add((self.rows() as u64).checked_mul(self.channels as u64)?)?;
        floats.checked_mul(4)?.checked_add(8)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankDataset {
    pub dims: BankDims,
    pub episodes: Vec<Episode>,
}

fn u32_field(x: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(x).map_err(|_| FormatError::InvalidHeader(format!("{what} {x} does not fit in u32")))
}

pub fn encode_bank(data: &BankDataset) -> Result<Vec<u8>, FormatError> {
    let d = data.dims;
    let mut out = Vec::with_capacity(HEADER_LEN + data.episodes.len() * d.record_len().unwrap_or(0) as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (x, what) in [
        (d.channels, "channels"),
        (d.verbs, "verbs"),
        (d.nouns, "nouns"),
        (d.frames, "frames"),
        (d.per_frame, "per_frame"),
    ] {
        out.extend_from_slice(&u32_field(x, what)?.to_le_bytes());
    }
    out.extend_from_slice(&(data.episodes.len() as u64).to_le_bytes());
    let put = |out: &mut Vec<u8>, xs: &[f64]| {
        for &x in xs {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    };
    for (i, e) in data.episodes.iter().enumerate() {
        let bad = |reason: String| FormatError::InvalidRecord {
            index: i as u64,
            reason,
        };
        if e.verb_feature.len() != d.channels || e.noun_feature.len() != d.channels {
            return Err(bad("global feature length differs from header".into()));
        }
        if e.bank.rows() != d.rows() || (e.bank.rows() > 0 && e.bank.channels() != d.channels) {
            return Err(bad(format!("bank has {} rows, header says {}", e.bank.rows(), d.rows())));
        }
        if e.labels.verb >= d.verbs || e.labels.noun >= d.nouns {
            return Err(bad("label out of range".into()));
        }
        out.extend_from_slice(&u32_field(e.labels.verb, "verb")?.to_le_bytes());
        out.extend_from_slice(&u32_field(e.labels.noun, "noun")?.to_le_bytes());
        put(&mut out, &e.verb_feature.values);
        put(&mut out, &e.noun_feature.values);
        put(&mut out, e.bank.confidences());
        put(&mut out, e.bank.features());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                needed: n as u64,
                available: available as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode_bank(bytes: &[u8]) -> Result<BankDataset, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let mut h = [0usize; 5];
    for x in &mut h {
        *x = r.u32()? as usize;
    }
    let dims = BankDims {
        channels: h[0],
        verbs: h[1],
        nouns: h[2],
        frames: h[3],
        per_frame: h[4],
    };
    if dims.channels == 0 || dims.verbs == 0 || dims.nouns == 0 {
        return Err(FormatError::InvalidHeader(format!(
            "channels, verbs and nouns must be positive, got {}, {}, {}",
            dims.channels, dims.verbs, dims.nouns
        )));
    }
    if (dims.frames == 0) != (dims.per_frame == 0) {
        return Err(FormatError::InvalidHeader("frames and per_frame must both be zero or both positive".into()));
    }
    let count = r.u64()?;
    let rec = dims
        .record_len()
        .ok_or_else(|| FormatError::InvalidHeader("record size overflows".into()))?;
    let available = (bytes.len() - r.pos) as u64;
    let needed = count.checked_mul(rec).unwrap_or(u64::MAX);
    if needed > available {
        return Err(FormatError::Truncated { needed, available });
    }
    if needed < available {
        return Err(FormatError::TrailingBytes((available - needed) as usize));
    }

    let rows = dims.rows();
    let frame_index: Vec<usize> = (0..rows).map(|i| i / dims.per_frame.max(1)).collect();
    let mut episodes = Vec::with_capacity(count as usize);
    for index in 0..count {
        let bad = |reason: String| FormatError::InvalidRecord { index, reason };
        let verb = r.u32()? as usize;
        let noun = r.u32()? as usize;
        if verb >= dims.verbs {
            return Err(bad(format!("verb label {verb} not below {}", dims.verbs)));
        }
        if noun >= dims.nouns {
            return Err(bad(format!("noun label {noun} not below {}", dims.nouns)));
        }
        let fv = r.f32s(dims.channels)?;
        let fnn = r.f32s(dims.channels)?;
        let conf = r.f32s(rows)?;
        let feats = r.f32s(rows * dims.channels)?;
        if !fv.iter().chain(&fnn).all(|x| x.is_finite()) {
            return Err(bad("non-finite global feature".into()));
        }
        let bank = ObjectBank::new(feats, dims.channels, conf, frame_index.clone())
            .map_err(|e| bad(e.to_string()))?;
        episodes.push(Episode {
            verb_feature: BranchFeature::verb(fv),
            noun_feature: BranchFeature::noun(fnn),
            bank,
            labels: Labels { verb, noun },
        });
    }
    Ok(BankDataset { dims, episodes })
}

pub fn write_bank_file(path: &Path, data: &BankDataset) -> Result<(), FormatError> {
    std::fs::write(path, encode_bank(data)?)?;
    Ok(())
}

pub fn read_bank_file(path: &Path) -> Result<BankDataset, FormatError> {
    decode_bank(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BankDataset {
        let bank = ObjectBank::new(vec![0.5, -1.0, 2.0, 0.25], 2, vec![0.75, 0.125], vec![0, 1]).unwrap();
        BankDataset {
            dims: BankDims {
                channels: 2,
                verbs: 3,
                nouns: 4,
                frames: 2,
                per_frame: 1,
            },
            episodes: vec![Episode {
                verb_feature: BranchFeature::verb(vec![1.0, 2.0]),
                noun_feature: BranchFeature::noun(vec![-3.0, 0.125]),
                bank,
                labels: Labels { verb: 2, noun: 3 },
            }],
        }
    }

    #[test]
    fn round_trip() {
        let d = tiny();
        let bytes = encode_bank(&d).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8 + 4 * (2 + 2 + 2 + 4));
        assert_eq!(decode_bank(&bytes).unwrap(), d);
    }

    #[test]
    fn named_errors() {
        let bytes = encode_bank(&tiny()).unwrap();
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(decode_bank(&b), Err(FormatError::BadMagic(_))));
        let mut b = bytes.clone();
        b[4] = 9;
        assert!(matches!(decode_bank(&b), Err(FormatError::UnsupportedVersion(9))));
        assert!(matches!(
            decode_bank(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        let mut b = bytes.clone();
        b.push(0);
        assert!(matches!(decode_bank(&b), Err(FormatError::TrailingBytes(1))));
        let mut b = bytes.clone();
        b[HEADER_LEN] = 7;
        assert!(matches!(decode_bank(&b), Err(FormatError::InvalidRecord { index: 0, .. })));
        let mut b = bytes.clone();
        b[28..36].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_bank(&b), Err(FormatError::Truncated { .. })));
    }
}
