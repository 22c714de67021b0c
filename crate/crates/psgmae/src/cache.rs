//! Binary epoch cache.
//!
//! Layout: the magic `PSGEPO01`, then one record per epoch, all integers
//! and floats little-endian:
//!
//! ```text
//! u32 subject id length, subject id bytes
//! u32 epoch index
//! u8  stage code
//! u32 channel count (input first, then targets)
//! per channel: u32 name length, name bytes, f64 mean, f64 std
//! per channel: 3000 x f32 normalized samples
//! ```

use std::path::Path;

use psgmae_core::pipeline::{ChannelEpoch, EpochRecord, NormParams, SleepStage, EPOCH_SAMPLES};

pub const CACHE_MAGIC: &[u8; 8] = b"PSGEPO01";

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("not an epoch cache (bad magic)")]
    BadMagic,
    #[error("epoch cache truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid epoch cache content at byte {at}: {reason}")]
    Invalid { at: usize, reason: String },
    #[error("epoch {0} has a channel with {1} samples, expected 3000")]
    WrongLength(usize, usize),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn encode_epochs(records: &[EpochRecord]) -> Result<Vec<u8>, CacheError> {
    let mut out = CACHE_MAGIC.to_vec();
    for (i, r) in records.iter().enumerate() {
        let channels: Vec<&ChannelEpoch> = std::iter::once(&r.input).chain(&r.targets).collect();
        if let Some(c) = channels.iter().find(|c| c.samples.len() != EPOCH_SAMPLES) {
            return Err(CacheError::WrongLength(i, c.samples.len()));
        }
        put_str(&mut out, &r.subject_id);
        out.extend((r.epoch_index as u32).to_le_bytes());
        out.push(r.stage.code());
        out.extend((channels.len() as u32).to_le_bytes());
        for c in &channels {
            put_str(&mut out, &c.name);
            out.extend(c.norm.mean.to_le_bytes());
            out.extend(c.norm.std.to_le_bytes());
        }
        for c in &channels {
            for v in &c.samples {
                out.extend(v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CacheError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CacheError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CacheError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, CacheError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String, CacheError> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CacheError::Invalid {
            at,
            reason: "string is not UTF-8".into(),
        })
    }
}

pub fn decode_epochs(bytes: &[u8]) -> Result<Vec<EpochRecord>, CacheError> {
    if bytes.len() < CACHE_MAGIC.len() || &bytes[..8] != CACHE_MAGIC {
        return Err(CacheError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 8 };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let subject_id = r.string()?;
        let epoch_index = r.u32()? as usize;
        let at = r.pos;
        let code = r.take(1)?[0];
        let stage = SleepStage::from_code(code).ok_or_else(|| CacheError::Invalid {
            at,
            reason: format!("unknown stage code {code}"),
        })?;
        let at = r.pos;
        let count = r.u32()? as usize;
        if count == 0 {
            return Err(CacheError::Invalid {
                at,
                reason: "epoch has no channels".into(),
            });
        }
        // Each channel needs at least its samples; refuse counts the
        // remaining bytes cannot hold before allocating anything.
        if count.saturating_mul(EPOCH_SAMPLES * 4) > bytes.len() - r.pos {
            return Err(CacheError::Truncated(bytes.len()));
        }
        let mut heads = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let mean = r.f64()?;
            let std = r.f64()?;
            heads.push((name, NormParams { mean, std }));
        }
        let mut channels: Vec<ChannelEpoch> = heads
            .into_iter()
            .map(|(name, norm)| -> Result<ChannelEpoch, CacheError> {
                let raw = r.take(EPOCH_SAMPLES * 4)?;
                let samples = raw
                    .chunks_exact(4)
                    .map(|w| f32::from_le_bytes(w.try_into().expect("4 bytes")))
                    .collect();
                Ok(ChannelEpoch {
                    name,
                    samples,
                    norm,
                })
            })
            .collect::<Result<_, _>>()?;
        let input = channels.remove(0);
        out.push(EpochRecord {
            subject_id,
            epoch_index,
            stage,
            input,
            targets: channels,
        });
    }
    Ok(out)
}

pub fn write_epochs(path: &Path, records: &[EpochRecord]) -> Result<(), CacheError> {
    let bytes = encode_epochs(records)?;
    std::fs::write(path, bytes).map_err(|source| CacheError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_epochs(path: &Path) -> Result<Vec<EpochRecord>, CacheError> {
    let bytes = std::fs::read(path).map_err(|source| CacheError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_epochs(&bytes)
}
