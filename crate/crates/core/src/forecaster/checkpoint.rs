//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"QMPC"
//! u32   format version
//! u64   metadata length, then that many bytes of JSON {config, normalization}
//! u32   number of weight arrays
//! per array: u32 name length, UTF-8 name, u64 value count, f64 values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Forecaster, ForecasterConfig, Normalization};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"QMPC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: ForecasterConfig,
    normalization: Normalization,
}

pub(super) fn save(model: &Forecaster, path: &Path) -> Result<()> {
    fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub(super) fn load(path: &Path) -> Result<Forecaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn encode(model: &Forecaster) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&Metadata {
        config: model.config.clone(),
        normalization: model.normalization.clone(),
    })?;
    let mut out = Vec::with_capacity(64 + meta.len() + model.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, tensor) in model.parameters() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::CorruptCheckpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::CorruptCheckpoint(format!("{what} length {v} overflows")))
    }
}

fn decode(bytes: &[u8]) -> Result<Forecaster> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("missing QMPC magic bytes".into()));
    }
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let meta_len = r.u64("metadata")?;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
    let count = r.u32("weight count")? as usize;
    let mut weights = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32("weight name")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "weight name")?)
            .map_err(|_| Error::CorruptCheckpoint("weight name is not UTF-8".into()))?
            .to_owned();
        let len = r.u64("weight values")?;
        let raw = r.take(len.saturating_mul(8), "weight values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        weights.push((name, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    meta.config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(format!("stored config: {e}")))?;
    Forecaster::from_parts(meta.config, meta.normalization, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::TimeSeriesWindow;

    fn model() -> Forecaster {
        let config = ForecasterConfig {
            hidden_size: 12,
            decoder_hidden: 6,
            ..Default::default()
        };
        let mut m = Forecaster::build(config, 9).unwrap();
        m.set_normalization(Normalization {
            target_mean: vec![0.1, 0.2],
            target_std: vec![1.1, 0.9],
            covariate_mean: vec![-0.05],
            covariate_std: vec![2.9],
        })
        .unwrap();
        m
    }

    fn window() -> TimeSeriesWindow {
        TimeSeriesWindow {
            past_targets: (0..20).map(|i| (i as f64 * 0.37).sin()).collect(),
            past_covariates: (0..10).map(|i| (i as f64 * 1.3).cos() * 4.0).collect(),
            future_covariates: (0..10).map(|i| (i as f64 * 0.7).sin() * 3.0).collect(),
            future_targets: None,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.qmpc");
        let m = model();
        m.save(&path).unwrap();
        let loaded = Forecaster::load(&path).unwrap();
        let (a, b) = (m.forecast(&window()).unwrap(), loaded.forecast(&window()).unwrap());
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(m.normalization(), loaded.normalization());
        assert_eq!(m.config(), loaded.config());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut bytes = encode(&model()).unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::CheckpointVersion { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn truncated_and_garbled_files_are_corrupt() {
        let bytes = encode(&model()).unwrap();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::CorruptCheckpoint(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode(&extra), Err(Error::CorruptCheckpoint(_))));
    }
}
