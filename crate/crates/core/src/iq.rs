//! Complex baseband sample buffers and their on-disk format.
//!
//! A record on disk is a pair of files sharing a stem:
//!
//! * `<stem>.iq` holds interleaved little-endian `f32` pairs `(I, Q)`;
//! * `<stem>.meta.json` holds the sample rate, span and a free-form
//!   provenance map (schedule, seeds, impairment chain, ...).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Meta = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct IqRecord {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub meta: Meta,
}

impl IqRecord {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
            meta: Meta::new(),
        }
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn span(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn with_meta(mut self, key: &str, value: Value) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    /// Mean power over all samples.
    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.re.is_finite() && s.im.is_finite())
    }

    /// SHA-256 over the exact `f64` sample bits.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.samples {
            hasher.update(s.re.to_le_bytes());
            hasher.update(s.im.to_le_bytes());
        }
        hasher.update(self.sample_rate.to_le_bytes());
        hex::encode(hasher.finalize())
    }

    /// Copy of `[start, start + len)`, clipped to the record.
    pub fn slice(&self, start: usize, len: usize) -> IqRecord {
        let start = start.min(self.samples.len());
        let end = (start + len).min(self.samples.len());
        IqRecord {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
            meta: self.meta.clone(),
        }
    }
}

pub fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    sample_rate: f64,
    span: f64,
    num_samples: usize,
    #[serde(default)]
    meta: Meta,
}

pub fn data_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".iq")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".meta.json")
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Encode samples as interleaved little-endian `f32` pairs.
pub fn encode_samples(samples: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_samples(bytes: &[u8]) -> Result<Vec<Complex64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Parse {
            line: 0,
            message: format!("IQ payload length {} is not a multiple of 8", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect())
}

/// Writes `<stem>.iq` and `<stem>.meta.json`.
pub fn write_record(stem: &Path, rec: &IqRecord) -> Result<()> {
    let data = data_path(stem);
    fs::write(&data, encode_samples(&rec.samples)).map_err(|e| Error::io(&data, e))?;
    let sidecar = Sidecar {
        sample_rate: rec.sample_rate,
        span: rec.span(),
        num_samples: rec.len(),
        meta: rec.meta.clone(),
    };
    let side = sidecar_path(stem);
    fs::write(&side, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn read_record(stem: &Path) -> Result<IqRecord> {
    let side = sidecar_path(stem);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    let data = data_path(stem);
    let bytes = fs::read(&data).map_err(|e| Error::io(&data, e))?;
    let samples = decode_samples(&bytes)?;
    if samples.len() != sidecar.num_samples {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "{} holds {} samples but sidecar declares {}",
                data.display(),
                samples.len(),
                sidecar.num_samples
            ),
        });
    }
    Ok(IqRecord {
        samples,
        sample_rate: sidecar.sample_rate,
        meta: sidecar.meta,
    })
}
