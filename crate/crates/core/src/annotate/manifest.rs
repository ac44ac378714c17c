use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::iq;
use crate::sync::SyncResult;

/// One labelled sample. Paths are relative to the manifest's root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Stem of the `.iq` / `.meta.json` pair.
    pub iq: PathBuf,
    /// Stem of the `.spec.f32` / `.axes.json` / `.pgm` triple.
    pub spectrogram: PathBuf,
    /// VOC XML file.
    pub labels: PathBuf,
    pub schedule_hash: String,
    pub impairment_chain: Value,
    pub sync: Option<SyncResult>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| a.id.cmp(&b.id));
    }

    /// Every referenced file exists and each schedule hash matches its IQ
    /// sidecar.
    pub fn validate(&self, root: &Path) -> Result<()> {
        for e in &self.entries {
            let stem = root.join(&e.iq);
            let spec = root.join(&e.spectrogram);
            let required = [
                iq::data_path(&stem),
                iq::sidecar_path(&stem),
                suffixed(&spec, ".spec.f32"),
                suffixed(&spec, ".axes.json"),
                root.join(&e.labels),
            ];
            if let Some(missing) = required.iter().find(|p| !p.exists()) {
                return Err(Error::Config(format!("{}: missing {}", e.id, missing.display())));
            }
            let side = iq::sidecar_path(&stem);
            let text = fs::read_to_string(&side).map_err(|err| Error::io(&side, err))?;
            let sidecar: Value = serde_json::from_str(&text)?;
            let hash = sidecar.pointer("/meta/schedule_hash").and_then(Value::as_str);
            if hash != Some(e.schedule_hash.as_str()) {
                return Err(Error::Config(format!(
                    "{}: schedule hash {} does not match sidecar {:?}",
                    e.id, e.schedule_hash, hash
                )));
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn suffixed(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
