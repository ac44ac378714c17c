//! TOML run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channel::Impairment;
use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::evalmetrics::DEFAULT_IOU_THRESHOLD;
use crate::spectro::StftParams;
use crate::sync::{PreambleConfig, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub workers: usize,
    pub seed: u64,
    /// Retransmissions after a failed sync before the chain is failed.
    pub max_retries: u32,
    /// Write IQ buffers to disk. When off, downstream tasks rebuild them in
    /// memory from their ancestors' parameters.
    pub persist_iq: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            workers: 4,
            seed: 1,
            max_retries: 3,
            persist_iq: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub span_s: f64,
    pub band_width_hz: f64,
    /// Frames keep at least this distance from both ends of the span.
    pub edge_margin_s: f64,
    pub lte_duration_s: [f64; 2],
    pub lte_bandwidths_hz: Vec<f64>,
    pub wifi_duration_s: [f64; 2],
    pub wifi_bandwidths_hz: Vec<f64>,
    /// Idle time between consecutive frames of the mixed scene.
    pub gap_s: [f64; 2],
    /// Defaults for the periodic scene when the grid leaves them out.
    pub periodic_bandwidth_hz: f64,
    pub periodic_duration_s: f64,
    pub periodic_interval_s: f64,
    /// SNR the interference scene's desired signal is received at; the
    /// interferer's power is set relative to it.
    pub reference_snr_db: f64,
    /// Desired emitter of the interference scene.
    pub desired_bandwidth_hz: f64,
    pub desired_center_hz: f64,
    /// Interfering WiFi-like emitter of the interference scene; frames last
    /// `wifi_duration_s` and are spaced by `gap_s`.
    pub interferer_bandwidth_hz: f64,
    pub interferer_center_hz: f64,
    /// Transmit buffer layout in samples: random lead up to `lead_max`, then
    /// guard, preamble, gap, payload and tail.
    pub lead_max: usize,
    pub guard: usize,
    pub gap: usize,
    pub tail: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            span_s: 0.05,
            band_width_hz: 20e6,
            edge_margin_s: 0.5e-3,
            lte_duration_s: [4.5e-3, 9e-3],
            lte_bandwidths_hz: vec![5e6, 10e6, 15e6, 20e6],
            wifi_duration_s: [2e-3, 3e-3],
            wifi_bandwidths_hz: vec![10e6, 20e6],
            gap_s: [1.5e-3, 6e-3],
            periodic_bandwidth_hz: 20e6,
            periodic_duration_s: 4e-3,
            periodic_interval_s: 4e-3,
            reference_snr_db: 29.0,
            desired_bandwidth_hz: 10e6,
            desired_center_hz: 7.5e6,
            interferer_bandwidth_hz: 10e6,
            interferer_center_hz: 12.5e6,
            lead_max: 1024,
            guard: 512,
            gap: 512,
            tail: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReference {
    /// SNR against the power of signal-occupied samples.
    Occupied,
    /// SNR against unit power; the noise floor stays fixed whatever the
    /// scene contains.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub noise_reference: NoiseReference,
    /// Complex taps as `[re, im]` pairs.
    pub multipath: Option<Vec<[f64; 2]>>,
    pub shape_filter: Option<Vec<f64>>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            noise_reference: NoiseReference::Occupied,
            multipath: None,
            shape_filter: None,
        }
    }
}

impl ChannelConfig {
    /// Deterministic impairments placed before the noise step.
    pub fn static_steps(&self, cfo_hz: f64, gain_db: f64) -> Vec<Impairment> {
        let mut steps = Vec::new();
        if let Some(taps) = &self.multipath {
            steps.push(Impairment::Multipath {
                taps: taps.iter().map(|t| Complex64::new(t[0], t[1])).collect(),
            });
        }
        if let Some(taps) = &self.shape_filter {
            steps.push(Impairment::ShapeFilter { taps: taps.clone() });
        }
        if gain_db != 0.0 {
            steps.push(Impairment::Gain { db: gain_db });
        }
        if cfo_hz != 0.0 {
            steps.push(Impairment::Cfo { offset_hz: cfo_hz });
        }
        steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncConfig {
    pub threshold: f64,
    /// Samples at the start of the receive buffer searched for the preamble.
    pub search_len: usize,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            search_len: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    pub floor_db: f64,
    pub ceil_db: f64,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            floor_db: -80.0,
            ceil_db: -10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub replicates: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { replicates: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunConfig,
    /// Parameter axes; see [`super::grid::GRID_KEYS`].
    pub grid: BTreeMap<String, Vec<Value>>,
    pub scene: SceneConfig,
    pub stft: StftParams,
    pub detector: DetectorConfig,
    pub preamble: PreambleConfig,
    pub sync: SyncConfig,
    pub channel: ChannelConfig,
    pub image: ImageConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.workers == 0 {
            return Err(Error::Config("run.workers must be at least 1".into()));
        }
        if !(self.scene.span_s > 0.0 && self.scene.band_width_hz > 0.0) {
            return Err(Error::Config("scene span and band width must be positive".into()));
        }
        if self.scene.lte_bandwidths_hz.is_empty() || self.scene.wifi_bandwidths_hz.is_empty() {
            return Err(Error::Config("scene bandwidth lists must not be empty".into()));
        }
        for pair in [self.scene.lte_duration_s, self.scene.wifi_duration_s, self.scene.gap_s] {
            if !(pair[0] > 0.0 && pair[1] >= pair[0]) {
                return Err(Error::Config(format!("invalid range {pair:?}")));
            }
        }
        self.preamble.validate()?;
        let latest_end = self.scene.lead_max + self.scene.guard + crate::sync::PREAMBLE_LEN;
        if self.sync.search_len < latest_end {
            return Err(Error::Config(format!(
                "sync.search_len must be at least {latest_end} to cover the latest preamble"
            )));
        }
        self.detector.validate()?;
        Ok(())
    }
}
