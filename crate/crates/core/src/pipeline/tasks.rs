//! Task bodies. Each stage has a pure in-memory form and a file form that
//! reads its ancestors' outputs and writes its own.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{NoiseReference, PipelineConfig};
use super::dag::{seed_from, TaskDag, TaskKind, TaskNode};
use super::grid::{get_f64, ParameterGrid, Params};
use super::scenes::{build_transmission, SceneKind, TxLayout};
use crate::annotate::{
    export_predictions, export_voc, ground_truth_boxes, import_predictions, Alignment, BoundingBox, Detection,
    GroundTruth, VocAnnotation,
};
use crate::channel::{Impairment, ImpairmentChain};
use crate::detect::{detect, DetectorConfig};
use crate::error::{Error, Result};
use crate::evalmetrics::{deviation_stats, evaluate, match_detections, EvalReport, ImageEval};
use crate::features::{
    extract_box_features, extract_set_features, feature_deviation, feature_rows, fi_deviation, truth_set_features,
    write_feature_csv, Deviation, FrameDeviation, FrameFeatures, SetFeatures,
};
use crate::iq::{read_record, write_record, IqRecord};
use crate::spectro::{compute_spectrogram, read_spectrogram, write_spectrogram, Spectrogram, SpectrogramAxes};
use crate::sync::{estimate_snr, SyncResult, Synchronizer};
use crate::waveforms::{rotate, TransmissionSchedule};

pub const SCHEDULE_FILE: &str = "schedule.json";
pub const LAYOUT_FILE: &str = "layout.json";
pub const TX_STEM: &str = "tx";
pub const CHAIN_FILE: &str = "chain.json";
pub const RX_STEM: &str = "rx";
pub const SYNC_FILE: &str = "sync.json";
pub const PAYLOAD_STEM: &str = "payload";
pub const SPEC_STEM: &str = "spec";
pub const LABELS_FILE: &str = "labels.xml";
pub const TRUTH_FILE: &str = "truth.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const FEATURES_FILE: &str = "features.csv";
pub const EVAL_FILE: &str = "eval.json";

pub struct Synthesis {
    pub schedule: TransmissionSchedule,
    pub layout: TxLayout,
    pub tx: IqRecord,
}

pub fn synthesize(cfg: &PipelineConfig, params: &Params, seed: u64) -> Result<Synthesis> {
    let (schedule, layout, tx) = build_transmission(cfg, params, seed)?;
    Ok(Synthesis { schedule, layout, tx })
}

/// Static impairments followed by one noise step at the requested SNR.
///
/// The interference scene always measures SNR against unit power so the
/// desired emitter keeps its SNR whatever the interferer adds.
pub fn impairment_chain(cfg: &PipelineConfig, scene: SceneKind, params: &Params, noise_seed: u64) -> ImpairmentChain {
    let snr_db = get_f64(params, "snr_db").unwrap_or(cfg.scene.reference_snr_db);
    let cfo_hz = get_f64(params, "cfo_hz").unwrap_or(0.0);
    let gain_db = get_f64(params, "gain_db").unwrap_or(0.0);
    let mut chain = ImpairmentChain::new(noise_seed);
    chain.steps = cfg.channel.static_steps(cfo_hz, gain_db);
    let unit = scene == SceneKind::Interference || cfg.channel.noise_reference == NoiseReference::Unit;
    chain.steps.push(if unit {
        Impairment::NoiseFloor { power_db: gain_db - snr_db }
    } else {
        Impairment::AwgnSnr { snr_db }
    });
    chain
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    /// Transmissions used, including the successful one.
    pub attempts: u32,
    /// Noise seed of the successful transmission.
    pub noise_seed: u64,
    pub result: SyncResult,
    /// Detected minus true preamble start, in samples.
    pub timing_error: i64,
    pub snr_estimate_db: Option<f64>,
}

/// Noise seed of retransmission `attempt`; attempt 0 keeps the chain's own.
pub fn retransmission_seed(chain: &ImpairmentChain, impair_id: &str, attempt: u32) -> u64 {
    if attempt == 0 {
        chain.noise_seed
    } else {
        seed_from(impair_id, attempt as u64)
    }
}

/// Crops the payload after a detected preamble and removes the estimated CFO.
pub fn extract_payload(rx: &IqRecord, sync: &SyncResult, layout: &TxLayout) -> Option<IqRecord> {
    let start = sync.t_offset + layout.preamble_len + layout.gap;
    if !sync.detected || start + layout.payload_len > rx.len() {
        return None;
    }
    let mut payload = rx.slice(start, layout.payload_len);
    rotate(&mut payload.samples, -sync.cfo_hz, rx.sample_rate);
    payload.meta = rx.meta.clone();
    payload.meta.remove("layout");
    payload.meta.insert("sync".into(), serde_json::to_value(sync).expect("sync serialises"));
    Some(payload)
}

/// Searches for the preamble, retransmitting with fresh noise until it is
/// found or the retry budget runs out.
pub fn receive(
    cfg: &PipelineConfig,
    tx: &IqRecord,
    layout: &TxLayout,
    chain: &ImpairmentChain,
    impair_id: &str,
    first_rx: Option<IqRecord>,
) -> Result<(SyncReport, IqRecord)> {
    let mut sync = Synchronizer::new(&cfg.preamble, cfg.sync.threshold)?;
    let mut first_rx = first_rx;
    for attempt in 0..=cfg.run.max_retries {
        let noise_seed = retransmission_seed(chain, impair_id, attempt);
        let rx = match first_rx.take() {
            Some(rx) => rx,
            None => chain.with_noise_seed(noise_seed).apply(tx)?,
        };
        let window = &rx.samples[..cfg.sync.search_len.min(rx.len())];
        let result = sync.detect(window, rx.sample_rate)?;
        if let Some(payload) = extract_payload(&rx, &result, layout) {
            let report = SyncReport {
                attempts: attempt + 1,
                noise_seed,
                result,
                timing_error: result.t_offset as i64 - layout.preamble_start as i64,
                snr_estimate_db: estimate_snr(&rx, &result, &cfg.preamble).ok(),
            };
            return Ok((report, payload));
        }
        log::debug!("{impair_id}: no preamble on transmission {}", attempt + 1);
    }
    Err(Error::SyncFailed { attempts: cfg.run.max_retries + 1 })
}

/// Rebuilds the payload a recorded sync result selected.
pub fn replay_payload(tx: &IqRecord, layout: &TxLayout, chain: &ImpairmentChain, report: &SyncReport) -> Result<IqRecord> {
    let rx = chain.with_noise_seed(report.noise_seed).apply(tx)?;
    extract_payload(&rx, &report.result, layout).ok_or(Error::RequiresDetection)
}

pub fn make_spectrogram(cfg: &PipelineConfig, payload: &IqRecord) -> Result<Spectrogram> {
    compute_spectrogram(payload, &cfg.stft)
}

/// Payload time zero coincides with schedule time zero once the receiver
/// has cropped at the detected preamble.
pub fn label(schedule: &TransmissionSchedule, axes: &SpectrogramAxes) -> Result<GroundTruth> {
    ground_truth_boxes(schedule, axes, Alignment::identity())
}

pub fn detector_config(cfg: &PipelineConfig, params: &Params) -> DetectorConfig {
    let mut det = cfg.detector.clone();
    if let Some(t) = get_f64(params, "threshold_db") {
        det.threshold_db_above_floor = t;
    }
    det
}

pub fn iou_threshold(cfg: &PipelineConfig, params: &Params) -> f64 {
    get_f64(params, "iou_threshold").unwrap_or(cfg.eval.iou_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub boxes: Vec<BoundingBox>,
    pub frame_index: Vec<usize>,
    pub dropped: usize,
    /// Scheduled features of each box's frame.
    pub frames: Vec<FrameFeatures>,
    pub set: SetFeatures,
}

impl TruthFile {
    pub fn new(gt: &GroundTruth, schedule: &TransmissionSchedule, axes: &SpectrogramAxes) -> Self {
        Self {
            boxes: gt.boxes.clone(),
            frame_index: gt.frame_index.clone(),
            dropped: gt.dropped,
            frames: gt.frame_index.iter().map(|&i| FrameFeatures::of_frame(&schedule.frames[i])).collect(),
            set: truth_set_features(schedule, axes, Alignment::identity()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDeviation {
    pub gt: usize,
    pub det: usize,
    pub iou: f64,
    pub deviation: FrameDeviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEval {
    pub image: String,
    pub report: EvalReport,
    pub pairs: Vec<PairDeviation>,
    pub fi: Option<Deviation>,
    pub extracted_set: SetFeatures,
    pub truth_set: SetFeatures,
    pub sync: Option<SyncReport>,
}

pub fn evaluate_chain(
    image: &str,
    truth: &TruthFile,
    dets: &[Detection],
    axes: &SpectrogramAxes,
    band_width: f64,
    iou_threshold: f64,
    sync: Option<SyncReport>,
) -> Result<ChainEval> {
    let m = match_detections(&truth.boxes, dets, iou_threshold);
    let mut pairs = Vec::with_capacity(m.pairs.len());
    for p in &m.pairs {
        let extracted = extract_box_features(&dets[p.det].bbox, axes)?;
        pairs.push(PairDeviation {
            gt: p.gt,
            det: p.det,
            iou: p.iou,
            deviation: feature_deviation(&extracted, &truth.frames[p.gt], band_width),
        });
    }
    let boxes: Vec<BoundingBox> = dets.iter().map(|d| d.bbox).collect();
    let extracted_set = extract_set_features(&boxes, axes)?;
    let fi = fi_deviation(&extracted_set, &truth.set);

    let mut report = evaluate(
        &[ImageEval {
            gt: truth.boxes.clone(),
            dets: dets.to_vec(),
        }],
        iou_threshold,
    );
    type Column = (&'static str, fn(&FrameDeviation) -> f64);
    let columns: [Column; 3] = [
        ("bandwidth", |d| d.bandwidth.value),
        ("center", |d| d.center.value),
        ("duration", |d| d.duration.value),
    ];
    for (name, get) in columns {
        let values: Vec<f64> = pairs.iter().map(|p| get(&p.deviation)).collect();
        if let Some(stats) = deviation_stats(&values) {
            report.deviations.insert(name.into(), stats);
        }
    }
    if let Some(stats) = fi.filter(|d| !d.absolute).and_then(|d| deviation_stats(&[d.value])) {
        report.deviations.insert("interval".into(), stats);
    }
    Ok(ChainEval {
        image: image.to_string(),
        report,
        pairs,
        fi,
        extracted_set,
        truth_set: truth.set,
        sync,
    })
}

/// Everything one grid point produces, computed in memory.
pub struct Simulation {
    pub schedule: TransmissionSchedule,
    pub sync: SyncReport,
    pub spectrogram: Spectrogram,
    pub truth: TruthFile,
    pub detections: Vec<Detection>,
    pub eval: ChainEval,
}

/// Runs one grid point end to end without touching the disk. Seeds match
/// the on-disk pipeline, so results agree with a run of the same config.
pub fn simulate(cfg: &PipelineConfig, point: &Params) -> Result<Simulation> {
    let raw = point.iter().map(|(k, v)| (k.clone(), vec![v.clone()])).collect();
    let dag = TaskDag::expand(&ParameterGrid::new(&raw)?, cfg)?;
    let chain = &dag.chains[0];
    let node = |kind| &dag.nodes[chain.task(kind)];
    let synth = node(TaskKind::Synth);
    let impair = node(TaskKind::Impair);

    let s = synthesize(cfg, &synth.params, synth.seed(0))?;
    let scene = SceneKind::from_params(&synth.params)?;
    let ch = impairment_chain(cfg, scene, &impair.params, impair.seed(0));
    let (sync, payload) = receive(cfg, &s.tx, &s.layout, &ch, &impair.id, None)?;
    let spectrogram = make_spectrogram(cfg, &payload)?;
    let gt = label(&s.schedule, &spectrogram.axes)?;
    let truth = TruthFile::new(&gt, &s.schedule, &spectrogram.axes);
    let detect_node = node(TaskKind::Detect);
    let detections = detect(&spectrogram, &detector_config(cfg, &detect_node.params))?;
    let eval = evaluate_chain(
        chain.task(TaskKind::Spectrogram),
        &truth,
        &detections,
        &spectrogram.axes,
        s.schedule.band_width,
        iou_threshold(cfg, &node(TaskKind::Eval).params),
        Some(sync),
    )?;
    Ok(Simulation {
        schedule: s.schedule,
        sync,
        spectrogram,
        truth,
        detections,
        eval,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Resolves ancestor outputs for one task.
pub struct TaskInputs<'a> {
    cfg: &'a PipelineConfig,
    dag: &'a TaskDag,
    tasks_dir: &'a Path,
    node: &'a TaskNode,
}

impl<'a> TaskInputs<'a> {
    pub fn new(cfg: &'a PipelineConfig, dag: &'a TaskDag, tasks_dir: &'a Path, node: &'a TaskNode) -> Self {
        Self { cfg, dag, tasks_dir, node }
    }

    fn ancestor(&self, kind: TaskKind) -> Result<&'a TaskNode> {
        self.dag
            .lineage(&self.node.id)
            .get(&kind)
            .copied()
            .ok_or_else(|| Error::Dag(format!("{} has no {kind} ancestor", self.node.id)))
    }

    fn path(&self, kind: TaskKind, file: &str) -> Result<PathBuf> {
        Ok(self.tasks_dir.join(&self.ancestor(kind)?.id).join(file))
    }

    fn schedule(&self) -> Result<TransmissionSchedule> {
        read_json(&self.path(TaskKind::Synth, SCHEDULE_FILE)?)
    }

    fn layout(&self) -> Result<TxLayout> {
        read_json(&self.path(TaskKind::Synth, LAYOUT_FILE)?)
    }

    fn tx(&self) -> Result<IqRecord> {
        if self.cfg.run.persist_iq {
            read_record(&self.path(TaskKind::Synth, TX_STEM)?)
        } else {
            let synth = self.ancestor(TaskKind::Synth)?;
            Ok(synthesize(self.cfg, &synth.params, synth.seed(0))?.tx)
        }
    }

    fn chain(&self) -> Result<ImpairmentChain> {
        read_json(&self.path(TaskKind::Impair, CHAIN_FILE)?)
    }

    fn sync(&self) -> Result<SyncReport> {
        read_json(&self.path(TaskKind::Record, SYNC_FILE)?)
    }

    fn payload(&self) -> Result<IqRecord> {
        if self.cfg.run.persist_iq {
            read_record(&self.path(TaskKind::Record, PAYLOAD_STEM)?)
        } else {
            replay_payload(&self.tx()?, &self.layout()?, &self.chain()?, &self.sync()?)
        }
    }

    fn axes(&self) -> Result<SpectrogramAxes> {
        SpectrogramAxes::read_json(&self.path(TaskKind::Spectrogram, &format!("{SPEC_STEM}.axes.json"))?)
    }

    fn detections(&self) -> Result<Vec<Detection>> {
        let set = import_predictions(&self.path(TaskKind::Detect, PREDICTIONS_FILE)?, None)?;
        if let Some(bad) = set.rejected.first() {
            return Err(Error::Parse {
                line: bad.line,
                message: bad.reason.clone(),
            });
        }
        Ok(set.by_image.into_values().flatten().collect())
    }

    fn image(&self) -> Result<&'a str> {
        Ok(&self.ancestor(TaskKind::Spectrogram)?.id)
    }
}

/// Runs one task, writing its outputs into `out`.
pub fn execute(cfg: &PipelineConfig, dag: &TaskDag, tasks_dir: &Path, node: &TaskNode, out: &Path) -> Result<()> {
    let inputs = TaskInputs::new(cfg, dag, tasks_dir, node);
    match node.kind {
        TaskKind::Synth => {
            let s = synthesize(cfg, &node.params, node.seed(0))?;
            write_json(&out.join(SCHEDULE_FILE), &s.schedule)?;
            write_json(&out.join(LAYOUT_FILE), &s.layout)?;
            if cfg.run.persist_iq {
                write_record(&out.join(TX_STEM), &s.tx)?;
            }
        }
        TaskKind::Impair => {
            let synth = inputs.ancestor(TaskKind::Synth)?;
            let scene = SceneKind::from_params(&synth.params)?;
            let chain = impairment_chain(cfg, scene, &node.params, node.seed(0));
            write_json(&out.join(CHAIN_FILE), &chain)?;
            if cfg.run.persist_iq {
                write_record(&out.join(RX_STEM), &chain.apply(&inputs.tx()?)?)?;
            }
        }
        TaskKind::Record => {
            let impair = inputs.ancestor(TaskKind::Impair)?;
            let first_rx = if cfg.run.persist_iq {
                Some(read_record(&inputs.path(TaskKind::Impair, RX_STEM)?)?)
            } else {
                None
            };
            let (report, payload) = receive(cfg, &inputs.tx()?, &inputs.layout()?, &inputs.chain()?, &impair.id, first_rx)?;
            write_json(&out.join(SYNC_FILE), &report)?;
            if cfg.run.persist_iq {
                write_record(&out.join(PAYLOAD_STEM), &payload)?;
            }
        }
        TaskKind::Spectrogram => {
            let spec = make_spectrogram(cfg, &inputs.payload()?)?;
            write_spectrogram(&out.join(SPEC_STEM), &spec, cfg.image.floor_db, cfg.image.ceil_db)?;
        }
        TaskKind::Label => {
            let schedule = inputs.schedule()?;
            let axes = inputs.axes()?;
            let gt = label(&schedule, &axes)?;
            let voc = VocAnnotation {
                filename: format!("{SPEC_STEM}.pgm"),
                width: axes.width(),
                height: axes.height(),
                boxes: gt.boxes.clone(),
            };
            let path = out.join(LABELS_FILE);
            fs::write(&path, export_voc(&voc)).map_err(|e| Error::io(&path, e))?;
            write_json(&out.join(TRUTH_FILE), &TruthFile::new(&gt, &schedule, &axes))?;
        }
        TaskKind::Detect => {
            let spec = read_spectrogram(&inputs.path(TaskKind::Spectrogram, SPEC_STEM)?)?;
            let dets = detect(&spec, &detector_config(cfg, &node.params))?;
            let image = inputs.image()?;
            let items: Vec<(String, Detection)> = dets.into_iter().map(|d| (image.to_string(), d)).collect();
            export_predictions(&out.join(PREDICTIONS_FILE), &items)?;
        }
        TaskKind::Extract => {
            let rows = feature_rows(inputs.image()?, &inputs.detections()?, &inputs.axes()?)?;
            let path = out.join(FEATURES_FILE);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_feature_csv(file, &rows)?;
        }
        TaskKind::Eval => {
            let truth: TruthFile = read_json(&inputs.path(TaskKind::Label, TRUTH_FILE)?)?;
            let eval = evaluate_chain(
                inputs.image()?,
                &truth,
                &inputs.detections()?,
                &inputs.axes()?,
                inputs.schedule()?.band_width,
                iou_threshold(cfg, &node.params),
                Some(inputs.sync()?),
            )?;
            write_json(&out.join(EVAL_FILE), &eval)?;
        }
    }
    Ok(())
}
