//! Fixtures shared by the benchmarks.

use ratscope_core::channel::apply_awgn;
use ratscope_core::iq::IqRecord;
use ratscope_core::pipeline::tasks::synthesize;
use ratscope_core::pipeline::{simulate, Params, PipelineConfig};
use ratscope_core::spectro::Spectrogram;

pub const SAMPLE_RATE: f64 = 20e6;

pub fn params(snr_db: f64) -> Params {
    [("snr_db".to_string(), snr_db.into()), ("replicate".to_string(), 0u64.into())].into()
}

/// A 50 ms mixed-scene transmission with its preamble, at the given SNR.
pub fn received_record(snr_db: f64) -> IqRecord {
    let cfg = PipelineConfig::default();
    let tx = synthesize(&cfg, &params(snr_db), 7).expect("synthesis").tx;
    apply_awgn(&tx, snr_db, 11).expect("awgn")
}

/// A spectrogram of a mixed scene as produced by the pipeline.
pub fn scene_spectrogram(snr_db: f64) -> Spectrogram {
    simulate(&PipelineConfig::default(), &params(snr_db)).expect("simulation").spectrogram
}
