//! Spectrograms and the pixel <-> (time, frequency) calibration.
//!
//! Rows are time (row 0 earliest), columns are frequency (column 0 at the
//! band start). Column `c` covers `[f1 + c I_f, f1 + (c + 1) I_f)` and row
//! `r` covers `[t1 + r I_t, t1 + (r + 1) I_t)`, where `I_f = fs / fft_size`
//! and `I_t = hop / fs`.
//!
//! When the hop exceeds the FFT size each row averages the periodograms of
//! `floor(hop / fft_size)` consecutive non-overlapping segments starting at
//! the row boundary, so every row integrates (almost) its whole time slot.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iq::IqRecord;

/// Entries for empty bins.
pub const FLOOR_DB: f64 = -120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            // Periodic Hann.
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftParams {
    /// 104 columns (`I_f` = 192.307 kHz at 20 MHz) and 10384-sample rows
    /// (`I_t` = 519.2 us at 20 MHz).
    fn default() -> Self {
        Self {
            fft_size: 104,
            hop: 10_384,
            window: Window::Hann,
        }
    }
}

impl StftParams {
    pub fn segments_per_row(&self) -> usize {
        (self.hop / self.fft_size).max(1)
    }

    /// Samples read by one row.
    pub fn block_len(&self) -> usize {
        self.segments_per_row() * self.fft_size
    }

    pub fn rows_for(&self, num_samples: usize) -> usize {
        if num_samples < self.block_len() {
            0
        } else {
            (num_samples - self.block_len()) / self.hop + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramAxes {
    pub f1: f64,
    pub f2: f64,
    pub t1: f64,
    pub t2: f64,
    pub x_min: usize,
    pub x_max: usize,
    pub y_min: usize,
    pub y_max: usize,
}

impl SpectrogramAxes {
    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    /// Hz per column.
    pub fn i_f(&self) -> f64 {
        (self.f2 - self.f1) / self.width() as f64
    }

    /// Seconds per row.
    pub fn i_t(&self) -> f64 {
        (self.t2 - self.t1) / self.height() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f2 > self.f1 && self.t2 > self.t1) || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::Config(format!("degenerate spectrogram axes {self:?}")));
        }
        Ok(())
    }

    /// `(t, f)` at the centre of pixel `(x, y)`.
    pub fn pixel_center(&self, x: usize, y: usize) -> (f64, f64) {
        let t = self.t1 + ((y - self.y_min) as f64 + 0.5) * self.i_t();
        let f = self.f1 + ((x - self.x_min) as f64 + 0.5) * self.i_f();
        (t, f)
    }

    /// Pixel `(x, y)` containing `(t, f)`.
    pub fn pixel_at(&self, t: f64, f: f64) -> (usize, usize) {
        let x = ((f - self.f1) / self.i_f()).floor().max(0.0) as usize + self.x_min;
        let y = ((t - self.t1) / self.i_t()).floor().max(0.0) as usize + self.y_min;
        (x.min(self.x_max - 1), y.min(self.y_max - 1))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let axes: Self = serde_json::from_str(&text)?;
        axes.validate()?;
        Ok(axes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramMeta {
    pub source_hash: Option<String>,
    pub stft: Option<StftParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub axes: SpectrogramAxes,
    /// Row-major `height x width` power in dB.
    pub power_db: Vec<f32>,
    pub meta: SpectrogramMeta,
}

impl Spectrogram {
    pub fn height(&self) -> usize {
        self.axes.height()
    }

    pub fn width(&self) -> usize {
        self.axes.width()
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.power_db[row * self.width() + col]
    }

    pub fn linear(&self, row: usize, col: usize) -> f64 {
        10f64.powf(self.at(row, col) as f64 / 10.0)
    }

    pub fn row(&self, row: usize) -> &[f32] {
        let w = self.width();
        &self.power_db[row * w..(row + 1) * w]
    }

    /// Row-major little-endian `f32` dump.
    pub fn write_matrix(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.power_db.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_matrix(path: &Path, axes: SpectrogramAxes) -> Result<Self> {
        axes.validate()?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let expected = axes.width() * axes.height() * 4;
        if bytes.len() != expected {
            return Err(Error::Parse {
                line: 0,
                message: format!(
                    "{}: {} bytes, axes imply {expected}",
                    path.display(),
                    bytes.len()
                ),
            });
        }
        let power_db = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            axes,
            power_db,
            meta: SpectrogramMeta {
                source_hash: None,
                stft: None,
            },
        })
    }
}

pub fn compute_spectrogram(rec: &IqRecord, params: &StftParams) -> Result<Spectrogram> {
    let fft = params.fft_size;
    if fft == 0 || params.hop == 0 {
        return Err(Error::Config("fft_size and hop must be positive".into()));
    }
    let block = params.block_len();
    if rec.len() < fft || rec.len() < block {
        return Err(Error::TooShort {
            len: rec.len(),
            need: block.max(fft),
        });
    }
    let rows = params.rows_for(rec.len());
    let segs = params.segments_per_row();

    // Pre-rotate so that FFT bins land on column centres (c + 1/2) I_f.
    let delta = if fft.is_multiple_of(2) { 0.5 } else { 0.0 };
    let window = params.window.coefficients(fft);
    let taper: Vec<Complex64> = window
        .iter()
        .enumerate()
        .map(|(m, w)| Complex64::from_polar(*w, -2.0 * PI * delta * m as f64 / fft as f64))
        .collect();
    let norm = fft as f64 * window.iter().map(|w| w * w).sum::<f64>();
    let half = fft / 2;

    let plan = FftPlanner::<f64>::new().plan_fft_forward(fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft];
    let mut acc = vec![0.0f64; fft];
    let mut power_db = Vec::with_capacity(rows * fft);
    for r in 0..rows {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for s in 0..segs {
            let start = r * params.hop + s * fft;
            for (b, (x, t)) in buf.iter_mut().zip(rec.samples[start..start + fft].iter().zip(&taper)) {
                *b = x * t;
            }
            plan.process(&mut buf);
            for (c, a) in acc.iter_mut().enumerate() {
                *a += buf[(c + fft - half) % fft].norm_sqr();
            }
        }
        let scale = 1.0 / (norm * segs as f64);
        power_db.extend(acc.iter().map(|a| {
            let p = a * scale;
            if p > 0.0 {
                (10.0 * p.log10()).max(FLOOR_DB) as f32
            } else {
                FLOOR_DB as f32
            }
        }));
    }

    let fs = rec.sample_rate;
    let axes = SpectrogramAxes {
        f1: 0.0,
        f2: fs,
        t1: 0.0,
        t2: rows as f64 * params.hop as f64 / fs,
        x_min: 0,
        x_max: fft,
        y_min: 0,
        y_max: rows,
    };
    Ok(Spectrogram {
        axes,
        power_db,
        meta: SpectrogramMeta {
            source_hash: Some(rec.content_hash()),
            stft: Some(*params),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Binary PGM (P5).
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Linear map of `[floor_db, ceil_db]` onto `[0, 255]`, clamped.
pub fn to_image(spec: &Spectrogram, floor_db: f64, ceil_db: f64) -> Result<GrayImage> {
    if !(ceil_db > floor_db) {
        return Err(Error::Config(format!(
            "image ceiling {ceil_db} dB must exceed floor {floor_db} dB"
        )));
    }
    let pixels = spec
        .power_db
        .iter()
        .map(|&v| {
            let u = (v as f64 - floor_db) / (ceil_db - floor_db);
            (u.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    Ok(GrayImage {
        width: spec.width(),
        height: spec.height(),
        pixels,
    })
}

/// Writes `<stem>.spec.f32`, `<stem>.axes.json` and `<stem>.pgm`.
pub fn write_spectrogram(stem: &Path, spec: &Spectrogram, floor_db: f64, ceil_db: f64) -> Result<()> {
    let s = stem.to_string_lossy();
    spec.write_matrix(Path::new(&format!("{s}.spec.f32")))?;
    spec.axes.write_json(Path::new(&format!("{s}.axes.json")))?;
    to_image(spec, floor_db, ceil_db)?.write_pgm(Path::new(&format!("{s}.pgm")))
}

pub fn read_spectrogram(stem: &Path) -> Result<Spectrogram> {
    let s = stem.to_string_lossy();
    let axes = SpectrogramAxes::read_json(Path::new(&format!("{s}.axes.json")))?;
    Spectrogram::read_matrix(Path::new(&format!("{s}.spec.f32")), axes)
}
