use num_complex::Complex64;
use rustfft::FftPlanner;
use ratscope_core::channel::add_noise;
use ratscope_core::iq::IqRecord;
use ratscope_core::spectro::{compute_spectrogram, StftParams, Window};
use ratscope_core::waveforms::{render_schedule, synth_ofdm_frame, FrameSpec, RatClass, TransmissionSchedule};

const FS: f64 = 20e6;

fn frame(class: RatClass, t_start: f64, duration: f64, f_center: f64, bw: f64, seed: u64) -> FrameSpec {
    FrameSpec {
        class,
        t_start,
        duration,
        f_center,
        bandwidth: bw,
        power_db: 0.0,
        seed,
        emitter: 0,
    }
}

/// Welch PSD with 1024-point Hann segments, 50% overlap, DC-centred bins.
fn welch(x: &[Complex64]) -> Vec<f64> {
    let n = 1024;
    let w: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut psd = vec![0.0; n];
    let mut start = 0;
    while start + n <= x.len() {
        let mut buf: Vec<Complex64> = x[start..start + n].iter().zip(&w).map(|(s, w)| s * w).collect();
        fft.process(&mut buf);
        for (k, v) in buf.iter().enumerate() {
            psd[(k + n / 2) % n] += v.norm_sqr();
        }
        start += n / 2;
    }
    psd
}

/// Distance between the outermost bins within 20 dB of the peak.
fn occupied_bw(psd: &[f64]) -> f64 {
    let peak = psd.iter().cloned().fold(0.0, f64::max);
    let above: Vec<usize> = (0..psd.len()).filter(|&k| psd[k] >= peak / 100.0).collect();
    (above.last().unwrap() - above.first().unwrap() + 1) as f64 * FS / psd.len() as f64
}

#[test]
fn occupied_bandwidth_matches_spec() {
    let cases = [
        (RatClass::Wifi, 1e-3, 20e6),
        (RatClass::Lte, 4e-3, 10e6),
        (RatClass::Lte, 4e-3, 5e6),
        (RatClass::Lte, 2e-3, 15e6),
        (RatClass::Wifi, 1e-3, 10e6),
    ];
    for (class, dur, bw) in cases {
        let rec = synth_ofdm_frame(&frame(class, 0.0, dur, 10e6, bw, 3), FS).unwrap();
        let est = occupied_bw(&welch(&rec.samples));
        println!("{class} {bw}: {est}");
        assert!((est - bw).abs() <= 0.1 * bw, "{class} {bw}: {est}");
        if bw == 20e6 {
            assert!((18e6..=20e6).contains(&est));
        }
    }
}

#[test]
fn spectral_centroid_lands_on_f_center() {
    let i_f = FS / 104.0;
    for (fc, bw) in [(10e6, 10e6), (4e6, 5e6), (12.5e6, 15e6), (17e6, 5e6)] {
        let mut sched = TransmissionSchedule::new(FS, 0.01);
        sched.frames.push(frame(RatClass::Lte, 0.001, 0.004, fc, bw, 8));
        let rec = render_schedule(&sched).unwrap();
        let psd = welch(&rec.samples);
        let n = psd.len() as f64;
        let total: f64 = psd.iter().sum();
        let centroid = psd.iter().enumerate().map(|(k, p)| p * (k as f64 + 0.5) * FS / n).sum::<f64>() / total;
        assert!((centroid - fc).abs() <= i_f, "fc {fc}: centroid {centroid}");
    }
}

#[test]
fn overlapping_emitters_render_linearly() {
    let a = FrameSpec {
        emitter: 1,
        ..frame(RatClass::Lte, 0.002, 0.006, 10e6, 20e6, 1)
    };
    let b = FrameSpec {
        emitter: 2,
        ..frame(RatClass::Wifi, 0.005, 0.003, 10e6, 20e6, 2)
    };
    let mut both = TransmissionSchedule::new(FS, 0.012);
    both.frames = vec![a.clone(), b.clone()];
    let mut only_a = both.clone();
    only_a.frames = vec![a];
    let mut only_b = both.clone();
    only_b.frames = vec![b];
    let sum = render_schedule(&both).unwrap();
    let ra = render_schedule(&only_a).unwrap();
    let rb = render_schedule(&only_b).unwrap();
    for i in 0..sum.len() {
        assert_eq!(sum.samples[i], ra.samples[i] + rb.samples[i]);
    }
}

#[test]
fn render_is_deterministic() {
    let mut sched = TransmissionSchedule::new(FS, 0.01);
    sched.frames.push(frame(RatClass::Wifi, 0.001, 0.002, 6e6, 10e6, 77));
    let a = render_schedule(&sched).unwrap();
    let b = render_schedule(&sched).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.content_hash(), b.content_hash());
}

#[test]
fn frame_energy_stays_in_its_rectangle() {
    // High-resolution oracle: 256-point rectangular-window periodograms.
    let params = StftParams {
        fft_size: 256,
        hop: 256,
        window: Window::Rectangular,
    };
    let bin = FS / 256.0;
    let guard = FS / 104.0;
    for (class, t0, dur, fc, bw) in [
        (RatClass::Lte, 0.003, 0.004, 10e6, 10e6),
        (RatClass::Wifi, 0.0051, 0.0009, 7e6, 10e6),
        (RatClass::Lte, 0.001, 0.002, 15e6, 5e6),
    ] {
        let mut sched = TransmissionSchedule::new(FS, 0.01);
        sched.frames.push(frame(class, t0, dur, fc, bw, 21));
        let rec = render_schedule(&sched).unwrap();
        let spec = compute_spectrogram(&rec, &params).unwrap();
        let mut total = 0.0;
        let mut inside = 0.0;
        for r in 0..spec.height() {
            let (t_lo, t_hi) = (r as f64 * 256.0 / FS, (r + 1) as f64 * 256.0 / FS);
            for c in 0..spec.width() {
                let p = spec.linear(r, c);
                total += p;
                let f = (c as f64 + 0.5) * bin;
                let in_t = t_hi > t0 && t_lo < t0 + dur;
                let in_f = (f - fc).abs() <= bw / 2.0 + guard;
                if in_t && in_f {
                    inside += p;
                }
            }
        }
        assert!(inside / total >= 0.99, "{class}: {}", inside / total);
    }
}

#[test]
fn default_stft_calibration() {
    let rec = add_noise(&IqRecord::zeros(1_000_000, FS), 1.0, 4);
    let spec = compute_spectrogram(&rec, &StftParams::default()).unwrap();
    assert_eq!(spec.width(), 104);
    assert_eq!(spec.height(), 96);
    assert_eq!(spec.axes.i_f().floor(), 192_307.0);
    assert!((spec.axes.i_t() - 519e-6).abs() / 519e-6 <= 0.01);
}

#[test]
fn total_power_matches_time_domain() {
    for (params, seed) in [
        (StftParams::default(), 1u64),
        (
            StftParams {
                fft_size: 64,
                hop: 32,
                window: Window::Hann,
            },
            2,
        ),
    ] {
        let rec = add_noise(&IqRecord::zeros(200_000, FS), 2.5, seed);
        let spec = compute_spectrogram(&rec, &params).unwrap();
        let per_row: f64 = (0..spec.height())
            .map(|r| (0..spec.width()).map(|c| spec.linear(r, c)).sum::<f64>())
            .sum::<f64>()
            / spec.height() as f64;
        let expected = rec.mean_power();
        assert!((per_row - expected).abs() / expected <= 0.05, "{per_row} vs {expected}");
    }
}

#[test]
fn tone_peaks_in_its_column() {
    let i_f = FS / 104.0;
    for col in [0usize, 26, 51, 52, 78, 103] {
        // Tone at a column centre, expressed relative to the band start.
        let f = (col as f64 + 0.5) * i_f;
        let baseband = f - FS / 2.0;
        let samples: Vec<Complex64> = (0..200_000)
            .map(|n| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * baseband * n as f64 / FS))
            .collect();
        let spec = compute_spectrogram(&IqRecord::new(samples, FS), &StftParams::default()).unwrap();
        for r in 0..spec.height() {
            let row = spec.row(r);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, (f / i_f).floor() as usize, "col {col} row {r}");
        }
    }
}
