use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratscope_core::channel::{add_noise, apply_awgn, apply_cfo};
use ratscope_core::iq::IqRecord;
use ratscope_core::sync::{estimate_snr, PreambleConfig, Synchronizer, DEFAULT_THRESHOLD, PREAMBLE_LEN};

const FS: f64 = 20e6;
const LEN: usize = 4096;

fn burst(sync: &Synchronizer, offset: usize, cfo: f64, snr_db: f64, seed: u64) -> IqRecord {
    let mut x = vec![Complex64::new(0.0, 0.0); LEN];
    x[offset..offset + PREAMBLE_LEN].copy_from_slice(sync.preamble());
    let rec = apply_cfo(&IqRecord::new(x, FS), cfo).unwrap();
    apply_awgn(&rec, snr_db, seed).unwrap()
}

#[test]
fn clean_preamble_is_found_exactly() {
    let cfg = PreambleConfig::default();
    let mut sync = Synchronizer::new(&cfg, DEFAULT_THRESHOLD).unwrap();
    let mut x = vec![Complex64::new(0.0, 0.0); 8000];
    x[5000..5000 + PREAMBLE_LEN].copy_from_slice(sync.preamble());
    let r = sync.detect(&x, FS).unwrap();
    assert!(r.detected);
    assert_eq!(r.t_offset, 5000);
    assert!(r.cfo_hz.abs() <= 50.0, "cfo {}", r.cfo_hz);
    let est = estimate_snr(&IqRecord::new(x, FS), &r, &cfg).unwrap();
    assert!(est >= 40.0);
}

#[test]
fn detects_at_minus_five_db() {
    let cfg = PreambleConfig::default();
    let mut sync = Synchronizer::new(&cfg, DEFAULT_THRESHOLD).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let range = cfg.coarse_cfo_range(FS);
    let trials = 500;
    let mut hits = 0;
    for i in 0..trials {
        let offset = rng.random_range(200..LEN - PREAMBLE_LEN - 200);
        let cfo = rng.random_range(-0.5 * range..0.5 * range);
        let rec = burst(&sync, offset, cfo, -5.0, 1000 + i);
        let r = sync.detect(&rec.samples, FS).unwrap();
        if r.detected && r.t_offset.abs_diff(offset) <= 1 {
            hits += 1;
        }
    }
    let rate = hits as f64 / trials as f64;
    println!("detection rate at -5 dB: {rate}");
    assert!(rate >= 0.99);
}

#[test]
fn noise_only_false_alarms_are_rare() {
    let cfg = PreambleConfig::default();
    let mut sync = Synchronizer::new(&cfg, DEFAULT_THRESHOLD).unwrap();
    let windows = 2000;
    let mut alarms = 0;
    let mut worst: f64 = 0.0;
    for i in 0..windows {
        let rec = add_noise(&IqRecord::zeros(LEN, FS), 1.0, 50_000 + i);
        let r = sync.detect(&rec.samples, FS).unwrap();
        worst = worst.max(r.peak_metric);
        alarms += r.detected as usize;
    }
    println!("false alarms {alarms}/{windows}, worst metric {worst}");
    assert!(alarms as f64 <= 0.01 * windows as f64);
}

#[test]
fn cfo_estimate_within_200_hz_at_10_db() {
    let cfg = PreambleConfig::default();
    let mut sync = Synchronizer::new(&cfg, DEFAULT_THRESHOLD).unwrap();
    let mut errs = Vec::new();
    for i in 0..200 {
        let rec = burst(&sync, 1500, 10e3, 10.0, 7000 + i);
        let r = sync.detect(&rec.samples, FS).unwrap();
        assert!(r.detected);
        errs.push((r.cfo_hz - 10e3).abs());
    }
    errs.sort_by(f64::total_cmp);
    let within = errs.iter().filter(|&&e| e <= 200.0).count();
    println!("cfo err median {} max {}, {within}/200 within 200 Hz", errs[100], errs[199]);
    assert!(within >= 190);
    assert!(errs[100] <= 100.0);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn cfo_error_shrinks_with_snr() {
    let cfg = PreambleConfig::default();
    let mut sync = Synchronizer::new(&cfg, DEFAULT_THRESHOLD).unwrap();
    let mut last = f64::INFINITY;
    for (k, snr) in [-10.0, -5.0, 0.0, 5.0, 10.0].into_iter().enumerate() {
        let errs: Vec<f64> = (0..200)
            .map(|i| {
                let rec = burst(&sync, 1500, -25e3, snr, 90_000 + 1000 * k as u64 + i);
                (sync.detect(&rec.samples, FS).unwrap().cfo_hz + 25e3).abs()
            })
            .collect();
        let m = median(errs);
        println!("snr {snr}: median cfo error {m}");
        assert!(m < last);
        last = m;
    }
}

#[test]
fn snr_estimate_is_calibrated_and_ordered() {
    let cfg = PreambleConfig::default();
    let mut sync = Synchronizer::new(&cfg, DEFAULT_THRESHOLD).unwrap();
    let estimate = |sync: &mut Synchronizer, snr: f64, seed: u64| {
        let rec = burst(sync, 1500, 3e3, snr, seed);
        let r = sync.detect(&rec.samples, FS).unwrap();
        estimate_snr(&rec, &r, &cfg).unwrap()
    };
    let at_zero: Vec<f64> = (0..200).map(|i| estimate(&mut sync, 0.0, 300 + i)).collect();
    let m = median(at_zero);
    println!("median estimate at 0 dB: {m}");
    assert!(m.abs() <= 1.0);

    let ordered = (0..200)
        .filter(|&i| estimate(&mut sync, 20.0, 600 + i) > estimate(&mut sync, 10.0, 900 + i))
        .count();
    assert!(ordered >= 190);

    let mut last = f64::NEG_INFINITY;
    for snr in [-10.0, 0.0, 10.0, 20.0, 30.0] {
        let m = median((0..51).map(|i| estimate(&mut sync, snr, 1200 + i)).collect());
        assert!(m > last, "{snr}: {m}");
        last = m;
    }
}
