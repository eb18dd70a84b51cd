use std::f64::consts::PI;

use cbclab::rig::NoiseSource;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

const FS: f64 = 1000.0;
const SEG: usize = 4096;

/// One-sided Welch estimate with a Hann window and no overlap.
fn welch(x: &[f64]) -> Vec<f64> {
    let fft = FftPlanner::new().plan_fft_forward(SEG);
    let window: Vec<f64> = (0..SEG).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / SEG as f64).cos()).collect();
    let norm: f64 = window.iter().map(|w| w * w).sum::<f64>() * FS;
    let mut psd = vec![0.0; SEG / 2];
    let segments = x.len() / SEG;
    for s in 0..segments {
        let mut buf: Vec<Complex<f64>> = (0..SEG)
            .map(|k| Complex::new(x[s * SEG + k] * window[k], 0.0))
            .collect();
        fft.process(&mut buf);
        for (b, p) in psd.iter_mut().enumerate() {
            *p += 2.0 * buf[b].norm_sqr() / norm / segments as f64;
        }
    }
    psd
}

#[test]
fn filtered_noise_psd_follows_the_butterworth_magnitude() {
    let amplitude = 0.7;
    let mut src = NoiseSource::new(amplitude, 6, 10.0, FS, 11);
    let x: Vec<f64> = (0..SEG * 96).map(|_| src.sample()).collect();
    let psd = welch(&x);
    let df = FS / SEG as f64;
    // white input of variance a² has one-sided density 2a²/fs
    let expected = |f: f64| 2.0 * amplitude * amplitude / FS * src.filter().response(f).norm_sqr();

    for band in [(1.0, 3.0), (4.0, 6.0), (7.0, 9.0), (9.5, 10.5), (12.0, 14.0)] {
        let bins: Vec<usize> = (0..psd.len())
            .filter(|&b| (b as f64 * df) >= band.0 && (b as f64 * df) <= band.1)
            .collect();
        let measured: f64 = bins.iter().map(|&b| psd[b]).sum::<f64>();
        let model: f64 = bins.iter().map(|&b| expected(b as f64 * df)).sum::<f64>();
        let ratio = measured / model;
        assert!((ratio - 1.0).abs() < 0.2, "band {band:?}: measured/model = {ratio:.3}");
    }
    // half power at the cutoff
    assert!((src.filter().response(10.0).norm_sqr() - 0.5).abs() < 1e-9);
    let passband: f64 = psd[(2.0 / df) as usize];
    let stopband: f64 = psd[(40.0 / df) as usize];
    assert!(stopband < 1e-6 * passband, "stopband {stopband:e} vs passband {passband:e}");
}

#[test]
fn noise_stream_is_reproducible_and_seed_dependent() {
    let draw = |seed| {
        let mut s = NoiseSource::new(1.0, 6, 10.0, FS, seed);
        (0..500).map(|_| s.sample()).collect::<Vec<f64>>()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}
