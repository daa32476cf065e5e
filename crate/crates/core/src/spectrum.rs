//! FFT-based spectral estimates.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub density: Vec<f64>,
    pub df: f64,
}

impl Psd {
    /// ∫ PSD df, equal to the variance of the mean-removed signal.
    pub fn variance(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.df
    }
}

/// Welch estimate with eight half-overlapping sine-windowed segments.
///
/// The segment length L is the smallest even integer with 3.5·L ≥ N; the
/// signal starts half a segment in, so every sample is covered by exactly two
/// windows whose squares sum to one and the integrated density reproduces the
/// time-domain variance.
pub fn welch_psd(signal: &[f64], dt: f64) -> Result<Psd> {
    let n = signal.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} samples for a PSD")));
    }
    let mut l = (2 * n).div_ceil(7);
    if l % 2 == 1 {
        l += 1;
    }
    let hop = l / 2;
    let n_seg = 8;
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut padded = vec![0.0; hop * (n_seg + 1)];
    for (i, &v) in signal.iter().enumerate() {
        padded[hop + i] = v - mean;
    }
    let window: Vec<f64> = (0..l).map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / l as f64).sin()).collect();
    let fft = FftPlanner::new().plan_fft_forward(l);
    let mut power = vec![0.0; l];
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    for s in 0..n_seg {
        for i in 0..l {
            buf[i] = Complex64::new(padded[s * hop + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (p, z) in power.iter_mut().zip(&buf) {
            *p += z.norm_sqr();
        }
    }
    let scale = dt / n as f64;
    let df = 1.0 / (l as f64 * dt);
    let half = l / 2;
    let density: Vec<f64> = (0..=half)
        .map(|k| {
            let two_sided = power[k] * scale;
            if k == 0 || k == half {
                two_sided
            } else {
                2.0 * two_sided
            }
        })
        .collect();
    let freqs = (0..=half).map(|k| k as f64 * df).collect();
    Ok(Psd { freqs, density, df })
}

/// Single-sided amplitude spectrum (|X_k|·2/N).
pub fn amplitude_spectrum(signal: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let n = signal.len();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let half = n / 2;
    let freqs = (0..=half).map(|k| k as f64 / (n as f64 * dt)).collect();
    let amps = (0..=half)
        .map(|k| {
            let a = buf[k].norm() / n as f64;
            if k == 0 || (n.is_multiple_of(2) && k == half) {
                a
            } else {
                2.0 * a
            }
        })
        .collect();
    (freqs, amps)
}

/// Frequency of the strongest spectral peak averaged over the rows of `y`.
///
/// Rows are mean-removed and Hann-windowed, the peak of the zero-padded
/// power spectrum is located and then refined on the continuous windowed
/// spectrum by golden-section search within one bin.
pub fn dominant_frequency(y: &DMatrix<f64>, dt: f64) -> Result<f64> {
    let (rows, n) = y.shape();
    if n < 4 || rows == 0 {
        return Err(Error::InsufficientData(format!("{n} samples for a frequency estimate")));
    }
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    let tapered: Vec<Vec<f64>> = (0..rows)
        .map(|r| {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            row.iter().zip(&window).map(|(v, w)| (v - mean) * w).collect()
        })
        .collect();
    let n_fft = (8 * n).next_power_of_two();
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in &tapered {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(t) {
            b.re = v;
        }
        fft.process(&mut buf);
        for (p, z) in power.iter_mut().zip(&buf) {
            *p += z.norm_sqr();
        }
    }
    let total: f64 = power.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate("signal has no oscillatory content".into()));
    }
    let peak = (1..power.len())
        .max_by(|&a, &b| power[a].partial_cmp(&power[b]).unwrap())
        .expect("non-empty");
    let bin = 1.0 / (n_fft as f64 * dt);
    let dtft = |f: f64| -> f64 {
        let step = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * dt);
        tapered
            .iter()
            .map(|t| {
                let mut acc = Complex64::new(0.0, 0.0);
                let mut ph = Complex64::new(1.0, 0.0);
                for &v in t {
                    acc += ph * v;
                    ph *= step;
                }
                acc.norm_sqr()
            })
            .sum()
    };
    let mut lo = (peak as f64 - 1.0).max(0.0) * bin;
    let mut hi = (peak as f64 + 1.0) * bin;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (dtft(a), dtft(b));
    for _ in 0..60 {
        if fa > fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = dtft(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = dtft(b);
        }
    }
    let f = 0.5 * (lo + hi);
    if !(f > 0.0) {
        return Err(Error::Degenerate("dominant component is at zero frequency".into()));
    }
    Ok(f)
}
