use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio_io::SAMPLE_RATE;

pub const FFT_LEN: usize = 256;
/// Bins 1..=128 are used for every distribution-style feature.
pub const SPECTRUM_BINS: usize = FFT_LEN / 2;
pub const BIN_HZ: f64 = SAMPLE_RATE as f64 / FFT_LEN as f64;

/// Entropy of a uniform distribution over the spectrum bins, in bits.
pub fn max_spectral_entropy() -> f64 {
    (SPECTRUM_BINS as f64).log2()
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// A planned real-input FFT of fixed length, zero-padding shorter inputs.
#[derive(Clone)]
pub struct RealFft {
    len: usize,
    plan: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealFft").field("len", &self.len).finish()
    }
}

impl RealFft {
    pub fn new(len: usize) -> Self {
        let plan = FftPlanner::new().plan_fft_forward(len);
        Self { len, plan }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Full complex spectrum of `input` (bins `0..len`).
    pub fn transform(&self, input: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = input
            .iter()
            .take(self.len)
            .map(|&x| Complex::new(x, 0.0))
            .collect();
        buf.resize(self.len, Complex::new(0.0, 0.0));
        self.plan.process(&mut buf);
        buf
    }
}

/// Magnitudes and phases of one Hamming-windowed 256-sample frame.
#[derive(Debug, Clone)]
pub struct FrameSpectrum {
    /// |X_k| for k = 0..=128.
    pub magnitude: Vec<f64>,
    pub phase: Vec<f64>,
}

impl FrameSpectrum {
    pub fn compute(fft: &RealFft, window: &[f64], frame: &[f64]) -> Self {
        let windowed: Vec<f64> = frame.iter().zip(window).map(|(x, w)| x * w).collect();
        let spec = fft.transform(&windowed);
        let half = &spec[..=SPECTRUM_BINS];
        Self {
            magnitude: half.iter().map(|c| c.norm()).collect(),
            phase: half.iter().map(|c| c.arg()).collect(),
        }
    }

    /// Bins 1..=128 normalized to sum to one; `None` when the frame has no energy.
    pub fn distribution(&self) -> Option<Vec<f64>> {
        let bins = &self.magnitude[1..=SPECTRUM_BINS];
        let total: f64 = bins.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return None;
        }
        Some(bins.iter().map(|m| m / total).collect())
    }
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Sign changes inside the frame; zero counts as positive.
pub fn zero_crossings(samples: &[f64]) -> f64 {
    samples
        .windows(2)
        .filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0))
        .count() as f64
}

/// Shannon entropy in bits; silence maps to the uniform maximum.
pub fn entropy_bits(dist: Option<&[f64]>) -> f64 {
    match dist {
        None => max_spectral_entropy(),
        Some(p) => -p
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.log2())
            .sum::<f64>(),
    }
}

fn bin_hz(i: usize) -> f64 {
    // distribution index 0 is FFT bin 1
    (i + 1) as f64 * BIN_HZ
}

pub fn centroid_hz(dist: Option<&[f64]>) -> f64 {
    dist.map_or(0.0, |p| p.iter().enumerate().map(|(i, w)| bin_hz(i) * w).sum())
}

pub fn bandwidth_hz(dist: Option<&[f64]>) -> f64 {
    dist.map_or(0.0, |p| {
        let c = centroid_hz(Some(p));
        p.iter()
            .enumerate()
            .map(|(i, w)| (bin_hz(i) - c).powi(2) * w)
            .sum::<f64>()
            .sqrt()
    })
}

/// Lowest frequency below which `fraction` of the spectral magnitude lies.
pub fn rolloff_hz(dist: Option<&[f64]>, fraction: f64) -> f64 {
    let Some(p) = dist else { return 0.0 };
    let mut acc = 0.0;
    for (i, w) in p.iter().enumerate() {
        acc += w;
        if acc >= fraction - 1e-12 {
            return bin_hz(i);
        }
    }
    bin_hz(p.len() - 1)
}

pub fn flux(prev: Option<&[f64]>, cur: Option<&[f64]>) -> f64 {
    match (prev, cur) {
        (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| (y - x).powi(2)).sum(),
        (None, None) => 0.0,
        // energy appearing or vanishing: distance to the uniform distribution
        (Some(d), None) | (None, Some(d)) => {
            let u = 1.0 / d.len() as f64;
            d.iter().map(|x| (x - u).powi(2)).sum()
        }
    }
}

/// KL divergence (bits) of a frame distribution from a reference distribution.
pub fn relative_entropy_bits(dist: Option<&[f64]>, reference: &[f64]) -> f64 {
    let uniform;
    let p = match dist {
        Some(p) => p,
        None => {
            uniform = vec![1.0 / reference.len() as f64; reference.len()];
            &uniform
        }
    };
    p.iter()
        .zip(reference)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(1e-12)).log2())
        .sum::<f64>()
        .max(0.0)
}

fn princarg(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Magnitude-weighted mean absolute phase acceleration over bins 1..=128.
pub fn weighted_phase_deviation(
    cur: &FrameSpectrum,
    prev: &FrameSpectrum,
    prev2: &FrameSpectrum,
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 1..=SPECTRUM_BINS {
        let m = cur.magnitude[k];
        let dd = princarg(cur.phase[k] - 2.0 * prev.phase[k] + prev2.phase[k]);
        num += m * dd.abs();
        den += m;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}
