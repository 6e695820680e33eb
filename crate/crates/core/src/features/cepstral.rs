//! Mel-cepstra and perceptual linear prediction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::spectral::{hamming, RealFft, FFT_LEN};
use crate::audio_io::SAMPLE_RATE;

pub const MFCC_DIM: usize = 20;
pub const MEL_FILTERS: usize = 24;
pub const PLP_STATIC: usize = 16;
pub const PLP_DIM: usize = 2 * PLP_STATIC;
/// Floor applied to filterbank energies before any log or root.
pub const ENERGY_FLOOR: f64 = 1e-10;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn hz_to_bark(hz: f64) -> f64 {
    6.0 * (hz / 600.0).asinh()
}

fn bark_to_hz(bark: f64) -> f64 {
    600.0 * (bark / 6.0).sinh()
}

/// Orthonormal DCT-II as a dense `rows x n` matrix.
#[derive(Debug, Clone)]
pub struct Dct {
    n: usize,
    basis: Vec<Vec<f64>>,
}

impl Dct {
    pub fn new(n: usize, rows: usize) -> Self {
        let basis = (0..rows)
            .map(|k| {
                let scale = if k == 0 {
                    (1.0 / n as f64).sqrt()
                } else {
                    (2.0 / n as f64).sqrt()
                };
                (0..n)
                    .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                    .collect()
            })
            .collect();
        Self { n, basis }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        self.basis
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Triangular filters over FFT power bins `0..=fft_len/2`.
fn mel_filterbank(n_filters: usize, fft_len: usize, lo_hz: f64, hi_hz: f64) -> Vec<Vec<f64>> {
    let n_bins = fft_len / 2 + 1;
    let sr = SAMPLE_RATE as f64;
    let (mlo, mhi) = (hz_to_mel(lo_hz), hz_to_mel(hi_hz));
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_filters + 1) as f64))
        .collect();
    (0..n_filters)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sr / fft_len as f64;
                    if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MfccExtractor {
    fft: RealFft,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    dct: Dct,
}

impl Default for MfccExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MfccExtractor {
    pub fn new() -> Self {
        Self {
            fft: RealFft::new(FFT_LEN),
            window: hamming(FFT_LEN),
            filters: mel_filterbank(MEL_FILTERS, FFT_LEN, 0.0, SAMPLE_RATE as f64 / 2.0),
            dct: Dct::new(MEL_FILTERS, MFCC_DIM),
        }
    }

    /// 20 coefficients (c0 first) of a 256-sample frame.
    pub fn compute(&self, frame: &[f64]) -> Vec<f64> {
        let windowed: Vec<f64> = frame.iter().zip(&self.window).map(|(x, w)| x * w).collect();
        let spec = self.fft.transform(&windowed);
        let power: Vec<f64> = spec[..=FFT_LEN / 2].iter().map(|c| c.norm_sqr()).collect();
        let log_energies: Vec<f64> = self
            .filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(ENERGY_FLOOR).ln()
            })
            .collect();
        self.dct.apply(&log_energies)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlpConfig {
    pub lp_order: usize,
    pub compression: f64,
    pub delta_span: usize,
}

impl Default for PlpConfig {
    fn default() -> Self {
        Self {
            lp_order: 12,
            compression: 0.33,
            delta_span: 2,
        }
    }
}

/// Hermansky-style PLP on 240-sample frames, zero-padded to a 256-point FFT.
#[derive(Debug, Clone)]
pub struct PlpExtractor {
    cfg: PlpConfig,
    fft: RealFft,
    window: Vec<f64>,
    bark_weights: Vec<Vec<f64>>,
    loudness: Vec<f64>,
    /// cos table for the inverse DFT from auditory spectrum to autocorrelation
    idft: Vec<Vec<f64>>,
}

impl PlpExtractor {
    pub fn new(cfg: PlpConfig, frame_len: usize) -> Self {
        let sr = SAMPLE_RATE as f64;
        let n_bins = FFT_LEN / 2 + 1;
        let nyq_bark = hz_to_bark(sr / 2.0);
        let n_bands = nyq_bark.ceil() as usize + 1;
        let step = nyq_bark / (n_bands - 1) as f64;
        let bark_weights = (0..n_bands)
            .map(|b| {
                let mid = b as f64 * step;
                (0..n_bins)
                    .map(|k| {
                        let z = hz_to_bark(k as f64 * sr / FFT_LEN as f64);
                        let lof = z - mid - 0.5;
                        let hif = z - mid + 0.5;
                        10f64.powf(hif.min(-2.5 * lof).min(0.0))
                    })
                    .collect()
            })
            .collect();
        let loudness = (0..n_bands)
            .map(|b| {
                let f = bark_to_hz(b as f64 * step);
                let fsq = f * f;
                let ftmp = fsq / (fsq + 1.6e5);
                ftmp * ftmp * ((fsq + 1.44e6) / (fsq + 9.61e6))
            })
            .collect();
        // Auditory spectrum samples 0..pi are mirrored into a 2(n-1)-point
        // real symmetric sequence; its inverse DFT is a cosine sum.
        let m = 2 * (n_bands - 1);
        let idft = (0..=cfg.lp_order)
            .map(|lag| {
                (0..n_bands)
                    .map(|b| {
                        let w = if b == 0 || b == n_bands - 1 { 1.0 } else { 2.0 };
                        w * (2.0 * PI * lag as f64 * b as f64 / m as f64).cos() / m as f64
                    })
                    .collect()
            })
            .collect();
        Self {
            cfg,
            fft: RealFft::new(FFT_LEN),
            window: hamming(frame_len),
            bark_weights,
            loudness,
            idft,
        }
    }

    pub fn config(&self) -> &PlpConfig {
        &self.cfg
    }

    /// Static coefficients c0..c15 of one frame.
    pub fn static_coefficients(&self, frame: &[f64]) -> Vec<f64> {
        let windowed: Vec<f64> = frame.iter().zip(&self.window).map(|(x, w)| x * w).collect();
        let spec = self.fft.transform(&windowed);
        let power: Vec<f64> = spec[..=FFT_LEN / 2].iter().map(|c| c.norm_sqr()).collect();

        let n_bands = self.bark_weights.len();
        let mut auditory: Vec<f64> = self
            .bark_weights
            .iter()
            .zip(&self.loudness)
            .map(|(w, eq)| {
                let e: f64 = w.iter().zip(&power).map(|(a, p)| a * p).sum();
                (e * eq).max(ENERGY_FLOOR).powf(self.cfg.compression)
            })
            .collect();
        // edge bands have no support on both sides
        auditory[0] = auditory[1];
        auditory[n_bands - 1] = auditory[n_bands - 2];

        let autocorr: Vec<f64> = self
            .idft
            .iter()
            .map(|row| row.iter().zip(&auditory).map(|(c, a)| c * a).sum())
            .collect();
        let (lpc, err) = levinson_durbin(&autocorr, self.cfg.lp_order);
        lpc_to_cepstrum(&lpc, err, PLP_STATIC)
    }
}

/// Solves for `A(z) = 1 + sum a_k z^-k`; returns `(a_1..a_p, prediction error)`.
pub fn levinson_durbin(r: &[f64], order: usize) -> (Vec<f64>, f64) {
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0].max(f64::MIN_POSITIVE);
    for i in 1..=order {
        let acc: f64 = (1..i).map(|j| a[j] * r[i - j]).sum::<f64>() + r[i];
        let k = -acc / err;
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if err <= 0.0 {
            err = f64::MIN_POSITIVE;
            break;
        }
    }
    (a[1..].to_vec(), err)
}

/// Cepstrum of the all-pole model `gain / A(z)`: c0 = ln(gain), then the
/// standard recursion.
pub fn lpc_to_cepstrum(a: &[f64], gain: f64, n: usize) -> Vec<f64> {
    let p = a.len();
    let mut c = vec![0.0; n];
    c[0] = gain.ln();
    for m in 1..n {
        let am = if m <= p { a[m - 1] } else { 0.0 };
        let mut acc = -am;
        for k in 1..m {
            let amk = if m - k <= p { a[m - k - 1] } else { 0.0 };
            acc -= (k as f64 / m as f64) * c[k] * amk;
        }
        c[m] = acc;
    }
    c
}

/// Regression deltas over +/-`span` frames with edge replication.
pub fn deltas(frames: &[Vec<f64>], span: usize) -> Vec<Vec<f64>> {
    let n = frames.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = frames[0].len();
    let norm: f64 = 2.0 * (1..=span).map(|k| (k * k) as f64).sum::<f64>();
    (0..n)
        .map(|t| {
            (0..dim)
                .map(|d| {
                    (1..=span)
                        .map(|k| {
                            let fwd = &frames[(t + k).min(n - 1)];
                            let back = &frames[t.saturating_sub(k)];
                            k as f64 * (fwd[d] - back[d])
                        })
                        .sum::<f64>()
                        / norm
                })
                .collect()
        })
        .collect()
}
