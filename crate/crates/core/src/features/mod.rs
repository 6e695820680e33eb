//! Acoustic features: per-frame spectral descriptors, window summaries,
//! pitch, MFCC and PLP.

pub mod cepstral;
pub mod pitch;
pub mod spectral;

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::audio_io::{Window, WindowKind};
use crate::error::{Error, Result};
pub use cepstral::{MfccExtractor, PlpConfig, PlpExtractor, MFCC_DIM, PLP_DIM, PLP_STATIC};
pub use pitch::{mean_pitch, yin_pitch, YinConfig};
use spectral::{FrameSpectrum, RealFft, FFT_LEN};
pub use spectral::{max_spectral_entropy, rms};

/// Names of the per-frame features that are summarized over a window, in
/// summary-vector order.
pub const FRAME_FEATURE_NAMES: [&str; 9] = [
    "rms",
    "spectral_entropy",
    "zcr",
    "flux",
    "rolloff",
    "centroid",
    "bandwidth",
    "rel_spectral_entropy",
    "nwpd",
];
pub const N_FRAME_FEATURES: usize = FRAME_FEATURE_NAMES.len();
/// means + variances + lefr
pub const SUMMARY_DIM: usize = 2 * N_FRAME_FEATURES + 1;
/// Indices of features measured in Hz.
const HZ_FEATURES: [usize; 3] = [4, 5, 6];
/// Per-frame ambient observation: MFCC plus seven level-independent descriptors.
pub const AMBIENT_OBS_DIM: usize = MFCC_DIM + 7;
/// Ambient similarity vector: summary plus MFCC means.
pub const AMBIENT_SIMILARITY_DIM: usize = SUMMARY_DIM + MFCC_DIM;
/// Emotion/speaker similarity vector: mean and variance of every PLP coefficient.
pub const PLP_SIMILARITY_DIM: usize = 2 * PLP_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub yin: YinConfig,
    /// Frames with rms below this share of the window-mean rms count as low energy.
    pub lefr_ratio: f64,
    pub rolloff_fraction: f64,
    pub plp: PlpConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            yin: YinConfig::default(),
            lefr_ratio: 0.5,
            rolloff_fraction: 0.85,
            plp: PlpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub rms: f64,
    pub spectral_entropy: f64,
    pub zcr: f64,
    pub flux: f64,
    pub rolloff: f64,
    pub centroid: f64,
    pub bandwidth: f64,
    pub rel_spectral_entropy: f64,
    pub nwpd: f64,
    pub pitch: Option<f64>,
}

impl FrameFeatures {
    pub fn values(&self) -> [f64; N_FRAME_FEATURES] {
        [
            self.rms,
            self.spectral_entropy,
            self.zcr,
            self.flux,
            self.rolloff,
            self.centroid,
            self.bandwidth,
            self.rel_spectral_entropy,
            self.nwpd,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub lefr: f64,
}

impl WindowSummary {
    pub fn from_frames(frames: &[FrameFeatures], lefr_ratio: f64) -> Self {
        let n = frames.len().max(1) as f64;
        let mut means = vec![0.0; N_FRAME_FEATURES];
        for f in frames {
            for (m, v) in means.iter_mut().zip(f.values()) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut variances = vec![0.0; N_FRAME_FEATURES];
        for f in frames {
            for ((s, v), m) in variances.iter_mut().zip(f.values()).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        variances.iter_mut().for_each(|s| *s /= n);
        let cutoff = lefr_ratio * means[0];
        let low = frames.iter().filter(|f| f.rms < cutoff).count();
        Self {
            means,
            variances,
            lefr: low as f64 / n,
        }
    }

    /// Flat vector `means ++ variances ++ [lefr]`; tree feature indices refer to it.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(SUMMARY_DIM);
        v.extend_from_slice(&self.means);
        v.extend_from_slice(&self.variances);
        v.push(self.lefr);
        v
    }

    pub fn feature_name(index: usize) -> Option<String> {
        match index {
            i if i < N_FRAME_FEATURES => Some(format!("mean_{}", FRAME_FEATURE_NAMES[i])),
            i if i < 2 * N_FRAME_FEATURES => {
                Some(format!("var_{}", FRAME_FEATURE_NAMES[i - N_FRAME_FEATURES]))
            }
            i if i == 2 * N_FRAME_FEATURES => Some("lefr".to_string()),
            _ => None,
        }
    }

    /// Summary with Hz features expressed in kHz so no single feature
    /// dominates an angle comparison.
    pub fn scaled_vector(&self) -> Vec<f64> {
        let mut v = self.to_vector();
        for &i in &HZ_FEATURES {
            v[i] /= 1e3;
            v[N_FRAME_FEATURES + i] /= 1e6;
        }
        v
    }
}

/// Everything computed from one ambient-kind window.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientAnalysis {
    pub frames: Vec<FrameFeatures>,
    pub summary: WindowSummary,
    pub mfcc: Vec<Vec<f64>>,
}

impl AmbientAnalysis {
    pub fn mfcc_mean(&self) -> Vec<f64> {
        column_means(&self.mfcc)
    }

    /// Scaled summary followed by the MFCC means.
    pub fn similarity_vector(&self) -> Vec<f64> {
        let mut v = self.summary.scaled_vector();
        v.extend(self.mfcc_mean());
        v
    }

    /// One observation per frame for the ambient GMMs.
    pub fn observations(&self) -> Vec<Vec<f64>> {
        let frame_len = WindowKind::Ambient.frame_len() as f64;
        self.frames
            .iter()
            .zip(&self.mfcc)
            .map(|(f, m)| {
                let mut o = m.clone();
                o.extend([
                    f.spectral_entropy,
                    f.zcr / frame_len,
                    f.flux,
                    f.rolloff / 1e3,
                    f.centroid / 1e3,
                    f.bandwidth / 1e3,
                    f.nwpd,
                ]);
                o
            })
            .collect()
    }
}

pub fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut m = vec![0.0; first.len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Column means followed by population variances.
pub fn mean_variance_vector(rows: &[Vec<f64>]) -> Vec<f64> {
    let means = column_means(rows);
    let mut vars = vec![0.0; means.len()];
    for r in rows {
        for ((v, x), m) in vars.iter_mut().zip(r).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    let n = rows.len().max(1) as f64;
    vars.iter_mut().for_each(|v| *v /= n);
    let mut out = means;
    out.extend(vars);
    out
}

/// Shared, immutable tables for every feature computation.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    fft: RealFft,
    hamming: Vec<f64>,
    mfcc: MfccExtractor,
    plp: PlpExtractor,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(FeatureConfig::default())
    }
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Self {
        Self {
            cfg,
            fft: RealFft::new(FFT_LEN),
            hamming: spectral::hamming(FFT_LEN),
            mfcc: MfccExtractor::new(),
            plp: PlpExtractor::new(cfg.plp, WindowKind::Speech.frame_len()),
        }
    }

    /// Process-wide extractor with default configuration.
    pub fn shared() -> &'static FeatureExtractor {
        static SHARED: OnceLock<FeatureExtractor> = OnceLock::new();
        SHARED.get_or_init(FeatureExtractor::default)
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn spectrum(&self, frame: &[f64]) -> FrameSpectrum {
        FrameSpectrum::compute(&self.fft, &self.hamming, frame)
    }

    pub fn spectral_entropy(&self, frame: &[f64]) -> f64 {
        spectral::entropy_bits(self.spectrum(frame).distribution().as_deref())
    }

    /// The two values the silence gate needs: `(rms, spectral_entropy)`.
    pub fn gate_features(&self, frame: &[f64]) -> (f64, f64) {
        (rms(frame), self.spectral_entropy(frame))
    }

    pub fn mfcc(&self, frame: &[f64]) -> Vec<f64> {
        self.mfcc.compute(frame)
    }

    /// Per-frame features of a sequence of contiguous 256-sample frames.
    pub fn frame_features(&self, frames: &[&[f64]]) -> Vec<FrameFeatures> {
        let spectra: Vec<FrameSpectrum> = frames.iter().map(|f| self.spectrum(f)).collect();
        let dists: Vec<Option<Vec<f64>>> = spectra.iter().map(|s| s.distribution()).collect();
        let present: Vec<&Vec<f64>> = dists.iter().flatten().collect();
        let reference = if present.is_empty() {
            vec![1.0 / spectral::SPECTRUM_BINS as f64; spectral::SPECTRUM_BINS]
        } else {
            column_means(&present.iter().map(|d| (*d).clone()).collect::<Vec<_>>())
        };

        (0..frames.len())
            .map(|i| {
                let d = dists[i].as_deref();
                let flux = if i == 0 {
                    0.0
                } else {
                    spectral::flux(dists[i - 1].as_deref(), d)
                };
                let nwpd = if i >= 2 {
                    spectral::weighted_phase_deviation(&spectra[i], &spectra[i - 1], &spectra[i - 2])
                } else {
                    0.0
                };
                FrameFeatures {
                    rms: rms(frames[i]),
                    spectral_entropy: spectral::entropy_bits(d),
                    zcr: spectral::zero_crossings(frames[i]),
                    flux,
                    rolloff: spectral::rolloff_hz(d, self.cfg.rolloff_fraction),
                    centroid: spectral::centroid_hz(d),
                    bandwidth: spectral::bandwidth_hz(d),
                    rel_spectral_entropy: spectral::relative_entropy_bits(d, &reference),
                    nwpd,
                    pitch: yin_pitch(frames[i], &self.cfg.yin),
                }
            })
            .collect()
    }

    pub fn window_features(&self, window: &Window) -> Result<WindowSummary> {
        window.expect_kind(WindowKind::Ambient)?;
        let frames: Vec<&[f64]> = window.frames.iter().map(|f| f.samples.as_slice()).collect();
        let ff = self.frame_features(&frames);
        Ok(WindowSummary::from_frames(&ff, self.cfg.lefr_ratio))
    }

    pub fn analyze_ambient(&self, window: &Window) -> Result<AmbientAnalysis> {
        window.expect_kind(WindowKind::Ambient)?;
        let frames: Vec<&[f64]> = window.frames.iter().map(|f| f.samples.as_slice()).collect();
        let ff = self.frame_features(&frames);
        let summary = WindowSummary::from_frames(&ff, self.cfg.lefr_ratio);
        let mfcc = frames.iter().map(|f| self.mfcc(f)).collect();
        Ok(AmbientAnalysis {
            frames: ff,
            summary,
            mfcc,
        })
    }

    pub fn mean_pitch(&self, window: &Window) -> Result<Option<f64>> {
        mean_pitch(window, &self.cfg.yin)
    }

    /// Mean MFCC vector over the frames of a window.
    pub fn mfcc_mean(&self, window: &Window) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = window.frames.iter().map(|f| self.mfcc(&f.samples)).collect();
        column_means(&rows)
    }

    /// 498 vectors of 16 static + 16 delta coefficients.
    pub fn plp(&self, window: &Window) -> Result<Vec<Vec<f64>>> {
        window.expect_kind(WindowKind::Speech)?;
        let statics: Vec<Vec<f64>> = window
            .frames
            .iter()
            .map(|f| self.plp.static_coefficients(&f.samples))
            .collect();
        let d = cepstral::deltas(&statics, self.cfg.plp.delta_span);
        Ok(statics
            .into_iter()
            .zip(d)
            .map(|(mut s, d)| {
                s.extend(d);
                s
            })
            .collect())
    }
}

/// Spectral entropy of one 256-sample frame with the default extractor.
pub fn spectral_entropy(frame: &[f64]) -> f64 {
    FeatureExtractor::shared().spectral_entropy(frame)
}

pub fn mfcc(frame: &[f64]) -> Vec<f64> {
    FeatureExtractor::shared().mfcc(frame)
}

pub fn window_features(window: &Window) -> Result<WindowSummary> {
    FeatureExtractor::shared().window_features(window)
}

pub fn plp(window: &Window) -> Result<Vec<Vec<f64>>> {
    FeatureExtractor::shared().plp(window)
}

/// Writes `window_index,feature_name,value` rows for each summary.
pub fn write_feature_dump(path: impl AsRef<Path>, summaries: &[WindowSummary]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "window_index,feature_name,value")?;
        for (i, s) in summaries.iter().enumerate() {
            for (j, v) in s.to_vector().iter().enumerate() {
                let name = WindowSummary::feature_name(j).unwrap_or_default();
                writeln!(w, "{i},{name},{v}")?;
            }
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Parses a feature dump back into summaries.
pub fn read_feature_dump(path: impl AsRef<Path>) -> Result<Vec<WindowSummary>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let idx: usize = rec[0].parse().map_err(|_| Error::Csv(format!("bad index {}", &rec[0])))?;
        let v: f64 = rec[2].parse().map_err(|_| Error::Csv(format!("bad value {}", &rec[2])))?;
        if rows.len() <= idx {
            rows.resize(idx + 1, Vec::new());
        }
        rows[idx].push(v);
    }
    rows.into_iter()
        .map(|r| {
            if r.len() != SUMMARY_DIM {
                return Err(Error::Csv(format!("expected {SUMMARY_DIM} values, got {}", r.len())));
            }
            Ok(WindowSummary {
                means: r[..N_FRAME_FEATURES].to_vec(),
                variances: r[N_FRAME_FEATURES..2 * N_FRAME_FEATURES].to_vec(),
                lefr: r[2 * N_FRAME_FEATURES],
            })
        })
        .collect()
}
