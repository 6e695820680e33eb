//! Yin fundamental frequency estimation.

use serde::{Deserialize, Serialize};

use crate::audio_io::{Window, WindowKind, SAMPLE_RATE};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YinConfig {
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Absolute threshold on the cumulative-mean-normalized difference.
    pub threshold: f64,
    /// Minimum share of voiced frames for a window-level pitch.
    pub min_voiced_fraction: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self {
            fmin_hz: 50.0,
            fmax_hz: 500.0,
            threshold: 0.3,
            min_voiced_fraction: 0.2,
        }
    }
}

/// Pitch of `samples` in Hz, or `None` when no lag passes the threshold.
pub fn yin_pitch(samples: &[f64], cfg: &YinConfig) -> Option<f64> {
    let sr = SAMPLE_RATE as f64;
    let tau_min = (sr / cfg.fmax_hz).ceil() as usize;
    let tau_max = (sr / cfg.fmin_hz).floor() as usize;
    if samples.len() <= tau_max + 1 || tau_min < 2 {
        return None;
    }
    let integration = samples.len() - tau_max;

    let mut diff = vec![0.0; tau_max + 1];
    for (tau, d) in diff.iter_mut().enumerate().skip(1) {
        *d = (0..integration)
            .map(|j| {
                let e = samples[j] - samples[j + tau];
                e * e
            })
            .sum();
    }

    // cumulative mean normalized difference
    let mut cmnd = vec![1.0; diff.len()];
    let mut running = 0.0;
    for tau in 1..diff.len() {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    let mut tau = tau_min;
    let found = loop {
        if tau > tau_max {
            break None;
        }
        if cmnd[tau] < cfg.threshold {
            while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            break Some(tau);
        }
        tau += 1;
    }?;

    let refined = if found > 1 && found + 1 < cmnd.len() {
        let (a, b, c) = (cmnd[found - 1], cmnd[found], cmnd[found + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            found as f64 + 0.5 * (a - c) / denom
        } else {
            found as f64
        }
    } else {
        found as f64
    };
    let f0 = sr / refined;
    (f0 >= cfg.fmin_hz && f0 <= cfg.fmax_hz).then_some(f0)
}

/// Mean pitch over the voiced frames of a speaker-count window.
pub fn mean_pitch(window: &Window, cfg: &YinConfig) -> Result<Option<f64>> {
    window.expect_kind(WindowKind::SpeakerCount)?;
    Ok(mean_pitch_of_frames(
        window.frames.iter().map(|f| f.samples.as_slice()),
        cfg,
    ))
}

pub(crate) fn mean_pitch_of_frames<'a>(
    frames: impl Iterator<Item = &'a [f64]>,
    cfg: &YinConfig,
) -> Option<f64> {
    let mut total = 0usize;
    let mut voiced = Vec::new();
    for f in frames {
        total += 1;
        if let Some(p) = yin_pitch(f, cfg) {
            voiced.push(p);
        }
    }
    if total == 0 || (voiced.len() as f64) < cfg.min_voiced_fraction * total as f64 || voiced.is_empty()
    {
        return None;
    }
    Some(voiced.iter().sum::<f64>() / voiced.len() as f64)
}
