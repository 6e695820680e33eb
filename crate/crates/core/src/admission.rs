//! Admission filters and similarity-based label propagation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FrameFeatures, WindowSummary};
use crate::models::{DecisionTreeModel, GmmModel, SpeechClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "label", rename_all = "snake_case")]
pub enum GateDecision {
    Admit,
    Reject,
    Propagate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilenceFilterConfig {
    pub rms_threshold: f64,
    pub entropy_threshold: f64,
    pub hangover_frames: usize,
}

impl Default for SilenceFilterConfig {
    fn default() -> Self {
        Self {
            rms_threshold: 0.01,
            entropy_threshold: 6.5,
            hangover_frames: 40,
        }
    }
}

impl SilenceFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rms_threshold > 0.0) || !(self.entropy_threshold > 0.0) || self.hangover_frames == 0 {
            return Err(Error::Config(format!("invalid silence filter settings {self:?}")));
        }
        Ok(())
    }
}

/// Frame-level silence filter with a hangover.
#[derive(Debug, Clone, PartialEq)]
pub struct SilenceGate {
    cfg: SilenceFilterConfig,
    active: bool,
    silent_run: usize,
}

impl SilenceGate {
    pub fn new(cfg: SilenceFilterConfig) -> Self {
        Self {
            cfg,
            active: false,
            silent_run: 0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn is_event(&self, rms: f64, entropy: f64) -> bool {
        rms > self.cfg.rms_threshold && entropy < self.cfg.entropy_threshold
    }

    /// Admits event frames and every frame of the hangover that follows them.
    pub fn step(&mut self, rms: f64, entropy: f64) -> GateDecision {
        if self.is_event(rms, entropy) {
            self.active = true;
            self.silent_run = 0;
            return GateDecision::Admit;
        }
        if !self.active {
            return GateDecision::Reject;
        }
        self.silent_run += 1;
        if self.silent_run >= self.cfg.hangover_frames {
            self.active = false;
        }
        GateDecision::Admit
    }

    pub fn gate(&mut self, frame: &FrameFeatures) -> GateDecision {
        self.step(frame.rms, frame.spectral_entropy)
    }
}

pub fn speech_gate(summary: &WindowSummary, tree: &DecisionTreeModel) -> Result<SpeechClass> {
    Ok(tree.classify(summary)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Valence {
    Neutral,
    NonNeutral,
}

/// Neutral vs. everything else; ties favour neutral.
pub fn neutral_gate(plp: &[Vec<f64>], neutral: &GmmModel, filler: &GmmModel) -> Result<Valence> {
    if neutral.dim() != filler.dim() {
        return Err(Error::DimensionMismatch {
            expected: neutral.dim(),
            found: filler.dim(),
        });
    }
    let n = neutral.log_likelihood(plp)?;
    let f = filler.log_likelihood(plp)?;
    Ok(if n >= f {
        Valence::Neutral
    } else {
        Valence::NonNeutral
    })
}

/// Angle between two vectors in degrees, or `None` if either has zero norm.
pub fn angle_deg(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) || a.len() != b.len() {
        return None;
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateStats {
    pub propagated: u64,
    pub classified: u64,
}

impl GateStats {
    pub fn saved_fraction(&self) -> f64 {
        let total = self.propagated + self.classified;
        if total == 0 {
            0.0
        } else {
            self.propagated as f64 / total as f64
        }
    }
}

/// Compares each window with the one before it and propagates the previous
/// label when they are close enough.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDetector {
    pub name: String,
    pub threshold_deg: f64,
    last_summary: Option<Vec<f64>>,
    last_label: Option<String>,
    pending: Option<Vec<f64>>,
    stats: GateStats,
}

impl SimilarityDetector {
    pub fn new(name: impl Into<String>, threshold_deg: f64) -> Self {
        Self {
            name: name.into(),
            threshold_deg,
            last_summary: None,
            last_label: None,
            pending: None,
            stats: GateStats::default(),
        }
    }

    pub fn stats(&self) -> GateStats {
        self.stats
    }

    pub fn last_label(&self) -> Option<&str> {
        self.last_label.as_deref()
    }

    /// `Propagate` reuses the previous label; `Admit` requires a later `commit`.
    pub fn check(&mut self, summary: &[f64]) -> GateDecision {
        let decision = match (&self.last_summary, &self.last_label) {
            (Some(prev), Some(label)) => {
                let same = prev.as_slice() == summary;
                let close = self.threshold_deg > 0.0
                    && angle_deg(prev, summary).is_some_and(|a| a <= self.threshold_deg);
                if same || close {
                    GateDecision::Propagate(label.clone())
                } else {
                    GateDecision::Admit
                }
            }
            _ => GateDecision::Admit,
        };
        match &decision {
            GateDecision::Propagate(_) => {
                self.stats.propagated += 1;
                self.last_summary = Some(summary.to_vec());
                self.pending = None;
            }
            _ => self.pending = Some(summary.to_vec()),
        }
        decision
    }

    /// Records the label produced by full classification of the admitted window.
    pub fn commit(&mut self, label: impl Into<String>) {
        self.stats.classified += 1;
        if let Some(s) = self.pending.take() {
            self.last_summary = Some(s);
        }
        self.last_label = Some(label.into());
    }

    pub fn reset(&mut self) {
        self.last_summary = None;
        self.last_label = None;
        self.pending = None;
    }
}

/// Writes `detector,propagated,classified,saved_fraction`.
pub fn write_gate_stats(path: impl AsRef<Path>, stats: &[(String, GateStats)]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("detector,propagated,classified,saved_fraction\n");
    for (name, s) in stats {
        text.push_str(&format!(
            "{name},{},{},{}\n",
            s.propagated,
            s.classified,
            s.saved_fraction()
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_gate_stats(path: impl AsRef<Path>) -> Result<Vec<(String, GateStats)>> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(|e| Error::Csv(e.to_string()))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let parse = |i: usize| -> Result<u64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Csv(format!("bad count `{}`", &rec[i])))
        };
        out.push((
            rec[0].to_string(),
            GateStats {
                propagated: parse(1)?,
                classified: parse(2)?,
            },
        ));
    }
    Ok(out)
}
