//! Unsupervised speaker counting: forward-pass segment merging followed by
//! agglomerative cluster merging on MFCC angle and gender.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::admission::angle_deg;
use crate::error::{Error, Result};
use crate::models::Gender;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrowdConfig {
    pub merge_angle_deg: f64,
}

impl Default for CrowdConfig {
    fn default() -> Self {
        Self {
            merge_angle_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub mfcc_mean: Vec<f64>,
    pub pitch_mean: Option<f64>,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub mean: Vec<f64>,
    pub n_segments: usize,
    pub gender: Gender,
}

impl Cluster {
    fn mergeable(&self, other_mean: &[f64], other_gender: Gender, cfg: &CrowdConfig) -> Option<f64> {
        if !self.gender.compatible(other_gender) {
            return None;
        }
        angle_deg(&self.mean, other_mean).filter(|a| *a <= cfg.merge_angle_deg)
    }

    fn absorb(&mut self, other: &Cluster) {
        let (n1, n2) = (self.n_segments as f64, other.n_segments as f64);
        for (a, b) in self.mean.iter_mut().zip(&other.mean) {
            *a = (n1 * *a + n2 * b) / (n1 + n2);
        }
        self.n_segments += other.n_segments;
        if self.gender == Gender::Uncertain {
            self.gender = other.gender;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerPrior {
    pub known_speakers: BTreeSet<String>,
    pub unknown_voice_seen: bool,
}

impl SpeakerPrior {
    pub fn unique_known_speakers(&self) -> usize {
        self.known_speakers.len()
    }

    /// Minimum count implied by identification results.
    pub fn floor(&self) -> usize {
        self.unique_known_speakers() + usize::from(self.unknown_voice_seen)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub open: bool,
    pub start_t: f64,
    pub last_voice_t: f64,
    pub segments: Vec<Segment>,
    pub clusters: Vec<Cluster>,
}

impl ConversationState {
    pub fn open(start_t: f64) -> Self {
        Self {
            open: true,
            start_t,
            last_voice_t: start_t,
            segments: Vec::new(),
            clusters: Vec::new(),
        }
    }

    pub fn close(&mut self) {
        self.open = false;
    }
}

/// Merges the segment into the most recent cluster or starts a new one.
pub fn crowd_forward_pass(state: &mut ConversationState, segment: Segment, cfg: &CrowdConfig) {
    let incoming = Cluster {
        mean: segment.mfcc_mean.clone(),
        n_segments: 1,
        gender: segment.gender,
    };
    match state.clusters.last_mut() {
        Some(last) if last.mergeable(&incoming.mean, incoming.gender, cfg).is_some() => {
            last.absorb(&incoming)
        }
        _ => state.clusters.push(incoming),
    }
    state.segments.push(segment);
}

/// Repeatedly merges the closest compatible pair of clusters.
pub fn merge_clusters(mut clusters: Vec<Cluster>, cfg: &CrowdConfig) -> Vec<Cluster> {
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                if let Some(a) = clusters[i].mergeable(&clusters[j].mean, clusters[j].gender, cfg) {
                    if best.is_none_or(|(_, _, b)| a < b) {
                        best = Some((i, j, a));
                    }
                }
            }
        }
        let Some((i, j, _)) = best else {
            return clusters;
        };
        let other = clusters.remove(j);
        clusters[i].absorb(&other);
    }
}

/// Final speaker count of a closed conversation.
pub fn crowd_finalize(
    state: &ConversationState,
    prior: Option<&SpeakerPrior>,
    cfg: &CrowdConfig,
) -> Result<usize> {
    if state.open {
        return Err(Error::ConversationOpen);
    }
    let count = merge_clusters(state.clusters.clone(), cfg).len();
    Ok(match prior {
        Some(p) => count.max(p.floor()),
        None => count,
    })
}
