//! GMM-backed recognizers sitting behind the similarity detectors.

use crate::admission::{neutral_gate, GateDecision, SimilarityDetector, Valence};
use crate::audio_io::SoundClass;
use crate::error::{Error, Result};
use crate::features::{mean_variance_vector, AmbientAnalysis};
use crate::models::{Gender, GmmModel, ModelBundle, ModelRole};

use super::{BroadEmotion, EventKind, NarrowEmotion, Provenance};

pub const AMBIENT_CLASSES: [SoundClass; 4] = [
    SoundClass::Music,
    SoundClass::Traffic,
    SoundClass::Water,
    SoundClass::Other,
];
pub const NEUTRAL_MODEL: &str = "neutral/neutral";
pub const FILLER_MODEL: &str = "neutral/filler";
pub const SPEAKER_BACKGROUND_MODEL: &str = "speaker/background";
pub const SPEECH_FILTER_MODEL: &str = "speech_filter";

pub fn ambient_model_name(class: SoundClass) -> String {
    format!("ambient/{}", class.name())
}

pub fn speaker_model_name(id: &str) -> String {
    format!("speaker/{id}")
}

/// Result of one recognizer call with the GMM evaluations it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub kind: EventKind,
    pub provenance: Provenance,
    /// Per-stage GMM evaluations: (neutral, main).
    pub neutral_evals: u64,
    pub gmm_evals: u64,
}

fn argmax<'a>(
    candidates: impl Iterator<Item = (&'a str, &'a GmmModel)>,
    obs: &[Vec<f64>],
) -> Result<Option<(&'a str, f64, u64)>> {
    let mut best: Option<(&str, f64)> = None;
    let mut evals = 0;
    for (name, m) in candidates {
        let ll = m.log_likelihood(obs)?;
        evals += 1;
        if best.is_none_or(|(_, b)| ll > b) {
            best = Some((name, ll));
        }
    }
    Ok(best.map(|(n, ll)| (n, ll, evals)))
}

fn emotion_label(broad: BroadEmotion, narrow: Option<NarrowEmotion>) -> String {
    match narrow {
        Some(n) => n.name().to_string(),
        None => format!("{broad:?}").to_lowercase(),
    }
}

fn parse_emotion_label(label: &str) -> EventKind {
    match NarrowEmotion::parse(label) {
        Some(n) => EventKind::Emotion {
            broad: n.broad(),
            narrow: Some(n),
        },
        None => EventKind::Emotion {
            broad: BroadEmotion::Neutral,
            narrow: None,
        },
    }
}

/// Similarity gate, then the neutral gate (when enabled), then the narrow GMMs.
pub fn emotion_recognize(
    plp: &[Vec<f64>],
    bundle: &ModelBundle,
    detector: &mut SimilarityDetector,
    use_neutral_gate: bool,
) -> Result<Outcome> {
    if let GateDecision::Propagate(label) = detector.check(&mean_variance_vector(plp)) {
        return Ok(Outcome {
            kind: parse_emotion_label(&label),
            provenance: Provenance::Propagated,
            neutral_evals: 0,
            gmm_evals: 0,
        });
    }
    let mut neutral_evals = 0;
    if use_neutral_gate {
        let neutral = bundle.gmm(NEUTRAL_MODEL)?;
        let filler = bundle.gmm(FILLER_MODEL)?;
        neutral_evals = 2;
        if neutral_gate(plp, neutral, filler)? == Valence::Neutral {
            detector.commit(emotion_label(BroadEmotion::Neutral, None));
            return Ok(Outcome {
                kind: EventKind::Emotion {
                    broad: BroadEmotion::Neutral,
                    narrow: None,
                },
                provenance: Provenance::Classified,
                neutral_evals,
                gmm_evals: 0,
            });
        }
    }
    let candidates = NarrowEmotion::ALL
        .into_iter()
        .filter(|e| !use_neutral_gate || !e.is_neutral())
        .map(|e| Ok((e, bundle.gmm(&e.model_name())?)))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<(NarrowEmotion, f64)> = None;
    for (e, m) in &candidates {
        let ll = m.log_likelihood(plp)?;
        if best.is_none_or(|(_, b)| ll > b) {
            best = Some((*e, ll));
        }
    }
    let (narrow, _) = best.ok_or_else(|| Error::MissingModel("emotion".into()))?;
    detector.commit(emotion_label(narrow.broad(), Some(narrow)));
    Ok(Outcome {
        kind: EventKind::Emotion {
            broad: narrow.broad(),
            narrow: Some(narrow),
        },
        provenance: Provenance::Classified,
        neutral_evals,
        gmm_evals: candidates.len() as u64,
    })
}

const UNKNOWN_LABEL: &str = "unknown";

/// Similarity gate, gender-filtered candidates, then argmax with an unknown-voice margin.
pub fn speaker_identify(
    plp: &[Vec<f64>],
    bundle: &ModelBundle,
    detector: &mut SimilarityDetector,
    gender: Gender,
    gender_filter: bool,
    unknown_margin: f64,
) -> Result<Outcome> {
    if let GateDecision::Propagate(label) = detector.check(&mean_variance_vector(plp)) {
        let id = (label != UNKNOWN_LABEL).then_some(label);
        return Ok(Outcome {
            kind: EventKind::Speaker { id },
            provenance: Provenance::Propagated,
            neutral_evals: 0,
            gmm_evals: 0,
        });
    }
    let background = bundle.gmm(SPEAKER_BACKGROUND_MODEL)?;
    let candidates = bundle
        .gmms_with_role(ModelRole::Speaker)
        .into_iter()
        .filter(|(_, m)| {
            !gender_filter
                || gender == Gender::Uncertain
                || m.gender.is_none_or(|g| g.compatible(gender))
        });
    let best = argmax(candidates, plp)?;
    let (id, evals) = match best {
        Some((name, ll, evals)) => {
            let bg = background.log_likelihood(plp)?;
            let id = (ll - bg >= unknown_margin)
                .then(|| name.strip_prefix("speaker/").unwrap_or(name).to_string());
            (id, evals + 1)
        }
        None => (None, 0),
    };
    detector.commit(id.clone().unwrap_or_else(|| UNKNOWN_LABEL.to_string()));
    Ok(Outcome {
        kind: EventKind::Speaker { id },
        provenance: Provenance::Classified,
        neutral_evals: 0,
        gmm_evals: evals,
    })
}

/// Similarity gate, then argmax over the four ambient models.
pub fn ambient_classify(
    analysis: &AmbientAnalysis,
    bundle: &ModelBundle,
    detector: &mut SimilarityDetector,
) -> Result<Outcome> {
    if let GateDecision::Propagate(label) = detector.check(&analysis.similarity_vector()) {
        return Ok(Outcome {
            kind: EventKind::Ambient {
                class: SoundClass::parse(&label),
            },
            provenance: Provenance::Propagated,
            neutral_evals: 0,
            gmm_evals: 0,
        });
    }
    let obs = analysis.observations();
    let names: Vec<(SoundClass, String)> =
        AMBIENT_CLASSES.iter().map(|c| (*c, ambient_model_name(*c))).collect();
    let mut best: Option<(SoundClass, f64)> = None;
    for (class, name) in &names {
        let ll = bundle.gmm(name)?.log_likelihood(&obs)?;
        if best.is_none_or(|(_, b)| ll > b) {
            best = Some((*class, ll));
        }
    }
    let (class, _) = best.expect("four ambient classes");
    detector.commit(class.name());
    Ok(Outcome {
        kind: EventKind::Ambient { class: Some(class) },
        provenance: Provenance::Classified,
        neutral_evals: 0,
        gmm_evals: names.len() as u64,
    })
}
