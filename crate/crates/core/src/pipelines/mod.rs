//! The inference pipelines and the orchestrator that routes audio through them.

pub mod crowd;
pub mod orchestrator;
pub mod recognizers;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io::SoundClass;
use crate::energysim::{PowerTable, Processor, Stage};
use crate::error::{Error, Result};
pub use crate::models::Gender;
pub use crowd::{ConversationState, CrowdConfig, SpeakerPrior};
pub use orchestrator::{orchestrate, OrchestratorConfig, PipelineSet, RunMode, RunOutput};
pub use recognizers::{ambient_classify, emotion_recognize, speaker_identify, Outcome};

pub const MALE_BELOW_HZ: f64 = 160.0;
pub const FEMALE_ABOVE_HZ: f64 = 190.0;

/// Pitch-threshold gender rule.
pub fn gender_estimate(pitch_hz: Option<f64>) -> Gender {
    match pitch_hz {
        Some(p) if p < MALE_BELOW_HZ => Gender::Male,
        Some(p) if p > FEMALE_ABOVE_HZ => Gender::Female,
        _ => Gender::Uncertain,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BroadEmotion {
    Anger,
    Fear,
    Happiness,
    Neutral,
    Sadness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NarrowEmotion {
    Disgust,
    Dominant,
    HotAnger,
    Panic,
    Elation,
    Interest,
    Happiness,
    Boredom,
    NeutralDistant,
    NeutralConversation,
    NeutralNormal,
    NeutralTete,
    Passive,
    Sadness,
}

impl NarrowEmotion {
    pub const ALL: [NarrowEmotion; 14] = [
        NarrowEmotion::Disgust,
        NarrowEmotion::Dominant,
        NarrowEmotion::HotAnger,
        NarrowEmotion::Panic,
        NarrowEmotion::Elation,
        NarrowEmotion::Interest,
        NarrowEmotion::Happiness,
        NarrowEmotion::Boredom,
        NarrowEmotion::NeutralDistant,
        NarrowEmotion::NeutralConversation,
        NarrowEmotion::NeutralNormal,
        NarrowEmotion::NeutralTete,
        NarrowEmotion::Passive,
        NarrowEmotion::Sadness,
    ];

    pub fn broad(self) -> BroadEmotion {
        use NarrowEmotion::*;
        match self {
            Disgust | Dominant | HotAnger => BroadEmotion::Anger,
            Panic => BroadEmotion::Fear,
            Elation | Interest | Happiness => BroadEmotion::Happiness,
            Boredom | NeutralDistant | NeutralConversation | NeutralNormal | NeutralTete
            | Passive => BroadEmotion::Neutral,
            Sadness => BroadEmotion::Sadness,
        }
    }

    pub fn is_neutral(self) -> bool {
        self.broad() == BroadEmotion::Neutral
    }

    pub fn name(self) -> &'static str {
        use NarrowEmotion::*;
        match self {
            Disgust => "disgust",
            Dominant => "dominant",
            HotAnger => "hot_anger",
            Panic => "panic",
            Elation => "elation",
            Interest => "interest",
            Happiness => "happiness",
            Boredom => "boredom",
            NeutralDistant => "neutral_distant",
            NeutralConversation => "neutral_conversation",
            NeutralNormal => "neutral_normal",
            NeutralTete => "neutral_tete",
            Passive => "passive",
            Sadness => "sadness",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    /// Bundle key of this emotion's GMM.
    pub fn model_name(self) -> String {
        format!("emotion/{}", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Silence,
    Ambient {
        /// Absent when the ambient pipeline is disabled.
        class: Option<SoundClass>,
    },
    Gender {
        gender: Gender,
    },
    SpeakerCount {
        count: usize,
    },
    Emotion {
        broad: BroadEmotion,
        /// Absent when the neutral gate settled the window.
        narrow: Option<NarrowEmotion>,
    },
    Speaker {
        /// Absent for an unknown voice.
        id: Option<String>,
    },
}

impl EventKind {
    pub fn pipeline(&self) -> &'static str {
        match self {
            EventKind::Silence => "silence",
            EventKind::Ambient { .. } => "ambient",
            EventKind::Gender { .. } => "gender",
            EventKind::SpeakerCount { .. } => "speaker_count",
            EventKind::Emotion { .. } => "emotion",
            EventKind::Speaker { .. } => "speaker",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Classified,
    Propagated,
    GatedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceEvent {
    pub t_start: f64,
    pub t_end: f64,
    #[serde(flatten)]
    pub kind: EventKind,
    pub provenance: Provenance,
}

impl InferenceEvent {
    /// Canonical text form, used to compare event multisets.
    pub fn key(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

pub fn write_events(path: impl AsRef<Path>, events: &[InferenceEvent]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<InferenceEvent>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// How many times each stage ran during an orchestrator run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationCounts(pub BTreeMap<Stage, u64>);

impl InvocationCounts {
    pub fn add(&mut self, stage: Stage, n: u64) {
        *self.0.entry(stage).or_insert(0) += n;
    }

    pub fn get(&self, stage: Stage) -> u64 {
        self.0.get(&stage).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &InvocationCounts) {
        for (s, n) in &other.0 {
            self.add(*s, *n);
        }
    }

    /// Writes `stage,count,unit_runtime_ms_dsp,unit_runtime_ms_cpu` for every stage.
    pub fn write_csv(&self, path: impl AsRef<Path>, table: &PowerTable) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::from("stage,count,unit_runtime_ms_dsp,unit_runtime_ms_cpu\n");
        for stage in Stage::ALL {
            text.push_str(&format!(
                "{},{},{},{}\n",
                stage.name(),
                self.get(stage),
                table.unit_runtime_ms(stage, Processor::Dsp),
                table.unit_runtime_ms(stage, Processor::Cpu),
            ));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader =
            csv::Reader::from_path(path.as_ref()).map_err(|e| Error::Csv(e.to_string()))?;
        let mut out = Self::default();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            let stage = Stage::parse(&rec[0]).ok_or_else(|| Error::UnknownStage(rec[0].to_string()))?;
            let n: u64 = rec[1]
                .parse()
                .map_err(|_| Error::Csv(format!("bad count `{}`", &rec[1])))?;
            out.add(stage, n);
        }
        Ok(out)
    }
}
