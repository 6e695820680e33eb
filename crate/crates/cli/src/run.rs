//! `dspear run`: the orchestrator over one audio file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dspear::admission::write_gate_stats;
use dspear::audio_io::{read_stream, SoundTrace};
use dspear::models::ModelBundle;
use dspear::pipelines::{orchestrate, write_events, PipelineSet, RunMode};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const INVOCATIONS_FILE: &str = "invocations.csv";
pub const GATE_STATS_FILE: &str = "gate_stats.csv";
pub const RUN_FILE: &str = "run.json";
pub const LABELS_FILE: &str = "labels.csv";

/// Settings and headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub audio: String,
    pub duration_s: f64,
    pub seed: u64,
    pub mode: RunMode,
    pub pipelines: PipelineSet,
    pub ambient_threshold_deg: f64,
    pub emotion_threshold_deg: f64,
    pub speaker_threshold_deg: f64,
    pub event_counts: BTreeMap<String, usize>,
    pub labelled: bool,
}

impl RunRecord {
    pub fn threshold_deg(&self, detector: &str) -> Option<f64> {
        match detector {
            "ambient" => Some(self.ambient_threshold_deg),
            "emotion" => Some(self.emotion_threshold_deg),
            "speaker" => Some(self.speaker_threshold_deg),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn cmd_run(cfg: &RunConfig, audio: &Path, labels: Option<&PathBuf>) -> Result<()> {
    if !audio.is_file() {
        return Err(CliError::Data(format!("audio file {} not found", audio.display())));
    }
    cfg.require_models()?;
    let table = cfg.power_table()?;
    let truth = match labels {
        Some(p) => Some(SoundTrace::read_csv(p)?),
        None => None,
    };
    let stream = read_stream(audio, true)?;
    let bundle = ModelBundle::load(&cfg.models)?;
    let out = orchestrate(&stream, &bundle, &cfg.orchestrator())?;

    cfg.create_out()?;
    write_events(cfg.out.join(EVENTS_FILE), &out.events)?;
    out.counts.write_csv(cfg.out.join(INVOCATIONS_FILE), &table)?;
    write_gate_stats(cfg.out.join(GATE_STATS_FILE), &out.gate_stats)?;
    if let Some(t) = &truth {
        t.write_csv(cfg.out.join(LABELS_FILE))?;
    }

    let mut event_counts = BTreeMap::new();
    for e in &out.events {
        *event_counts.entry(e.kind.pipeline().to_string()).or_insert(0) += 1;
    }
    let record = RunRecord {
        audio: audio.display().to_string(),
        duration_s: stream.duration_s(),
        seed: cfg.seed,
        mode: cfg.mode,
        pipelines: cfg.pipelines,
        ambient_threshold_deg: cfg.ambient_threshold_deg,
        emotion_threshold_deg: cfg.emotion_threshold_deg,
        speaker_threshold_deg: cfg.speaker_threshold_deg,
        event_counts: event_counts.clone(),
        labelled: truth.is_some(),
    };
    let path = cfg.out.join(RUN_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&record)?).map_err(|e| io_err(&path, e))?;

    let summary: Vec<String> = event_counts.iter().map(|(k, n)| format!("{k}={n}")).collect();
    println!(
        "run: {} events over {:.1} s [{}] -> {}",
        out.events.len(),
        record.duration_s,
        summary.join(" "),
        cfg.out.display()
    );
    Ok(())
}
