//! `dspear report`: plot-ready tables gathered from run, simulate, sweep and train outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use dspear::admission::read_gate_stats;
use dspear::audio_io::{SoundClass, SoundTrace, TraceSegment};
use dspear::energysim::read_lifetime_csv;
use dspear::models::{ModelBundle, MANIFEST_FILE};
use dspear::pipelines::{read_events, EventKind, InferenceEvent, InvocationCounts, NarrowEmotion};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};
use crate::run::{RunRecord, EVENTS_FILE, GATE_STATS_FILE, INVOCATIONS_FILE, LABELS_FILE, RUN_FILE};
use crate::sim::{read_wakeup_csv, Crossover, SimulationRecord, CROSSOVER_FILE, LIFETIME_FILE, SIMULATION_FILE, WAKEUP_FILE};

pub const LIFETIME_TABLE: &str = "lifetime_vs_speech.csv";
pub const WAKEUP_TABLE: &str = "wakeup_vs_memory.csv";
pub const CROSSOVER_TABLE: &str = "crossover.csv";
pub const SAVINGS_TABLE: &str = "savings_vs_accuracy.csv";
pub const INVOCATION_TABLE: &str = "invocation_totals.csv";
pub const MODELS_TABLE: &str = "models.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeEntry {
    pub source: String,
    pub origin: String,
    pub variant: String,
    pub speech_h: f64,
    pub lifetime_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WakeupEntry {
    pub source: String,
    pub mem_limit_mb: f64,
    pub saving: f64,
    pub delta_t_s: f64,
    pub minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverEntry {
    pub source: String,
    pub a: String,
    pub b: String,
    pub silence_h: f64,
    pub speech_h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsEntry {
    pub source: String,
    pub detector: String,
    pub threshold_deg: Option<f64>,
    pub propagated: u64,
    pub classified: u64,
    pub saved_fraction: f64,
    /// Share of the detector's pipeline events matching the labels.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub source: String,
    pub truth: String,
    pub predicted: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationEntry {
    pub source: String,
    pub stage: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub source: String,
    pub name: String,
    pub role: String,
    pub placement: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub simulations: usize,
    pub sweeps: usize,
    pub runs: usize,
    pub labelled_runs: usize,
    pub bundles: usize,
    pub tables: Vec<String>,
}

#[derive(Default)]
struct Tables {
    lifetime: Vec<LifetimeEntry>,
    wakeup: Vec<WakeupEntry>,
    crossover: Vec<CrossoverEntry>,
    savings: Vec<SavingsEntry>,
    confusion: BTreeMap<String, BTreeMap<(String, String, String), usize>>,
    invocations: Vec<InvocationEntry>,
    models: Vec<ModelEntry>,
    summary: ReportSummary,
}

fn snake<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::from("?"),
    }
}

/// Segment covering time `t`, or the last one past the end.
fn segment_at(trace: &SoundTrace, t: f64) -> Option<&TraceSegment> {
    let mut end = 0.0;
    for seg in &trace.segments {
        end += seg.duration_s;
        if t < end {
            return Some(seg);
        }
    }
    trace.segments.last()
}

/// Labels are `speaker` or `speaker:emotion` on speech segments.
fn label_parts(seg: &TraceSegment) -> (Option<&str>, Option<&str>) {
    match seg.label.as_deref() {
        None => (None, None),
        Some(l) => match l.split_once(':') {
            Some((s, e)) => ((!s.is_empty()).then_some(s), (!e.is_empty()).then_some(e)),
            None => (Some(l), None),
        },
    }
}

fn speech_category(class: SoundClass) -> &'static str {
    match class {
        SoundClass::Silence => "silence",
        SoundClass::Speech => "speech",
        _ => "ambient",
    }
}

/// (pipeline, truth, predicted) for an event, when the labels say something about it.
fn judge(e: &InferenceEvent, truth: &SoundTrace) -> Option<(&'static str, String, String)> {
    let seg = segment_at(truth, 0.5 * (e.t_start + e.t_end))?;
    let (speaker, emotion) = label_parts(seg);
    match &e.kind {
        EventKind::Silence => Some(("speech_filter", speech_category(seg.class).into(), "silence".into())),
        EventKind::Ambient { class } => match class {
            Some(c) if seg.class.is_ambient() => Some(("ambient", seg.class.name().into(), c.name().into())),
            Some(_) | None => Some(("speech_filter", speech_category(seg.class).into(), "ambient".into())),
        },
        EventKind::Gender { .. } => Some(("speech_filter", speech_category(seg.class).into(), "speech".into())),
        EventKind::Emotion { broad, .. } => {
            let t = NarrowEmotion::parse(emotion?)?;
            Some(("emotion", snake(&t.broad()), snake(broad)))
        }
        EventKind::Speaker { id } => Some((
            "speaker",
            speaker?.to_string(),
            id.clone().unwrap_or_else(|| "unknown".into()),
        )),
        EventKind::SpeakerCount { .. } => None,
    }
}

fn rel(root: &Path, dir: &Path) -> String {
    let r = dir.strip_prefix(root).unwrap_or(dir);
    let s = r.display().to_string();
    if s.is_empty() {
        ".".into()
    } else {
        s
    }
}

impl Tables {
    fn add_run(&mut self, source: &str, dir: &Path) -> Result<()> {
        let record = RunRecord::load(&dir.join(RUN_FILE))?;
        let events = read_events(dir.join(EVENTS_FILE))?;
        let stats = read_gate_stats(dir.join(GATE_STATS_FILE))?;
        let counts = InvocationCounts::read_csv(dir.join(INVOCATIONS_FILE))?;
        for (stage, n) in &counts.0 {
            self.invocations.push(InvocationEntry {
                source: source.into(),
                stage: stage.name().into(),
                count: *n,
            });
        }
        let labels = dir.join(LABELS_FILE);
        let mut correct: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        if labels.is_file() {
            let truth = SoundTrace::read_csv(&labels)?;
            self.summary.labelled_runs += 1;
            for e in &events {
                if let Some((pipeline, t, p)) = judge(e, &truth) {
                    let c = correct.entry(pipeline).or_default();
                    c.0 += usize::from(t == p);
                    c.1 += 1;
                    *self
                        .confusion
                        .entry(pipeline.into())
                        .or_default()
                        .entry((source.into(), t, p))
                        .or_default() += 1;
                }
            }
        }
        for (detector, s) in stats {
            let accuracy = correct
                .get(detector.as_str())
                .filter(|(_, n)| *n > 0)
                .map(|(k, n)| *k as f64 / *n as f64);
            self.savings.push(SavingsEntry {
                source: source.into(),
                threshold_deg: record.threshold_deg(&detector),
                detector,
                propagated: s.propagated,
                classified: s.classified,
                saved_fraction: s.saved_fraction(),
                accuracy,
            });
        }
        self.summary.runs += 1;
        Ok(())
    }

    fn add_file(&mut self, source: &str, path: &Path) -> Result<bool> {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        match name {
            SIMULATION_FILE => {
                let r = SimulationRecord::load(path)?;
                self.lifetime.push(LifetimeEntry {
                    source: source.into(),
                    origin: "simulate".into(),
                    variant: r.variant.name().into(),
                    speech_h: r.speech_h,
                    lifetime_h: r.lifetime_h,
                });
                self.summary.simulations += 1;
            }
            LIFETIME_FILE => {
                for r in read_lifetime_csv(path)? {
                    self.lifetime.push(LifetimeEntry {
                        source: source.into(),
                        origin: "sweep".into(),
                        variant: r.variant.name().into(),
                        speech_h: r.speech_h,
                        lifetime_h: r.lifetime_h,
                    });
                }
                self.summary.sweeps += 1;
            }
            WAKEUP_FILE => {
                for r in read_wakeup_csv(path)? {
                    self.wakeup.push(WakeupEntry {
                        source: source.into(),
                        mem_limit_mb: r.mem_limit_bytes / dspear::energysim::MIB,
                        saving: r.saving,
                        delta_t_s: r.delta_t_s,
                        minutes: r.minutes,
                    });
                }
            }
            CROSSOVER_FILE => {
                let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                let c: Crossover = serde_json::from_str(&text)?;
                self.crossover.push(CrossoverEntry {
                    source: source.into(),
                    a: c.a.name().into(),
                    b: c.b.name().into(),
                    silence_h: c.silence_h,
                    speech_h: c.speech_h,
                });
            }
            RUN_FILE => self.add_run(source, path.parent().unwrap_or(Path::new(".")))?,
            MANIFEST_FILE => {
                let bundle = ModelBundle::load(path.parent().unwrap_or(Path::new(".")))?;
                for (name, e) in bundle.entries() {
                    self.models.push(ModelEntry {
                        source: source.into(),
                        name: name.into(),
                        role: e.role.name().into(),
                        placement: snake(&e.placement),
                        bytes: e.model.size_bytes()?,
                    });
                }
                self.summary.bundles += 1;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn write_table<T: Serialize>(dir: &Path, name: &str, rows: &[T], written: &mut Vec<String>) -> Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    written.push(name.to_string());
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig, outputs: &Path) -> Result<()> {
    if !outputs.is_dir() {
        return Err(CliError::Config(format!("outputs directory {} not found", outputs.display())));
    }
    let mut t = Tables::default();
    let mut found = 0;
    let mut files: Vec<PathBuf> = WalkDir::new(outputs)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();
    files.sort();
    for path in &files {
        let source = rel(outputs, path.parent().unwrap_or(outputs));
        if t.add_file(&source, path)? {
            found += 1;
        }
    }
    if t.summary.runs + t.summary.simulations + t.summary.sweeps == 0 {
        return Err(CliError::Data(format!(
            "no run, simulation or sweep outputs under {} ({found} other inputs)",
            outputs.display()
        )));
    }

    t.lifetime.sort_by(|a, b| {
        (&a.source, &a.origin, &a.variant)
            .cmp(&(&b.source, &b.origin, &b.variant))
            .then(a.speech_h.total_cmp(&b.speech_h))
    });
    cfg.create_out()?;
    let out = &cfg.out;
    let mut written = Vec::new();
    write_table(out, LIFETIME_TABLE, &t.lifetime, &mut written)?;
    write_table(out, WAKEUP_TABLE, &t.wakeup, &mut written)?;
    write_table(out, CROSSOVER_TABLE, &t.crossover, &mut written)?;
    write_table(out, SAVINGS_TABLE, &t.savings, &mut written)?;
    write_table(out, INVOCATION_TABLE, &t.invocations, &mut written)?;
    write_table(out, MODELS_TABLE, &t.models, &mut written)?;
    for (pipeline, cells) in &t.confusion {
        let rows: Vec<ConfusionEntry> = cells
            .iter()
            .map(|((source, truth, predicted), count)| ConfusionEntry {
                source: source.clone(),
                truth: truth.clone(),
                predicted: predicted.clone(),
                count: *count,
            })
            .collect();
        write_table(out, &format!("confusion_{pipeline}.csv"), &rows, &mut written)?;
    }
    t.summary.tables = written.clone();
    let path = out.join(SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&t.summary)?).map_err(|e| io_err(&path, e))?;
    println!(
        "report: {} simulations, {} sweeps, {} runs ({} labelled), {} bundles -> {} tables in {}",
        t.summary.simulations,
        t.summary.sweeps,
        t.summary.runs,
        t.summary.labelled_runs,
        t.summary.bundles,
        written.len(),
        out.display()
    );
    Ok(())
}
