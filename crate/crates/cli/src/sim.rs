//! `dspear simulate` and `dspear sweep`: the energy model from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dspear::audio_io::{SoundClass, SoundTrace};
use dspear::energysim::{
    crossover_speech_hours, simulate_counts, simulate_day_with, sweep_speech_hours,
    wakeup_time_vs_memory, write_lifetime_csv, DayResult, SimOptions, Stage, SystemVariant, WakeupRow,
    Workload, MIB, SWEEP_SILENCE_H,
};
use dspear::pipelines::InvocationCounts;

use crate::config::{parse_variant, RunConfig};
use crate::error::{io_err, CliError, Result};

pub const SIMULATION_FILE: &str = "simulation.json";
pub const LIFETIME_FILE: &str = "lifetime.csv";
pub const WAKEUP_FILE: &str = "wakeup.csv";
pub const CROSSOVER_FILE: &str = "crossover.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadArg {
    /// Every pipeline behind the admission filters.
    Full,
    /// Speaker counting alone on every second of audio.
    SpeakerCounting,
}

impl WorkloadArg {
    fn options(self) -> SimOptions {
        match self {
            WorkloadArg::Full => SimOptions::default(),
            WorkloadArg::SpeakerCounting => SimOptions {
                workload: Workload::speaker_counting(),
                ..SimOptions::default()
            },
        }
    }
}

/// Where the simulated audio comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimSource {
    SyntheticDay { speech_h: f64, silence_h: f64 },
    /// All of the given hours are speech.
    SpeechOnly { hours: f64 },
    Trace { path: String },
    Counts { path: String, duration_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub variant: SystemVariant,
    pub workload: WorkloadArg,
    pub source: SimSource,
    pub speech_h: f64,
    pub total_h: f64,
    pub lifetime_h: f64,
    pub average_power_mw: f64,
    pub result: DayResult,
}

impl SimulationRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub speech_h: f64,
    pub silence_h: f64,
    pub speech_only: bool,
    pub counts: Option<PathBuf>,
    pub duration_s: Option<f64>,
    pub workload: Option<WorkloadArg>,
}

pub fn cmd_simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<()> {
    let table = cfg.power_table()?;
    let workload = args.workload.unwrap_or(WorkloadArg::Full);
    let opts = workload.options();
    let (source, result, speech_s) = if let Some(path) = &args.counts {
        let duration_s = args
            .duration_s
            .ok_or_else(|| CliError::Config("--counts needs --duration-s".into()))?;
        if !path.is_file() {
            return Err(CliError::Config(format!("counts file {} not found", path.display())));
        }
        let counts = InvocationCounts::read_csv(path)?;
        let r = simulate_counts(&counts, duration_s, cfg.variant, &table, &cfg.offload, &opts)?;
        let speech_s = r
            .ledger
            .stage_seconds
            .iter()
            .filter(|(s, _)| *s == Stage::Plp)
            .map(|(_, x)| *x)
            .sum::<f64>();
        let src = SimSource::Counts {
            path: path.display().to_string(),
            duration_s,
        };
        (src, r, speech_s)
    } else {
        let (src, trace) = match &cfg.trace {
            Some(p) => (SimSource::Trace { path: p.display().to_string() }, SoundTrace::read_csv(p)?),
            None if args.speech_only => {
                let mut t = SoundTrace::default();
                t.push(args.speech_h * 3600.0, SoundClass::Speech);
                (SimSource::SpeechOnly { hours: args.speech_h }, t)
            }
            None => (
                SimSource::SyntheticDay {
                    speech_h: args.speech_h,
                    silence_h: args.silence_h,
                },
                SoundTrace::synthetic_day(args.speech_h, args.silence_h, cfg.seed)?,
            ),
        };
        let r = simulate_day_with(&trace, cfg.variant, &table, &cfg.offload, &opts)?;
        (src, r, trace.seconds_of(SoundClass::Speech))
    };
    let record = SimulationRecord {
        variant: cfg.variant,
        workload,
        source,
        speech_h: speech_s / 3600.0,
        total_h: result.ledger.duration_s / 3600.0,
        lifetime_h: result.lifetime_h,
        average_power_mw: result.ledger.average_power_mw(),
        result,
    };
    cfg.create_out()?;
    let path = cfg.out.join(SIMULATION_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&record)?).map_err(|e| io_err(&path, e))?;
    println!(
        "simulate: {} lifetime {:.2} h at {:.1} mW ({} wake-ups) -> {}",
        record.variant,
        record.lifetime_h,
        record.average_power_mw,
        record.result.ledger.wakeup_count,
        path.display()
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub hours: Vec<f64>,
    pub variants: Vec<String>,
    pub mem_mb: Vec<f64>,
    pub savings: Vec<f64>,
    pub workload: Option<WorkloadArg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub a: SystemVariant,
    pub b: SystemVariant,
    pub silence_h: f64,
    pub speech_h: Option<f64>,
}

pub fn write_wakeup_csv(path: &Path, rows: &[WakeupRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_wakeup_csv(path: &Path) -> Result<Vec<WakeupRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<WakeupRow>, _>>()?)
}

pub fn cmd_sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<()> {
    let table = cfg.power_table()?;
    let opts = args.workload.unwrap_or(WorkloadArg::Full).options();
    let variants = if args.variants.is_empty() {
        SystemVariant::ALL.to_vec()
    } else {
        args.variants.iter().map(|v| parse_variant(v)).collect::<Result<Vec<_>>>()?
    };
    let rows = sweep_speech_hours(&args.hours, &variants, &table, &cfg.offload, &opts, cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mems: Vec<f64> = args.mem_mb.iter().map(|m| m * MIB).collect();
    let wake = wakeup_time_vs_memory(&mems, &args.savings, &cfg.offload)?;
    let (a, b) = (SystemVariant::DspCpuNaive, SystemVariant::CpuOnlyOptimized);
    let crossover = Crossover {
        a,
        b,
        silence_h: SWEEP_SILENCE_H,
        speech_h: crossover_speech_hours(a, b, &table, &cfg.offload, &opts, cfg.seed)?,
    };

    cfg.create_out()?;
    write_lifetime_csv(cfg.out.join(LIFETIME_FILE), &rows)?;
    write_wakeup_csv(&cfg.out.join(WAKEUP_FILE), &wake)?;
    let path = cfg.out.join(CROSSOVER_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&crossover)?).map_err(|e| io_err(&path, e))?;
    match crossover.speech_h {
        Some(h) => println!(
            "sweep: {} lifetime rows, {} wake-up rows; {a} stops outlasting {b} at {h:.2} h speech -> {}",
            rows.len(),
            wake.len(),
            cfg.out.display()
        ),
        None => println!(
            "sweep: {} lifetime rows, {} wake-up rows; no crossover -> {}",
            rows.len(),
            wake.len(),
            cfg.out.display()
        ),
    }
    Ok(())
}
