use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{delta_t, OffloadParams, PowerTable, Processor, Stage, SystemVariant};
use crate::audio_io::{SoundClass, SoundTrace};
use crate::error::{Error, Result};
use crate::pipelines::InvocationCounts;

/// Which pipelines run during the simulated day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub admission: bool,
    pub ambient: bool,
    pub speaker_count: bool,
    pub emotion: bool,
    pub speaker_id: bool,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            admission: true,
            ambient: true,
            speaker_count: true,
            emotion: true,
            speaker_id: true,
        }
    }
}

impl Workload {
    /// Speaker counting alone, running on every second.
    pub fn speaker_counting() -> Self {
        Self {
            admission: false,
            ambient: false,
            speaker_count: true,
            emotion: false,
            speaker_id: false,
        }
    }

    fn buffers_plp(&self) -> bool {
        self.emotion || self.speaker_id
    }
}

/// Knobs of the analytic model beyond the offload parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub workload: Workload,
    /// Fraction of ambient classifications skipped by the similarity detector.
    pub ambient_saving: f64,
    /// Fraction of classified emotion windows settled by the neutral gate.
    pub neutral_fraction: f64,
    pub emotion_models: usize,
    pub neutral_gate_models: usize,
    pub non_neutral_models: usize,
    pub speaker_models: usize,
    /// Energy of background apps as a fraction of the sensing energy.
    pub third_party_fraction: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            workload: Workload::default(),
            ambient_saving: 0.5,
            neutral_fraction: 0.6,
            emotion_models: 14,
            neutral_gate_models: 2,
            non_neutral_models: 8,
            speaker_models: 22,
            third_party_fraction: 0.0,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if !frac(self.ambient_saving) || !frac(self.neutral_fraction) || !(self.third_party_fraction >= 0.0)
        {
            return Err(Error::Config(format!("invalid simulation options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancySample {
    pub t_s: f64,
    pub bytes: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub variant: Option<SystemVariant>,
    pub duration_s: f64,
    pub mic_j: f64,
    pub dsp_compute_j: f64,
    pub cpu_compute_j: f64,
    pub cpu_awake_j: f64,
    pub wakeups_j: f64,
    pub idle_tail_j: f64,
    pub standby_j: f64,
    pub third_party_j: f64,
    pub wakeup_count: u64,
    pub stage_seconds: Vec<(Stage, f64)>,
    pub occupancy: Vec<OccupancySample>,
    /// Mean wall-clock interval between wakes minus the speech needed to fill the buffer.
    pub observed_gamma_s: Option<f64>,
}

impl EnergyLedger {
    pub fn components(&self) -> [(&'static str, f64); 8] {
        [
            ("mic", self.mic_j),
            ("dsp_compute", self.dsp_compute_j),
            ("cpu_compute", self.cpu_compute_j),
            ("cpu_awake", self.cpu_awake_j),
            ("wakeups", self.wakeups_j),
            ("idle_tail", self.idle_tail_j),
            ("standby", self.standby_j),
            ("third_party", self.third_party_j),
        ]
    }

    pub fn total_j(&self) -> f64 {
        self.components().iter().map(|(_, j)| j).sum()
    }

    pub fn average_power_mw(&self) -> f64 {
        self.total_j() / self.duration_s * 1000.0
    }

    pub fn lifetime_h(&self, battery_j: f64) -> f64 {
        battery_j / self.total_j() * self.duration_s / 3600.0
    }

    fn charge(&mut self, table: &PowerTable, proc: Processor, stage: Stage, seconds: f64) -> Result<()> {
        if seconds <= 0.0 {
            return Ok(());
        }
        let j = table.stage_energy(stage, proc, seconds)?;
        match proc {
            Processor::Dsp => self.dsp_compute_j += j,
            Processor::Cpu => self.cpu_compute_j += j,
        }
        match self.stage_seconds.iter_mut().find(|(s, _)| *s == stage) {
            Some((_, s)) => *s += seconds,
            None => self.stage_seconds.push((stage, seconds)),
        }
        Ok(())
    }

    fn charge_base(&mut self, table: &PowerTable, dsp: bool, seconds: f64) {
        let p = &table.platform;
        if dsp {
            self.standby_j += p.cpu_standby_mw * seconds / 1000.0;
            self.mic_j += p.dsp_mic_mw * seconds / 1000.0;
        } else {
            self.cpu_awake_j += p.cpu_awake_mw * seconds / 1000.0;
            self.mic_j += p.cpu_mic_mw * seconds / 1000.0;
        }
    }

    fn finish(&mut self, table: &PowerTable, cpu_busy_s: f64, opts: &SimOptions) {
        let p = &table.platform;
        self.cpu_awake_j += p.cpu_awake_mw * cpu_busy_s * p.awake_discount / 1000.0;
        let n = self.wakeup_count as f64;
        self.wakeups_j += n * p.wakeup_power_mw * p.wakeup_s * p.awake_discount / 1000.0;
        self.idle_tail_j += n * p.cpu_awake_mw * p.idle_tail_s * p.awake_discount / 1000.0;
        self.third_party_j = opts.third_party_fraction * self.total_j();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResult {
    pub ledger: EnergyLedger,
    pub lifetime_h: f64,
}

impl DayResult {
    fn new(ledger: EnergyLedger, table: &PowerTable) -> Self {
        let lifetime_h = ledger.lifetime_h(table.platform.battery_joules());
        Self { ledger, lifetime_h }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Stage-seconds charged for `seconds` of audio of one class.
fn analytic_charges(
    class: SoundClass,
    seconds: f64,
    variant: SystemVariant,
    opts: &SimOptions,
    params: &OffloadParams,
) -> Vec<(Stage, f64)> {
    let w = &opts.workload;
    let mut out = Vec::new();
    if w.admission {
        out.push((Stage::SilenceFilter, seconds));
        if class != SoundClass::Silence {
            out.push((Stage::SpeechFilter, seconds));
            out.push((Stage::AmbientFeatures, seconds));
        }
    }
    let opt = variant.optimized();
    if class.is_ambient() && w.ambient {
        let saving = if opt { opts.ambient_saving } else { 0.0 };
        out.push((Stage::AmbientGmm, 4.0 * (1.0 - saving) * seconds));
    }
    if class == SoundClass::Speech {
        if w.speaker_count {
            out.push((Stage::SpeakerCount, seconds));
        }
        if w.buffers_plp() {
            out.push((Stage::Plp, seconds));
        }
        if w.emotion {
            if opt {
                let classified = 1.0 - params.sim_save_emotion;
                out.push((
                    Stage::NeutralGmm,
                    classified * opts.neutral_gate_models as f64 * seconds,
                ));
                out.push((
                    Stage::EmotionGmm,
                    classified * (1.0 - opts.neutral_fraction) * opts.non_neutral_models as f64 * seconds,
                ));
            } else {
                out.push((Stage::EmotionGmm, opts.emotion_models as f64 * seconds));
            }
        }
        if w.speaker_id {
            let (classified, models) = if opt {
                (1.0 - params.sim_save_speaker, (opts.speaker_models / 2) as f64)
            } else {
                (1.0, opts.speaker_models as f64)
            };
            out.push((Stage::SpeakerGmm, classified * models * seconds));
        }
    }
    out
}

fn cpu_runtime_s(table: &PowerTable, variant: SystemVariant, charges: &[(Stage, f64)]) -> f64 {
    charges
        .iter()
        .filter(|(s, _)| variant.placement(*s) == Processor::Cpu)
        .filter_map(|(s, ss)| table.cost(*s, Processor::Cpu).ok().map(|c| c.runtime_ms_per_s / 1000.0 * ss))
        .sum()
}

/// DSP feature buffer that wakes the CPU when full.
struct Buffer {
    capacity: f64,
    rate: f64,
    occupied: f64,
    last_wake_t: f64,
    intervals: Vec<f64>,
}

impl Buffer {
    fn new(params: &OffloadParams, variant: SystemVariant) -> Self {
        let saving = if variant.optimized() { params.min_saving() } else { 0.0 };
        Self {
            capacity: params.mem_limit_bytes - params.mem_static_bytes,
            rate: params.plp_bytes_per_window / (params.tau_s * (1.0 + saving)),
            occupied: 0.0,
            last_wake_t: 0.0,
            intervals: Vec::new(),
        }
    }

    fn fill_seconds(&self) -> f64 {
        self.capacity / self.rate
    }

    /// Accrues `seconds` of speech starting at `t0`.
    fn accrue(&mut self, t0: f64, seconds: f64, ledger: &mut EnergyLedger) {
        let mut t = t0;
        let mut left = seconds;
        while left > 0.0 {
            let to_full = (self.capacity - self.occupied) / self.rate;
            if to_full <= left {
                t += to_full;
                left -= to_full;
                self.occupied = self.capacity;
                self.wake(t, ledger);
            } else {
                self.occupied += left * self.rate;
                break;
            }
        }
    }

    fn wake(&mut self, t: f64, ledger: &mut EnergyLedger) {
        ledger.occupancy.push(OccupancySample {
            t_s: t,
            bytes: self.occupied,
        });
        ledger.occupancy.push(OccupancySample { t_s: t, bytes: 0.0 });
        ledger.wakeup_count += 1;
        self.intervals.push(t - self.last_wake_t);
        self.last_wake_t = t;
        self.occupied = 0.0;
    }
}

pub fn simulate_day(
    trace: &SoundTrace,
    variant: SystemVariant,
    table: &PowerTable,
    params: &OffloadParams,
) -> Result<DayResult> {
    simulate_day_with(trace, variant, table, params, &SimOptions::default())
}

/// Walks the trace, charging every segment on the processors the variant uses.
pub fn simulate_day_with(
    trace: &SoundTrace,
    variant: SystemVariant,
    table: &PowerTable,
    params: &OffloadParams,
    opts: &SimOptions,
) -> Result<DayResult> {
    trace.validate(None)?;
    params.validate()?;
    opts.validate()?;
    let dsp = variant.uses_dsp();
    let mut ledger = EnergyLedger {
        variant: Some(variant),
        ..Default::default()
    };
    let mut buffer = Buffer::new(params, variant);
    let mut cpu_busy_s = 0.0;
    let mut t = 0.0;
    for seg in &trace.segments {
        let secs = seg.duration_s;
        ledger.charge_base(table, dsp, secs);
        let charges = analytic_charges(seg.class, secs, variant, opts, params);
        for (stage, ss) in &charges {
            ledger.charge(table, variant.placement(*stage), *stage, *ss)?;
        }
        if dsp {
            let cpu_s = cpu_runtime_s(table, variant, &charges);
            cpu_busy_s += cpu_s.min(secs);
            if seg.class == SoundClass::Speech && cpu_s > 0.0 {
                buffer.accrue(t, secs, &mut ledger);
            }
        }
        t += secs;
    }
    if buffer.occupied > 0.0 {
        buffer.wake(t, &mut ledger);
    }
    ledger.duration_s = t;
    if !buffer.intervals.is_empty() && ledger.wakeup_count > 1 {
        let full = &buffer.intervals[..buffer.intervals.len() - 1];
        if !full.is_empty() {
            let mean = full.iter().sum::<f64>() / full.len() as f64;
            ledger.observed_gamma_s = Some(mean - buffer.fill_seconds());
        }
    }
    ledger.finish(table, cpu_busy_s, opts);
    Ok(DayResult::new(ledger, table))
}

/// Energy of a real orchestrator run, from its invocation counts.
pub fn simulate_counts(
    counts: &InvocationCounts,
    duration_s: f64,
    variant: SystemVariant,
    table: &PowerTable,
    params: &OffloadParams,
    opts: &SimOptions,
) -> Result<DayResult> {
    params.validate()?;
    opts.validate()?;
    if !(duration_s > 0.0) {
        return Err(Error::InconsistentTrace(format!("duration {duration_s} s")));
    }
    let dsp = variant.uses_dsp();
    let mut ledger = EnergyLedger {
        variant: Some(variant),
        duration_s,
        ..Default::default()
    };
    ledger.charge_base(table, dsp, duration_s);
    let charges: Vec<(Stage, f64)> = Stage::ALL
        .into_iter()
        .filter(|s| *s != Stage::CrowdFinalize)
        .map(|s| (s, counts.get(s) as f64 * s.unit_seconds()))
        .filter(|(_, ss)| *ss > 0.0)
        .collect();
    for (stage, ss) in &charges {
        ledger.charge(table, variant.placement(*stage), *stage, *ss)?;
    }
    let mut cpu_busy_s = 0.0;
    if dsp {
        let speech_s = (counts.get(Stage::Plp) as f64 * Stage::Plp.unit_seconds())
            .max(counts.get(Stage::SpeakerCount) as f64 * Stage::SpeakerCount.unit_seconds());
        let cpu_s = cpu_runtime_s(table, variant, &charges);
        cpu_busy_s = cpu_s.min(speech_s);
        if cpu_s > 0.0 {
            let mut buffer = Buffer::new(params, variant);
            let plp_s = counts.get(Stage::Plp) as f64 * Stage::Plp.unit_seconds();
            buffer.accrue(0.0, plp_s, &mut ledger);
            if buffer.occupied > 0.0 {
                buffer.wake(plp_s, &mut ledger);
            }
        }
    }
    ledger.finish(table, cpu_busy_s, opts);
    Ok(DayResult::new(ledger, table))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeRow {
    pub variant: SystemVariant,
    pub speech_h: f64,
    pub lifetime_h: f64,
}

pub const SWEEP_SILENCE_H: f64 = 8.0;
pub const MAX_SWEEP_SPEECH_H: f64 = 24.0 - SWEEP_SILENCE_H;

fn day_lifetime(
    speech_h: f64,
    variant: SystemVariant,
    table: &PowerTable,
    params: &OffloadParams,
    opts: &SimOptions,
    seed: u64,
) -> Result<f64> {
    if !(0.0..=MAX_SWEEP_SPEECH_H).contains(&speech_h) {
        return Err(Error::InconsistentTrace(format!(
            "{speech_h} h of speech does not fit beside {SWEEP_SILENCE_H} h of silence"
        )));
    }
    let trace = SoundTrace::synthetic_day(speech_h, SWEEP_SILENCE_H, seed)?;
    Ok(simulate_day_with(&trace, variant, table, params, opts)?.lifetime_h)
}

/// Lifetime per (variant, speech hours) with silence fixed at a third of the day.
pub fn sweep_speech_hours(
    hours: &[f64],
    variants: &[SystemVariant],
    table: &PowerTable,
    params: &OffloadParams,
    opts: &SimOptions,
    seed: u64,
) -> Result<Vec<LifetimeRow>> {
    let mut rows = Vec::with_capacity(hours.len() * variants.len());
    for &variant in variants {
        for &speech_h in hours {
            rows.push(LifetimeRow {
                variant,
                speech_h,
                lifetime_h: day_lifetime(speech_h, variant, table, params, opts, seed)?,
            });
        }
    }
    Ok(rows)
}

/// Speech hours at which `a` stops outlasting `b`, found by bisection.
pub fn crossover_speech_hours(
    a: SystemVariant,
    b: SystemVariant,
    table: &PowerTable,
    params: &OffloadParams,
    opts: &SimOptions,
    seed: u64,
) -> Result<Option<f64>> {
    let diff = |h: f64| -> Result<f64> {
        Ok(day_lifetime(h, a, table, params, opts, seed)?
            - day_lifetime(h, b, table, params, opts, seed)?)
    };
    let (mut lo, mut hi) = (0.0, MAX_SWEEP_SPEECH_H);
    if diff(lo)? <= 0.0 || diff(hi)? > 0.0 {
        return Ok(None);
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if diff(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WakeupRow {
    pub mem_limit_bytes: f64,
    pub saving: f64,
    pub delta_t_s: f64,
    pub minutes: f64,
}

/// Time between wakes for each memory limit and similarity saving.
pub fn wakeup_time_vs_memory(
    mem_limits: &[f64],
    savings: &[f64],
    base: &OffloadParams,
) -> Result<Vec<WakeupRow>> {
    let mut rows = Vec::new();
    for &m in mem_limits {
        if !(m > 0.0) {
            return Err(Error::Config(format!("memory limit {m} must be positive")));
        }
        for &s in savings {
            let p = OffloadParams {
                mem_limit_bytes: m,
                ..base.with_savings(s)
            };
            let dt = delta_t(&p);
            rows.push(WakeupRow {
                mem_limit_bytes: m,
                saving: s,
                delta_t_s: dt,
                minutes: dt / 60.0,
            });
        }
    }
    Ok(rows)
}

pub fn write_lifetime_csv(path: impl AsRef<Path>, rows: &[LifetimeRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    w.write_record(["variant", "speech_h", "lifetime_h"])
        .map_err(|e| Error::Csv(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            r.speech_h.to_string(),
            r.lifetime_h.to_string(),
        ])
        .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_lifetime_csv(path: impl AsRef<Path>) -> Result<Vec<LifetimeRow>> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(|e| Error::Csv(e.to_string()))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Csv(format!("bad number `{}`", &rec[i])))
        };
        rows.push(LifetimeRow {
            variant: SystemVariant::parse(&rec[0])
                .ok_or_else(|| Error::Csv(format!("unknown variant `{}`", &rec[0])))?,
            speech_h: num(1)?,
            lifetime_h: num(2)?,
        });
    }
    Ok(rows)
}
