//! Energy model of the DSP+CPU split: per-stage costs, buffered offloading,
//! wake-up accounting and battery lifetime.

mod sim;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::error::{Error, Result};

pub use sim::{
    crossover_speech_hours, simulate_counts, simulate_day, simulate_day_with, sweep_speech_hours,
    wakeup_time_vs_memory, write_lifetime_csv, read_lifetime_csv, DayResult, EnergyLedger,
    LifetimeRow, OccupancySample, SimOptions, WakeupRow, Workload, MAX_SWEEP_SPEECH_H, SWEEP_SILENCE_H,
};

const DEFAULT_CONSTANTS: &str = include_str!("../../data/power_constants.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SilenceFilter,
    SpeechFilter,
    AmbientFeatures,
    AmbientGmm,
    SpeakerCount,
    Plp,
    NeutralGmm,
    EmotionGmm,
    SpeakerGmm,
    CrowdFinalize,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::SilenceFilter,
        Stage::SpeechFilter,
        Stage::AmbientFeatures,
        Stage::AmbientGmm,
        Stage::SpeakerCount,
        Stage::Plp,
        Stage::NeutralGmm,
        Stage::EmotionGmm,
        Stage::SpeakerGmm,
        Stage::CrowdFinalize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SilenceFilter => "silence_filter",
            Stage::SpeechFilter => "speech_filter",
            Stage::AmbientFeatures => "ambient_features",
            Stage::AmbientGmm => "ambient_gmm",
            Stage::SpeakerCount => "speaker_count",
            Stage::Plp => "plp",
            Stage::NeutralGmm => "neutral_gmm",
            Stage::EmotionGmm => "emotion_gmm",
            Stage::SpeakerGmm => "speaker_gmm",
            Stage::CrowdFinalize => "crowd_finalize",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Seconds of audio covered by one invocation.
    pub fn unit_seconds(self) -> f64 {
        match self {
            Stage::SilenceFilter => 0.032,
            Stage::SpeechFilter | Stage::AmbientFeatures | Stage::AmbientGmm => 1.28,
            Stage::SpeakerCount => 3.0,
            Stage::Plp | Stage::NeutralGmm | Stage::EmotionGmm | Stage::SpeakerGmm => 5.0,
            Stage::CrowdFinalize => 0.0,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Processor {
    Dsp,
    Cpu,
}

impl Processor {
    pub fn name(self) -> &'static str {
        match self {
            Processor::Dsp => "dsp",
            Processor::Cpu => "cpu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dsp" => Some(Processor::Dsp),
            "cpu" => Some(Processor::Cpu),
            _ => None,
        }
    }
}

/// Cost of processing one second of audio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub runtime_ms_per_s: f64,
    pub power_mw: f64,
}

impl StageCost {
    /// Power averaged over a second of audio.
    pub fn average_mw(&self) -> f64 {
        self.power_mw * self.runtime_ms_per_s / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformConstants {
    pub cpu_awake_mw: f64,
    pub cpu_mic_mw: f64,
    pub dsp_mic_mw: f64,
    pub cpu_standby_mw: f64,
    pub wakeup_power_mw: f64,
    pub wakeup_s: f64,
    pub idle_tail_s: f64,
    /// Fraction of wake and awake costs charged, since the CPU is already on half the time.
    pub awake_discount: f64,
    pub battery_mah: f64,
    pub battery_v: f64,
}

impl PlatformConstants {
    /// CPU held awake with the microphone open.
    pub fn cpu_wakelock_mic_mw(&self) -> f64 {
        self.cpu_awake_mw + self.cpu_mic_mw
    }

    pub fn battery_joules(&self) -> f64 {
        self.battery_mah * self.battery_v * 3.6
    }
}

/// Per-stage runtime and power on each processor plus platform constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub stages: BTreeMap<(Stage, Processor), StageCost>,
    pub platform: PlatformConstants,
}

const PLATFORM_KEYS: [&str; 10] = [
    "cpu_awake_mw",
    "cpu_mic_mw",
    "dsp_mic_mw",
    "cpu_standby_mw",
    "wakeup_power_mw",
    "wakeup_s",
    "idle_tail_s",
    "awake_discount",
    "battery_mah",
    "battery_v",
];

impl PowerTable {
    /// The checked-in constants.
    pub fn default_table() -> Self {
        Self::parse(DEFAULT_CONSTANTS).expect("embedded constants parse")
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut platform = BTreeMap::new();
        let mut rows: BTreeMap<(Stage, Processor), (Option<f64>, Option<f64>)> = BTreeMap::new();
        for key in kv.keys() {
            let parts: Vec<&str> = key.split('.').collect();
            let value = kv.f64(key)?.expect("key present");
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("`{key}` must be positive")));
            }
            match parts.as_slice() {
                ["platform", name] if PLATFORM_KEYS.contains(name) => {
                    platform.insert(name.to_string(), value);
                }
                [stage, proc, field] => {
                    let stage = Stage::parse(stage)
                        .ok_or_else(|| Error::UnknownStage(stage.to_string()))?;
                    let proc = Processor::parse(proc)
                        .ok_or_else(|| Error::Config(format!("unknown processor in `{key}`")))?;
                    let row = rows.entry((stage, proc)).or_default();
                    match *field {
                        "runtime_ms" => row.0 = Some(value),
                        "power_mw" => row.1 = Some(value),
                        _ => return Err(Error::Config(format!("unknown field in `{key}`"))),
                    }
                }
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            }
        }
        let mut stages = BTreeMap::new();
        for stage in Stage::ALL.into_iter().filter(|s| *s != Stage::CrowdFinalize) {
            for proc in [Processor::Dsp, Processor::Cpu] {
                let Some((Some(runtime_ms_per_s), Some(power_mw))) = rows.remove(&(stage, proc))
                else {
                    return Err(Error::Config(format!(
                        "missing runtime_ms or power_mw for {}.{}",
                        stage.name(),
                        proc.name()
                    )));
                };
                stages.insert(
                    (stage, proc),
                    StageCost {
                        runtime_ms_per_s,
                        power_mw,
                    },
                );
            }
        }
        if let Some(((stage, _), _)) = rows.into_iter().next() {
            return Err(Error::Config(format!("{} is not a costed stage", stage.name())));
        }
        let get = |k: &str| {
            platform
                .get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing platform.{k}")))
        };
        let platform = PlatformConstants {
            cpu_awake_mw: get("cpu_awake_mw")?,
            cpu_mic_mw: get("cpu_mic_mw")?,
            dsp_mic_mw: get("dsp_mic_mw")?,
            cpu_standby_mw: get("cpu_standby_mw")?,
            wakeup_power_mw: get("wakeup_power_mw")?,
            wakeup_s: get("wakeup_s")?,
            idle_tail_s: get("idle_tail_s")?,
            awake_discount: get("awake_discount")?,
            battery_mah: get("battery_mah")?,
            battery_v: get("battery_v")?,
        };
        if platform.awake_discount > 1.0 {
            return Err(Error::Config("platform.awake_discount must be at most 1".into()));
        }
        Ok(Self { stages, platform })
    }

    /// Renders the table in the constants-file format.
    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::default();
        for ((stage, proc), cost) in &self.stages {
            let prefix = format!("{}.{}", stage.name(), proc.name());
            kv.set(format!("{prefix}.runtime_ms"), toml::Value::Float(cost.runtime_ms_per_s));
            kv.set(format!("{prefix}.power_mw"), toml::Value::Float(cost.power_mw));
        }
        let p = &self.platform;
        let values = [
            p.cpu_awake_mw,
            p.cpu_mic_mw,
            p.dsp_mic_mw,
            p.cpu_standby_mw,
            p.wakeup_power_mw,
            p.wakeup_s,
            p.idle_tail_s,
            p.awake_discount,
            p.battery_mah,
            p.battery_v,
        ];
        for (k, v) in PLATFORM_KEYS.iter().zip(values) {
            kv.set(format!("platform.{k}"), toml::Value::Float(v));
        }
        kv.to_text()
    }

    pub fn cost(&self, stage: Stage, proc: Processor) -> Result<StageCost> {
        self.stages
            .get(&(stage, proc))
            .copied()
            .ok_or_else(|| Error::UnknownStage(stage.name().to_string()))
    }

    /// Runtime of one invocation, or 0 for stages without a cost row.
    pub fn unit_runtime_ms(&self, stage: Stage, proc: Processor) -> f64 {
        self.stages
            .get(&(stage, proc))
            .map_or(0.0, |c| c.runtime_ms_per_s * stage.unit_seconds())
    }

    pub fn average_power_mw(&self, stage: Stage, proc: Processor) -> Result<f64> {
        Ok(self.cost(stage, proc)?.average_mw())
    }

    /// Energy in joules of running `stage` over `seconds` of audio.
    pub fn stage_energy(&self, stage: Stage, proc: Processor, seconds: f64) -> Result<f64> {
        let c = self.cost(stage, proc)?;
        Ok(c.power_mw * (c.runtime_ms_per_s / 1000.0) * seconds / 1000.0)
    }
}

impl Default for PowerTable {
    fn default() -> Self {
        Self::default_table()
    }
}

pub fn stage_energy(table: &PowerTable, stage: Stage, proc: Processor, seconds: f64) -> Result<f64> {
    table.stage_energy(stage, proc, seconds)
}

pub const KIB: f64 = 1024.0;
pub const MIB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadParams {
    pub gamma_s: f64,
    pub mem_limit_bytes: f64,
    pub mem_static_bytes: f64,
    pub plp_bytes_per_window: f64,
    pub sim_save_emotion: f64,
    pub sim_save_speaker: f64,
    pub tau_s: f64,
}

impl Default for OffloadParams {
    fn default() -> Self {
        Self {
            gamma_s: 0.0,
            mem_limit_bytes: 8.0 * MIB,
            mem_static_bytes: 1312.0 * KIB,
            plp_bytes_per_window: 64.0 * KIB,
            sim_save_emotion: 0.2,
            sim_save_speaker: 0.4,
            tau_s: 5.0,
        }
    }
}

impl OffloadParams {
    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if !frac(self.sim_save_emotion)
            || !frac(self.sim_save_speaker)
            || !(self.mem_static_bytes < self.mem_limit_bytes)
            || !(self.plp_bytes_per_window > 0.0)
            || !(self.tau_s > 0.0)
            || !(self.gamma_s >= 0.0)
        {
            return Err(Error::Config(format!("invalid offload parameters {self:?}")));
        }
        Ok(())
    }

    pub fn with_savings(mut self, saving: f64) -> Self {
        self.sim_save_emotion = saving;
        self.sim_save_speaker = saving;
        self
    }

    pub fn min_saving(&self) -> f64 {
        self.sim_save_emotion.min(self.sim_save_speaker)
    }

    /// Seconds of speech that fill the buffer, ignoring the interleaving term.
    pub fn fill_seconds(&self) -> f64 {
        (self.mem_limit_bytes - self.mem_static_bytes) / self.plp_bytes_per_window
            * (1.0 + self.min_saving())
            * self.tau_s
    }
}

/// Seconds between two DSP-to-CPU interactions.
pub fn delta_t(p: &OffloadParams) -> f64 {
    p.gamma_s
        + (p.mem_limit_bytes - p.mem_static_bytes) / p.plp_bytes_per_window
            * (1.0 + p.min_saving())
            * p.tau_s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemVariant {
    CpuOnlyNaive,
    CpuOnlyOptimized,
    DspCpuNaive,
    DspCpuOptimized,
}

impl SystemVariant {
    pub const ALL: [SystemVariant; 4] = [
        SystemVariant::CpuOnlyNaive,
        SystemVariant::CpuOnlyOptimized,
        SystemVariant::DspCpuNaive,
        SystemVariant::DspCpuOptimized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemVariant::CpuOnlyNaive => "cpu_only_naive",
            SystemVariant::CpuOnlyOptimized => "cpu_only_optimized",
            SystemVariant::DspCpuNaive => "dsp_cpu_naive",
            SystemVariant::DspCpuOptimized => "dsp_cpu_optimized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn uses_dsp(self) -> bool {
        matches!(self, SystemVariant::DspCpuNaive | SystemVariant::DspCpuOptimized)
    }

    pub fn optimized(self) -> bool {
        matches!(self, SystemVariant::CpuOnlyOptimized | SystemVariant::DspCpuOptimized)
    }

    /// Processor hosting a stage.
    pub fn placement(self, stage: Stage) -> Processor {
        match (self.uses_dsp(), stage) {
            (false, _) => Processor::Cpu,
            (true, Stage::EmotionGmm | Stage::SpeakerGmm | Stage::CrowdFinalize) => Processor::Cpu,
            (true, _) => Processor::Dsp,
        }
    }
}

impl fmt::Display for SystemVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_is_complete() {
        let t = PowerTable::default_table();
        assert_eq!(t.stages.len(), 18);
        assert_eq!(t.platform.cpu_wakelock_mic_mw(), 342.0);
        assert_eq!(PowerTable::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn missing_rows_and_unknown_keys_fail() {
        let text = PowerTable::default_table().to_text();
        let without: String = text
            .lines()
            .filter(|l| !l.starts_with("plp.dsp.power_mw"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(PowerTable::parse(&without).is_err());
        assert!(PowerTable::parse(&format!("{text}bogus.cpu.power_mw = 1\n")).is_err());
        assert!(PowerTable::parse(&format!("{text}platform.extra = 1\n")).is_err());
    }
}
