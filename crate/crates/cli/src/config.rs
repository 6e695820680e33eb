//! Run configuration: defaults, then the config file, then command-line flags.

use std::path::{Path, PathBuf};

use dspear::config::KeyValues;
use dspear::corpus::TrainingPlan;
use dspear::energysim::{OffloadParams, PowerTable, SystemVariant, MIB};
use dspear::pipelines::{OrchestratorConfig, PipelineSet, RunMode};

use crate::error::{CliError, Result};

pub const CONFIG_ENV: &str = "DSPEAR_CONFIG";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipelines: PipelineSet,
    pub ambient_threshold_deg: f64,
    pub emotion_threshold_deg: f64,
    pub speaker_threshold_deg: f64,
    pub mode: RunMode,
    pub models: PathBuf,
    pub variant: SystemVariant,
    pub trace: Option<PathBuf>,
    pub constants: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub offload: OffloadParams,
    pub plan: TrainingPlan,
}

impl Default for RunConfig {
    fn default() -> Self {
        let orch = OrchestratorConfig::default();
        Self {
            pipelines: orch.pipelines,
            ambient_threshold_deg: orch.ambient_threshold_deg,
            emotion_threshold_deg: orch.emotion_threshold_deg,
            speaker_threshold_deg: orch.speaker_threshold_deg,
            mode: orch.mode,
            models: PathBuf::from("models"),
            variant: SystemVariant::DspCpuOptimized,
            trace: None,
            constants: None,
            out: PathBuf::from("out"),
            seed: DEFAULT_SEED,
            offload: OffloadParams::default(),
            plan: TrainingPlan::default(),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub models: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub variant: Option<String>,
    pub trace: Option<PathBuf>,
    pub constants: Option<PathBuf>,
}

pub fn parse_variant(s: &str) -> Result<SystemVariant> {
    SystemVariant::parse(s).ok_or_else(|| {
        let names: Vec<&str> = SystemVariant::ALL.iter().map(|v| v.name()).collect();
        CliError::Config(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
    })
}

pub fn parse_mode(s: &str) -> Result<RunMode> {
    match s {
        "single_threaded" => Ok(RunMode::SingleThreaded),
        "two_worker" => Ok(RunMode::TwoWorker),
        _ => Err(CliError::Config(format!(
            "unknown mode `{s}` (expected single_threaded or two_worker)"
        ))),
    }
}

fn cfg_err(e: dspear::Error) -> CliError {
    match e {
        dspear::Error::Config(msg) => CliError::Config(msg),
        other => CliError::Config(other.to_string()),
    }
}

impl RunConfig {
    /// Resolves the effective configuration with precedence flags > file > defaults.
    pub fn load(flags: &Overrides) -> Result<Self> {
        let mut cfg = Self::default();
        let path = flags
            .config
            .clone()
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        if let Some(path) = path {
            if !path.is_file() {
                return Err(CliError::Config(format!("config file {} not found", path.display())));
            }
            let kv = KeyValues::load(&path).map_err(cfg_err)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            cfg.apply_file(&kv, &base)?;
        }
        cfg.apply_flags(flags)?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, kv: &KeyValues, base: &Path) -> Result<()> {
        let keys: Vec<String> = kv.keys().map(str::to_string).collect();
        for key in keys {
            let k = key.as_str();
            let f = || -> Result<f64> { Ok(kv.f64(k).map_err(cfg_err)?.expect("key present")) };
            let u = || -> Result<usize> { Ok(kv.usize(k).map_err(cfg_err)?.expect("key present")) };
            let b = || -> Result<bool> { Ok(kv.bool(k).map_err(cfg_err)?.expect("key present")) };
            let s = || -> Result<String> { Ok(kv.string(k).map_err(cfg_err)?.expect("key present")) };
            let p = || -> Result<PathBuf> { Ok(base.join(s()?)) };
            match k {
                "seed" => self.seed = u()? as u64,
                "models" => self.models = p()?,
                "out" => self.out = p()?,
                "trace" => self.trace = Some(p()?),
                "constants" => self.constants = Some(p()?),
                "variant" => self.variant = parse_variant(&s()?)?,
                "mode" => self.mode = parse_mode(&s()?)?,
                "pipelines.ambient" => self.pipelines.ambient = b()?,
                "pipelines.speaker_count" => self.pipelines.speaker_count = b()?,
                "pipelines.emotion" => self.pipelines.emotion = b()?,
                "pipelines.speaker_id" => self.pipelines.speaker_id = b()?,
                "thresholds.ambient_deg" => self.ambient_threshold_deg = f()?,
                "thresholds.emotion_deg" => self.emotion_threshold_deg = f()?,
                "thresholds.speaker_deg" => self.speaker_threshold_deg = f()?,
                "offload.gamma_s" => self.offload.gamma_s = f()?,
                "offload.mem_limit_mb" => self.offload.mem_limit_bytes = f()? * MIB,
                "train.n_voices" => self.plan.n_voices = u()?,
                "train.filter_seconds" => self.plan.filter_seconds_per_class = f()?,
                "train.ambient_seconds" => self.plan.ambient_seconds_per_class = f()?,
                "train.emotion_seconds" => self.plan.emotion_seconds = f()?,
                "train.speaker_seconds" => self.plan.speaker_seconds = f()?,
                "train.frame_stride" => self.plan.frame_stride = u()?,
                "train.background_components" => self.plan.background_components = u()?,
                _ => return Err(CliError::Config(format!("unknown config key `{k}`"))),
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, flags: &Overrides) -> Result<()> {
        if let Some(seed) = flags.seed {
            self.seed = seed;
        }
        if let Some(m) = &flags.models {
            self.models = m.clone();
        }
        if let Some(o) = &flags.out {
            self.out = o.clone();
        }
        if let Some(v) = &flags.variant {
            self.variant = parse_variant(v)?;
        }
        if let Some(t) = &flags.trace {
            self.trace = Some(t.clone());
        }
        if let Some(c) = &flags.constants {
            self.constants = Some(c.clone());
        }
        Ok(())
    }

    /// Input files named by the configuration must exist.
    fn check_paths(&self) -> Result<()> {
        for (name, p) in [("trace", &self.trace), ("constants", &self.constants)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(CliError::Config(format!("{name} file {} not found", p.display())));
                }
            }
        }
        self.orchestrator().validate().map_err(cfg_err)?;
        self.offload.validate().map_err(cfg_err)?;
        if self.plan.n_voices == 0 || self.plan.frame_stride == 0 {
            return Err(CliError::Config("train.n_voices and train.frame_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn require_models(&self) -> Result<()> {
        if !self.models.is_dir() {
            return Err(CliError::Config(format!(
                "models directory {} not found (run `dspear train` first)",
                self.models.display()
            )));
        }
        Ok(())
    }

    pub fn orchestrator(&self) -> OrchestratorConfig {
        OrchestratorConfig {
            pipelines: self.pipelines,
            ambient_threshold_deg: self.ambient_threshold_deg,
            emotion_threshold_deg: self.emotion_threshold_deg,
            speaker_threshold_deg: self.speaker_threshold_deg,
            mode: self.mode,
            ..OrchestratorConfig::default()
        }
    }

    pub fn training_plan(&self) -> TrainingPlan {
        TrainingPlan {
            seed: self.seed,
            ..self.plan
        }
    }

    pub fn power_table(&self) -> Result<PowerTable> {
        match &self.constants {
            Some(p) => PowerTable::load(p).map_err(cfg_err),
            None => Ok(PowerTable::default_table()),
        }
    }

    pub fn create_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| crate::error::io_err(&self.out, e))
    }
}
