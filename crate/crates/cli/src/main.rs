mod config;
mod error;
mod report;
mod run;
mod sim;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Overrides, RunConfig};
use dspear::energysim::MIB;
use error::Result;
use sim::{SimulateArgs, SweepArgs, WorkloadArg};
use train::TrainKind;

/// Train models, run the audio pipelines and simulate energy use.
///
/// Settings come from command-line flags, then the config file given by
/// `--config` or `DSPEAR_CONFIG`, then built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "dspear", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Key-value config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model bundle directory.
    #[arg(long, global = true, value_name = "DIR")]
    models: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// cpu_only_naive, cpu_only_optimized, dsp_cpu_naive or dsp_cpu_optimized.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Sound trace CSV (start_s,duration_s,class,label).
    #[arg(long, global = true, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Power constants file.
    #[arg(long, global = true, value_name = "FILE")]
    constants: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PipelineArg {
    Ambient,
    SpeakerCount,
    Emotion,
    SpeakerId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    SingleThreaded,
    TwoWorker,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit models from `class_name/*.wav` directories or synthetic audio.
    Train {
        #[arg(long, value_enum, default_value = "bundle")]
        kind: TrainKind,
        /// Corpus root; synthetic audio is used when absent.
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
    },
    /// Run the orchestrator over a WAV file.
    Run {
        #[arg(long, value_name = "FILE")]
        audio: PathBuf,
        /// Ground-truth trace CSV copied next to the outputs for `report`.
        #[arg(long, value_name = "FILE")]
        labels: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Pipelines to switch off (repeatable).
        #[arg(long, value_enum)]
        disable: Vec<PipelineArg>,
        #[arg(long, value_name = "DEG")]
        ambient_threshold: Option<f64>,
        #[arg(long, value_name = "DEG")]
        emotion_threshold: Option<f64>,
        #[arg(long, value_name = "DEG")]
        speaker_threshold: Option<f64>,
    },
    /// Simulate one day (or a trace, or a run's invocation counts).
    Simulate {
        #[arg(long, default_value_t = 4.5)]
        speech_h: f64,
        #[arg(long, default_value_t = 8.0)]
        silence_h: f64,
        /// Simulate `speech_h` hours of uninterrupted speech.
        #[arg(long)]
        speech_only: bool,
        /// Invocation counts CSV from `run`.
        #[arg(long, value_name = "FILE")]
        counts: Option<PathBuf>,
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long, value_enum)]
        workload: Option<WorkloadArg>,
        #[command(flatten)]
        offload: OffloadArgs,
    },
    /// Lifetime against speech hours, wake-up interval against memory.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0,1.5,3,4.5,6,7.5,9,10.5,12")]
        hours: Vec<f64>,
        /// Defaults to all four variants.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10,12,16")]
        mem_mb_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4")]
        savings: Vec<f64>,
        #[arg(long, value_enum)]
        workload: Option<WorkloadArg>,
        #[command(flatten)]
        offload: OffloadArgs,
    },
    /// Summary tables from a directory of outputs.
    Report {
        #[arg(value_name = "OUTPUTS_DIR")]
        outputs: PathBuf,
    },
}

#[derive(Debug, Args)]
struct OffloadArgs {
    /// Interleaving term of the wake-up interval, seconds.
    #[arg(long)]
    gamma_s: Option<f64>,
    /// Co-processor memory limit, MiB.
    #[arg(long)]
    mem_mb: Option<f64>,
}

impl OffloadArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(g) = self.gamma_s {
            cfg.offload.gamma_s = g;
        }
        if let Some(m) = self.mem_mb {
            cfg.offload.mem_limit_bytes = m * MIB;
        }
        cfg.offload
            .validate()
            .map_err(|e| error::CliError::Config(e.to_string()))
    }
}

fn execute(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut cfg = RunConfig::load(&Overrides {
        config: g.config,
        seed: g.seed,
        models: g.models,
        out: g.out,
        variant: g.variant,
        trace: g.trace,
        constants: g.constants,
    })?;
    match cli.command {
        Command::Train { kind, corpus } => train::cmd_train(&cfg, kind, corpus.as_deref()),
        Command::Run {
            audio,
            labels,
            mode,
            disable,
            ambient_threshold,
            emotion_threshold,
            speaker_threshold,
        } => {
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::SingleThreaded => dspear::pipelines::RunMode::SingleThreaded,
                    ModeArg::TwoWorker => dspear::pipelines::RunMode::TwoWorker,
                };
            }
            for p in disable {
                match p {
                    PipelineArg::Ambient => cfg.pipelines.ambient = false,
                    PipelineArg::SpeakerCount => cfg.pipelines.speaker_count = false,
                    PipelineArg::Emotion => cfg.pipelines.emotion = false,
                    PipelineArg::SpeakerId => cfg.pipelines.speaker_id = false,
                }
            }
            cfg.ambient_threshold_deg = ambient_threshold.unwrap_or(cfg.ambient_threshold_deg);
            cfg.emotion_threshold_deg = emotion_threshold.unwrap_or(cfg.emotion_threshold_deg);
            cfg.speaker_threshold_deg = speaker_threshold.unwrap_or(cfg.speaker_threshold_deg);
            cfg.orchestrator()
                .validate()
                .map_err(|e| error::CliError::Config(e.to_string()))?;
            run::cmd_run(&cfg, &audio, labels.as_ref())
        }
        Command::Simulate {
            speech_h,
            silence_h,
            speech_only,
            counts,
            duration_s,
            workload,
            offload,
        } => {
            offload.apply(&mut cfg)?;
            let args = SimulateArgs {
                speech_h,
                silence_h,
                speech_only,
                counts,
                duration_s,
                workload,
            };
            sim::cmd_simulate(&cfg, &args)
        }
        Command::Sweep {
            hours,
            variants,
            mem_mb_list,
            savings,
            workload,
            offload,
        } => {
            offload.apply(&mut cfg)?;
            let args = SweepArgs {
                hours,
                variants,
                mem_mb: mem_mb_list,
                savings,
                workload,
            };
            sim::cmd_sweep(&cfg, &args)
        }
        Command::Report { outputs } => report::cmd_report(&cfg, &outputs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dspear: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
