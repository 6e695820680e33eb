//! Routes an audio stream through the admission filters and pipelines.
//!
//! The main worker gates 32 ms frames, classifies 1.28 s blocks as speech or
//! ambient, runs ambient classification, gender and the crowd forward pass.
//! A speech worker handles the 5 s windows: PLP, emotion and speaker
//! recognition. In two-worker mode it runs on its own thread fed through a
//! bounded queue of depth 2.

use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::admission::{GateDecision, GateStats, SilenceFilterConfig, SilenceGate, SimilarityDetector};
use crate::audio_io::{AudioStream, Window, WindowKind, SAMPLE_RATE};
use crate::energysim::Stage;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureExtractor};
use crate::models::{Gender, ModelBundle, SpeechClass};

use super::crowd::{crowd_finalize, crowd_forward_pass, ConversationState, CrowdConfig, Segment, SpeakerPrior};
use super::recognizers::{
    ambient_classify, ambient_model_name, emotion_recognize, speaker_identify, AMBIENT_CLASSES,
    FILLER_MODEL, NEUTRAL_MODEL, SPEAKER_BACKGROUND_MODEL, SPEECH_FILTER_MODEL,
};
use super::{gender_estimate, EventKind, InferenceEvent, InvocationCounts, NarrowEmotion, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    SingleThreaded,
    TwoWorker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSet {
    pub ambient: bool,
    pub speaker_count: bool,
    pub emotion: bool,
    pub speaker_id: bool,
}

impl Default for PipelineSet {
    fn default() -> Self {
        Self {
            ambient: true,
            speaker_count: true,
            emotion: true,
            speaker_id: true,
        }
    }
}

impl PipelineSet {
    fn segments(&self) -> bool {
        self.speaker_count || self.speaker_id
    }

    fn speech_windows(&self) -> bool {
        self.emotion || self.speaker_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub pipelines: PipelineSet,
    pub silence: SilenceFilterConfig,
    pub ambient_threshold_deg: f64,
    pub emotion_threshold_deg: f64,
    pub speaker_threshold_deg: f64,
    pub neutral_gate: bool,
    pub gender_filter: bool,
    /// Nats by which the best speaker must beat the background model.
    pub unknown_margin: f64,
    pub conversation_timeout_s: f64,
    pub crowd: CrowdConfig,
    pub features: FeatureConfig,
    pub mode: RunMode,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            pipelines: PipelineSet::default(),
            silence: SilenceFilterConfig::default(),
            ambient_threshold_deg: 20.0,
            emotion_threshold_deg: 10.0,
            speaker_threshold_deg: 15.0,
            neutral_gate: true,
            gender_filter: true,
            unknown_margin: 0.0,
            conversation_timeout_s: 60.0,
            crowd: CrowdConfig::default(),
            features: FeatureConfig::default(),
            mode: RunMode::TwoWorker,
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.silence.validate()?;
        for (name, t) in [
            ("ambient", self.ambient_threshold_deg),
            ("emotion", self.emotion_threshold_deg),
            ("speaker", self.speaker_threshold_deg),
        ] {
            if !(0.0..90.0).contains(&t) {
                return Err(Error::Config(format!("{name} similarity threshold {t} outside [0, 90)")));
            }
        }
        if !(self.conversation_timeout_s > 0.0) || !self.unknown_margin.is_finite() {
            return Err(Error::Config("invalid conversation timeout or unknown margin".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub events: Vec<InferenceEvent>,
    pub counts: InvocationCounts,
    pub gate_stats: Vec<(String, GateStats)>,
}

impl RunOutput {
    pub fn events_of(&self, pipeline: &str) -> impl Iterator<Item = &InferenceEvent> {
        let pipeline = pipeline.to_string();
        self.events.iter().filter(move |e| e.kind.pipeline() == pipeline)
    }
}

/// Fails with the stage name when an enabled pipeline lacks a model.
fn check_models(bundle: &ModelBundle, cfg: &OrchestratorConfig) -> Result<()> {
    let need = |name: &str, stage: &str| {
        if bundle.get(name).is_some() {
            Ok(())
        } else {
            Err(Error::MissingModel(format!("{stage} ({name})")))
        }
    };
    bundle.tree(SPEECH_FILTER_MODEL).map_err(|_| {
        Error::MissingModel(format!("speech_filter ({SPEECH_FILTER_MODEL})"))
    })?;
    let p = &cfg.pipelines;
    if p.ambient {
        for c in AMBIENT_CLASSES {
            need(&ambient_model_name(c), "ambient")?;
        }
    }
    if p.emotion {
        if cfg.neutral_gate {
            need(NEUTRAL_MODEL, "neutral_gate")?;
            need(FILLER_MODEL, "neutral_gate")?;
        }
        for e in NarrowEmotion::ALL {
            if !cfg.neutral_gate || !e.is_neutral() {
                need(&e.model_name(), "emotion")?;
            }
        }
    }
    if p.speaker_id {
        need(SPEAKER_BACKGROUND_MODEL, "speaker_id")?;
    }
    Ok(())
}

fn seconds(samples: usize) -> f64 {
    samples as f64 / SAMPLE_RATE as f64
}

enum Job {
    Window {
        samples: Vec<f64>,
        start_index: usize,
        t_start: f64,
        t_end: f64,
        gender: Gender,
    },
    Close,
}

enum Reply {
    Window(Vec<InferenceEvent>, InvocationCounts),
    Prior(SpeakerPrior),
}

/// PLP, emotion and speaker recognition over 5 s windows.
struct SpeechWorker<'a> {
    bundle: &'a ModelBundle,
    cfg: &'a OrchestratorConfig,
    extractor: &'a FeatureExtractor,
    emotion: SimilarityDetector,
    speaker: SimilarityDetector,
    prior: SpeakerPrior,
}

impl<'a> SpeechWorker<'a> {
    fn new(bundle: &'a ModelBundle, cfg: &'a OrchestratorConfig, extractor: &'a FeatureExtractor) -> Self {
        Self {
            bundle,
            cfg,
            extractor,
            emotion: SimilarityDetector::new("emotion", cfg.emotion_threshold_deg),
            speaker: SimilarityDetector::new("speaker", cfg.speaker_threshold_deg),
            prior: SpeakerPrior::default(),
        }
    }

    fn handle(&mut self, job: Job) -> Result<Reply> {
        match job {
            Job::Close => {
                self.emotion.reset();
                self.speaker.reset();
                Ok(Reply::Prior(std::mem::take(&mut self.prior)))
            }
            Job::Window {
                samples,
                start_index,
                t_start,
                t_end,
                gender,
            } => {
                let window = Window::from_samples(WindowKind::Speech, &samples, start_index)?;
                let plp = self.extractor.plp(&window)?;
                let mut counts = InvocationCounts::default();
                counts.add(Stage::Plp, 1);
                let mut events = Vec::new();
                let event = |kind, provenance| InferenceEvent {
                    t_start,
                    t_end,
                    kind,
                    provenance,
                };
                if self.cfg.pipelines.emotion {
                    let o = emotion_recognize(&plp, self.bundle, &mut self.emotion, self.cfg.neutral_gate)?;
                    counts.add(Stage::NeutralGmm, o.neutral_evals);
                    counts.add(Stage::EmotionGmm, o.gmm_evals);
                    events.push(event(o.kind, o.provenance));
                }
                if self.cfg.pipelines.speaker_id {
                    let o = speaker_identify(
                        &plp,
                        self.bundle,
                        &mut self.speaker,
                        gender,
                        self.cfg.gender_filter,
                        self.cfg.unknown_margin,
                    )?;
                    counts.add(Stage::SpeakerGmm, o.gmm_evals);
                    if let EventKind::Speaker { id } = &o.kind {
                        match id {
                            Some(id) => {
                                self.prior.known_speakers.insert(id.clone());
                            }
                            None => self.prior.unknown_voice_seen = true,
                        }
                    }
                    events.push(event(o.kind, o.provenance));
                }
                Ok(Reply::Window(events, counts))
            }
        }
    }

    fn stats(&self) -> Vec<(String, GateStats)> {
        vec![
            (self.emotion.name.clone(), self.emotion.stats()),
            (self.speaker.name.clone(), self.speaker.stats()),
        ]
    }
}

/// Either an inline worker or a channel pair to a worker thread.
enum WorkerLink<'w, 'a> {
    Inline(&'w mut SpeechWorker<'a>),
    Remote {
        jobs: mpsc::SyncSender<Job>,
        replies: mpsc::Receiver<Result<Reply>>,
    },
}

struct Sink {
    events: Vec<InferenceEvent>,
    counts: InvocationCounts,
}

impl Sink {
    fn absorb(&mut self, reply: Reply) -> Option<SpeakerPrior> {
        match reply {
            Reply::Window(events, counts) => {
                self.events.extend(events);
                self.counts.merge(&counts);
                None
            }
            Reply::Prior(p) => Some(p),
        }
    }
}

impl WorkerLink<'_, '_> {
    fn send(&mut self, job: Job, sink: &mut Sink) -> Result<()> {
        match self {
            WorkerLink::Inline(w) => {
                let reply = w.handle(job)?;
                sink.absorb(reply);
                Ok(())
            }
            WorkerLink::Remote { jobs, replies } => {
                jobs.send(job).map_err(|_| worker_gone())?;
                while let Ok(reply) = replies.try_recv() {
                    sink.absorb(reply?);
                }
                Ok(())
            }
        }
    }

    /// Ends the conversation on the worker and collects its speaker prior.
    fn close(&mut self, sink: &mut Sink) -> Result<SpeakerPrior> {
        match self {
            WorkerLink::Inline(w) => match w.handle(Job::Close)? {
                Reply::Prior(p) => Ok(p),
                Reply::Window(..) => unreachable!("close yields a prior"),
            },
            WorkerLink::Remote { jobs, replies } => {
                jobs.send(Job::Close).map_err(|_| worker_gone())?;
                loop {
                    let reply = replies.recv().map_err(|_| worker_gone())??;
                    if let Some(p) = sink.absorb(reply) {
                        return Ok(p);
                    }
                }
            }
        }
    }
}

fn worker_gone() -> Error {
    Error::Config("speech worker stopped unexpectedly".into())
}

/// Speech admitted during one conversation, with its mapping back to stream time.
struct Conversation {
    state: ConversationState,
    buffer: Vec<f64>,
    /// (buffer offset, stream sample index) of each appended block.
    chunks: Vec<(usize, usize)>,
    count_cursor: usize,
    speech_cursor: usize,
    last_gender: Gender,
}

impl Conversation {
    fn open(start_index: usize) -> Self {
        Self {
            state: ConversationState::open(seconds(start_index)),
            buffer: Vec::new(),
            chunks: Vec::new(),
            count_cursor: 0,
            speech_cursor: 0,
            last_gender: Gender::Uncertain,
        }
    }

    fn append(&mut self, samples: &[f64], stream_index: usize) {
        self.chunks.push((self.buffer.len(), stream_index));
        self.buffer.extend_from_slice(samples);
        self.state.last_voice_t = seconds(stream_index + samples.len());
    }

    fn stream_index(&self, offset: usize) -> usize {
        let i = self.chunks.partition_point(|(o, _)| *o <= offset) - 1;
        let (o, s) = self.chunks[i];
        s + (offset - o)
    }

    /// Stream times spanned by buffer range `[a, b)`.
    fn span(&self, a: usize, b: usize) -> (f64, f64) {
        (seconds(self.stream_index(a)), seconds(self.stream_index(b - 1) + 1))
    }
}

struct MainWorker<'a> {
    bundle: &'a ModelBundle,
    cfg: &'a OrchestratorConfig,
    extractor: &'a FeatureExtractor,
    tree: &'a crate::models::DecisionTreeModel,
    gate: SilenceGate,
    ambient: SimilarityDetector,
    conversation: Option<Conversation>,
    last_verdict: Option<SpeechClass>,
    sink: Sink,
}

impl<'a> MainWorker<'a> {
    fn event(&mut self, t_start: f64, t_end: f64, kind: EventKind, provenance: Provenance) {
        self.sink.events.push(InferenceEvent {
            t_start,
            t_end,
            kind,
            provenance,
        });
    }

    fn run(&mut self, stream: &AudioStream, link: &mut WorkerLink<'_, '_>) -> Result<()> {
        let samples = stream.samples();
        let block = WindowKind::Ambient.window_len();
        let frame = WindowKind::Ambient.frame_len();
        let mut start = 0;
        while start + block <= samples.len() {
            let chunk = &samples[start..start + block];
            let (t0, t1) = (seconds(start), seconds(start + block));
            let mut admitted = false;
            for f in chunk.chunks(frame) {
                let (rms, entropy) = self.extractor.gate_features(f);
                self.sink.counts.add(Stage::SilenceFilter, 1);
                if self.gate.step(rms, entropy) == GateDecision::Admit {
                    admitted = true;
                }
            }
            if !admitted {
                self.last_verdict = None;
                self.event(t0, t1, EventKind::Silence, Provenance::GatedOut);
                self.maybe_close(t1, link)?;
                start += block;
                continue;
            }
            let window = Window::from_samples(WindowKind::Ambient, chunk, start)?;
            let analysis = self.extractor.analyze_ambient(&window)?;
            self.sink.counts.add(Stage::AmbientFeatures, 1);
            let (verdict, _) = self.tree.classify(&analysis.summary)?;
            self.sink.counts.add(Stage::SpeechFilter, 1);
            self.last_verdict = Some(verdict);
            match verdict {
                SpeechClass::Ambient => {
                    if self.cfg.pipelines.ambient {
                        let o = ambient_classify(&analysis, self.bundle, &mut self.ambient)?;
                        self.sink.counts.add(Stage::AmbientGmm, o.gmm_evals);
                        self.event(t0, t1, o.kind, o.provenance);
                    } else {
                        self.event(t0, t1, EventKind::Ambient { class: None }, Provenance::GatedOut);
                    }
                    self.maybe_close(t1, link)?;
                }
                SpeechClass::Speech => self.speech(chunk, start, link)?,
            }
            start += block;
        }
        if start < samples.len() {
            let (t0, t1) = (seconds(start), seconds(samples.len()));
            let mut admitted = false;
            for f in samples[start..].chunks_exact(frame) {
                let (rms, entropy) = self.extractor.gate_features(f);
                self.sink.counts.add(Stage::SilenceFilter, 1);
                if self.gate.step(rms, entropy) == GateDecision::Admit {
                    admitted = true;
                }
            }
            if admitted && self.last_verdict == Some(SpeechClass::Speech) {
                self.speech(&samples[start..], start, link)?;
            } else {
                self.event(t0, t1, EventKind::Silence, Provenance::GatedOut);
            }
        }
        self.close(link)
    }

    fn speech(&mut self, chunk: &[f64], start: usize, link: &mut WorkerLink<'_, '_>) -> Result<()> {
        let p = self.cfg.pipelines;
        if !(p.segments() || p.speech_windows()) {
            return Ok(());
        }
        let conv = self.conversation.get_or_insert_with(|| Conversation::open(start));
        conv.append(chunk, start);

        let seg_len = WindowKind::SpeakerCount.window_len();
        while p.segments() && conv.count_cursor + seg_len <= conv.buffer.len() {
            let a = conv.count_cursor;
            let window = Window::from_samples(
                WindowKind::SpeakerCount,
                &conv.buffer[a..a + seg_len],
                conv.stream_index(a),
            )?;
            let pitch = self.extractor.mean_pitch(&window)?;
            let gender = gender_estimate(pitch);
            let mfcc_mean = self.extractor.mfcc_mean(&window);
            self.sink.counts.add(Stage::SpeakerCount, 1);
            if p.speaker_count {
                let segment = Segment {
                    mfcc_mean,
                    pitch_mean: pitch,
                    gender,
                };
                crowd_forward_pass(&mut conv.state, segment, &self.cfg.crowd);
            }
            conv.last_gender = gender;
            conv.count_cursor += seg_len;
            let (t0, t1) = conv.span(a, a + seg_len);
            self.sink.events.push(InferenceEvent {
                t_start: t0,
                t_end: t1,
                kind: EventKind::Gender { gender },
                provenance: Provenance::Classified,
            });
        }

        let win_len = WindowKind::Speech.window_len();
        while p.speech_windows() && conv.speech_cursor + win_len <= conv.buffer.len() {
            let a = conv.speech_cursor;
            let (t_start, t_end) = conv.span(a, a + win_len);
            let job = Job::Window {
                samples: conv.buffer[a..a + win_len].to_vec(),
                start_index: conv.stream_index(a),
                t_start,
                t_end,
                gender: conv.last_gender,
            };
            conv.speech_cursor += win_len;
            link.send(job, &mut self.sink)?;
        }
        Ok(())
    }

    /// Closes the conversation once no speech has been heard for the timeout.
    fn maybe_close(&mut self, now: f64, link: &mut WorkerLink<'_, '_>) -> Result<()> {
        let expired = self
            .conversation
            .as_ref()
            .is_some_and(|c| now - c.state.last_voice_t >= self.cfg.conversation_timeout_s);
        if expired {
            self.close(link)?;
        }
        Ok(())
    }

    fn close(&mut self, link: &mut WorkerLink<'_, '_>) -> Result<()> {
        let Some(mut conv) = self.conversation.take() else {
            return Ok(());
        };
        let prior = if self.cfg.pipelines.speech_windows() {
            Some(link.close(&mut self.sink)?)
        } else {
            None
        };
        conv.state.close();
        if self.cfg.pipelines.speaker_count {
            let count = crowd_finalize(&conv.state, prior.as_ref(), &self.cfg.crowd)?.max(1);
            self.sink.counts.add(Stage::CrowdFinalize, 1);
            self.event(
                conv.state.start_t,
                conv.state.last_voice_t,
                EventKind::SpeakerCount { count },
                Provenance::Classified,
            );
        }
        Ok(())
    }
}

fn sort_events(events: &mut [InferenceEvent]) {
    events.sort_by(|a, b| {
        a.t_start
            .total_cmp(&b.t_start)
            .then(a.t_end.total_cmp(&b.t_end))
            .then_with(|| a.key().cmp(&b.key()))
    });
}

/// Runs every enabled pipeline over the stream.
pub fn orchestrate(stream: &AudioStream, bundle: &ModelBundle, cfg: &OrchestratorConfig) -> Result<RunOutput> {
    cfg.validate()?;
    check_models(bundle, cfg)?;
    let extractor = FeatureExtractor::new(cfg.features);
    let mut main = MainWorker {
        bundle,
        cfg,
        extractor: &extractor,
        tree: bundle.tree(SPEECH_FILTER_MODEL)?,
        gate: SilenceGate::new(cfg.silence),
        ambient: SimilarityDetector::new("ambient", cfg.ambient_threshold_deg),
        conversation: None,
        last_verdict: None,
        sink: Sink {
            events: Vec::new(),
            counts: InvocationCounts::default(),
        },
    };
    let mut worker = SpeechWorker::new(bundle, cfg, &extractor);
    match cfg.mode {
        RunMode::SingleThreaded => {
            let mut link = WorkerLink::Inline(&mut worker);
            main.run(stream, &mut link)?;
        }
        RunMode::TwoWorker => {
            let (job_tx, job_rx) = mpsc::sync_channel::<Job>(2);
            let (reply_tx, reply_rx) = mpsc::channel::<Result<Reply>>();
            let result = std::thread::scope(|scope| -> Result<()> {
                let w = &mut worker;
                let handle = scope.spawn(move || {
                    for job in job_rx {
                        let reply = w.handle(job);
                        let failed = reply.is_err();
                        if reply_tx.send(reply).is_err() || failed {
                            break;
                        }
                    }
                });
                let mut link = WorkerLink::Remote {
                    jobs: job_tx,
                    replies: reply_rx,
                };
                let outcome = main.run(stream, &mut link);
                let WorkerLink::Remote { jobs, replies } = link else {
                    unreachable!()
                };
                drop(jobs);
                handle.join().map_err(|_| worker_gone())?;
                let replies: Vec<Result<Reply>> = replies.into_iter().collect();
                for reply in replies {
                    main.sink.absorb(reply?);
                }
                outcome
            });
            result?;
        }
    }
    let mut gate_stats = vec![(main.ambient.name.clone(), main.ambient.stats())];
    gate_stats.extend(worker.stats());
    let Sink { mut events, counts } = main.sink;
    sort_events(&mut events);
    Ok(RunOutput {
        events,
        counts,
        gate_stats,
    })
}
