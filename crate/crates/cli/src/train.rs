//! `dspear train`: fits models from a labelled corpus or from synthetic audio.

use std::path::{Path, PathBuf};

use dspear::audio_io::{frame_stream, read_stream, AudioStream, SoundClass, WindowKind};
use dspear::corpus::{
    synth_ambient, synthetic_voices, train_bundle, train_emotion_models, train_speaker_models,
    train_speech_filter, TrainingPlan, TrainingReport,
};
use dspear::features::FeatureExtractor;
use dspear::models::{
    map_adapt, train_em, DecisionTreeModel, GmmModel, Model, ModelBundle, ModelRole, Placement,
    SpeechClass, DEFAULT_MAP_RELEVANCE, MANIFEST_FILE,
};
use dspear::pipelines::recognizers::{
    ambient_model_name, speaker_model_name, AMBIENT_CLASSES, FILLER_MODEL, NEUTRAL_MODEL,
    SPEAKER_BACKGROUND_MODEL, SPEECH_FILTER_MODEL,
};
use dspear::pipelines::{gender_estimate, NarrowEmotion};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};

/// Pooled ambient GMM written beside the bundle; not used by the orchestrator.
pub const AMBIENT_BACKGROUND_FILE: &str = "ambient_background.dspm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainKind {
    /// Every model the orchestrator needs.
    Bundle,
    Ambient,
    Speaker,
    SpeechFilter,
    Emotion,
}

/// Corpus sub-directory for each kind when training a whole bundle from disk.
const BUNDLE_LAYOUT: [(&str, TrainKind); 4] = [
    ("speech_filter", TrainKind::SpeechFilter),
    ("ambient", TrainKind::Ambient),
    ("emotion", TrainKind::Emotion),
    ("speaker", TrainKind::Speaker),
];

struct Trainer<'a> {
    plan: TrainingPlan,
    ex: FeatureExtractor,
    bundle: ModelBundle,
    report: TrainingReport,
    models_dir: &'a Path,
}

type Corpus = Vec<(String, Vec<AudioStream>)>;

/// Reads `class_name/*.wav` under `dir`, in name order.
fn read_corpus(dir: &Path) -> Result<Corpus> {
    let mut classes: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(CliError::Data(format!("{}: no class directories", dir.display())));
    }
    let mut out = Vec::new();
    for class_dir in classes {
        let name = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CliError::Data(format!("bad class directory {}", class_dir.display())))?
            .to_string();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&class_dir)
            .map_err(|e| io_err(&class_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Data(format!("class `{name}` has no .wav files")));
        }
        let streams = files
            .iter()
            .map(|f| read_stream(f, true))
            .collect::<dspear::Result<Vec<_>>>()?;
        out.push((name, streams));
    }
    Ok(out)
}

impl Trainer<'_> {
    fn put(&mut self, name: &str, role: ModelRole, placement: Placement, model: Model) -> Result<()> {
        Ok(self.bundle.insert(name, role, placement, model)?)
    }

    fn fit(&mut self, name: &str, data: &[Vec<f64>], k: usize) -> Result<GmmModel> {
        if data.is_empty() {
            return Err(CliError::Data(format!("no usable audio for `{name}`")));
        }
        let t = train_em(name, data, k, self.plan.seed, &self.plan.em)?;
        let ll = t.history.last().copied().unwrap_or(f64::NAN) / data.len() as f64;
        self.report.entries.push((name.to_string(), ll));
        Ok(t.model)
    }

    fn plp_frames(&self, streams: &[AudioStream]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for s in streams {
            for w in frame_stream(s, WindowKind::Speech)? {
                out.extend(self.ex.plp(&w)?.into_iter().step_by(self.plan.frame_stride));
            }
        }
        Ok(out)
    }

    fn ambient_observations(&self, corpus: &Corpus) -> Result<Vec<(SoundClass, Vec<Vec<f64>>)>> {
        let mut out = Vec::new();
        for (name, streams) in corpus {
            let class = SoundClass::parse(name)
                .filter(|c| c.is_ambient())
                .ok_or_else(|| CliError::Data(format!("`{name}` is not an ambient class")))?;
            let mut obs = Vec::new();
            for s in streams {
                for w in frame_stream(s, WindowKind::Ambient)? {
                    obs.extend(self.ex.analyze_ambient(&w)?.observations());
                }
            }
            out.push((class, obs));
        }
        Ok(out)
    }

    fn ambient_background(&mut self, pooled: &[Vec<f64>]) -> Result<()> {
        let bg = self.fit("ambient/background", pooled, self.plan.background_components)?;
        std::fs::create_dir_all(self.models_dir).map_err(|e| io_err(self.models_dir, e))?;
        Model::Gmm(bg).save(self.models_dir.join(AMBIENT_BACKGROUND_FILE))?;
        Ok(())
    }

    fn ambient(&mut self, corpus: &Corpus) -> Result<()> {
        let mut pooled = Vec::new();
        for (class, obs) in self.ambient_observations(corpus)? {
            let model_name = ambient_model_name(class);
            let m = self.fit(&model_name, &obs, self.plan.ambient_components)?;
            self.put(&model_name, ModelRole::Ambient, Placement::Dsp, Model::Gmm(m))?;
            pooled.extend(obs);
        }
        self.ambient_background(&pooled)
    }

    fn speaker(&mut self, corpus: &Corpus) -> Result<()> {
        let mut per_speaker = Vec::new();
        let mut pooled = Vec::new();
        for (id, streams) in corpus {
            let frames = self.plp_frames(streams)?;
            if frames.is_empty() {
                return Err(CliError::Data(format!("speaker `{id}` has less than one 5 s window")));
            }
            let mut pitches = Vec::new();
            for s in streams {
                for w in frame_stream(s, WindowKind::SpeakerCount)? {
                    pitches.extend(self.ex.mean_pitch(&w)?);
                }
            }
            pitches.sort_by(f64::total_cmp);
            let gender = gender_estimate(pitches.get(pitches.len() / 2).copied());
            pooled.extend(frames.iter().cloned());
            per_speaker.push((id.clone(), gender, frames));
        }
        let bg = self.fit(SPEAKER_BACKGROUND_MODEL, &pooled, self.plan.background_components)?;
        for (id, gender, frames) in per_speaker {
            let name = speaker_model_name(&id);
            let m = map_adapt(&bg, &name, &frames, DEFAULT_MAP_RELEVANCE)?.with_gender(gender);
            let ll = m.log_likelihood(&frames)? / frames.len() as f64;
            self.report.entries.push((format!("{name} ({})", gender.name()), ll));
            self.put(&name, ModelRole::Speaker, Placement::Cpu, Model::Gmm(m))?;
        }
        self.put(SPEAKER_BACKGROUND_MODEL, ModelRole::SpeakerBackground, Placement::Cpu, Model::Gmm(bg))
    }

    fn speech_filter(&mut self, corpus: &Corpus) -> Result<()> {
        let mut data = Vec::new();
        for (name, streams) in corpus {
            let class = if name == "speech" {
                SpeechClass::Speech
            } else {
                SpeechClass::Ambient
            };
            for s in streams {
                for w in frame_stream(s, WindowKind::Ambient)? {
                    data.push((self.ex.window_features(&w)?, class));
                }
            }
        }
        if data.is_empty() {
            return Err(CliError::Data("speech filter corpus has no full 1.28 s windows".into()));
        }
        let tree = DecisionTreeModel::train(&data, &self.plan.tree)?;
        self.put(SPEECH_FILTER_MODEL, ModelRole::SpeechFilter, Placement::Dsp, Model::Tree(tree))
    }

    fn emotion(&mut self, corpus: &Corpus) -> Result<()> {
        let (mut neutral, mut filler) = (Vec::new(), Vec::new());
        for (name, streams) in corpus {
            let e = NarrowEmotion::parse(name)
                .ok_or_else(|| CliError::Data(format!("`{name}` is not a narrow emotion")))?;
            let frames = self.plp_frames(streams)?;
            let model_name = e.model_name();
            let m = self.fit(&model_name, &frames, self.plan.emotion_components)?;
            self.put(&model_name, ModelRole::Emotion, Placement::Cpu, Model::Gmm(m))?;
            if e.is_neutral() {
                neutral.extend(frames);
            } else {
                filler.extend(frames);
            }
        }
        for (name, frames, group) in [(NEUTRAL_MODEL, neutral, "neutral"), (FILLER_MODEL, filler, "non-neutral")] {
            if frames.is_empty() {
                return Err(CliError::Data(format!("emotion corpus has no {group} class")));
            }
            let m = self.fit(name, &frames, self.plan.neutral_components)?;
            self.put(name, ModelRole::Neutral, Placement::Dsp, Model::Gmm(m))?;
        }
        Ok(())
    }

    fn train_corpus(&mut self, kind: TrainKind, dir: &Path) -> Result<()> {
        if kind == TrainKind::Bundle {
            for (sub, k) in BUNDLE_LAYOUT {
                let d = dir.join(sub);
                if !d.is_dir() {
                    return Err(CliError::Data(format!("bundle corpus is missing {}", d.display())));
                }
                self.train_corpus(k, &d)?;
            }
            return Ok(());
        }
        let corpus = read_corpus(dir)?;
        match kind {
            TrainKind::Ambient => self.ambient(&corpus),
            TrainKind::Speaker => self.speaker(&corpus),
            TrainKind::SpeechFilter => self.speech_filter(&corpus),
            TrainKind::Emotion => self.emotion(&corpus),
            TrainKind::Bundle => unreachable!(),
        }
    }

    fn synthetic(&mut self, kind: TrainKind) -> Result<()> {
        let plan = self.plan;
        let voices = synthetic_voices(plan.n_voices, plan.seed);
        match kind {
            TrainKind::Bundle => {
                let (bundle, _, report) = train_bundle(&plan)?;
                for (name, e) in bundle.entries() {
                    self.put(name, e.role, e.placement, e.model.clone())?;
                }
                self.report.entries.extend(report.entries);
                let corpus = self.synthetic_ambient()?;
                let pooled: Vec<Vec<f64>> =
                    self.ambient_observations(&corpus)?.into_iter().flat_map(|(_, o)| o).collect();
                self.ambient_background(&pooled)?;
                Ok(())
            }
            TrainKind::Ambient => {
                let corpus = self.synthetic_ambient()?;
                self.ambient(&corpus)
            }
            TrainKind::SpeechFilter => {
                let tree = train_speech_filter(&self.ex, &voices, &plan)?;
                self.put(SPEECH_FILTER_MODEL, ModelRole::SpeechFilter, Placement::Dsp, Model::Tree(tree))
            }
            TrainKind::Emotion => {
                for (name, m) in train_emotion_models(&self.ex, &voices, &plan, &mut self.report)? {
                    let (role, placement) = if name == NEUTRAL_MODEL || name == FILLER_MODEL {
                        (ModelRole::Neutral, Placement::Dsp)
                    } else {
                        (ModelRole::Emotion, Placement::Cpu)
                    };
                    self.put(&name, role, placement, Model::Gmm(m))?;
                }
                Ok(())
            }
            TrainKind::Speaker => {
                let (bg, speakers) = train_speaker_models(&self.ex, &voices, &plan, &mut self.report)?;
                for (v, m) in speakers {
                    self.put(&speaker_model_name(&v.id), ModelRole::Speaker, Placement::Cpu, Model::Gmm(m))?;
                }
                self.put(SPEAKER_BACKGROUND_MODEL, ModelRole::SpeakerBackground, Placement::Cpu, Model::Gmm(bg))
            }
        }
    }

    fn synthetic_ambient(&self) -> Result<Corpus> {
        AMBIENT_CLASSES
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let s = synth_ambient(*c, self.plan.ambient_seconds_per_class, self.plan.seed + 100 + i as u64)?;
                Ok((c.name().to_string(), vec![s]))
            })
            .collect()
    }
}

pub fn cmd_train(cfg: &RunConfig, kind: TrainKind, corpus: Option<&Path>) -> Result<()> {
    let bundle = if cfg.models.join(MANIFEST_FILE).is_file() {
        ModelBundle::load(&cfg.models)?
    } else {
        ModelBundle::new()
    };
    let mut t = Trainer {
        plan: cfg.training_plan(),
        ex: FeatureExtractor::default(),
        bundle,
        report: TrainingReport::default(),
        models_dir: &cfg.models,
    };
    match corpus {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(CliError::Config(format!("corpus directory {} not found", dir.display())));
            }
            t.train_corpus(kind, dir)?
        }
        None => t.synthetic(kind)?,
    }
    t.bundle.save(&cfg.models)?;
    for (name, ll) in &t.report.entries {
        println!("trained {name}: loglik/obs {ll:.4}");
    }
    println!(
        "wrote {} models to {} (dsp code {} KiB)",
        t.bundle.len(),
        cfg.models.display(),
        t.bundle.dsp_code_bytes()? / 1024
    );
    Ok(())
}
