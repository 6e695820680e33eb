use serde::{Deserialize, Serialize};

use super::{emotion_style, synth_ambient, synth_voice, synthetic_voices, SpeakingStyle, VoiceProfile};
use crate::audio_io::{frame_stream, AudioStream, SoundClass, Window, WindowKind};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::models::{
    map_adapt, train_em, DecisionTreeModel, EmConfig, GmmModel, Model, ModelBundle, ModelRole,
    Placement, SpeechClass, TreeConfig, DEFAULT_MAP_RELEVANCE,
};
use crate::pipelines::recognizers::{
    ambient_model_name, speaker_model_name, AMBIENT_CLASSES, FILLER_MODEL, NEUTRAL_MODEL,
    SPEAKER_BACKGROUND_MODEL, SPEECH_FILTER_MODEL,
};
use crate::pipelines::NarrowEmotion;

/// Corpus sizes and model shapes for building a full bundle from synthetic audio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub seed: u64,
    pub n_voices: usize,
    pub filter_seconds_per_class: f64,
    pub ambient_seconds_per_class: f64,
    pub ambient_components: usize,
    pub emotion_seconds: f64,
    pub emotion_components: usize,
    pub neutral_components: usize,
    pub speaker_seconds: f64,
    pub background_components: usize,
    /// Keep every n-th PLP frame when fitting GMMs.
    pub frame_stride: usize,
    pub em: EmConfig,
    pub tree: TreeConfig,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            seed: 42,
            n_voices: 6,
            filter_seconds_per_class: 40.0,
            ambient_seconds_per_class: 40.0,
            ambient_components: 4,
            emotion_seconds: 20.0,
            emotion_components: 4,
            neutral_components: 8,
            speaker_seconds: 30.0,
            background_components: 16,
            frame_stride: 2,
            em: EmConfig::default(),
            tree: TreeConfig::default(),
        }
    }
}

/// Final training log-likelihood of each fitted model, per observation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub entries: Vec<(String, f64)>,
}

fn sub_seed(seed: u64, tag: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9).wrapping_add(tag.wrapping_mul(1_000_003)).wrapping_add(i)
}

/// Non-overlapping 5 s windows of a stream.
pub fn speech_windows(stream: &AudioStream) -> Result<Vec<Window>> {
    frame_stream(stream, WindowKind::Speech)
}

fn plp_frames(ex: &FeatureExtractor, stream: &AudioStream, stride: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for w in speech_windows(stream)? {
        out.extend(ex.plp(&w)?.into_iter().step_by(stride.max(1)));
    }
    Ok(out)
}

fn fit(
    label: &str,
    data: &[Vec<f64>],
    k: usize,
    seed: u64,
    plan: &TrainingPlan,
    report: &mut TrainingReport,
) -> Result<GmmModel> {
    if data.is_empty() {
        return Err(Error::InsufficientData(format!("no training data for {label}")));
    }
    let t = train_em(label, data, k, seed, &plan.em)?;
    let ll = t.history.last().copied().unwrap_or(f64::NAN) / data.len() as f64;
    report.entries.push((label.to_string(), ll));
    Ok(t.model)
}

fn ambient_windows(class: SoundClass, seconds: f64, seed: u64) -> Result<Vec<Window>> {
    frame_stream(&synth_ambient(class, seconds, seed)?, WindowKind::Ambient)
}

/// Speech audio spread across voices and a mix of styles.
fn mixed_speech(voices: &[VoiceProfile], seconds: f64, seed: u64) -> AudioStream {
    let per = seconds / voices.len() as f64;
    let mut stream = AudioStream::new(Vec::new(), crate::audio_io::Origin::Synthetic);
    for (i, v) in voices.iter().enumerate() {
        let e = NarrowEmotion::ALL[(i * 5 + seed as usize) % NarrowEmotion::ALL.len()];
        let style = if i % 2 == 0 { SpeakingStyle::default() } else { emotion_style(e) };
        stream = stream.concat(&synth_voice(v, &style, per, sub_seed(seed, 1, i as u64)));
    }
    stream
}

/// Speech/ambient decision tree on window summaries.
pub fn train_speech_filter(
    ex: &FeatureExtractor,
    voices: &[VoiceProfile],
    plan: &TrainingPlan,
) -> Result<DecisionTreeModel> {
    let mut data = Vec::new();
    for (i, class) in AMBIENT_CLASSES.iter().enumerate() {
        for w in ambient_windows(*class, plan.filter_seconds_per_class, sub_seed(plan.seed, 2, i as u64))? {
            data.push((ex.window_features(&w)?, SpeechClass::Ambient));
        }
    }
    for w in ambient_windows(SoundClass::Silence, plan.filter_seconds_per_class / 4.0, sub_seed(plan.seed, 3, 0))? {
        data.push((ex.window_features(&w)?, SpeechClass::Ambient));
    }
    let speech = mixed_speech(voices, plan.filter_seconds_per_class * 4.0, sub_seed(plan.seed, 4, 0));
    for w in frame_stream(&speech, WindowKind::Ambient)? {
        data.push((ex.window_features(&w)?, SpeechClass::Speech));
    }
    DecisionTreeModel::train(&data, &plan.tree)
}

/// One GMM per ambient class over the 27-dim frame observations.
pub fn train_ambient_models(
    ex: &FeatureExtractor,
    plan: &TrainingPlan,
    report: &mut TrainingReport,
) -> Result<Vec<(SoundClass, GmmModel)>> {
    let mut out = Vec::new();
    for (i, class) in AMBIENT_CLASSES.iter().enumerate() {
        let mut obs = Vec::new();
        for w in ambient_windows(*class, plan.ambient_seconds_per_class, sub_seed(plan.seed, 5, i as u64))? {
            obs.extend(ex.analyze_ambient(&w)?.observations());
        }
        let name = ambient_model_name(*class);
        out.push((*class, fit(&name, &obs, plan.ambient_components, plan.seed, plan, report)?));
    }
    Ok(out)
}

/// Neutral and filler gate models plus one model per narrow emotion.
pub fn train_emotion_models(
    ex: &FeatureExtractor,
    voices: &[VoiceProfile],
    plan: &TrainingPlan,
    report: &mut TrainingReport,
) -> Result<Vec<(String, GmmModel)>> {
    let mut neutral = Vec::new();
    let mut filler = Vec::new();
    let mut out = Vec::new();
    for (i, e) in NarrowEmotion::ALL.into_iter().enumerate() {
        let mut frames = Vec::new();
        let per = (plan.emotion_seconds / voices.len() as f64).max(5.0);
        for (j, v) in voices.iter().enumerate() {
            let stream = synth_voice(v, &emotion_style(e), per, sub_seed(plan.seed, 6, (i * 100 + j) as u64));
            frames.extend(plp_frames(ex, &stream, plan.frame_stride)?);
        }
        if e.is_neutral() {
            neutral.extend(frames.iter().cloned());
        } else {
            filler.extend(frames.iter().cloned());
        }
        let name = e.model_name();
        out.push((name.clone(), fit(&name, &frames, plan.emotion_components, plan.seed, plan, report)?));
    }
    out.push((
        NEUTRAL_MODEL.to_string(),
        fit(NEUTRAL_MODEL, &neutral, plan.neutral_components, plan.seed, plan, report)?,
    ));
    out.push((
        FILLER_MODEL.to_string(),
        fit(FILLER_MODEL, &filler, plan.neutral_components, plan.seed, plan, report)?,
    ));
    Ok(out)
}

/// Background model over all voices, then one MAP-adapted model per voice.
pub fn train_speaker_models(
    ex: &FeatureExtractor,
    voices: &[VoiceProfile],
    plan: &TrainingPlan,
    report: &mut TrainingReport,
) -> Result<(GmmModel, Vec<(VoiceProfile, GmmModel)>)> {
    let mut per_voice = Vec::new();
    let mut pooled = Vec::new();
    for (i, v) in voices.iter().enumerate() {
        let mut frames = Vec::new();
        let styles = [
            SpeakingStyle::default(),
            emotion_style(NarrowEmotion::Interest),
            emotion_style(NarrowEmotion::Boredom),
        ];
        for (k, style) in styles.iter().enumerate() {
            let stream = synth_voice(
                v,
                style,
                plan.speaker_seconds / styles.len() as f64,
                sub_seed(plan.seed, 7, (i * 10 + k) as u64),
            );
            frames.extend(plp_frames(ex, &stream, plan.frame_stride)?);
        }
        pooled.extend(frames.iter().cloned());
        per_voice.push(frames);
    }
    let background = fit(
        SPEAKER_BACKGROUND_MODEL,
        &pooled,
        plan.background_components,
        plan.seed,
        plan,
        report,
    )?;
    let mut out = Vec::new();
    for (v, frames) in voices.iter().zip(per_voice) {
        let name = speaker_model_name(&v.id);
        let m = map_adapt(&background, &name, &frames, DEFAULT_MAP_RELEVANCE)?.with_gender(v.gender);
        report
            .entries
            .push((name, m.log_likelihood(&frames)? / frames.len() as f64));
        out.push((v.clone(), m));
    }
    Ok((background, out))
}

/// Trains every model the orchestrator needs.
pub fn train_bundle(plan: &TrainingPlan) -> Result<(ModelBundle, Vec<VoiceProfile>, TrainingReport)> {
    let ex = FeatureExtractor::default();
    let voices = synthetic_voices(plan.n_voices, plan.seed);
    let mut report = TrainingReport::default();
    let mut bundle = ModelBundle::new();

    let tree = train_speech_filter(&ex, &voices, plan)?;
    bundle.insert(SPEECH_FILTER_MODEL, ModelRole::SpeechFilter, Placement::Dsp, Model::Tree(tree))?;
    for (class, m) in train_ambient_models(&ex, plan, &mut report)? {
        bundle.insert(ambient_model_name(class), ModelRole::Ambient, Placement::Dsp, Model::Gmm(m))?;
    }
    for (name, m) in train_emotion_models(&ex, &voices, plan, &mut report)? {
        let (role, placement) = if name == NEUTRAL_MODEL || name == FILLER_MODEL {
            (ModelRole::Neutral, Placement::Dsp)
        } else {
            (ModelRole::Emotion, Placement::Cpu)
        };
        bundle.insert(name, role, placement, Model::Gmm(m))?;
    }
    let (background, speakers) = train_speaker_models(&ex, &voices, plan, &mut report)?;
    bundle.insert(
        SPEAKER_BACKGROUND_MODEL,
        ModelRole::SpeakerBackground,
        Placement::Cpu,
        Model::Gmm(background),
    )?;
    for (v, m) in speakers {
        bundle.insert(speaker_model_name(&v.id), ModelRole::Speaker, Placement::Cpu, Model::Gmm(m))?;
    }
    Ok((bundle, voices, report))
}
