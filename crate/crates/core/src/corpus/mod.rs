//! Synthetic audio with known generative structure: formant voices with
//! speaking styles, four ambient sound classes and quiet rooms.

mod training;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio_io::{seconds_to_samples, AudioStream, Origin, SoundClass, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::models::Gender;
use crate::pipelines::NarrowEmotion;

pub use training::{
    speech_windows, train_bundle, train_emotion_models, train_speaker_models, train_speech_filter,
    train_ambient_models, TrainingPlan, TrainingReport,
};

const SR: f64 = SAMPLE_RATE as f64;

/// Average adult male vowel formants (F1, F2, F3) in Hz.
const VOWELS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
    [490.0, 1350.0, 1690.0],
    [570.0, 840.0, 2410.0],
    [440.0, 1020.0, 2240.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceProfile {
    pub id: String,
    pub gender: Gender,
    pub f0_hz: f64,
    /// Vocal tract scaling applied to every formant.
    pub formant_scale: f64,
    /// Per-vowel formant offsets, one factor per vowel and formant.
    pub vowel_offsets: Vec<[f64; 3]>,
    pub breathiness: f64,
    /// Fixed high resonance colouring every vowel.
    pub f4_hz: f64,
    pub tilt_offset: f64,
}

impl VoiceProfile {
    pub fn new(id: impl Into<String>, gender: Gender, f0_hz: f64, formant_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vowel_offsets = (0..VOWELS.len())
            .map(|_| [0; 3].map(|_| rng.random_range(0.9..1.1)))
            .collect();
        Self {
            id: id.into(),
            gender,
            f0_hz,
            formant_scale,
            vowel_offsets,
            breathiness: rng.random_range(0.02..0.08),
            f4_hz: rng.random_range(2600.0..3600.0),
            tilt_offset: rng.random_range(-0.04..0.04),
        }
    }
}

/// `n` distinct voices alternating male and female.
pub fn synthetic_voices(n: usize, seed: u64) -> Vec<VoiceProfile> {
    let male_f0 = [105.0, 125.0, 140.0, 115.0, 132.0, 98.0];
    let female_f0 = [205.0, 230.0, 255.0, 215.0, 242.0, 198.0];
    let male_scale = [1.0, 0.88, 1.12, 0.94, 1.06, 0.82];
    let female_scale = [1.2, 1.3, 1.1, 1.25, 1.15, 1.35];
    let tilt = [0.0, -0.07, 0.05, -0.03, 0.07, -0.05];
    (0..n)
        .map(|i| {
            let k = (i / 2) % male_f0.len();
            let s = seed.wrapping_mul(1000).wrapping_add(i as u64);
            let mut v = if i % 2 == 0 {
                VoiceProfile::new(format!("m{}", i / 2 + 1), Gender::Male, male_f0[k], male_scale[k], s)
            } else {
                VoiceProfile::new(format!("f{}", i / 2 + 1), Gender::Female, female_f0[k], female_scale[k], s)
            };
            v.tilt_offset = tilt[k];
            v
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakingStyle {
    pub pitch_ratio: f64,
    /// Relative depth of the intonation contour.
    pub pitch_range: f64,
    pub syllables_per_s: f64,
    pub loudness: f64,
    /// Glottal source smoothing; lower values give a brighter, pressed voice.
    pub source_tilt: f64,
}

impl Default for SpeakingStyle {
    fn default() -> Self {
        Self {
            pitch_ratio: 1.0,
            pitch_range: 0.08,
            syllables_per_s: 4.0,
            loudness: 0.35,
            source_tilt: 0.9,
        }
    }
}

/// Style used to render each narrow emotion; neutral ones stay close to the default.
pub fn emotion_style(e: NarrowEmotion) -> SpeakingStyle {
    use NarrowEmotion::*;
    let s = |pitch_ratio, pitch_range, syllables_per_s, loudness, source_tilt| SpeakingStyle {
        pitch_ratio,
        pitch_range,
        syllables_per_s,
        loudness,
        source_tilt,
    };
    match e {
        Boredom => s(0.95, 0.03, 3.2, 0.28, 0.93),
        NeutralDistant => s(1.0, 0.05, 3.8, 0.25, 0.92),
        NeutralConversation => s(1.0, 0.08, 4.0, 0.33, 0.9),
        NeutralNormal => s(1.0, 0.07, 4.2, 0.35, 0.9),
        NeutralTete => s(0.98, 0.06, 3.9, 0.3, 0.91),
        Passive => s(0.96, 0.04, 3.5, 0.3, 0.92),
        Disgust => s(0.92, 0.12, 3.4, 0.5, 0.7),
        Dominant => s(1.05, 0.1, 4.6, 0.65, 0.6),
        HotAnger => s(1.25, 0.18, 5.5, 0.8, 0.45),
        Panic => s(1.45, 0.25, 6.2, 0.7, 0.55),
        Elation => s(1.35, 0.3, 5.2, 0.65, 0.6),
        Interest => s(1.15, 0.22, 4.8, 0.5, 0.68),
        Happiness => s(1.3, 0.26, 5.0, 0.6, 0.62),
        Sadness => s(0.85, 0.05, 2.6, 0.18, 0.96),
    }
}

struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64) -> Self {
        let r = (-PI * bandwidth / SR).exp();
        Self {
            a1: 2.0 * r * (2.0 * PI * freq / SR).cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        for v in x.iter_mut() {
            *v *= peak / m;
        }
    }
}

fn add_floor(x: &mut [f64], level: f64, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0, level).expect("positive level");
    for v in x.iter_mut() {
        *v = (*v + normal.sample(rng)).clamp(-1.0, 1.0);
    }
}

/// Voiced syllables separated by short pauses.
pub fn synth_voice(voice: &VoiceProfile, style: &SpeakingStyle, duration_s: f64, seed: u64) -> AudioStream {
    let n = seconds_to_samples(duration_s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = vec![0.0; n];
    let mut pos = 0;
    let mut phase = 0.0;
    let contour_period = rng.random_range(1.5..2.5);
    let contour_phase = rng.random_range(0.0..2.0 * PI);
    while pos < n {
        let syl = (SR * rng.random_range(0.6..1.4) / style.syllables_per_s) as usize;
        let pause = if rng.random::<f64>() < 0.12 {
            (SR * rng.random_range(0.25..0.5)) as usize
        } else {
            (SR * rng.random_range(0.03..0.12)) as usize
        };
        let v = rng.random_range(0..VOWELS.len());
        let mut filters: Vec<Resonator> = (0..3)
            .map(|k| {
                let f = (VOWELS[v][k] * voice.formant_scale * voice.vowel_offsets[v][k]).min(3800.0);
                Resonator::new(f, [70.0, 100.0, 140.0][k])
            })
            .collect();
        filters.push(Resonator::new(voice.f4_hz, 180.0));
        let tilt = (style.source_tilt + voice.tilt_offset).clamp(0.3, 0.97);
        let peak = style.loudness * rng.random_range(0.75..1.25);
        let mut src_lp = 0.0;
        let mut carry = 0.0;
        let mut syllable = Vec::with_capacity(syl);
        for i in 0..syl.min(n - pos) {
            let t = (pos + i) as f64 / SR;
            let f0 = voice.f0_hz
                * style.pitch_ratio
                * (1.0 + style.pitch_range * (2.0 * PI * t / contour_period + contour_phase).sin())
                * (1.0 + 0.01 * noise.sample(&mut rng));
            let step = f0 / SR;
            phase += step;
            // split each pulse over two samples at its fractional position
            let mut pulse = carry;
            carry = 0.0;
            if phase >= 1.0 {
                phase -= 1.0;
                let d = phase / step;
                pulse += d;
                carry = 1.0 - d;
            }
            let excitation = pulse + voice.breathiness * noise.sample(&mut rng);
            src_lp = (1.0 - tilt) * excitation + tilt * src_lp;
            let mut y = 0.0;
            for f in filters.iter_mut() {
                y += f.step(src_lp);
            }
            let env = (PI * i as f64 / syl as f64).sin().sqrt();
            syllable.push(y * env);
        }
        normalize_peak(&mut syllable, peak);
        out[pos..pos + syllable.len()].copy_from_slice(&syllable);
        pos += syllable.len() + pause;
    }
    add_floor(&mut out, 0.002, &mut rng);
    AudioStream::new(out, Origin::Synthetic)
}

fn synth_music(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const SCALE: [f64; 10] = [220.0, 247.5, 277.2, 330.0, 370.0, 440.0, 495.0, 554.4, 660.0, 740.0];
    let mut out = vec![0.0; n];
    for _voice in 0..3 {
        let mut pos = rng.random_range(0..(SR * 0.2) as usize);
        while pos < n {
            let len = (SR * rng.random_range(0.2..0.6)) as usize;
            let f = SCALE[rng.random_range(0..SCALE.len())];
            let amp = rng.random_range(0.05..0.12);
            for i in 0..len.min(n - pos) {
                let t = i as f64 / SR;
                let env = (1.0 - (-t / 0.01).exp()) * (-t / 0.4).exp();
                let mut s = 0.0;
                for h in 1..=5 {
                    let fh = f * h as f64;
                    if fh < 3900.0 {
                        s += (2.0 * PI * fh * t).sin() / h as f64;
                    }
                }
                out[pos + i] += amp * env * s;
            }
            pos += len;
        }
    }
    out
}

fn synth_traffic(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let engine = rng.random_range(35.0..70.0);
    let pass_period = rng.random_range(3.0..8.0);
    let pass_phase = rng.random_range(0.0..2.0 * PI);
    let mut brown = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / SR;
            brown = 0.985 * brown + 0.05 * noise.sample(rng);
            let hum: f64 = (1..=4)
                .map(|h| (2.0 * PI * engine * h as f64 * t).sin() / h as f64)
                .sum();
            let swell = 0.6 + 0.4 * (2.0 * PI * t / pass_period + pass_phase).sin();
            swell * (0.6 * brown + 0.05 * hum)
        })
        .collect()
}

fn synth_water(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut prev = 0.0;
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w = noise.sample(rng);
            let hp = w - 0.7 * prev;
            prev = w;
            0.05 * hp
        })
        .collect();
    let bubbles = (n as f64 / SR * rng.random_range(8.0..20.0)) as usize;
    for _ in 0..bubbles {
        let start = rng.random_range(0..n);
        let len = (SR * rng.random_range(0.01..0.04)) as usize;
        let f_start = rng.random_range(700.0..1500.0);
        let f_end = f_start * rng.random_range(1.3..2.2);
        let amp = rng.random_range(0.05..0.15);
        let mut ph = 0.0;
        for i in 0..len.min(n - start) {
            let frac = i as f64 / len as f64;
            ph += (f_start + (f_end - f_start) * frac) / SR;
            out[start + i] += amp * (PI * frac).sin() * (2.0 * PI * ph).sin();
        }
    }
    out
}

fn synth_other(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    // steady room hum under the events
    let hum_f = rng.random_range(90.0..150.0);
    let mut out: Vec<f64> = (0..n)
        .map(|i| 0.03 * (2.0 * PI * hum_f * i as f64 / SR).sin() + 0.01 * noise.sample(rng))
        .collect();
    let mut pos = 0;
    while pos < n {
        let len = ((SR * rng.random_range(0.5..1.5)) as usize).min(n - pos);
        match rng.random_range(0..3) {
            0 => {
                // typing clicks
                let mut k = 0;
                while k < len {
                    let click = (SR * 0.005) as usize;
                    for i in 0..click.min(len - k) {
                        out[pos + k + i] += 0.3 * noise.sample(rng) * (-(i as f64) / 10.0).exp();
                    }
                    k += (SR * rng.random_range(0.08..0.2)) as usize;
                }
            }
            1 => {
                let f = rng.random_range(900.0..3000.0);
                for i in 0..len {
                    out[pos + i] += 0.15 * (2.0 * PI * f * i as f64 / SR).sin();
                }
            }
            _ => {
                let mut lp = 0.0;
                for i in 0..len {
                    lp = 0.9 * lp + 0.1 * noise.sample(rng);
                    out[pos + i] += 0.4 * lp * (-(i as f64) / (0.3 * SR)).exp();
                }
            }
        }
        pos += len;
    }
    out
}

/// Non-speech audio of one class; `Silence` is a quiet room.
pub fn synth_ambient(class: SoundClass, duration_s: f64, seed: u64) -> Result<AudioStream> {
    let n = seconds_to_samples(duration_s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = match class {
        SoundClass::Silence => vec![0.0; n],
        SoundClass::Music => synth_music(n, &mut rng),
        SoundClass::Traffic => synth_traffic(n, &mut rng),
        SoundClass::Water => synth_water(n, &mut rng),
        SoundClass::Other => synth_other(n, &mut rng),
        SoundClass::Speech => {
            return Err(Error::InvalidSignal("use synth_voice for speech".into()));
        }
    };
    add_floor(&mut x, 0.002, &mut rng);
    Ok(AudioStream::new(x, Origin::Synthetic))
}

/// One piece of a scripted stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScriptPart {
    Sound { class: SoundClass, seconds: f64 },
    Speech { voice: usize, emotion: NarrowEmotion, seconds: f64 },
}

impl ScriptPart {
    pub fn seconds(&self) -> f64 {
        match self {
            ScriptPart::Sound { seconds, .. } | ScriptPart::Speech { seconds, .. } => *seconds,
        }
    }
}

/// Renders a script with the given voices.
pub fn render_script(parts: &[ScriptPart], voices: &[VoiceProfile], seed: u64) -> Result<AudioStream> {
    let mut stream = AudioStream::new(Vec::new(), Origin::Synthetic);
    for (i, part) in parts.iter().enumerate() {
        let s = seed.wrapping_mul(7919).wrapping_add(i as u64);
        let piece = match part {
            ScriptPart::Sound { class, seconds } => synth_ambient(*class, *seconds, s)?,
            ScriptPart::Speech {
                voice,
                emotion,
                seconds,
            } => {
                let v = voices
                    .get(*voice)
                    .ok_or_else(|| Error::InvalidSignal(format!("no voice {voice}")))?;
                synth_voice(v, &emotion_style(*emotion), *seconds, s)
            }
        };
        stream = stream.concat(&piece);
    }
    Ok(stream)
}

/// A random mix of silence, ambient sound and conversations.
pub fn random_script(total_s: f64, n_voices: usize, seed: u64) -> Vec<ScriptPart> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::new();
    let mut t = 0.0;
    let classes = [
        SoundClass::Silence,
        SoundClass::Music,
        SoundClass::Traffic,
        SoundClass::Water,
        SoundClass::Other,
    ];
    while t < total_s {
        let seconds: f64 = if rng.random::<f64>() < 0.4 {
            rng.random_range(6.0..20.0)
        } else {
            rng.random_range(2.0..12.0)
        };
        let seconds = seconds.min(total_s - t).max(0.5);
        let part = if rng.random::<f64>() < 0.4 {
            ScriptPart::Speech {
                voice: rng.random_range(0..n_voices),
                emotion: NarrowEmotion::ALL[rng.random_range(0..NarrowEmotion::ALL.len())],
                seconds,
            }
        } else {
            ScriptPart::Sound {
                class: classes[rng.random_range(0..classes.len())],
                seconds,
            }
        };
        t += seconds;
        parts.push(part);
    }
    parts
}
