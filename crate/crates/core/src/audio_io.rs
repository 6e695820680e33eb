//! PCM ingestion, framing and synthetic signals.
//!
//! All audio in the engine runs at 8 kHz mono. Streams are cut into
//! windows of one of three fixed geometries ([`WindowKind`]); a window owns
//! its frames so the downstream feature code never has to think about hops.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 8000;
pub const NYQUIST_HZ: f64 = SAMPLE_RATE as f64 / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    File,
    Synthetic,
}

/// Mono 8 kHz audio with samples normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioStream {
    samples: Vec<f64>,
    origin: Origin,
}

impl AudioStream {
    /// Builds a stream, clamping samples into `[-1, 1]`.
    pub fn new(samples: Vec<f64>, origin: Origin) -> Self {
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Self { samples, origin }
    }

    pub fn silence(seconds: f64) -> Self {
        Self::new(vec![0.0; seconds_to_samples(seconds)], Origin::Synthetic)
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Appends another stream. The result is synthetic if either part is.
    pub fn concat(mut self, other: &AudioStream) -> Self {
        self.samples.extend_from_slice(&other.samples);
        if other.origin == Origin::Synthetic {
            self.origin = Origin::Synthetic;
        }
        self
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.origin,
        )
    }
}

pub fn seconds_to_samples(seconds: f64) -> usize {
    (seconds * SAMPLE_RATE as f64).round().max(0.0) as usize
}

/// A contiguous run of samples taken from a stream.
///
/// `start_index` is the offset of the first sample in the source stream.
/// Frames at the tail of a speaker-count window are zero-padded past the
/// window boundary, so `samples.len()` is always the kind's frame length.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub samples: Vec<f64>,
    pub start_index: usize,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WindowKind {
    /// 40 non-overlapping 32 ms frames (1.28 s).
    Ambient,
    /// 3 s of 32 ms frames with 50% overlap.
    SpeakerCount,
    /// 5 s of 30 ms frames with a 10 ms hop.
    Speech,
}

impl WindowKind {
    pub const ALL: [WindowKind; 3] = [
        WindowKind::Ambient,
        WindowKind::SpeakerCount,
        WindowKind::Speech,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Ambient => "ambient",
            WindowKind::SpeakerCount => "speaker_count",
            WindowKind::Speech => "speech",
        }
    }

    pub fn frame_len(self) -> usize {
        match self {
            WindowKind::Ambient | WindowKind::SpeakerCount => 256,
            WindowKind::Speech => 240,
        }
    }

    pub fn frame_hop(self) -> usize {
        match self {
            WindowKind::Ambient => 256,
            WindowKind::SpeakerCount => 128,
            WindowKind::Speech => 80,
        }
    }

    pub fn frames_per_window(self) -> usize {
        match self {
            WindowKind::Ambient => 40,
            WindowKind::SpeakerCount => 187,
            WindowKind::Speech => 498,
        }
    }

    /// Samples spanned by one window.
    pub fn window_len(self) -> usize {
        match self {
            WindowKind::Ambient => 40 * 256,
            WindowKind::SpeakerCount => 3 * SAMPLE_RATE as usize,
            WindowKind::Speech => 5 * SAMPLE_RATE as usize,
        }
    }

    /// Consecutive windows tile the stream without overlap.
    pub fn window_hop(self) -> usize {
        self.window_len()
    }

    pub fn window_seconds(self) -> f64 {
        self.window_len() as f64 / SAMPLE_RATE as f64
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub kind: WindowKind,
    pub start_index: usize,
    pub frames: Vec<Frame>,
}

impl Window {
    /// Cuts one window out of `samples`, which must hold exactly
    /// `kind.window_len()` values starting at stream offset `start_index`.
    pub fn from_samples(kind: WindowKind, samples: &[f64], start_index: usize) -> Result<Self> {
        let len = kind.window_len();
        if samples.len() != len {
            return Err(Error::StreamTooShort {
                needed: len,
                found: samples.len(),
            });
        }
        let (flen, hop) = (kind.frame_len(), kind.frame_hop());
        let frames = (0..kind.frames_per_window())
            .map(|k| {
                let off = k * hop;
                let end = (off + flen).min(len);
                let mut buf = samples[off..end].to_vec();
                buf.resize(flen, 0.0);
                Frame {
                    samples: buf,
                    start_index: start_index + off,
                }
            })
            .collect();
        Ok(Self {
            kind,
            start_index,
            frames,
        })
    }

    pub fn start_s(&self) -> f64 {
        self.start_index as f64 / SAMPLE_RATE as f64
    }

    pub fn end_s(&self) -> f64 {
        (self.start_index + self.kind.window_len()) as f64 / SAMPLE_RATE as f64
    }

    pub fn expect_kind(&self, kind: WindowKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::WrongWindowKind {
                expected: kind.name(),
                found: self.kind.name(),
            })
        }
    }
}

/// Number of whole windows of `kind` that fit in `n` samples.
pub fn window_count(n: usize, kind: WindowKind) -> usize {
    let len = kind.window_len();
    if n < len {
        0
    } else {
        (n - len) / kind.window_hop() + 1
    }
}

/// Tiles the stream with windows of `kind`; a trailing partial window is dropped.
pub fn frame_stream(stream: &AudioStream, kind: WindowKind) -> Result<Vec<Window>> {
    let n = stream.len();
    let count = window_count(n, kind);
    if count == 0 {
        return Err(Error::StreamTooShort {
            needed: kind.window_len(),
            found: n,
        });
    }
    (0..count)
        .map(|w| {
            let start = w * kind.window_hop();
            Window::from_samples(kind, &stream.samples[start..start + kind.window_len()], start)
        })
        .collect()
}

/// Reads a mono 16-bit PCM WAV file.
///
/// Files at other rates are rejected unless `resample` is set, in which case
/// they are converted to 8 kHz by linear interpolation.
pub fn read_stream(path: impl AsRef<Path>, resample: bool) -> Result<AudioStream> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding(format!("{}: unsupported wav layout", path.display()))
        }
        other => Error::MalformedWav(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels, only mono is supported",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding(format!(
            "{:?} {}-bit samples, only 16-bit PCM is supported",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate != SAMPLE_RATE && !resample {
        return Err(Error::WrongSampleRate {
            found: spec.sample_rate,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::MalformedWav(e.to_string()))?;
    let samples = if spec.sample_rate == SAMPLE_RATE {
        samples
    } else {
        resample_linear(&samples, spec.sample_rate, SAMPLE_RATE)
    };
    Ok(AudioStream::new(samples, Origin::File))
}

/// Writes the stream as mono 16-bit PCM at 8 kHz.
pub fn write_wav(path: impl AsRef<Path>, stream: &AudioStream) -> Result<()> {
    write_wav_at(path, stream.samples(), SAMPLE_RATE)
}

pub(crate) fn write_wav_at(path: impl AsRef<Path>, samples: &[f64], rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::MalformedWav(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        writer.write_sample(quantize(s)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn resample_linear(samples: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    if samples.is_empty() || from_rate == to_rate {
        return samples.to_vec();
    }
    let out_len = (samples.len() as u64 * to_rate as u64 / from_rate as u64) as usize;
    let step = from_rate as f64 / to_rate as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let idx = pos.floor() as usize;
            let frac = pos - idx as f64;
            let a = samples[idx.min(samples.len() - 1)];
            let b = samples[(idx + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

/// Recipe for a synthetic test signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SignalSpec {
    Silence,
    Tone { freq_hz: f64, amplitude: f64 },
    Sawtooth { freq_hz: f64, amplitude: f64 },
    WhiteNoise { amplitude: f64 },
    Mixture(Vec<SignalSpec>),
}

impl SignalSpec {
    fn validate(&self) -> Result<()> {
        match self {
            SignalSpec::Tone { freq_hz, .. } | SignalSpec::Sawtooth { freq_hz, .. } => {
                if !(*freq_hz > 0.0 && *freq_hz < NYQUIST_HZ) {
                    return Err(Error::InvalidSignal(format!(
                        "frequency {freq_hz} Hz must lie in (0, {NYQUIST_HZ}) Hz"
                    )));
                }
                Ok(())
            }
            SignalSpec::Mixture(parts) => parts.iter().try_for_each(SignalSpec::validate),
            SignalSpec::Silence | SignalSpec::WhiteNoise { .. } => Ok(()),
        }
    }

    fn render(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let sr = SAMPLE_RATE as f64;
        match self {
            SignalSpec::Silence => vec![0.0; n],
            SignalSpec::Tone { freq_hz, amplitude } => (0..n)
                .map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / sr).sin())
                .collect(),
            SignalSpec::Sawtooth { freq_hz, amplitude } => (0..n)
                .map(|i| {
                    let phase = (freq_hz * i as f64 / sr).fract();
                    amplitude * (2.0 * phase - 1.0)
                })
                .collect(),
            SignalSpec::WhiteNoise { amplitude } => {
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                (0..n).map(|_| amplitude * normal.sample(rng)).collect()
            }
            SignalSpec::Mixture(parts) => {
                let mut acc = vec![0.0; n];
                for part in parts {
                    for (a, v) in acc.iter_mut().zip(part.render(n, rng)) {
                        *a += v;
                    }
                }
                acc
            }
        }
    }
}

/// Renders a deterministic synthetic stream.
pub fn synth_signal(spec: &SignalSpec, duration_s: f64, seed: u64) -> Result<AudioStream> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = seconds_to_samples(duration_s);
    Ok(AudioStream::new(spec.render(n, &mut rng), Origin::Synthetic))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoundClass {
    Silence,
    Speech,
    Music,
    Traffic,
    Water,
    Other,
}

impl SoundClass {
    pub fn name(self) -> &'static str {
        match self {
            SoundClass::Silence => "silence",
            SoundClass::Speech => "speech",
            SoundClass::Music => "music",
            SoundClass::Traffic => "traffic",
            SoundClass::Water => "water",
            SoundClass::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "silence" => SoundClass::Silence,
            "speech" => SoundClass::Speech,
            "music" => SoundClass::Music,
            "traffic" => SoundClass::Traffic,
            "water" => SoundClass::Water,
            "other" => SoundClass::Other,
            _ => return None,
        })
    }

    pub fn is_ambient(self) -> bool {
        matches!(
            self,
            SoundClass::Music | SoundClass::Traffic | SoundClass::Water | SoundClass::Other
        )
    }
}

impl fmt::Display for SoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSegment {
    pub duration_s: f64,
    pub class: SoundClass,
    pub label: Option<String>,
}

/// A day (or any span) of audio described as labelled segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SoundTrace {
    pub segments: Vec<TraceSegment>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    start_s: f64,
    duration_s: f64,
    class: String,
    label: String,
}

impl SoundTrace {
    pub fn push(&mut self, duration_s: f64, class: SoundClass) {
        self.segments.push(TraceSegment {
            duration_s,
            class,
            label: None,
        });
    }

    pub fn total_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    pub fn seconds_of(&self, class: SoundClass) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.class == class)
            .map(|s| s.duration_s)
            .sum()
    }

    pub fn ambient_s(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.class.is_ambient())
            .map(|s| s.duration_s)
            .sum()
    }

    /// Checks positive durations and, when given, the total length.
    pub fn validate(&self, expected_total_s: Option<f64>) -> Result<()> {
        if let Some(seg) = self
            .segments
            .iter()
            .find(|s| !(s.duration_s > 0.0 && s.duration_s.is_finite()))
        {
            return Err(Error::InconsistentTrace(format!(
                "segment duration {} is not positive",
                seg.duration_s
            )));
        }
        if let Some(total) = expected_total_s {
            let got = self.total_s();
            if (got - total).abs() > 1e-6 * total.max(1.0) {
                return Err(Error::InconsistentTrace(format!(
                    "trace covers {got} s, expected {total} s"
                )));
            }
        }
        Ok(())
    }

    /// Builds a day with fixed silence and speech totals, the rest ambient.
    ///
    /// Silence is one night block at the start; the waking hours interleave
    /// conversations (5-30 min) with ambient stretches drawn from the four
    /// ambient classes. Conversations carry short pauses so the trace
    /// exercises the time spread between buffered speech windows.
    pub fn synthetic_day(speech_h: f64, silence_h: f64, seed: u64) -> Result<Self> {
        const DAY_S: f64 = 24.0 * 3600.0;
        let speech_total = speech_h * 3600.0;
        let silence_total = silence_h * 3600.0;
        if speech_total < 0.0 || silence_total < 0.0 || speech_total + silence_total > DAY_S {
            return Err(Error::InconsistentTrace(format!(
                "{speech_h} h speech + {silence_h} h silence exceeds a day"
            )));
        }
        let ambient_total = DAY_S - speech_total - silence_total;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trace = SoundTrace::default();
        if silence_total > 0.0 {
            trace.push(silence_total, SoundClass::Silence);
        }

        use rand::Rng;
        let ambient_classes = [
            SoundClass::Music,
            SoundClass::Traffic,
            SoundClass::Water,
            SoundClass::Other,
        ];
        let mut speech_left = speech_total;
        let mut ambient_left = ambient_total;
        while speech_left > 1e-9 || ambient_left > 1e-9 {
            // Interleave in proportion to what remains so both run out together.
            let take_speech = if ambient_left <= 1e-9 {
                true
            } else if speech_left <= 1e-9 {
                false
            } else {
                rng.random::<f64>() < speech_left / (speech_left + ambient_left)
            };
            if take_speech {
                let conv = rng.random_range(300.0..1800.0f64).min(speech_left);
                let mut left = conv;
                while left > 1e-9 {
                    let turn = rng.random_range(20.0..90.0f64).min(left);
                    trace.push(turn, SoundClass::Speech);
                    left -= turn;
                    if left > 1e-9 && ambient_left > 2.0 {
                        let pause = rng.random_range(1.0..4.0f64).min(ambient_left);
                        trace.push(pause, SoundClass::Other);
                        ambient_left -= pause;
                    }
                }
                speech_left -= conv;
            } else {
                let span = rng.random_range(300.0..3600.0f64).min(ambient_left);
                let class = ambient_classes[rng.random_range(0..ambient_classes.len())];
                trace.push(span, class);
                ambient_left -= span;
            }
        }
        trace.merge_adjacent();
        Ok(trace)
    }

    fn merge_adjacent(&mut self) {
        let mut merged: Vec<TraceSegment> = Vec::with_capacity(self.segments.len());
        for seg in self.segments.drain(..) {
            match merged.last_mut() {
                Some(last) if last.class == seg.class && last.label == seg.label => {
                    last.duration_s += seg.duration_s;
                }
                _ => merged.push(seg),
            }
        }
        self.segments = merged;
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut t = 0.0;
        for seg in &self.segments {
            w.serialize(TraceRow {
                start_s: t,
                duration_s: seg.duration_s,
                class: seg.class.name().to_string(),
                label: seg.label.clone().unwrap_or_default(),
            })
            .map_err(|e| Error::Csv(e.to_string()))?;
            t += seg.duration_s;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut trace = SoundTrace::default();
        let mut expected_start = 0.0;
        for row in r.deserialize::<TraceRow>() {
            let row = row.map_err(|e| Error::Csv(e.to_string()))?;
            let class = SoundClass::parse(&row.class).ok_or_else(|| {
                Error::InconsistentTrace(format!("unknown sound class `{}`", row.class))
            })?;
            if (row.start_s - expected_start).abs() > 1e-3 {
                return Err(Error::InconsistentTrace(format!(
                    "segment starts at {} s but previous segment ends at {} s",
                    row.start_s, expected_start
                )));
            }
            expected_start = row.start_s + row.duration_s;
            trace.segments.push(TraceSegment {
                duration_s: row.duration_s,
                class,
                label: (!row.label.is_empty()).then_some(row.label),
            });
        }
        trace.validate(None)?;
        Ok(trace)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }
}
