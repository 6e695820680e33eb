use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use dspear::audio_io::{synth_signal, write_wav, AudioStream, SignalSpec, SoundClass, SoundTrace, TraceSegment};
use dspear::corpus::{emotion_style, render_script, synth_ambient, synth_voice, synthetic_voices, ScriptPart, SpeakingStyle};
use dspear::models::{Gender, Model, ModelBundle};
use dspear::pipelines::{read_events, NarrowEmotion};
use tempfile::TempDir;

fn dspear(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dspear"))
        .args(args)
        .current_dir(dir)
        .env_remove("DSPEAR_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {stdout}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn fails(out: &Output, code: i32) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(out.status.code(), Some(code), "stderr: {stderr}");
    stderr
}

/// Synthetic bundle trained once and shared by the tests.
fn models() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli_bundle");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        ok(&dspear(&dir, &["train", "--models", "m"]));
        dir.join("m")
    })
}

fn lifetime(dir: &Path) -> f64 {
    let text = std::fs::read_to_string(dir.join("simulation.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["lifetime_h"].as_f64().unwrap()
}

/// 10 s of angry speech from voice 0 then 65 s of silence, with labels.
fn conversation(dir: &Path) -> (PathBuf, PathBuf) {
    let voices = synthetic_voices(6, 42);
    let parts = [
        ScriptPart::Speech {
            voice: 0,
            emotion: NarrowEmotion::HotAnger,
            seconds: 10.0,
        },
        ScriptPart::Sound {
            class: SoundClass::Silence,
            seconds: 65.0,
        },
    ];
    let stream = render_script(&parts, &voices, 7).unwrap();
    let wav = dir.join("talk.wav");
    write_wav(&wav, &stream).unwrap();
    let trace = SoundTrace {
        segments: vec![
            TraceSegment {
                duration_s: 10.0,
                class: SoundClass::Speech,
                label: Some(format!("{}:hot_anger", voices[0].id)),
            },
            TraceSegment {
                duration_s: 65.0,
                class: SoundClass::Silence,
                label: None,
            },
        ],
    };
    let labels = dir.join("talk.csv");
    trace.write_csv(&labels).unwrap();
    (wav, labels)
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

fn write(dir: &Path, rel: &str, stream: &AudioStream) {
    let p = dir.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    write_wav(p, stream).unwrap();
}

#[test]
fn synthetic_bundle_has_every_model() {
    let m = models();
    let bundle = ModelBundle::load(m).unwrap();
    assert_eq!(bundle.len(), 28);
    assert!(m.join("ambient_background.dspm").is_file());
}

#[test]
fn ambient_corpus_gives_four_models_and_background() {
    let tmp = TempDir::new().unwrap();
    for (i, class) in ["music", "traffic", "water", "other"].into_iter().enumerate() {
        let s = synth_ambient(SoundClass::parse(class).unwrap(), 8.0, i as u64).unwrap();
        write(tmp.path(), &format!("corpus/{class}/a.wav"), &s);
    }
    let out = ok(&dspear(tmp.path(), &["train", "--kind", "ambient", "--corpus", "corpus", "--models", "m"]));
    assert_eq!(out.matches("trained ambient/").count(), 5, "{out}");
    let mut files: Vec<String> = std::fs::read_dir(tmp.path().join("m"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".dspm"))
        .collect();
    files.sort();
    assert_eq!(
        files,
        [
            "ambient__music.dspm",
            "ambient__other.dspm",
            "ambient__traffic.dspm",
            "ambient__water.dspm",
            "ambient_background.dspm"
        ]
    );
}

#[test]
fn speaker_corpus_gives_background_and_gendered_models() {
    let tmp = TempDir::new().unwrap();
    let voices = synthetic_voices(6, 42);
    for (i, v) in voices.iter().enumerate() {
        write(tmp.path(), &format!("corpus/{}/a.wav", v.id), &synth_voice(v, &SpeakingStyle::default(), 10.0, i as u64));
    }
    ok(&dspear(tmp.path(), &["train", "--kind", "speaker", "--corpus", "corpus", "--models", "m"]));
    let bundle = ModelBundle::load(tmp.path().join("m")).unwrap();
    assert_eq!(bundle.len(), 7);
    assert!(bundle.get("speaker/background").is_some());
    for v in &voices {
        let g = bundle.gmm(&format!("speaker/{}", v.id)).unwrap();
        assert_eq!(g.gender, Some(v.gender), "{}", v.id);
    }
    assert!(voices.iter().any(|v| v.gender == Gender::Female));
}

#[test]
fn single_class_tree_corpus_names_the_missing_class() {
    let tmp = TempDir::new().unwrap();
    let v = &synthetic_voices(1, 1)[0];
    write(tmp.path(), "corpus/speech/a.wav", &synth_voice(v, &SpeakingStyle::default(), 4.0, 0));
    let err = fails(
        &dspear(tmp.path(), &["train", "--kind", "speech-filter", "--corpus", "corpus", "--models", "m"]),
        3,
    );
    assert!(err.contains("missing class `ambient`"), "{err}");
}

#[test]
fn empty_class_directory_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    std::fs::create_dir_all(tmp.path().join("corpus/music")).unwrap();
    let err = fails(&dspear(tmp.path(), &["train", "--kind", "ambient", "--corpus", "corpus"]), 3);
    assert!(err.contains("music"), "{err}");
}

#[test]
fn unreadable_audio_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    std::fs::create_dir_all(tmp.path().join("corpus/music")).unwrap();
    std::fs::write(tmp.path().join("corpus/music/a.wav"), b"not a wav").unwrap();
    fails(&dspear(tmp.path(), &["train", "--kind", "ambient", "--corpus", "corpus"]), 3);
    let m = models().to_str().unwrap();
    fails(&dspear(tmp.path(), &["run", "--audio", "corpus/music/a.wav", "--models", m]), 3);
}

#[test]
fn silence_run_has_only_silence_events() {
    let tmp = TempDir::new().unwrap();
    write_wav(tmp.path().join("quiet.wav"), &AudioStream::silence(20.0)).unwrap();
    let m = models().to_str().unwrap();
    let out = ok(&dspear(tmp.path(), &["run", "--audio", "quiet.wav", "--models", m, "--out", "o"]));
    assert!(out.contains("silence="), "{out}");
    let events = read_events(tmp.path().join("o/events.jsonl")).unwrap();
    assert!(!events.is_empty());
    assert!(events.iter().all(|e| e.kind.pipeline() == "silence"));
    let covered: f64 = events.iter().map(|e| e.t_end - e.t_start).sum();
    assert!((covered - 20.0).abs() < 1e-6, "{covered}");
}

#[test]
fn speech_run_emits_emotion_speaker_and_count() {
    let tmp = TempDir::new().unwrap();
    let (wav, _) = conversation(tmp.path());
    let m = models().to_str().unwrap();
    ok(&dspear(tmp.path(), &["run", "--audio", wav.to_str().unwrap(), "--models", m, "--out", "o"]));
    let events = read_events(tmp.path().join("o/events.jsonl")).unwrap();
    for p in ["emotion", "speaker", "speaker_count", "gender", "silence"] {
        assert!(events.iter().any(|e| e.kind.pipeline() == p), "no {p} event");
    }
    for f in ["invocations.csv", "gate_stats.csv", "run.json"] {
        assert!(tmp.path().join("o").join(f).is_file(), "{f}");
    }
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (wav, _) = conversation(tmp.path());
    let m = models().to_str().unwrap();
    let wav = wav.to_str().unwrap();
    ok(&dspear(tmp.path(), &["run", "--audio", wav, "--models", m, "--out", "a"]));
    ok(&dspear(tmp.path(), &["run", "--audio", wav, "--models", m, "--out", "b", "--mode", "single-threaded"]));
    for f in ["events.jsonl", "invocations.csv", "gate_stats.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn missing_models_exit_with_stage_name() {
    let tmp = TempDir::new().unwrap();
    let bundle = ModelBundle::load(models()).unwrap();
    let mut partial = ModelBundle::new();
    let e = bundle.get("speech_filter").unwrap();
    partial.insert("speech_filter", e.role, e.placement, e.model.clone()).unwrap();
    partial.save(tmp.path().join("m")).unwrap();
    let tone = synth_signal(&SignalSpec::Tone { freq_hz: 440.0, amplitude: 0.5 }, 5.0, 0).unwrap();
    write_wav(tmp.path().join("t.wav"), &tone).unwrap();
    let err = fails(&dspear(tmp.path(), &["run", "--audio", "t.wav", "--models", "m"]), 2);
    assert!(err.contains("stage `ambient"), "{err}");
    let err = fails(&dspear(tmp.path(), &["run", "--audio", "t.wav", "--models", "nowhere"]), 2);
    assert!(err.contains("nowhere"), "{err}");
}

#[test]
fn simulate_reproduces_battery_anchors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let base = ["simulate", "--workload", "speaker-counting", "--speech-only", "--speech-h", "24"];
    ok(&dspear(d, &[&base[..], &["--variant", "cpu_only_naive", "--out", "cpu"]].concat()));
    ok(&dspear(d, &[&base[..], &["--variant", "dsp_cpu_naive", "--out", "dsp"]].concat()));
    ok(&dspear(d, &["simulate", "--speech-h", "4.5", "--silence-h", "8", "--out", "opt"]));
    let (cpu, dsp, opt) = (lifetime(&d.join("cpu")), lifetime(&d.join("dsp")), lifetime(&d.join("opt")));
    assert!((13.0..14.0).contains(&cpu), "{cpu}");
    assert!(dsp > 154.0 && dsp <= 160.0, "{dsp}");
    assert!((opt - 60.0).abs() <= 9.0, "{opt}");
}

#[test]
fn simulate_from_run_counts() {
    let tmp = TempDir::new().unwrap();
    let (wav, _) = conversation(tmp.path());
    let m = models().to_str().unwrap();
    ok(&dspear(tmp.path(), &["run", "--audio", wav.to_str().unwrap(), "--models", m, "--out", "o"]));
    ok(&dspear(
        tmp.path(),
        &["simulate", "--counts", "o/invocations.csv", "--duration-s", "75", "--out", "s"],
    ));
    assert!(lifetime(&tmp.path().join("s")) > 0.0);
    fails(&dspear(tmp.path(), &["simulate", "--counts", "o/invocations.csv"]), 2);
}

#[test]
fn report_of_one_simulation_is_one_row() {
    let tmp = TempDir::new().unwrap();
    ok(&dspear(tmp.path(), &["simulate", "--out", "outputs/sim"]));
    ok(&dspear(tmp.path(), &["report", "outputs", "--out", "r"]));
    let rows = csv_rows(&tmp.path().join("r/lifetime_vs_speech.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][2], "dsp_cpu_optimized");
}

#[test]
fn report_of_sweep_has_monotone_lifetimes() {
    let tmp = TempDir::new().unwrap();
    ok(&dspear(tmp.path(), &["sweep", "--out", "outputs/sweep"]));
    ok(&dspear(tmp.path(), &["report", "outputs", "--out", "r"]));
    let rows = csv_rows(&tmp.path().join("r/lifetime_vs_speech.csv"));
    assert_eq!(rows.len(), 36);
    for pair in rows.windows(2) {
        if pair[0][2] == pair[1][2] {
            let (h0, h1): (f64, f64) = (pair[0][3].parse().unwrap(), pair[1][3].parse().unwrap());
            let (l0, l1): (f64, f64) = (pair[0][4].parse().unwrap(), pair[1][4].parse().unwrap());
            assert!(h1 > h0 && l1 < l0, "{:?} {:?}", pair[0], pair[1]);
        }
    }
    let cross = csv_rows(&tmp.path().join("r/crossover.csv"));
    let h: f64 = cross[0][4].parse().unwrap();
    assert!((h - 8.0).abs() <= 1.5, "{h}");
    let wake = csv_rows(&tmp.path().join("r/wakeup_vs_memory.csv"));
    let at_8mb: Vec<f64> = wake.iter().filter(|r| &r[1] == "8.0").map(|r| r[4].parse().unwrap()).collect();
    assert!((at_8mb[0] - 9.0).abs() <= 1.0, "{at_8mb:?}");
}

#[test]
fn labelled_run_gives_confusion_tables() {
    let tmp = TempDir::new().unwrap();
    let (wav, labels) = conversation(tmp.path());
    let m = models().to_str().unwrap();
    ok(&dspear(
        tmp.path(),
        &["run", "--audio", wav.to_str().unwrap(), "--labels", labels.to_str().unwrap(), "--models", m, "--out", "outputs/run"],
    ));
    ok(&dspear(tmp.path(), &["report", "outputs", "--out", "r"]));
    for p in ["speech_filter", "emotion", "speaker"] {
        let rows = csv_rows(&tmp.path().join(format!("r/confusion_{p}.csv")));
        assert!(!rows.is_empty(), "{p}");
    }
    let sf = csv_rows(&tmp.path().join("r/confusion_speech_filter.csv"));
    let silent: usize = sf
        .iter()
        .filter(|r| &r[1] == "silence" && &r[2] == "silence")
        .map(|r| r[3].parse::<usize>().unwrap())
        .sum();
    assert!(silent > 0);
    let savings = csv_rows(&tmp.path().join("r/savings_vs_accuracy.csv"));
    let detectors: Vec<&str> = savings.iter().map(|r| &r[1]).collect();
    assert_eq!(detectors, ["ambient", "emotion", "speaker"]);
}

#[test]
fn every_output_reads_back_through_report() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let (wav, _) = conversation(d);
    ok(&dspear(d, &["train", "--kind", "speech-filter", "--models", "outputs/models"]));
    let m = models().to_str().unwrap();
    ok(&dspear(d, &["run", "--audio", wav.to_str().unwrap(), "--models", m, "--out", "outputs/run"]));
    ok(&dspear(d, &["simulate", "--out", "outputs/sim"]));
    ok(&dspear(d, &["sweep", "--hours", "0,6", "--out", "outputs/sweep"]));
    ok(&dspear(d, &["report", "outputs", "--out", "r"]));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r/summary.json")).unwrap()).unwrap();
    for (k, n) in [("simulations", 1), ("sweeps", 1), ("runs", 1), ("bundles", 1)] {
        assert_eq!(summary[k], n, "{k}");
    }
    let models = csv_rows(&d.join("r/models.csv"));
    assert_eq!(models.len(), 1);
    assert_eq!(&models[0][1], "speech_filter");
    assert!(Model::load(d.join("outputs/models/speech_filter.dspm")).unwrap().as_tree().is_some());
    let inv = csv_rows(&d.join("r/invocation_totals.csv"));
    assert!(inv.iter().any(|r| &r[1] == "speech_filter"));
    // a second report over the same inputs is identical
    ok(&dspear(d, &["report", "outputs", "--out", "r2"]));
    for f in std::fs::read_dir(d.join("r")).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(std::fs::read(d.join("r").join(&name)).unwrap(), std::fs::read(d.join("r2").join(&name)).unwrap());
    }
}

#[test]
fn report_errors() {
    let tmp = TempDir::new().unwrap();
    std::fs::create_dir_all(tmp.path().join("empty")).unwrap();
    fails(&dspear(tmp.path(), &["report", "empty"]), 3);
    fails(&dspear(tmp.path(), &["report", "absent"]), 2);
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("c.toml"), "version = 1\nvariant = \"cpu_only_naive\"\nout = \"from_file\"\n").unwrap();
    ok(&dspear(d, &["simulate"]));
    let default = lifetime(&d.join("out"));
    ok(&dspear(d, &["--config", "c.toml", "simulate"]));
    let file = lifetime(&d.join("from_file"));
    ok(&dspear(d, &["--config", "c.toml", "simulate", "--variant", "dsp_cpu_naive", "--out", "flag"]));
    let flag = lifetime(&d.join("flag"));
    assert!(file < flag && flag < default, "{file} {flag} {default}");

    let out = Command::new(env!("CARGO_BIN_EXE_dspear"))
        .args(["simulate", "--out", "env"])
        .current_dir(d)
        .env("DSPEAR_CONFIG", d.join("c.toml"))
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(lifetime(&d.join("env")), file);
}

#[test]
fn config_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.toml"), "version = 1\nbogus = 3\n").unwrap();
    std::fs::write(d.join("v2.toml"), "version = 2\n").unwrap();
    std::fs::write(d.join("thr.toml"), "version = 1\n[thresholds]\nambient_deg = 120\n").unwrap();
    let e = fails(&dspear(d, &["--config", "bad.toml", "simulate"]), 2);
    assert!(e.contains("bogus"), "{e}");
    fails(&dspear(d, &["--config", "v2.toml", "simulate"]), 2);
    fails(&dspear(d, &["--config", "thr.toml", "simulate"]), 2);
    fails(&dspear(d, &["--config", "missing.toml", "simulate"]), 2);
    fails(&dspear(d, &["simulate", "--trace", "missing.csv"]), 2);
    fails(&dspear(d, &["simulate", "--variant", "gpu"]), 2);
    fails(&dspear(d, &["run", "--audio", "x.wav", "--ambient-threshold", "95"]), 2);
    fails(&dspear(d, &["frobnicate"]), 2);
}

#[test]
fn trace_file_drives_simulation() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let trace = SoundTrace::synthetic_day(4.5, 8.0, 42).unwrap();
    trace.write_csv(d.join("day.csv")).unwrap();
    ok(&dspear(d, &["simulate", "--trace", "day.csv", "--out", "t"]));
    ok(&dspear(d, &["simulate", "--out", "s"]));
    assert_eq!(lifetime(&d.join("t")), lifetime(&d.join("s")));
    std::fs::write(d.join("bad.csv"), "start_s,duration_s,class,label\n0,10,lava,\n").unwrap();
    fails(&dspear(d, &["simulate", "--trace", "bad.csv"]), 3);
}

#[test]
fn emotion_corpus_needs_both_valences() {
    let tmp = TempDir::new().unwrap();
    let v = &synthetic_voices(1, 3)[0];
    write(tmp.path(), "corpus/hot_anger/a.wav", &synth_voice(v, &emotion_style(NarrowEmotion::HotAnger), 6.0, 0));
    let e = fails(&dspear(tmp.path(), &["train", "--kind", "emotion", "--corpus", "corpus"]), 3);
    assert!(e.contains("neutral"), "{e}");
}
