use dspear::audio_io::{SoundClass, SoundTrace};
use dspear::energysim::{
    crossover_speech_hours, delta_t, read_lifetime_csv, simulate_day, simulate_day_with,
    sweep_speech_hours, wakeup_time_vs_memory, write_lifetime_csv, DayResult, OffloadParams,
    PowerTable, Processor, SimOptions, Stage, SystemVariant, Workload, KIB, MIB,
};
use proptest::prelude::*;

fn table() -> PowerTable {
    PowerTable::default_table()
}

fn no_savings() -> OffloadParams {
    OffloadParams::default().with_savings(0.0)
}

/// Closed-form per-second average power, written independently of the walker.
fn oracle_lifetime_h(speech_h: f64, variant: SystemVariant) -> f64 {
    let t = table();
    let avg = |s: Stage, p: Processor| t.average_power_mw(s, p).unwrap();
    let (fs, fa) = (speech_h / 24.0, (16.0 - speech_h) / 24.0);
    let opt = variant.optimized();
    let (amb_keep, emo_cls, neutral, spk_cls, nspk) = if opt {
        (0.5, 0.8, 0.6, 0.6, 11.0)
    } else {
        (1.0, 1.0, 0.0, 1.0, 22.0)
    };
    let proc = if variant.uses_dsp() { Processor::Dsp } else { Processor::Cpu };
    let mut p = if variant.uses_dsp() { 34.0 } else { 342.0 };
    p += avg(Stage::SilenceFilter, proc);
    p += (fs + fa) * (avg(Stage::SpeechFilter, proc) + avg(Stage::AmbientFeatures, proc));
    p += fa * amb_keep * 4.0 * avg(Stage::AmbientGmm, proc);
    p += fs * (avg(Stage::SpeakerCount, proc) + avg(Stage::Plp, proc));
    let gmm_cpu = avg(Stage::EmotionGmm, Processor::Cpu);
    if !variant.uses_dsp() {
        let n = if opt { emo_cls * (2.0 + (1.0 - neutral) * 8.0) + spk_cls * nspk } else { 36.0 };
        p += fs * n * gmm_cpu;
    } else {
        let ncpu = if opt {
            p += fs * emo_cls * 2.0 * avg(Stage::NeutralGmm, Processor::Dsp);
            emo_cls * (1.0 - neutral) * 8.0 + spk_cls * nspk
        } else {
            36.0
        };
        let busy = (ncpu * 0.040_f64).min(1.0);
        p += fs * (ncpu * gmm_cpu + 295.0 * busy * 0.5);
        let s = if opt { 0.2 } else { 0.0 };
        let fill = (8.0 * 1024.0 - 1312.0) / 64.0 * (1.0 + s) * 5.0;
        p += fs / fill * (383.0 * 3.5 + 295.0 * 15.0) / 1000.0 * 0.5 * 1000.0;
    }
    2300.0 * 3.7 * 3.6 / (p / 1000.0) / 3600.0
}

#[test]
fn delta_t_examples() {
    assert!((delta_t(&no_savings()) - 537.5).abs() < 1e-9);
    assert!((delta_t(&OffloadParams::default().with_savings(0.4)) - 752.5).abs() < 1e-9);
    let mut p = no_savings();
    p.gamma_s = 12.0;
    p.mem_limit_bytes = p.mem_static_bytes;
    assert_eq!(delta_t(&p), 12.0);
}

#[test]
fn delta_t_depends_only_on_min_saving() {
    let mut a = no_savings();
    a.sim_save_emotion = 0.2;
    a.sim_save_speaker = 0.4;
    let mut b = a;
    b.sim_save_speaker = 0.9;
    assert_eq!(delta_t(&a), delta_t(&b));
}

#[test]
fn wakeup_table_scales_with_memory() {
    let rows = wakeup_time_vs_memory(&[8.0 * MIB, 16.0 * MIB], &[0.0, 0.4], &no_savings()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!((rows[0].minutes - 537.5 / 60.0).abs() < 1e-9);
    assert!((rows[1].minutes - 752.5 / 60.0).abs() < 1e-9);
    let expect_16 = (16.0 * 1024.0 - 1312.0) / 64.0 * 5.0 / 60.0;
    assert!((rows[2].minutes - expect_16).abs() < 1e-9);
    assert!(wakeup_time_vs_memory(&[0.0], &[0.0], &no_savings()).is_err());
}

#[test]
fn stage_energy_examples() {
    let t = table();
    let e = t.stage_energy(Stage::SilenceFilter, Processor::Dsp, 1.0).unwrap();
    assert!((e - 1.84e-3 * 0.0458).abs() < 1e-15);
    assert!((e - 8.43e-5).abs() < 1e-7);
    let e = t.stage_energy(Stage::SpeechFilter, Processor::Cpu, 1.0).unwrap();
    assert!((e - 17.61e-3 * 0.0112).abs() < 1e-15);
    assert_eq!(t.stage_energy(Stage::Plp, Processor::Cpu, 0.0).unwrap(), 0.0);
    assert!(t.stage_energy(Stage::CrowdFinalize, Processor::Cpu, 1.0).is_err());
}

#[test]
fn analytic_walk_matches_closed_form() {
    for variant in SystemVariant::ALL {
        for h in [2.0, 4.5, 8.0, 12.0] {
            let trace = SoundTrace::synthetic_day(h, 8.0, 3).unwrap();
            let got = simulate_day(&trace, variant, &table(), &OffloadParams::default())
                .unwrap()
                .lifetime_h;
            let want = oracle_lifetime_h(h, variant);
            // The walker counts whole wake-ups; the closed form uses fractional ones.
            assert!((got - want).abs() / want < 0.01, "{variant} {h}: {got} vs {want}");
        }
    }
}

#[test]
fn ledger_components_sum_to_total() {
    let trace = SoundTrace::synthetic_day(4.5, 8.0, 1).unwrap();
    let r = simulate_day(&trace, SystemVariant::DspCpuOptimized, &table(), &OffloadParams::default())
        .unwrap();
    let l = &r.ledger;
    let sum: f64 = l.components().iter().map(|(_, j)| j).sum();
    assert_eq!(sum, l.total_j());
    assert_eq!(r.lifetime_h, l.lifetime_h(table().platform.battery_joules()));
    assert!(l.components().iter().all(|(_, j)| *j >= 0.0));
    assert!(l.wakeup_count > 0);
    assert!(l.observed_gamma_s.unwrap() > 0.0);
    let back = DayResult::from_json(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn cpu_variants_never_wake() {
    let trace = SoundTrace::synthetic_day(6.0, 8.0, 1).unwrap();
    for v in [SystemVariant::CpuOnlyNaive, SystemVariant::CpuOnlyOptimized] {
        let r = simulate_day(&trace, v, &table(), &OffloadParams::default()).unwrap();
        assert_eq!(r.ledger.wakeup_count, 0);
        assert_eq!(r.ledger.standby_j, 0.0);
        assert_eq!(r.ledger.dsp_compute_j, 0.0);
    }
}

#[test]
fn third_party_budget_reduces_lifetime() {
    let trace = SoundTrace::synthetic_day(4.5, 8.0, 1).unwrap();
    let base = simulate_day(&trace, SystemVariant::DspCpuOptimized, &table(), &OffloadParams::default())
        .unwrap();
    let opts = SimOptions {
        third_party_fraction: 0.1,
        ..Default::default()
    };
    let r = simulate_day_with(&trace, SystemVariant::DspCpuOptimized, &table(), &OffloadParams::default(), &opts)
        .unwrap();
    assert!((r.lifetime_h - base.lifetime_h / 1.1).abs() < 1e-9);
}

#[test]
fn speaker_counting_workload_anchors() {
    let mut trace = SoundTrace::default();
    trace.push(24.0 * 3600.0, SoundClass::Speech);
    let opts = SimOptions {
        workload: Workload::speaker_counting(),
        ..Default::default()
    };
    let cpu = simulate_day_with(&trace, SystemVariant::CpuOnlyNaive, &table(), &OffloadParams::default(), &opts)
        .unwrap();
    let dsp = simulate_day_with(&trace, SystemVariant::DspCpuNaive, &table(), &OffloadParams::default(), &opts)
        .unwrap();
    assert!((cpu.ledger.average_power_mw() - 638.0).abs() < 1e-9);
    assert!((dsp.ledger.average_power_mw() - 55.0).abs() < 1e-9);
}

#[test]
fn sweep_rejects_too_much_speech() {
    assert!(sweep_speech_hours(&[17.0], &[SystemVariant::CpuOnlyNaive], &table(), &OffloadParams::default(), &SimOptions::default(), 1).is_err());
}

#[test]
fn sweep_is_monotone_and_round_trips() {
    let hours: Vec<f64> = (0..=16).map(|h| h as f64).collect();
    let rows = sweep_speech_hours(&hours, &SystemVariant::ALL, &table(), &OffloadParams::default(), &SimOptions::default(), 5)
        .unwrap();
    for v in SystemVariant::ALL {
        let col: Vec<f64> = rows.iter().filter(|r| r.variant == v).map(|r| r.lifetime_h).collect();
        assert!(col.windows(2).all(|w| w[1] < w[0]), "{v}: {col:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lifetime.csv");
    write_lifetime_csv(&path, &rows).unwrap();
    assert_eq!(read_lifetime_csv(&path).unwrap(), rows);
}

#[test]
fn crossover_exists() {
    let x = crossover_speech_hours(
        SystemVariant::DspCpuNaive,
        SystemVariant::CpuOnlyOptimized,
        &table(),
        &OffloadParams::default(),
        &SimOptions::default(),
        1,
    )
    .unwrap()
    .unwrap();
    assert!(x > 0.0 && x < 16.0);
}

#[test]
fn inconsistent_trace_is_rejected() {
    let mut trace = SoundTrace::default();
    trace.push(-1.0, SoundClass::Speech);
    assert!(simulate_day(&trace, SystemVariant::CpuOnlyNaive, &table(), &OffloadParams::default()).is_err());
}

#[test]
fn memory_defaults() {
    let p = OffloadParams::default();
    assert_eq!(p.mem_limit_bytes, 8.0 * MIB);
    assert_eq!(p.mem_static_bytes, 1312.0 * KIB);
    assert_eq!(p.plp_bytes_per_window, 64.0 * KIB);
}

fn trace_strategy() -> impl Strategy<Value = SoundTrace> {
    let class = prop_oneof![
        Just(SoundClass::Silence),
        Just(SoundClass::Speech),
        Just(SoundClass::Music),
        Just(SoundClass::Traffic),
        Just(SoundClass::Water),
        Just(SoundClass::Other),
    ];
    prop::collection::vec((1.0f64..4000.0, class), 1..40).prop_map(|segs| {
        let mut t = SoundTrace::default();
        for (d, c) in segs {
            t.push(d, c);
        }
        t
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimized_never_loses(trace in trace_strategy()) {
        let t = table();
        let p = OffloadParams::default();
        let life = |v| simulate_day(&trace, v, &t, &p).unwrap().lifetime_h;
        prop_assert!(life(SystemVariant::DspCpuOptimized) >= life(SystemVariant::DspCpuNaive));
        prop_assert!(life(SystemVariant::CpuOnlyOptimized) >= life(SystemVariant::CpuOnlyNaive));
    }

    #[test]
    fn simulation_is_deterministic(trace in trace_strategy(), v in 0usize..4) {
        let variant = SystemVariant::ALL[v];
        let a = simulate_day(&trace, variant, &table(), &OffloadParams::default()).unwrap();
        let b = simulate_day(&trace, variant, &table(), &OffloadParams::default()).unwrap();
        prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn delta_t_increases_with_memory_and_saving(
        m in 2.0f64..64.0, dm in 0.1f64..8.0, s in 0.0f64..0.9, ds in 0.01f64..0.1,
    ) {
        let base = OffloadParams { mem_limit_bytes: m * MIB, ..no_savings() }.with_savings(s);
        let more_mem = OffloadParams { mem_limit_bytes: (m + dm) * MIB, ..base };
        let more_save = base.with_savings(s + ds);
        prop_assert!(delta_t(&more_mem) > delta_t(&base));
        prop_assert!(delta_t(&more_save) > delta_t(&base));
    }
}
