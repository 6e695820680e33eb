use dspear::features::{WindowSummary, N_FRAME_FEATURES};
use dspear::models::gmm::gaussian_density;
use dspear::models::{
    map_adapt, train_em, DecisionTreeModel, EmConfig, Gender, GmmModel, Model, ModelBundle,
    ModelRole, Placement, SpeechClass, TreeConfig, AMBIENT_MODEL_CODE_BYTES,
    EMOTION_MODEL_CODE_BYTES,
};
use dspear::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_gmm(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> GmmModel {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let means = (0..k)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let vars = (0..k)
        .map(|_| (0..dim).map(|_| rng.random_range(0.2..2.0)).collect())
        .collect();
    GmmModel::new("r", weights, means, vars).unwrap()
}

fn naive_loglik(g: &GmmModel, obs: &[Vec<f64>]) -> f64 {
    obs.iter()
        .map(|x| {
            (0..g.n_components())
                .map(|k| g.weights()[k] * gaussian_density(x, &g.means()[k], &g.variances()[k]))
                .sum::<f64>()
                .ln()
        })
        .sum()
}

fn cluster_data(rng: &mut ChaCha8Rng, centers: &[Vec<f64>], per: usize, sd: f64) -> Vec<Vec<f64>> {
    let n = Normal::new(0.0, sd).unwrap();
    centers
        .iter()
        .flat_map(|c| {
            (0..per)
                .map(|_| c.iter().map(|m| m + n.sample(rng)).collect::<Vec<f64>>())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn loglik_closed_form() {
    let g = GmmModel::new("z", vec![1.0], vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]]).unwrap();
    let ll = g.log_likelihood(&[vec![0.0, 0.0]]).unwrap();
    assert!((ll + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    assert!((ll + 1.8379).abs() < 1e-4);
}

#[test]
fn duplicated_component_collapses() {
    let one = GmmModel::new("a", vec![1.0], vec![vec![0.3, -1.0]], vec![vec![0.5, 2.0]]).unwrap();
    let two = GmmModel::new(
        "b",
        vec![0.5, 0.5],
        vec![vec![0.3, -1.0]; 2],
        vec![vec![0.5, 2.0]; 2],
    )
    .unwrap();
    let obs = vec![vec![0.0, 0.0], vec![1.0, -2.0], vec![3.0, 1.0]];
    let (a, b) = (one.log_likelihood(&obs).unwrap(), two.log_likelihood(&obs).unwrap());
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn loglik_dimension_mismatch() {
    let g = GmmModel::new("z", vec![1.0], vec![vec![0.0; 2]], vec![vec![1.0; 2]]).unwrap();
    assert!(matches!(
        g.log_likelihood(&[vec![0.0; 3]]),
        Err(Error::DimensionMismatch { expected: 2, found: 3 })
    ));
}

#[test]
fn loglik_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let k = rng.random_range(1..=5);
        let dim = rng.random_range(1..=4);
        let g = random_gmm(&mut rng, k, dim);
        let n = rng.random_range(1..=20);
        let obs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let fast = g.log_likelihood(&obs).unwrap();
        let slow = naive_loglik(&g, &obs);
        assert!((fast - slow).abs() < 1e-8, "{fast} vs {slow}");
    }
}

#[test]
fn em_is_monotone_on_fifty_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..50 {
        let k = rng.random_range(1..=4);
        let dim = rng.random_range(1..=3);
        let truth = random_gmm(&mut rng, k, dim);
        let centers: Vec<Vec<f64>> = truth.means().to_vec();
        let data = cluster_data(&mut rng, &centers, 40, 0.7);
        let fit = train_em("m", &data, k, i, &EmConfig::default()).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "instance {i}: {w:?}");
        }
        let s: f64 = fit.model.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn em_recovers_separated_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let centers = vec![vec![-5.0, 0.0], vec![5.0, 2.0]];
    let data = cluster_data(&mut rng, &centers, 500, 1.0);
    let fit = train_em("two", &data, 2, 7, &EmConfig::default()).unwrap();
    let mut got: Vec<Vec<f64>> = fit.model.means().to_vec();
    got.sort_by(|a, b| a[0].total_cmp(&b[0]));
    for (g, c) in got.iter().zip(&centers) {
        for (a, b) in g.iter().zip(c) {
            assert!((a - b).abs() < 0.1, "{g:?} vs {c:?}");
        }
    }
}

#[test]
fn em_single_component_is_sample_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = cluster_data(&mut rng, &[vec![1.0, -2.0, 0.5]], 200, 1.3);
    let fit = train_em("one", &data, 1, 0, &EmConfig::default()).unwrap();
    let n = data.len() as f64;
    for d in 0..3 {
        let mean = data.iter().map(|x| x[d]).sum::<f64>() / n;
        let var = data.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / n;
        assert!((fit.model.means()[0][d] - mean).abs() < 1e-9);
        assert!((fit.model.variances()[0][d] - var).abs() < 1e-9);
    }
}

#[test]
fn em_is_deterministic_and_validates_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = cluster_data(&mut rng, &[vec![0.0, 0.0], vec![3.0, 3.0]], 50, 1.0);
    let a = train_em("d", &data, 3, 9, &EmConfig::default()).unwrap();
    let b = train_em("d", &data, 3, 9, &EmConfig::default()).unwrap();
    assert_eq!(a.model, b.model);
    assert!(matches!(
        train_em("d", &data[..20], 3, 9, &EmConfig::default()),
        Err(Error::InsufficientData(_))
    ));
    let same = vec![vec![1.0, 1.0]; 100];
    assert!(matches!(
        train_em("d", &same, 2, 9, &EmConfig::default()),
        Err(Error::DegenerateData(_))
    ));
}

#[test]
fn variances_respect_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // a tight cluster plus spread data forces a small component variance
    let mut data = cluster_data(&mut rng, &[vec![0.0]], 100, 1e-6);
    data.extend(cluster_data(&mut rng, &[vec![100.0]], 100, 10.0));
    let fit = train_em("f", &data, 2, 1, &EmConfig::default()).unwrap();
    let n = data.len() as f64;
    let mean = data.iter().map(|x| x[0]).sum::<f64>() / n;
    let gvar = data.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / n;
    for v in fit.model.variances() {
        assert!(v[0] >= 1e-4 * gvar * (1.0 - 1e-12));
    }
}

#[test]
fn map_adaptation_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bg_data = cluster_data(&mut rng, &[vec![0.0, 0.0], vec![4.0, 4.0]], 200, 1.0);
    let bg = train_em("bg", &bg_data, 2, 3, &EmConfig::default()).unwrap().model;

    let same = map_adapt(&bg, "bg", &[], 16.0).unwrap();
    assert_eq!(same, bg);

    let spk = cluster_data(&mut rng, &[vec![0.8, -0.5], vec![4.5, 3.2]], 2000, 1.0);
    let adapted = map_adapt(&bg, "spk", &spk, 16.0).unwrap();
    assert_eq!(adapted.weights(), bg.weights());
    assert_eq!(adapted.variances(), bg.variances());
    assert!(adapted.log_likelihood(&spk).unwrap() > bg.log_likelihood(&spk).unwrap());

    // relevance -> 0: means become the posterior-weighted data means
    let limit = map_adapt(&bg, "lim", &spk, 1e-12).unwrap();
    let k = bg.n_components();
    let mut occ = vec![0.0; k];
    let mut sums = vec![vec![0.0; 2]; k];
    for x in &spk {
        let logs: Vec<f64> = (0..k)
            .map(|c| bg.weights()[c].ln() + gaussian_density(x, &bg.means()[c], &bg.variances()[c]).ln())
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        for c in 0..k {
            let p = (logs[c] - m).exp() / z;
            occ[c] += p;
            sums[c][0] += p * x[0];
            sums[c][1] += p * x[1];
        }
    }
    for c in 0..k {
        for (d, s) in sums[c].iter().enumerate() {
            assert!((limit.means()[c][d] - s / occ[c]).abs() < 1e-6);
        }
    }
    assert!(map_adapt(&bg, "x", &[vec![0.0; 3]], 16.0).is_err());
}

fn summary_with(entropy: f64, rms: f64) -> WindowSummary {
    let mut means = vec![0.0; N_FRAME_FEATURES];
    means[0] = rms;
    means[1] = entropy;
    WindowSummary {
        means,
        variances: vec![0.0; N_FRAME_FEATURES],
        lefr: 0.2,
    }
}

#[test]
fn tree_separable_single_feature() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
    let y: Vec<SpeechClass> = (0..20)
        .map(|i| if i < 10 { SpeechClass::Ambient } else { SpeechClass::Speech })
        .collect();
    let t = DecisionTreeModel::train_vectors(&x, &y, &TreeConfig::default()).unwrap();
    assert_eq!(t.depth(), 1);
    assert_eq!(t.accuracy(&x, &y).unwrap(), 1.0);
    match &t.nodes[0] {
        dspear::models::TreeNode::Split { threshold, .. } => {
            assert!(*threshold > 9.0 && *threshold <= 10.0);
            // the boundary value itself goes to the >= side
            assert_eq!(t.classify_vector(&[*threshold]).unwrap().0, SpeechClass::Speech);
        }
        other => panic!("expected split, got {other:?}"),
    }
    assert_eq!(t.classify_vector(&[-3.0]).unwrap(), (SpeechClass::Ambient, 1.0));
    assert!(matches!(
        t.classify_vector(&[]),
        Err(Error::MissingFeature { index: 0, len: 0 })
    ));
}

#[test]
fn tree_on_disjoint_entropy_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut make = |n: usize| -> Vec<(WindowSummary, SpeechClass)> {
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    (summary_with(rng.random_range(3.0..5.0), rng.random_range(0.01..0.5)), SpeechClass::Speech)
                } else {
                    (summary_with(rng.random_range(5.5..6.4), rng.random_range(0.01..0.5)), SpeechClass::Ambient)
                }
            })
            .collect()
    };
    let train = make(200);
    let test = make(100);
    let t = DecisionTreeModel::train(&train, &TreeConfig::default()).unwrap();
    let acc = |set: &[(WindowSummary, SpeechClass)]| {
        set.iter().filter(|(s, c)| t.classify(s).unwrap().0 == *c).count() as f64 / set.len() as f64
    };
    assert!(acc(&train) >= 0.95);
    assert!(acc(&test) >= 0.90);
}

#[test]
fn tree_rejects_single_class() {
    let x = vec![vec![1.0], vec![2.0]];
    let err = DecisionTreeModel::train_vectors(&x, &[SpeechClass::Speech; 2], &TreeConfig::default())
        .unwrap_err();
    assert!(err.to_string().contains("ambient"), "{err}");
}

#[test]
fn gmm_round_trip_and_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_gmm(&mut rng, 128, 32).with_gender(Gender::Female);
    let m = Model::Gmm(g.clone());
    let bytes = m.to_bytes().unwrap();
    assert_eq!(m.size_bytes().unwrap(), bytes.len());
    let payload = 128 * (1 + 32 + 32) * 4;
    assert!(bytes.len() > payload && bytes.len() < payload + 256, "{}", bytes.len());
    assert!((bytes.len() as f64 / 1000.0 - 33.0).abs() < 1.0);
    let back = Model::from_bytes(&bytes).unwrap();
    let h = back.as_gmm().unwrap();
    assert_eq!(h.gender, Some(Gender::Female));
    assert_eq!(h.label, g.label);
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6 * y.abs().max(1e-30));
    assert!(close(h.weights(), g.weights()));
    for k in 0..128 {
        assert!(close(&h.means()[k], &g.means()[k]));
        assert!(close(&h.variances()[k], &g.variances()[k]));
    }
    // a decoded model is exactly representable, so re-encoding is lossless
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(Model::from_bytes(&bytes).unwrap(), back);
}

#[test]
fn tree_round_trip_and_corruption() {
    let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 7) as f64, i as f64 * 0.37]).collect();
    let y: Vec<SpeechClass> = (0..30)
        .map(|i| if (i * 7) % 5 < 2 { SpeechClass::Ambient } else { SpeechClass::Speech })
        .collect();
    let t = DecisionTreeModel::train_vectors(&x, &y, &TreeConfig::default()).unwrap();
    let m = Model::Tree(t.clone());
    let bytes = m.to_bytes().unwrap();
    let back = Model::from_bytes(&bytes).unwrap();
    let bt = back.as_tree().unwrap();
    for v in &x {
        assert_eq!(bt.classify_vector(v).unwrap().0, t.classify_vector(v).unwrap().0);
    }
    assert!(Model::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Model::from_bytes(&bad), Err(Error::CorruptModel(_))));
}

#[test]
fn bundle_budget_limits() {
    let g = GmmModel::new("g", vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap();
    let mut b = ModelBundle::new();
    for i in 0..5 {
        b.insert(format!("emotion/{i}"), ModelRole::Emotion, Placement::Dsp, Model::Gmm(g.clone()))
            .unwrap();
    }
    assert!(matches!(
        b.insert("emotion/5", ModelRole::Emotion, Placement::Dsp, Model::Gmm(g.clone())),
        Err(Error::CodeBudgetExceeded { .. })
    ));
    assert_eq!(b.len(), 5);
    // the same model on the CPU costs nothing on the co-processor
    b.insert("emotion/5", ModelRole::Emotion, Placement::Cpu, Model::Gmm(g.clone())).unwrap();

    let mut a = ModelBundle::new();
    for i in 0..16 {
        a.insert(format!("ambient/{i}"), ModelRole::Ambient, Placement::Dsp, Model::Gmm(g.clone()))
            .unwrap();
    }
    assert!(a
        .insert("ambient/16", ModelRole::Ambient, Placement::Dsp, Model::Gmm(g.clone()))
        .is_err());
    assert_eq!(EMOTION_MODEL_CODE_BYTES, 260 * 1024);
    assert_eq!(AMBIENT_MODEL_CODE_BYTES, 87 * 1024);
}

#[test]
fn bundle_save_load() {
    let dir = tempfile::tempdir().unwrap();
    let g = GmmModel::new("spk", vec![1.0], vec![vec![0.5, 0.25]], vec![vec![1.0, 2.0]])
        .unwrap()
        .with_gender(Gender::Male);
    let mut b = ModelBundle::new();
    b.insert("speaker/spk", ModelRole::Speaker, Placement::Cpu, Model::Gmm(g)).unwrap();
    b.save(dir.path()).unwrap();
    let back = ModelBundle::load(dir.path()).unwrap();
    assert_eq!(back, b);
    assert!(matches!(back.gmm("speaker/none"), Err(Error::MissingModel(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tree_is_order_invariant(seed in 0u64..500, shift in 0usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| (rng.random_range(0..8) as f64) * 0.5).collect())
            .collect();
        let y: Vec<SpeechClass> = x
            .iter()
            .map(|v| if v[0] + rng.random_range(-1.0..1.0) > 2.0 { SpeechClass::Speech } else { SpeechClass::Ambient })
            .collect();
        prop_assume!(y.contains(&SpeechClass::Speech) && y.contains(&SpeechClass::Ambient));
        let mut idx: Vec<usize> = (0..60).collect();
        idx.rotate_left(shift);
        idx.reverse();
        let xp: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<SpeechClass> = idx.iter().map(|&i| y[i]).collect();
        let a = DecisionTreeModel::train_vectors(&x, &y, &TreeConfig::default()).unwrap();
        let b = DecisionTreeModel::train_vectors(&xp, &yp, &TreeConfig::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn argmax_invariant_under_constant_shift(seed in 0u64..1000, c in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let models: Vec<GmmModel> = (0..4).map(|_| random_gmm(&mut rng, 2, 3)).collect();
        let obs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let lls: Vec<f64> = models.iter().map(|m| m.log_likelihood(&obs).unwrap()).collect();
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let shifted: Vec<f64> = lls.iter().map(|l| l + c).collect();
        prop_assert_eq!(argmax(&lls), argmax(&shifted));
    }

    #[test]
    fn map_never_changes_weights_or_variances(seed in 0u64..1000, n in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg = random_gmm(&mut rng, 3, 2);
        let data: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let a = map_adapt(&bg, "a", &data, 16.0).unwrap();
        prop_assert_eq!(a.weights(), bg.weights());
        prop_assert_eq!(a.variances(), bg.variances());
    }
}
