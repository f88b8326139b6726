mod common;

use ndarray::Array1;
use proptest::prelude::*;
use rand::Rng;

use graphedit::dataset::{generate_synthetic, SyntheticSpec};
use graphedit::graph::split_nodes;
use graphedit::predictor::{
    label_pairs, loss_and_grads, pair_accuracy, predict_edge, predict_symmetric, sample_pairs, top_k_candidates, train_edge_predictor,
    CandidateSet, EdgePredictorModel, PairSample, PredictorConfig, PredictorError,
};

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20 {
        let err = common::predictor_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn weighted_gradients_match_finite_differences() {
    let (d, h) = (8, 4);
    let emb = common::random_emb(6, d, 3);
    let samples = vec![PairSample::labeled(0, 1, 1, 1), PairSample::labeled(2, 3, 0, 1), PairSample::labeled(4, 5, 2, 2)];
    let model = EdgePredictorModel::glorot(d, h, 5);
    let (_, grads) = loss_and_grads(&model, &emb, &samples, Some(3.0)).unwrap();
    let mut params = common::flatten_predictor(&model);
    let err = common::max_fd_error(&mut params, &common::flatten_predictor(&grads), 1e-5, |p| {
        loss_and_grads(&common::unflatten_predictor(p, d, h), &emb, &samples, Some(3.0)).unwrap().0
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn zero_model_scores_one_half() {
    let emb = common::random_emb(4, 8, 0);
    let mut model = EdgePredictorModel::zeros(8, 4);
    assert_eq!(predict_edge(&model, emb.row(0), emb.row(1)).unwrap(), 0.5);
    let balanced = vec![PairSample::labeled(0, 1, 0, 0), PairSample::labeled(2, 3, 0, 1)];
    let (loss, _) = loss_and_grads(&model, &emb, &balanced, None).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    model.b_out = 2.0;
    let p = predict_edge(&model, emb.row(0), emb.row(1)).unwrap();
    assert!((p - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    let short = Array1::<f64>::zeros(3);
    assert!(matches!(
        predict_edge(&model, short.view(), emb.row(1)),
        Err(PredictorError::DimensionMismatch { expected: 8, found: 3 })
    ));
}

#[test]
fn symmetric_score_is_symmetric() {
    let emb = common::random_emb(5, 8, 1);
    let model = EdgePredictorModel::glorot(8, 16, 2);
    for (i, j) in [(0, 1), (2, 4), (3, 0)] {
        let a = predict_symmetric(&model, emb.row(i), emb.row(j)).unwrap();
        let b = predict_symmetric(&model, emb.row(j), emb.row(i)).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(a > 0.0 && a < 1.0);
    }
}

#[test]
fn pairs_have_no_self_loops_and_consistent_labels() {
    let g = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let labels = g.labels();
    let split = split_nodes(g.num_nodes(), [0.6, 0.2, 0.2], 0).unwrap();
    let pairs = label_pairs(&sample_pairs(&split.train, 20_000, 0).unwrap(), &labels).unwrap();
    let train: std::collections::BTreeSet<usize> = split.train.iter().copied().collect();
    assert!(pairs.iter().all(|p| p.i != p.j && train.contains(&p.i) && train.contains(&p.j)));
    assert!(pairs.iter().all(|p| (p.y == 1) == (labels[p.i] == labels[p.j])));

    let counts: Vec<usize> = (0..3).map(|c| split.train.iter().filter(|&&v| labels[v] == c).count()).collect();
    let m = split.train.len();
    let p_same = counts.iter().map(|&k| (k * (k - 1)) as f64).sum::<f64>() / (m * (m - 1)) as f64;
    let positives = pairs.iter().filter(|p| p.y == 1).count() as f64;
    let sigma = (20_000.0 * p_same * (1.0 - p_same)).sqrt();
    assert!((positives - 20_000.0 * p_same).abs() < 4.0 * sigma, "{positives} vs {}", 20_000.0 * p_same);
    assert!((p_same - 1.0 / 3.0).abs() < 0.02);
}

#[test]
fn full_batch_loss_is_non_increasing() {
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let emb = common::separable_emb(&labels, 3, 12, 4);
    let pairs = label_pairs(&sample_pairs(&(0..30).collect::<Vec<_>>(), 300, 1).unwrap(), &labels).unwrap();
    let cfg = PredictorConfig {
        hidden: 8,
        lr: 1e-3,
        epochs: 150,
        ..Default::default()
    };
    let (_, report) = train_edge_predictor(&emb, &pairs, &cfg).unwrap();
    for w in report.loss_curve.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    assert!(report.final_loss < report.loss_curve[0]);
}

#[test]
fn training_is_deterministic_and_rejects_one_class() {
    let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
    let emb = common::separable_emb(&labels, 2, 8, 0);
    let pairs = label_pairs(&sample_pairs(&(0..20).collect::<Vec<_>>(), 200, 2).unwrap(), &labels).unwrap();
    let cfg = PredictorConfig {
        hidden: 8,
        epochs: 20,
        batch: 32,
        ..Default::default()
    };
    let a = train_edge_predictor(&emb, &pairs, &cfg).unwrap();
    let b = train_edge_predictor(&emb, &pairs, &cfg).unwrap();
    assert_eq!(a, b);
    let same: Vec<PairSample> = pairs.iter().copied().filter(|p| p.y == 1).collect();
    assert!(matches!(train_edge_predictor(&emb, &same, &cfg), Err(PredictorError::OneClass { negatives: 0, .. })));
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = EdgePredictorModel::glorot(8, 4, 9);
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    assert_eq!(EdgePredictorModel::load(&path).unwrap(), model);
    std::fs::write(&path, "{}").unwrap();
    assert!(EdgePredictorModel::load(&path).is_err());
}

#[test]
fn separable_embeddings_are_learned_by_default_config() {
    let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
    let emb = common::separable_emb(&labels, 3, 256, 7);
    let split = split_nodes(300, [0.6, 0.2, 0.2], 0).unwrap();
    let train = label_pairs(&sample_pairs(&split.train, 20_000, 0).unwrap(), &labels).unwrap();
    let held_out = label_pairs(&sample_pairs(&split.test, 2_000, 1).unwrap(), &labels).unwrap();
    let (model, report) = train_edge_predictor(&emb, &train, &PredictorConfig::default()).unwrap();
    assert!(report.train_accuracy > 0.95, "{}", report.train_accuracy);
    let acc = pair_accuracy(&model, &emb, &held_out).unwrap();
    assert!(acc > 0.85, "{acc}");
}

#[test]
fn top_k_validates_k() {
    let emb = common::random_emb(4, 8, 0);
    let model = EdgePredictorModel::glorot(8, 4, 0);
    assert!(matches!(top_k_candidates(&model, &emb, 0, None), Err(PredictorError::InvalidK { .. })));
    assert!(matches!(top_k_candidates(&model, &emb, 4, None), Err(PredictorError::InvalidK { max: 3, .. })));
    let set = top_k_candidates(&model, &emb, 3, Some(&[0, 1])).unwrap();
    assert_eq!(set.lists[0].len(), 1);
    assert_eq!(set.lists[2].len(), 2);
}

#[test]
fn hand_set_scores() {
    let scores = [[0.0, 0.9, 0.2], [0.9, 0.0, 0.5], [0.2, 0.5, 0.0]];
    let set = CandidateSet::from_scores(3, 1, None, |i, j| scores[i][j]).unwrap();
    assert_eq!(set.lists[0], vec![(1, 0.9)]);
    let tsv = set.to_tsv();
    assert_eq!(CandidateSet::from_tsv(&tsv, 3, 1).unwrap(), set);
}

proptest! {
    #[test]
    fn top_k_matches_brute_force(n in 2usize..15, k_raw in 1usize..15, seed in 0u64..1000, coarse in any::<bool>()) {
        let k = 1 + (k_raw - 1) % (n - 1);
        let mut r = common::rng(seed);
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| if coarse { f64::from(r.gen_range(0..3u8)) } else { r.gen() }).collect())
            .collect();
        let set = CandidateSet::from_scores(n, k, None, |i, j| scores[i][j]).unwrap();
        for (i, list) in set.lists.iter().enumerate() {
            let mut all: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, scores[i][j])).collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            prop_assert_eq!(list, &all);
        }
    }
}
