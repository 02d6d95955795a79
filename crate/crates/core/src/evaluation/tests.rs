use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{generate_synthetic, random_embeddings, ConceptPair, SyntheticWorldConfig, Vocab};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::numerics::Tensor;

fn pair(j: usize, d: Domain) -> ConceptPair {
    ConceptPair::new(j % 3, j / 3, d)
}

/// Two seen candidates then two unseen ones.
fn cands() -> Vec<ConceptPair> {
    vec![
        pair(0, Domain::Seen),
        pair(1, Domain::Seen),
        pair(2, Domain::Unseen),
        pair(3, Domain::Unseen),
    ]
}

fn matrix(truth_cols: &[usize], rows: &[[f64; 4]]) -> ScoreMatrix {
    let c = cands();
    ScoreMatrix::new(
        (0..rows.len()).map(|i| format!("i{i}")).collect(),
        truth_cols.iter().map(|&j| c[j]).collect(),
        c,
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap(),
    )
    .unwrap()
}

fn unseen_only(truths: &[usize], rows: &[Vec<f64>]) -> ScoreMatrix {
    let n = rows[0].len();
    let c: Vec<ConceptPair> = (0..n).map(|j| pair(j, Domain::Unseen)).collect();
    ScoreMatrix::new(
        (0..rows.len()).map(|i| format!("i{i}")).collect(),
        truths.iter().map(|&j| c[j]).collect(),
        c,
        Tensor::from_rows(rows).unwrap(),
    )
    .unwrap()
}

fn random_matrix(seed: u64, items: usize, dyadic: bool) -> ScoreMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truths: Vec<usize> = (0..items).map(|_| rng.random_range(0..4)).collect();
    truths[0] = 0;
    truths[1] = 3;
    let rows: Vec<[f64; 4]> = (0..items)
        .map(|_| {
            [0; 4].map(|_| {
                if dyadic {
                    rng.random_range(-64i32..64) as f64 / 32.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
        })
        .collect();
    matrix(&truths, &rows)
}

#[test]
fn top1_examples() {
    let oracle = unseen_only(&[0, 1], &[vec![0.9, 0.1], vec![0.2, 0.7]]);
    assert_eq!(top1_unseen(&oracle).unwrap(), 1.0);
    let adversarial = unseen_only(&[0, 1], &[vec![0.1, 0.9], vec![0.7, 0.2]]);
    assert_eq!(top1_unseen(&adversarial).unwrap(), 0.0);
    let half = unseen_only(&[0, 1], &[vec![0.9, 0.1], vec![0.7, 0.2]]);
    assert_eq!(top1_unseen(&half).unwrap(), 0.5);
    // Tie goes to the lower index.
    let tie = unseen_only(&[1], &[vec![0.5, 0.5]]);
    assert_eq!(top1_unseen(&tie).unwrap(), 0.0);
    assert!(top1_unseen(&matrix(&[0], &[[1.0, 0.0, 0.0, 0.0]])).is_err());
}

#[test]
fn matrix_validation() {
    let c = cands();
    let bad_shape = ScoreMatrix::new(vec!["a".into()], vec![c[0]], c.clone(), Tensor::zeros(&[1, 3]));
    assert!(bad_shape.is_err());
    let missing = ScoreMatrix::new(vec!["a".into()], vec![pair(7, Domain::Seen)], c.clone(), Tensor::zeros(&[1, 4]));
    assert!(matches!(missing, Err(Error::Data(_))));
    let empty = unseen_only(&[0], &[vec![1.0]]).restrict_to_unseen().unwrap();
    assert_eq!(empty.n_items(), 1);
}

#[test]
fn biased_accuracy_limits() {
    let m = random_matrix(5, 12, false);
    let (seen_hi, _) = biased_topk_acc(&m, f64::INFINITY, 1).unwrap();
    assert_eq!(seen_hi, 0.0);
    let (_, unseen_lo) = biased_topk_acc(&m, f64::NEG_INFINITY, 1).unwrap();
    assert_eq!(unseen_lo, 0.0);
    // The limits agree with large finite biases.
    assert_eq!(biased_topk_acc(&m, 1e6, 2).unwrap(), biased_topk_acc(&m, f64::INFINITY, 2).unwrap());
    assert_eq!(biased_topk_acc(&m, -1e6, 2).unwrap(), biased_topk_acc(&m, f64::NEG_INFINITY, 2).unwrap());
    assert!(biased_topk_acc(&m, 0.0, 5).is_err());
    assert!(biased_topk_acc(&m, 0.0, 0).is_err());
    assert!(biased_topk_acc(&m, f64::NAN, 1).is_err());
}

#[test]
fn zero_bias_is_joint_top1() {
    let m = random_matrix(8, 20, false);
    let (s, u) = biased_topk_acc(&m, 0.0, 1).unwrap();
    let mut hits = [0.0; 2];
    let mut counts = [0.0; 2];
    for i in 0..m.n_items() {
        let d = usize::from(m.truths[i].domain == Domain::Unseen);
        counts[d] += 1.0;
        if kernels::argmax(m.row(i)) == m.truth_index(i) {
            hits[d] += 1.0;
        }
    }
    assert_eq!((s, u), (hits[0] / counts[0], hits[1] / counts[1]));
}

#[test]
fn hand_curve() {
    // Seen item: truth 0.5 vs best unseen 0.2, correct while bias < 0.3.
    // Unseen item: truth 0.1 vs best seen 0.6, correct once bias > 0.5.
    let m = matrix(&[0, 2], &[[0.5, 0.0, 0.2, -1.0], [0.6, 0.0, 0.1, -1.0]]);
    let c = auc_curve(&m, 1).unwrap();
    let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.seen, p.unseen)).collect();
    assert_eq!(pts, vec![(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]);
    assert_eq!(c.points[0].from, None);
    assert!((c.points[0].to.unwrap() - 0.3).abs() < 1e-15);
    assert_eq!(c.points[2].to, None);
    assert_eq!(c.auc, 0.0);

    // Seen item correct while bias < 0.7, unseen item once bias > 0.2.
    let m = matrix(&[0, 2], &[[0.9, 0.0, 0.2, -1.0], [0.3, 0.0, 0.1, -1.0]]);
    let c = auc_curve(&m, 1).unwrap();
    let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.seen, p.unseen)).collect();
    assert_eq!(pts, vec![(1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
    assert_eq!(c.auc, 1.0);
}

#[test]
fn rectangle_and_full_k() {
    assert!((curve_area(&[(0.6, 0.3)]) - 0.18).abs() < 1e-15);
    assert_eq!(curve_area(&[]), 0.0);
    let m = random_matrix(3, 10, false);
    let c = auc_curve(&m, 4).unwrap();
    assert_eq!(c.points.len(), 1);
    assert_eq!((c.points[0].seen, c.points[0].unseen), (1.0, 1.0));
    assert_eq!(c.auc, 1.0);
}

#[test]
fn needs_both_domains() {
    let only_seen_items = matrix(&[0, 1], &[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]);
    assert!(auc(&only_seen_items, 1).is_err());
    assert!(auc(&unseen_only(&[0], &[vec![1.0, 0.0]]), 1).is_err());
}

#[test]
fn csv_round_trip() {
    let vocab = Vocab::new(
        vec!["a0".into(), "a1".into(), "a2".into()],
        vec!["o0".into(), "o1".into()],
    )
    .unwrap();
    let m = random_matrix(11, 7, false);
    let text = m.to_csv(&vocab).unwrap();
    assert!(text.starts_with("id,true_attr,true_obj,domain,a0|o0|seen,a1|o0|seen,a2|o0|unseen,a0|o1|unseen\n"));
    let back = ScoreMatrix::from_csv(&text, &vocab).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_csv(&vocab).unwrap(), text);
    assert!(ScoreMatrix::from_csv("id,x\n", &vocab).is_err());
    let short = text.replacen(",seen,", ",seen", 1);
    assert!(ScoreMatrix::from_csv(&short, &vocab).is_err());
    let unknown = text.replace("a2|o0", "zz|o0");
    assert!(matches!(ScoreMatrix::from_csv(&unknown, &vocab), Err(Error::Format(_))));
}

#[test]
fn report_json_round_trip() {
    let m = random_matrix(2, 9, false);
    let report = evaluate_matrices(crate::data::Setting::Generalized, &m, Some(&m)).unwrap();
    let text = report.to_json().unwrap();
    let back = EvalReport::from_json(&text).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.to_json().unwrap(), text);
    let g = report.generalized.unwrap();
    assert_eq!(g.test.curves.iter().map(|c| c.k).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(g.test.auc(1).unwrap() <= g.test.auc(2).unwrap());

    let conv = evaluate_matrices(crate::data::Setting::Conventional, &m, None).unwrap();
    let c = conv.conventional.unwrap();
    assert_eq!(c.candidates, 2);
    assert!(conv.generalized.is_none());
}

#[test]
fn untrained_model_is_near_chance() {
    let world = generate_synthetic(&SyntheticWorldConfig::default()).unwrap();
    let split = world.conventional().unwrap();
    let mut total = 0.0;
    let seeds = 8;
    for seed in 0..seeds {
        let emb = random_embeddings(world.vocab(), 16, seed, false);
        let cfg = ModelConfig {
            joint_dim: 16,
            blocks: 16,
            feature_dim: 32,
            hidden: 16,
            lambda: 9.0,
            variant: Variant::Full,
        };
        let p = ModelParams::init(cfg, &emb, world.vocab().n_attrs(), seed).unwrap();
        let report = evaluate(&p, &split).unwrap();
        total += report.conventional.unwrap().top1;
    }
    let mean = total / seeds as f64;
    // Chance is 1/16; each seed contributes 320 correlated predictions.
    assert!((0.02..0.12).contains(&mean), "mean untrained top-1 {mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn curve_is_monotone_and_matches_pointwise(seed in any::<u64>(), items in 2usize..12, k in 1usize..4) {
        let m = random_matrix(seed, items, false);
        let c = auc_curve(&m, k).unwrap();
        for w in c.points.windows(2) {
            prop_assert!(w[1].seen <= w[0].seen);
            prop_assert!(w[1].unseen >= w[0].unseen);
        }
        for p in &c.points {
            let b = match (p.from, p.to) {
                (None, None) => 0.0,
                (None, Some(t)) => t - 1.0,
                (Some(f), None) => f + 1.0,
                (Some(f), Some(t)) => 0.5 * (f + t),
            };
            prop_assert_eq!(biased_topk_acc(&m, b, k).unwrap(), (p.seen, p.unseen));
        }
        let (first, last) = (&c.points[0], &c.points[c.points.len() - 1]);
        prop_assert_eq!(biased_topk_acc(&m, f64::NEG_INFINITY, k).unwrap(), (first.seen, first.unseen));
        prop_assert_eq!(biased_topk_acc(&m, f64::INFINITY, k).unwrap(), (last.seen, last.unseen));
    }

    #[test]
    fn auc_bounded_and_monotone_in_k(seed in any::<u64>(), items in 2usize..12) {
        let m = random_matrix(seed, items, false);
        let a: Vec<f64> = (1..=4).map(|k| auc(&m, k).unwrap()).collect();
        for w in a.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-15);
        }
        prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn shifting_all_scores_changes_nothing(seed in any::<u64>(), items in 2usize..12, shift in -40i32..40) {
        let m = random_matrix(seed, items, true);
        let s = m.shifted(shift as f64 / 4.0).unwrap();
        for k in 1..=3 {
            prop_assert_eq!(auc_curve(&m, k).unwrap().auc, auc_curve(&s, k).unwrap().auc);
            prop_assert_eq!(biased_topk_acc(&m, 0.25, k).unwrap(), biased_topk_acc(&s, 0.25, k).unwrap());
        }
        let (mu, su) = (m.restrict_to_unseen().unwrap(), s.restrict_to_unseen().unwrap());
        prop_assert_eq!(top1_unseen(&mu).unwrap(), top1_unseen(&su).unwrap());
    }
}
