mod common;

use anysleep::evaluation::{
    aggregate, macro_f1, pairwise_majority_vote, scorer_agreement, scorer_consensus, AbsentStagePolicy, ConfusionCounts,
    MetricsReport, Scope,
};
use anysleep::{Label, Stage};
use common::{oracle_mf1, random_labels};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn macro_f1_matches_oracle_on_1000_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (pred, truth) = random_labels(&mut rng);
        for (policy, zero) in [(AbsentStagePolicy::Exclude, false), (AbsentStagePolicy::Zero, true)] {
            match oracle_mf1(&pred, &truth, zero) {
                None => assert!(macro_f1(&pred, &truth, policy).is_err()),
                Some(o) => assert!((macro_f1(&pred, &truth, policy).unwrap() - o).abs() < 1e-12),
            }
        }
    }
}

#[test]
fn tie_votes_split_evenly() {
    let n = 10_000;
    let w = vec![Stage::Wake; n];
    let n2 = vec![Stage::N2; n];
    let out = pairwise_majority_vote(&[w, n2], 42).unwrap();
    let frac = out.iter().filter(|&&s| s == Stage::Wake).count() as f64 / n as f64;
    assert!((frac - 0.5).abs() < 0.02, "{frac}");
    assert!(out.iter().all(|&s| s == Stage::Wake || s == Stage::N2));
}

#[test]
fn proportional_counts_give_equal_scopes() {
    let base = ConfusionCounts::from_labels(
        &[Stage::Wake, Stage::N1, Stage::N2, Stage::N2, Stage::Rem],
        &[Some(Stage::Wake), Some(Stage::N2), Some(Stage::N2), Some(Stage::N3), Some(Stage::Rem)],
    )
    .unwrap();
    let mut triple = base;
    triple.add(&base);
    triple.add(&base);
    for policy in [AbsentStagePolicy::Exclude, AbsentStagePolicy::Zero] {
        let per = aggregate(&[base, triple], Scope::Recording, policy).unwrap();
        let whole = aggregate(&[base, triple], Scope::Dataset, policy).unwrap()[0];
        assert!((per[0] - whole).abs() < 1e-12 && (per[1] - whole).abs() < 1e-12);
    }
}

#[test]
fn metrics_report_records_policies() {
    let c = ConfusionCounts::from_labels(&[Stage::Wake], &[Some(Stage::Wake)]).unwrap();
    let named = vec![("r1".to_string(), c), ("r2".to_string(), c)];
    let rep = MetricsReport::build(&named, Scope::Recording, AbsentStagePolicy::Zero, Some(3)).unwrap();
    assert_eq!(rep.recordings.len(), 2);
    assert!(rep.dataset.is_none());
    let json = serde_json::to_string(&rep).unwrap();
    assert!(json.contains("\"scope\":\"recording\"") && json.contains("\"absent_stage\":\"zero\""));
    let rep = MetricsReport::build(&named, Scope::Dataset, AbsentStagePolicy::Exclude, None).unwrap();
    assert_eq!(rep.dataset.unwrap().mf1, 1.0);
}

fn stage() -> impl Strategy<Value = Stage> {
    (0usize..5).prop_map(|i| Stage::from_index(i).unwrap())
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![1 => Just(None), 6 => stage().prop_map(Some)]
}

proptest! {
    #[test]
    fn macro_f1_ignores_epoch_order(pairs in proptest::collection::vec((stage(), label()), 1..80), seed in any::<u64>()) {
        let (pred, truth): (Vec<Stage>, Vec<Label>) = pairs.iter().cloned().unzip();
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let p2: Vec<Stage> = idx.iter().map(|&i| pred[i]).collect();
        let t2: Vec<Label> = idx.iter().map(|&i| truth[i]).collect();
        for policy in [AbsentStagePolicy::Exclude, AbsentStagePolicy::Zero] {
            match (macro_f1(&pred, &truth, policy), macro_f1(&p2, &t2, policy)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }

    #[test]
    fn perfect_score_iff_every_scored_epoch_matches(pairs in proptest::collection::vec((stage(), label()), 1..40)) {
        let (pred, truth): (Vec<Stage>, Vec<Label>) = pairs.iter().cloned().unzip();
        prop_assume!(truth.iter().any(Option::is_some));
        let all_match = pred.iter().zip(&truth).all(|(p, t)| t.is_none_or(|t| t == *p));
        let m = macro_f1(&pred, &truth, AbsentStagePolicy::Exclude).unwrap();
        prop_assert_eq!(m == 1.0, all_match);
    }

    #[test]
    fn voting_over_copies_is_idempotent(seq in proptest::collection::vec(stage(), 0..50), k in 1usize..6, seed in any::<u64>()) {
        let copies = vec![seq.clone(); k];
        prop_assert_eq!(pairwise_majority_vote(&copies, seed).unwrap(), seq);
    }

    #[test]
    fn consensus_labels_come_from_the_top_four(scorers in proptest::collection::vec(proptest::collection::vec(label(), 12), 5)) {
        let out = scorer_consensus(&scorers).unwrap();
        let agreement = scorer_agreement(&scorers);
        let mut rank: Vec<usize> = (0..5).collect();
        rank.sort_by(|&a, &b| agreement[b].total_cmp(&agreement[a]));
        let top = &rank[..4];
        for (e, l) in out.iter().enumerate() {
            prop_assert!(top.iter().any(|&s| scorers[s][e] == *l));
        }
    }
}
