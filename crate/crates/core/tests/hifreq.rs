mod common;

use anysleep::hifreq::{
    derive_arousals, iou_match, triplet_features, wake_overlap_fraction, wake_runs, OverlapMeasure, ResolutionSweep,
    RowStep, TRIPLETS,
};
use anysleep::signal_io::{EventInterval, EventKind};
use anysleep::Stage;
use common::{oracle_arousals, oracle_match, oracle_triplets, random_events, random_timeline, random_triplet_case};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEC: RowStep = RowStep { num: 1, den: 1 };

#[test]
fn derive_arousals_matches_oracle_on_1000_timelines() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut nonempty = 0;
    for _ in 0..1000 {
        let stages = random_timeline(&mut rng);
        let got: Vec<(f64, f64)> = derive_arousals(&stages, SEC).iter().map(|e| (e.onset, e.end())).collect();
        let want = oracle_arousals(&stages);
        assert_eq!(got, want, "{stages:?}");
        nonempty += usize::from(!got.is_empty());
    }
    assert!(nonempty > 200, "too few timelines exercise the rules: {nonempty}");
}

#[test]
fn iou_match_matches_oracle_on_1000_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 0..1000 {
        let nc = rng.random_range(0..8);
        let na = rng.random_range(0..8);
        let c = random_events(&mut rng, nc);
        let a = random_events(&mut rng, na);
        let summed = k % 2 == 1;
        let measure = if summed { OverlapMeasure::Summed } else { OverlapMeasure::Union };
        let m = iou_match(&c, &a, 0.2, measure);
        let got: Vec<(usize, usize)> = m.matches.iter().map(|&(i, j, _)| (i, j)).collect();
        assert_eq!(got, oracle_match(&c, &a, 0.2, summed));
        assert!(m.matches.len() <= nc.min(na));
        assert_eq!(m.matches.len() + m.false_positives.len(), nc);
        assert_eq!(m.matches.len() + m.false_negatives.len(), na);
    }
}

#[test]
fn triplet_features_match_oracle_on_1000_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut blocks_seen = 0;
    for _ in 0..1000 {
        let case = random_triplet_case(&mut rng);
        let res = triplet_features(&case.stages, case.resolution, &case.reference).unwrap();
        let want = oracle_triplets(&case);
        let got: Vec<Vec<u32>> = res.blocks.iter().map(|b| b.counts.clone()).collect();
        assert_eq!(got, want);
        assert_eq!(res.too_short, want.is_empty());
        for (i, b) in res.blocks.iter().enumerate() {
            assert_eq!((b.block, b.counts.len()), (i, 80));
        }
        blocks_seen += want.len();
    }
    assert!(blocks_seen > 500);
    assert_eq!(TRIPLETS, 80);
}

#[test]
fn sweep_holds_the_fourteen_resolutions() {
    let sweep = ResolutionSweep::default();
    assert_eq!(sweep.resolutions, [1, 2, 4, 8, 16, 32, 64, 128, 256, 384, 640, 960, 1920, 3840]);
    assert!(sweep.resolutions.iter().all(|r| 3840 % r == 0));
}

fn stage() -> impl Strategy<Value = Stage> {
    prop_oneof![3 => Just(Stage::Wake), 1 => Just(Stage::N1), 2 => Just(Stage::N2), 1 => Just(Stage::Rem)]
}

proptest! {
    #[test]
    fn candidates_are_disjoint_unions_of_wake_runs(stages in proptest::collection::vec(stage(), 0..150)) {
        let out = derive_arousals(&stages, SEC);
        let runs = wake_runs(&stages);
        for w in out.windows(2) {
            prop_assert!(w[0].end() <= w[1].onset);
        }
        for e in &out {
            prop_assert!((3.0..=15.0).contains(&e.duration));
            let (s, t) = (e.onset as usize, e.end() as usize);
            prop_assert!(runs.iter().any(|r| r.0 == s) && runs.iter().any(|r| r.1 == t));
            prop_assert!(runs.iter().all(|r| r.1 <= s || r.0 >= t || (r.0 >= s && r.1 <= t)));
        }
    }

    #[test]
    fn overlap_grows_with_the_wake_set(
        stages in proptest::collection::vec(stage(), 40),
        extra in proptest::collection::vec(any::<bool>(), 40),
        on in 0usize..30,
        dur in 1usize..10,
    ) {
        let ev = [EventInterval::new(on as f64, dur as f64, EventKind::Arousal).unwrap()];
        let more: Vec<Stage> = stages.iter().zip(&extra).map(|(s, x)| if *x { Stage::Wake } else { *s }).collect();
        let a = wake_overlap_fraction(&stages, SEC, &ev).unwrap();
        let b = wake_overlap_fraction(&more, SEC, &ev).unwrap();
        prop_assert!(b >= a && (0.0..=1.0).contains(&a) && b <= 1.0);
    }
}
