use anysleep::sampling::{
    channel_count_probs, dataset_probs, draw_sequence, subsample_channels, IndexedRecording, Sampler,
    SamplingConfig, SamplingCorpus, SamplingError,
};
use anysleep::{Label, Stage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels(pattern: &[Stage], repeat: usize) -> Vec<Label> {
    pattern.iter().flat_map(|&s| std::iter::repeat_n(Some(s), repeat)).collect()
}

fn corpus() -> SamplingCorpus {
    use Stage::*;
    let a = vec![
        IndexedRecording::new("a0", labels(&[Wake, N1, N2, N3], 10), 2),
        IndexedRecording::new("a1", labels(&[N2, N3, Wake], 12), 3),
    ];
    let mut with_rem = labels(&[Wake, N2, Rem, N1, N3], 8);
    with_rem[3] = None;
    let b = vec![IndexedRecording::new("b0", with_rem, 1)];
    SamplingCorpus { datasets: vec![a, b] }
}

#[test]
fn rem_anchors_come_from_the_only_dataset_with_rem() {
    let c = corpus();
    let cfg = SamplingConfig {
        seq_len: 5,
        ..Default::default()
    };
    let p = dataset_probs(cfg.alpha, &[2, 1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = 0;
    for _ in 0..2000 {
        let s = draw_sequence(&mut rng, &c, &p, &cfg).unwrap();
        let rec = &c.datasets[s.dataset][s.recording];
        assert_eq!(rec.labels[s.anchor_epoch], Some(s.anchor_stage));
        assert!(s.start <= s.anchor_epoch && s.anchor_epoch < s.start + s.len);
        assert_eq!(s.len, 5);
        assert!(s.start + s.len <= rec.labels.len());
        assert_eq!(s.targets, rec.labels[s.start..s.start + 5].to_vec());
        if s.anchor_stage == Stage::Rem {
            assert_eq!(s.dataset, 1);
            seen += 1;
        }
    }
    assert!(seen > 300);
}

#[test]
fn unit_length_window_is_the_anchor() {
    let c = corpus();
    let cfg = SamplingConfig {
        seq_len: 1,
        ..Default::default()
    };
    let p = dataset_probs(0.5, &[2, 1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let s = draw_sequence(&mut rng, &c, &p, &cfg).unwrap();
        assert_eq!(s.start, s.anchor_epoch);
        assert_eq!(s.targets, vec![Some(s.anchor_stage)]);
    }
}

#[test]
fn missing_stage_exhausts_the_retry_bound() {
    let c = SamplingCorpus {
        datasets: vec![vec![IndexedRecording::new("x", labels(&[Stage::Wake, Stage::N2], 5), 1)]],
    };
    let cfg = SamplingConfig {
        seq_len: 3,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut err = None;
    for _ in 0..50 {
        if let Err(e) = draw_sequence(&mut rng, &c, &[1.0], &cfg) {
            err = Some(e);
            break;
        }
    }
    match err {
        Some(SamplingError::MissingStage { stage, retries: 1000 }) => {
            assert!(![Stage::Wake, Stage::N2].contains(&stage));
        }
        other => panic!("expected missing-stage error, got {other:?}"),
    }
}

#[test]
fn anchor_stage_frequencies_are_uniform() {
    let c = corpus();
    let cfg = SamplingConfig {
        seq_len: 4,
        ..Default::default()
    };
    let p = dataset_probs(0.5, &[2, 1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = [0usize; 5];
    let n = 100_000;
    for _ in 0..n {
        counts[draw_sequence(&mut rng, &c, &p, &cfg).unwrap().anchor_stage.index()] += 1;
    }
    for k in counts {
        assert!((k as f64 / n as f64 - 0.2).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn channel_selection_frequencies_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (available, n) in [(5, 2), (3, 3), (2, 5)] {
        let mut counts = vec![0usize; available];
        let draws = 100_000;
        for _ in 0..draws {
            for i in subsample_channels(&mut rng, available, n).unwrap() {
                counts[i] += 1;
            }
        }
        let total = (draws * n) as f64;
        for k in &counts {
            assert!((*k as f64 / total - 1.0 / available as f64).abs() < 0.01, "{counts:?}");
        }
    }
}

#[test]
fn batches_share_one_channel_count_and_are_reproducible() {
    let c = corpus();
    let cfg = SamplingConfig {
        seq_len: 6,
        ..Default::default()
    };
    let mut a = Sampler::new(9, 0, &c, cfg.clone()).unwrap();
    let mut b = Sampler::new(9, 0, &c, cfg.clone()).unwrap();
    let mut other = Sampler::new(9, 1, &c, cfg).unwrap();
    let mut sizes = std::collections::BTreeSet::new();
    let mut differs = false;
    for _ in 0..200 {
        let x = a.next_batch(&c, 8).unwrap();
        assert_eq!(x, b.next_batch(&c, 8).unwrap());
        differs |= x != other.next_batch(&c, 8).unwrap();
        let n = x[0].channels.len();
        assert!(x.iter().all(|s| s.channels.len() == n));
        sizes.insert(n);
    }
    assert!(differs);
    assert_eq!(sizes.into_iter().collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn sampler_frequencies_follow_both_formulas() {
    let c = corpus();
    let cfg = SamplingConfig {
        seq_len: 2,
        ..Default::default()
    };
    let mut s = Sampler::new(10, 0, &c, cfg).unwrap();
    let pn = channel_count_probs(3).unwrap();
    let mut n_counts = [0usize; 3];
    let batches = 100_000;
    for _ in 0..batches {
        let b = s.next_batch(&c, 1).unwrap();
        n_counts[b[0].channels.len() - 1] += 1;
    }
    for (k, p) in n_counts.iter().zip(&pn) {
        assert!((*k as f64 / batches as f64 - p).abs() < 0.01, "{n_counts:?} vs {pn:?}");
    }
}

#[test]
fn dataset_draws_follow_the_weighting_when_every_recording_has_every_stage() {
    use Stage::*;
    let full = || labels(&[Wake, N1, N2, N3, Rem], 3);
    let c = SamplingCorpus {
        datasets: vec![
            vec![IndexedRecording::new("a", full(), 1)],
            (0..3).map(|i| IndexedRecording::new(format!("b{i}"), full(), 1)).collect(),
        ],
    };
    let cfg = SamplingConfig {
        seq_len: 2,
        ..Default::default()
    };
    let p = dataset_probs(0.5, &[1, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let hits = (0..n).filter(|_| draw_sequence(&mut rng, &c, &p, &cfg).unwrap().dataset == 0).count();
    assert!((hits as f64 / n as f64 - p[0]).abs() < 0.01);
}

proptest! {
    #[test]
    fn probabilities_sum_to_one(alpha in 0.0f64..=1.0, counts in proptest::collection::vec(1usize..1000, 1..200), n in 1usize..10_000) {
        let p = dataset_probs(alpha, &counts).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = channel_count_probs(n).unwrap();
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn windows_stay_inside_recordings(seed in 0u64..10_000, len in 1usize..30) {
        let c = corpus();
        let cfg = SamplingConfig { seq_len: len, ..Default::default() };
        let p = dataset_probs(0.5, &[2, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let _: u8 = rng.random();
        let s = draw_sequence(&mut rng, &c, &p, &cfg).unwrap();
        let rec = &c.datasets[s.dataset][s.recording];
        prop_assert_eq!(s.targets.len(), len);
        prop_assert!(s.start + len <= rec.labels.len());
        prop_assert_eq!(rec.labels[s.anchor_epoch], Some(s.anchor_stage));
        prop_assert!(s.start <= s.anchor_epoch && s.anchor_epoch < s.start + len);
    }
}
