use gapseg::corpus::{from_gap_labels, parse_line, to_gap_labels};
use gapseg::decode::{beam_decode, greedy_labels, viterbi_decode};
use gapseg::eval::{correct_words, f1, hybrid_combine};
use gapseg::{SegmentedSentence, TagSetKind, Tensor64};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::char::range('\u{4e00}', '\u{4e40}'), 1..5).prop_map(|c| c.into_iter().collect())
}

fn sentence() -> impl Strategy<Value = SegmentedSentence> {
    prop::collection::vec(word(), 1..12).prop_map(|w| SegmentedSentence::from_words(&w).unwrap())
}

/// Two segmentations of the same characters.
fn sentence_pair() -> impl Strategy<Value = (SegmentedSentence, SegmentedSentence)> {
    sentence().prop_flat_map(|s| {
        let n = s.len();
        (Just(s), prop::collection::vec(any::<bool>(), n.saturating_sub(1)))
    })
    .prop_map(|(s, cuts)| {
        let mut b: Vec<usize> = cuts.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i + 1).collect();
        b.push(s.len());
        let other = SegmentedSentence::new(s.chars().to_vec(), b).unwrap();
        (s, other)
    })
}

fn kind() -> impl Strategy<Value = TagSetKind> {
    prop::sample::select(TagSetKind::ALL.to_vec())
}

fn scores(labels: usize) -> impl Strategy<Value = Tensor64> {
    (0usize..20).prop_flat_map(move |rows| {
        prop::collection::vec(-5.0f64..5.0, rows * labels)
            .prop_map(move |d| Tensor64::new(vec![rows, labels], d).unwrap())
    })
}

proptest! {
    #[test]
    fn gap_labels_round_trip(s in sentence(), k in kind()) {
        let t = k.tagset();
        let labels = to_gap_labels(&s, t);
        prop_assert_eq!(labels.len(), s.len() - 1);
        prop_assert!(t.validate(&labels).is_ok());
        prop_assert_eq!(from_gap_labels(s.chars(), &labels, t).unwrap(), s);
    }

    #[test]
    fn parse_render_parse(s in sentence()) {
        prop_assert_eq!(parse_line(&s.render()).unwrap(), s);
    }

    #[test]
    fn greedy_ignores_row_shift(m in scores(2), c in -100.0f64..100.0) {
        let shifted = m.map(|x| x + c);
        prop_assert_eq!(greedy_labels(&m).unwrap(), greedy_labels(&shifted).unwrap());
    }

    #[test]
    fn wide_beam_is_exact(k in kind(), seed in any::<u64>()) {
        use rand::SeedableRng;
        let t = k.tagset();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows = (seed % 25) as usize;
        let m = Tensor64::uniform(vec![rows, t.len()], 2.0, &mut rng);
        prop_assert_eq!(beam_decode(&m, t, t.len()).unwrap(), viterbi_decode(&m, t).unwrap());
    }

    #[test]
    fn f1_self_is_one(s in sentence()) {
        prop_assert_eq!(f1(&[s.clone()], &[s]).unwrap().f1, 1.0);
    }

    #[test]
    fn f1_swap_exchanges_precision_and_recall((a, b) in sentence_pair()) {
        let ab = f1(&[a.clone()], &[b.clone()]).unwrap();
        let ba = f1(&[b], &[a]).unwrap();
        prop_assert_eq!(ab.correct_words, ba.correct_words);
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
    }

    #[test]
    fn hybrid_counts_come_from_selected_source(
        pairs in prop::collection::vec(sentence_pair(), 1..8),
        others in prop::collection::vec(any::<bool>(), 8),
        threshold in 0usize..30,
    ) {
        let gold: Vec<_> = pairs.iter().map(|(g, _)| g.clone()).collect();
        let base: Vec<_> = pairs.iter().map(|(_, p)| p.clone()).collect();
        let ours: Vec<_> = pairs.iter().zip(&others).map(|((g, p), &o)| if o { g.clone() } else { p.clone() }).collect();
        let combined = hybrid_combine(&base, &ours, threshold).unwrap();
        let expected: usize = gold
            .iter()
            .enumerate()
            .map(|(k, g)| correct_words(g, if g.len() > threshold { &ours[k] } else { &base[k] }))
            .sum();
        prop_assert_eq!(f1(&gold, &combined).unwrap().correct_words, expected);
    }
}
