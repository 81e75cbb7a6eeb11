//! Seeded synthetic corpora for tests, benchmarks and smoke runs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::SegmentedSentence;

/// `n` consecutive characters from the CJK unified ideographs block.
pub fn cjk_alphabet(n: usize) -> Vec<char> {
    (0..n as u32)
        .map(|i| char::from_u32(0x4E00 + i).expect("inside the CJK block"))
        .collect()
}

/// A word list in which no character is shared between words, so every
/// sentence built from it has exactly one correct segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    words: Vec<Vec<char>>,
}

impl Lexicon {
    /// Word lengths are 1 to 4 characters, with 2 the most common.
    pub fn generate<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Self {
        const LENGTHS: [usize; 8] = [1, 2, 2, 2, 3, 3, 4, 1];
        let lengths: Vec<usize> = (0..size).map(|_| *LENGTHS.choose(rng).unwrap()).collect();
        let mut alphabet = cjk_alphabet(lengths.iter().sum());
        alphabet.shuffle(rng);
        let mut rest = &alphabet[..];
        let words = lengths
            .into_iter()
            .map(|len| {
                let (w, tail) = rest.split_at(len);
                rest = tail;
                w.to_vec()
            })
            .collect();
        Lexicon { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = String> + '_ {
        self.words.iter().map(|w| w.iter().collect())
    }

    /// A sentence of `min_words..=max_words` words drawn uniformly.
    pub fn sentence<R: Rng + ?Sized>(&self, min_words: usize, max_words: usize, rng: &mut R) -> SegmentedSentence {
        let count = rng.gen_range(min_words.max(1)..=max_words.max(min_words).max(1));
        let words: Vec<String> = (0..count)
            .map(|_| self.words.choose(rng).expect("non-empty lexicon").iter().collect())
            .collect();
        SegmentedSentence::from_words(&words).expect("lexicon words are non-empty")
    }

    /// `count` sentences of 3 to 12 words.
    pub fn corpus<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<SegmentedSentence> {
        (0..count).map(|_| self.sentence(3, 12, rng)).collect()
    }
}

/// Random characters from `alphabet` with random word boundaries.
pub fn fuzz_sentence<R: Rng + ?Sized>(alphabet: &[char], len: usize, rng: &mut R) -> SegmentedSentence {
    let chars: Vec<char> = (0..len.max(1)).map(|_| *alphabet.choose(rng).unwrap()).collect();
    let mut boundaries: Vec<usize> = (1..chars.len()).filter(|_| rng.gen_bool(0.45)).collect();
    boundaries.push(chars.len());
    SegmentedSentence::new(chars, boundaries).expect("boundaries are increasing")
}

/// `count` fuzzed sentences with lengths drawn from `1..=max_len`.
pub fn fuzz_corpus<R: Rng + ?Sized>(alphabet: &[char], count: usize, max_len: usize, rng: &mut R) -> Vec<SegmentedSentence> {
    (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=max_len.max(1));
            fuzz_sentence(alphabet, len, rng)
        })
        .collect()
}
