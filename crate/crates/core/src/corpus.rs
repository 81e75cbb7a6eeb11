//! Segmented corpora, vocabularies, gap-label conversion, and pretrained
//! character embeddings.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tagset::{CharTag, GapLabels, TagSet, TagSetKind};
use crate::tensor::Tensor;

/// Full-width ideographic space, treated as a word separator.
const IDEOGRAPHIC_SPACE: char = '\u{3000}';

/// A character sequence with word-end positions.
///
/// `boundaries` is strictly increasing, every entry lies in `1..=n`, and the
/// last entry is `n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SegmentedSentence {
    chars: Vec<char>,
    boundaries: Vec<usize>,
}

impl SegmentedSentence {
    pub fn new(chars: Vec<char>, boundaries: Vec<usize>) -> Result<Self> {
        let n = chars.len();
        if n == 0 {
            return Err(Error::Contract("sentence has no characters".into()));
        }
        if boundaries.last() != Some(&n) {
            return Err(Error::Contract(format!(
                "last boundary must equal sentence length {n}, got {boundaries:?}"
            )));
        }
        let mut prev = 0;
        for &b in &boundaries {
            if b <= prev {
                return Err(Error::Contract(format!(
                    "boundaries must be strictly increasing within 1..={n}: {boundaries:?}"
                )));
            }
            prev = b;
        }
        Ok(SegmentedSentence { chars, boundaries })
    }

    /// The whole character sequence as a single word.
    pub fn unsegmented(chars: Vec<char>) -> Result<Self> {
        let n = chars.len();
        Self::new(chars, vec![n])
    }

    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut chars = Vec::new();
        let mut boundaries = Vec::with_capacity(words.len());
        for w in words {
            let w = w.as_ref();
            if w.is_empty() {
                return Err(Error::Contract("empty word".into()));
            }
            chars.extend(w.chars());
            boundaries.push(chars.len());
        }
        Self::new(chars, boundaries)
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.boundaries.len()
    }

    /// Half-open `(start, end)` character spans of the words.
    pub fn spans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let starts = std::iter::once(0).chain(self.boundaries.iter().copied());
        starts.zip(self.boundaries.iter().copied())
    }

    pub fn words(&self) -> Vec<String> {
        self.spans()
            .map(|(s, e)| self.chars[s..e].iter().collect())
            .collect()
    }

    /// Words joined by single ASCII spaces.
    pub fn render(&self) -> String {
        self.words().join(" ")
    }
}

impl fmt::Display for SegmentedSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn read_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.split(b'\n').enumerate().map(|(i, line)| {
        let line_no = i + 1;
        let bytes = line?;
        String::from_utf8(bytes)
            .map(|s| (line_no, s))
            .map_err(|e| Error::Ingestion {
                line: line_no,
                msg: format!("invalid UTF-8: {}", e.utf8_error()),
            })
    })
}

/// Splits one corpus line into words; `None` for a blank line.
pub fn parse_line(line: &str) -> Option<SegmentedSentence> {
    let mut words: Vec<String> = Vec::new();
    let mut current = String::new();
    for c in line.chars() {
        if c == ' ' || c == IDEOGRAPHIC_SPACE {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if !c.is_whitespace() {
            current.push(c);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    if words.is_empty() {
        None
    } else {
        Some(SegmentedSentence::from_words(&words).expect("non-empty words"))
    }
}

/// Reads a segmented corpus: one sentence per line, words separated by
/// spaces. Blank lines are skipped; invalid UTF-8 is rejected.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<SegmentedSentence>> {
    let mut out = Vec::new();
    for line in read_lines(reader) {
        let (_, line) = line?;
        out.extend(parse_line(&line));
    }
    Ok(out)
}

/// Like [`parse_corpus`] but keeps blank lines as `None` so line numbers and
/// alignment with another file are preserved.
pub fn parse_corpus_lines<R: BufRead>(reader: R) -> Result<Vec<Option<SegmentedSentence>>> {
    read_lines(reader)
        .map(|line| line.map(|(_, l)| parse_line(&l)))
        .collect()
}

/// Characters of one raw input line with all whitespace removed.
pub fn raw_chars(line: &str) -> Vec<char> {
    line.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Reads unsegmented text, one sentence per line. Blank lines yield empty
/// character vectors so output can stay line-aligned.
pub fn parse_raw<R: BufRead>(reader: R) -> Result<Vec<Vec<char>>> {
    read_lines(reader)
        .map(|line| line.map(|(_, l)| raw_chars(&l)))
        .collect()
}

pub fn render_corpus(sentences: &[SegmentedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.render());
        out.push('\n');
    }
    out
}

/// Splits off the last tenth of the corpus as a development set, keeping at
/// least one development sentence whenever there are two or more.
pub fn dev_split<S: Clone>(corpus: &[S]) -> (Vec<S>, Vec<S>) {
    let n = corpus.len();
    let dev = if n >= 2 { (n / 10).max(1) } else { 0 };
    if dev == 0 {
        log::warn!("corpus of {n} sentence(s) is too small for a development split");
    }
    let (train, dev) = corpus.split_at(n - dev);
    (train.to_vec(), dev.to_vec())
}

/// Per-character tags under a paired scheme.
pub fn char_tags(sentence: &SegmentedSentence, kind: TagSetKind) -> Vec<CharTag> {
    let mut tags = Vec::with_capacity(sentence.len());
    for (start, end) in sentence.spans() {
        let len = end - start;
        for k in 0..len {
            let tag = match kind {
                TagSetKind::BeginEnd | TagSetKind::Binary => {
                    if k == 0 {
                        CharTag::B
                    } else {
                        CharTag::E
                    }
                }
                TagSetKind::Bems => match (k, len) {
                    (_, 1) => CharTag::S,
                    (0, _) => CharTag::B,
                    (k, len) if k + 1 == len => CharTag::E,
                    _ => CharTag::M,
                },
            };
            tags.push(tag);
        }
    }
    tags
}

/// Gold gap labels of a segmented sentence.
pub fn to_gap_labels(sentence: &SegmentedSentence, tagset: &TagSet) -> GapLabels {
    let n = sentence.len();
    match tagset.kind {
        TagSetKind::Binary => {
            let mut labels = vec![0; n - 1];
            for &b in &sentence.boundaries()[..sentence.word_count() - 1] {
                labels[b - 1] = 1;
            }
            labels
        }
        kind => {
            let tags = char_tags(sentence, kind);
            tags.windows(2)
                .map(|w| {
                    tagset
                        .pair_label(w[0], w[1])
                        .expect("gold tag pairs are always in the label set")
                })
                .collect()
        }
    }
}

/// Rebuilds a segmentation from gap labels. The labels must be valid under
/// the tag set.
pub fn from_gap_labels(chars: &[char], labels: &[usize], tagset: &TagSet) -> Result<SegmentedSentence> {
    let n = chars.len();
    if n == 0 || labels.len() != n - 1 {
        return Err(Error::Contract(format!(
            "{} gap labels for {} characters",
            labels.len(),
            n
        )));
    }
    tagset
        .validate(labels)
        .map_err(|v| Error::DecodeConsistency(v.describe(tagset)))?;
    let mut boundaries: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|&(_, &l)| tagset.boundary[l])
        .map(|(i, _)| i + 1)
        .collect();
    boundaries.push(n);
    SegmentedSentence::new(chars.to_vec(), boundaries)
}

/// Character to index map. Index 0 is the shared unknown-character slot.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    pub const UNKNOWN: usize = 0;

    /// Collects characters in order of first appearance.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a SegmentedSentence>) -> Self {
        let mut vocab = Vocabulary::default();
        for s in sentences {
            for &c in s.chars() {
                vocab.push(c);
            }
        }
        vocab
    }

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        for c in chars {
            if !vocab.push(c) {
                return Err(Error::Contract(format!("duplicate vocabulary character {c:?}")));
            }
        }
        Ok(vocab)
    }

    fn push(&mut self, c: char) -> bool {
        if self.index.contains_key(&c) {
            return false;
        }
        self.chars.push(c);
        self.index.insert(c, self.chars.len());
        true
    }

    /// Rows in an embedding table, including the unknown slot.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn known(&self) -> &[char] {
        &self.chars
    }

    pub fn index(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn char_at(&self, index: usize) -> Option<char> {
        index.checked_sub(1).and_then(|i| self.chars.get(i)).copied()
    }

    pub fn encode(&self, chars: &[char]) -> Vec<usize> {
        chars.iter().map(|&c| self.index(c)).collect()
    }
}

/// Character embedding matrix, one row per vocabulary index.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    pub matrix: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn random(vocab: &Vocabulary, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        EmbeddingTable {
            matrix: Tensor::uniform(vec![vocab.size(), dim], EMBEDDING_INIT_RANGE, rng),
            trainable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    /// Known rows in word2vec text format.
    pub fn dump(&self, vocab: &Vocabulary) -> String {
        let mut out = format!("{} {}\n", vocab.known().len(), self.dim());
        for (i, c) in vocab.known().iter().enumerate() {
            out.push(*c);
            for v in self.matrix.row(i + 1) {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub const EMBEDDING_INIT_RANGE: f64 = 0.05;

/// Vectors read from a word2vec text file.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainedVectors {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f64>)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmbeddingLoadReport {
    pub copied: usize,
    pub ignored: usize,
}

impl PretrainedVectors {
    /// Parses the header line `count dim` followed by `token v1 .. v_dim`
    /// lines.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = read_lines(reader);
        let (line_no, header) = lines.next().ok_or(Error::Ingestion {
            line: 1,
            msg: "missing header".into(),
        })??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (count, dim) = match fields.as_slice() {
            [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
                (Ok(c), Ok(d)) if d > 0 => (c, d),
                _ => return Err(malformed(line_no, "header must be `count dim`")),
            },
            _ => return Err(malformed(line_no, "header must be `count dim`")),
        };
        let mut entries = Vec::with_capacity(count);
        for line in lines {
            let (line_no, line) = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else {
                continue;
            };
            let values = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| malformed(line_no, &format!("bad value: {e}")))?;
            if values.len() != dim {
                return Err(malformed(
                    line_no,
                    &format!("expected {dim} values, found {}", values.len()),
                ));
            }
            entries.push((token.to_string(), values));
        }
        if entries.len() != count {
            log::warn!(
                "embedding header announces {count} entries, file has {}",
                entries.len()
            );
        }
        Ok(PretrainedVectors { dim, entries })
    }

    /// Copies vectors of in-vocabulary characters into a freshly initialized
    /// table. Tokens that are not a single known character are ignored.
    pub fn apply<T: Scalar>(
        &self,
        vocab: &Vocabulary,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(EmbeddingTable<T>, EmbeddingLoadReport)> {
        if self.dim != dim {
            return Err(Error::Config(format!(
                "embedding file has dimension {}, model expects {dim}",
                self.dim
            )));
        }
        let mut table = EmbeddingTable::random(vocab, dim, rng);
        let mut report = EmbeddingLoadReport::default();
        for (token, values) in &self.entries {
            let mut cs = token.chars();
            let idx = match (cs.next(), cs.next()) {
                (Some(c), None) => vocab.index(c),
                _ => Vocabulary::UNKNOWN,
            };
            if idx == Vocabulary::UNKNOWN {
                report.ignored += 1;
                continue;
            }
            let row = &mut table.matrix.data_mut()[idx * dim..(idx + 1) * dim];
            for (dst, &v) in row.iter_mut().zip(values) {
                *dst = T::of(v);
            }
            report.copied += 1;
        }
        Ok((table, report))
    }
}

/// Reads a word2vec text file and builds an embedding table for `vocab`.
/// Rows without a pretrained vector are drawn from `uniform(-0.05, 0.05)`.
pub fn load_embeddings<T: Scalar, R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<(EmbeddingTable<T>, EmbeddingLoadReport)> {
    let vectors = PretrainedVectors::parse(reader)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vectors.apply(vocab, dim, &mut rng)
}

fn malformed(line: usize, msg: &str) -> Error {
    Error::Ingestion {
        line,
        msg: msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagset::builtin_tagsets;

    fn s(line: &str) -> SegmentedSentence {
        parse_line(line).unwrap()
    }

    #[test]
    fn parses_words_and_boundaries() {
        let x = s("AB C");
        assert_eq!(x.chars(), &['A', 'B', 'C']);
        assert_eq!(x.boundaries(), &[2, 3]);
        let y = s("X");
        assert_eq!(y.boundaries(), &[1]);
    }

    #[test]
    fn separators_and_stray_whitespace() {
        let x = s("  AB\u{3000}C\tD  E\r");
        assert_eq!(x.words(), ["AB", "CD", "E"]);
    }

    #[test]
    fn corpus_skips_blank_lines() {
        let text = "AB C\n\n   \nD\n";
        let c = parse_corpus(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(render_corpus(&c), "AB C\nD\n");
    }

    #[test]
    fn malformed_utf8_reports_line() {
        let bytes = b"AB C\nD \xff E\n";
        match parse_corpus(&bytes[..]) {
            Err(Error::Ingestion { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gap_labels_for_each_scheme() {
        let [binary, be, bems] = builtin_tagsets();
        let x = s("AB C");
        assert_eq!(to_gap_labels(&x, binary), vec![0, 1]);
        let names = |ts: &TagSet, l: GapLabels| -> Vec<&str> { l.iter().map(|&i| ts.name_of(i)).collect() };
        assert_eq!(names(be, to_gap_labels(&x, be)), ["BE", "EB"]);
        assert_eq!(names(bems, to_gap_labels(&x, bems)), ["BE", "ES"]);
    }

    #[test]
    fn labels_back_to_sentence() {
        let [binary, _, bems] = builtin_tagsets();
        let chars = ['A', 'B', 'C'];
        assert_eq!(from_gap_labels(&chars, &[0, 1], binary).unwrap().render(), "AB C");
        let labels = vec![bems.label("BE").unwrap(), bems.label("ES").unwrap()];
        assert_eq!(from_gap_labels(&chars, &labels, bems).unwrap().render(), "AB C");
    }

    #[test]
    fn invalid_labels_are_rejected() {
        let be = TagSetKind::BeginEnd.tagset();
        let labels = vec![be.label("BE").unwrap(), be.label("BB").unwrap()];
        assert!(matches!(
            from_gap_labels(&['a', 'b', 'c'], &labels, be),
            Err(Error::DecodeConsistency(_))
        ));
        assert!(from_gap_labels(&['a', 'b'], &[], be).is_err());
    }

    #[test]
    fn single_character_sentence_has_no_gaps() {
        let x = s("X");
        for ts in builtin_tagsets() {
            let labels = to_gap_labels(&x, ts);
            assert!(labels.is_empty());
            assert_eq!(from_gap_labels(&['X'], &labels, ts).unwrap(), x);
        }
    }

    #[test]
    fn bems_tags_never_pair_badly() {
        let x = s("A BCD EF G");
        let tags = char_tags(&x, TagSetKind::Bems);
        for w in tags.windows(2) {
            assert!(!matches!((w[0], w[1]), (CharTag::E, CharTag::E) | (CharTag::S, CharTag::E)));
        }
    }

    #[test]
    fn sentence_constructor_checks() {
        assert!(SegmentedSentence::new(vec!['a', 'b'], vec![1]).is_err());
        assert!(SegmentedSentence::new(vec!['a', 'b'], vec![1, 1, 2]).is_err());
        assert!(SegmentedSentence::new(vec![], vec![]).is_err());
        assert!(SegmentedSentence::new(vec!['a', 'b'], vec![0, 2]).is_err());
    }

    #[test]
    fn dev_split_takes_last_tenth() {
        let corpus: Vec<u32> = (0..20).collect();
        let (train, dev) = dev_split(&corpus);
        assert_eq!(train.len(), 18);
        assert_eq!(dev, vec![18, 19]);
        let (train, dev) = dev_split(&[7u32]);
        assert_eq!((train, dev.len()), (vec![7], 0));
        let (train, dev) = dev_split(&[1u32, 2, 3]);
        assert_eq!((train, dev), (vec![1, 2], vec![3]));
        let corpus: Vec<u32> = (0..37).collect();
        let (mut train, dev) = dev_split(&corpus);
        train.extend(dev);
        assert_eq!(train, corpus);
    }

    #[test]
    fn vocabulary_reserves_unknown() {
        let v = Vocabulary::build(&[s("AB C"), s("CA D")]);
        assert_eq!(v.size(), 5);
        assert_eq!(v.index('A'), 1);
        assert_eq!(v.index('D'), 4);
        assert_eq!(v.index('Z'), Vocabulary::UNKNOWN);
        assert_eq!(v.char_at(3), Some('C'));
        assert_eq!(v.char_at(0), None);
        assert!(Vocabulary::from_chars("aa".chars()).is_err());
    }

    #[test]
    fn embeddings_copy_known_rows() {
        let vocab = Vocabulary::build(&[s("AB C")]);
        let text = "3 3\nA 0.1 0.2 0.3\nC -1 0 1.5\nZ 9 9 9\n";
        let (table, report) = load_embeddings::<f64, _>(text.as_bytes(), &vocab, 3, 1).unwrap();
        assert_eq!(report, EmbeddingLoadReport { copied: 2, ignored: 1 });
        assert_eq!(table.matrix.row(1), &[0.1, 0.2, 0.3]);
        assert_eq!(table.matrix.row(3), &[-1.0, 0.0, 1.5]);
        assert!(table.matrix.row(2).iter().all(|v| v.abs() < 0.05));
        assert!(table.trainable);
    }

    #[test]
    fn embedding_dimension_and_format_errors() {
        let vocab = Vocabulary::build(&[s("AB")]);
        let r = load_embeddings::<f64, _>("1 2\nA 1 2\n".as_bytes(), &vocab, 3, 1);
        assert!(matches!(r, Err(Error::Config(_))));
        let r = load_embeddings::<f64, _>("1 2\nA 1\n".as_bytes(), &vocab, 2, 1);
        assert!(matches!(r, Err(Error::Ingestion { line: 2, .. })));
        let r = load_embeddings::<f64, _>("1 2\nA 1 x\n".as_bytes(), &vocab, 2, 1);
        assert!(matches!(r, Err(Error::Ingestion { line: 2, .. })));
        let r = load_embeddings::<f64, _>("nonsense\n".as_bytes(), &vocab, 2, 1);
        assert!(matches!(r, Err(Error::Ingestion { line: 1, .. })));
    }

    #[test]
    fn embedding_dump_round_trips_bits() {
        let vocab = Vocabulary::build(&[s("AB")]);
        let text = "2 2\nA 0.1 -3.25e-7\nB 12345.678901234567 1e-300\n";
        let (table, _) = load_embeddings::<f64, _>(text.as_bytes(), &vocab, 2, 1).unwrap();
        let dumped = table.dump(&vocab);
        let a = PretrainedVectors::parse(text.as_bytes()).unwrap();
        let b = PretrainedVectors::parse(dumped.as_bytes()).unwrap();
        for ((ta, va), (tb, vb)) in a.entries.iter().zip(&b.entries) {
            assert_eq!(ta, tb);
            let bits = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(va), bits(vb));
        }
    }
}
