//! Turning gap score rows into label sequences.
//!
//! All decoders maximize the sum of per-gap scores. Ties are broken towards
//! the lexicographically smaller label-index sequence, so output is fully
//! deterministic. The constrained decoders only emit sequences that pass
//! [`TagSet::validate`].

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{from_gap_labels, SegmentedSentence};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tagset::{GapLabels, TagSet, TagSetKind};
use crate::tensor::Tensor;

pub const DEFAULT_BEAM_WIDTH: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decoder {
    /// Independent per-gap argmax; only meaningful for the binary scheme.
    Greedy,
    Beam { width: usize },
    Viterbi,
}

impl Decoder {
    /// Greedy for `01`, width-10 beam search for the paired schemes.
    pub fn default_for(kind: TagSetKind) -> Self {
        match kind {
            TagSetKind::Binary => Decoder::Greedy,
            _ => Decoder::Beam {
                width: DEFAULT_BEAM_WIDTH,
            },
        }
    }

    pub fn check(self, kind: TagSetKind) -> Result<()> {
        match self {
            Decoder::Greedy if kind != TagSetKind::Binary => Err(Error::Config(format!(
                "greedy decoding is only valid for tag set 01, not {kind}"
            ))),
            Decoder::Beam { width: 0 } => Err(Error::Config("beam width must be at least 1".into())),
            _ => Ok(()),
        }
    }

    pub fn decode<T: Scalar>(self, scores: &Tensor<T>, tagset: &TagSet) -> Result<GapLabels> {
        match self {
            Decoder::Greedy => greedy_labels(scores),
            Decoder::Beam { width } => beam_decode(scores, tagset, width),
            Decoder::Viterbi => viterbi_decode(scores, tagset),
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decoder::Greedy => f.write_str("greedy"),
            Decoder::Beam { width } => write!(f, "beam({width})"),
            Decoder::Viterbi => f.write_str("viterbi"),
        }
    }
}

impl FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(Decoder::Greedy),
            "beam" => Ok(Decoder::Beam {
                width: DEFAULT_BEAM_WIDTH,
            }),
            "viterbi" => Ok(Decoder::Viterbi),
            _ => Err(Error::Config(format!(
                "unknown decoder `{s}` (expected greedy, beam or viterbi)"
            ))),
        }
    }
}

fn score_rows<T: Scalar>(scores: &Tensor<T>, labels: Option<usize>) -> Result<(usize, usize)> {
    let (rows, cols) = match *scores.shape() {
        [r, c] => (r, c),
        _ => return Err(Error::shape("gap scores", scores.shape(), &[])),
    };
    if let Some(l) = labels {
        if cols != l {
            return Err(Error::Config(format!(
                "score rows have {cols} columns, tag set has {l} labels"
            )));
        }
    }
    Ok((rows, cols))
}

/// Per-row argmax, lowest label index on ties.
pub fn greedy_labels<T: Scalar>(scores: &Tensor<T>) -> Result<GapLabels> {
    let (rows, _) = score_rows(scores, None)?;
    Ok((0..rows).map(|i| argmax(scores.row(i))).collect())
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Total score of a label sequence, summed left to right.
pub fn sequence_score<T: Scalar>(scores: &Tensor<T>, labels: &[usize]) -> T {
    let mut total = T::zero();
    for (i, &l) in labels.iter().enumerate() {
        total += scores.row(i)[l];
    }
    total
}

/// `viable[i][l]`: label `l` at gap `i` can still be extended to a complete
/// sequence ending in an `end_allowed` label.
fn viability(tagset: &TagSet, rows: usize) -> Vec<Vec<bool>> {
    let mut viable = vec![vec![false; tagset.len()]; rows];
    if rows == 0 {
        return viable;
    }
    viable[rows - 1] = tagset.end_allowed.clone();
    for i in (0..rows - 1).rev() {
        for l in 0..tagset.len() {
            viable[i][l] = tagset.successors[l].iter().any(|&s| viable[i + 1][s]);
        }
    }
    viable
}

/// Higher score first; among equal scores, the smaller lexicographic rank.
fn prefer<T: Scalar>(a: (T, usize), b: (T, usize)) -> Ordering {
    match b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal) {
        Ordering::Equal => a.1.cmp(&b.1),
        o => o,
    }
}

/// Ranks of `keys` in ascending order: `ranks[i]` is the position of `keys[i]`.
fn lex_ranks(keys: &[(usize, usize)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    let mut ranks = vec![0; keys.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r;
    }
    ranks
}

#[derive(Clone, Copy, Debug)]
struct Hyp<T> {
    score: T,
    label: usize,
    parent: usize,
    /// Lexicographic rank of the full prefix among the kept hypotheses.
    rank: usize,
}

/// Beam search over transition-legal extensions.
///
/// Hypotheses that end in the same label are recombined, keeping the best
/// one: every future extension depends only on that last label, so the
/// dropped ones can never finish ahead. With `width` at least the label
/// count the search is exact.
pub fn beam_decode<T: Scalar>(scores: &Tensor<T>, tagset: &TagSet, width: usize) -> Result<GapLabels> {
    if width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let (rows, _) = score_rows(scores, Some(tagset.len()))?;
    if rows == 0 {
        return Ok(Vec::new());
    }
    let viable = viability(tagset, rows);
    let mut steps: Vec<Vec<Hyp<T>>> = Vec::with_capacity(rows);

    let first = scores.row(0);
    let mut beam: Vec<Hyp<T>> = (0..tagset.len())
        .filter(|&l| tagset.start_allowed[l] && viable[0][l])
        .map(|l| Hyp {
            score: first[l],
            label: l,
            parent: usize::MAX,
            rank: l,
        })
        .collect();
    beam.sort_by(|a, b| prefer((a.score, a.rank), (b.score, b.rank)));
    beam.truncate(width);
    rerank(&mut beam, |h| (0, h.label));
    steps.push(beam);

    let mut best_for: Vec<Option<Hyp<T>>> = vec![None; tagset.len()];
    for i in 1..rows {
        let row = scores.row(i);
        let prev = &steps[i - 1];
        best_for.iter_mut().for_each(|b| *b = None);
        for (pi, h) in prev.iter().enumerate() {
            for &next in &tagset.successors[h.label] {
                if !viable[i][next] {
                    continue;
                }
                let cand = Hyp {
                    score: h.score + row[next],
                    label: next,
                    parent: pi,
                    rank: h.rank,
                };
                let slot = &mut best_for[next];
                let replace = match slot {
                    None => true,
                    Some(cur) => prefer((cand.score, cand.rank), (cur.score, cur.rank)) == Ordering::Less,
                };
                if replace {
                    *slot = Some(cand);
                }
            }
        }
        let mut beam: Vec<Hyp<T>> = best_for.iter().flatten().copied().collect();
        // `rank` still holds the parent's rank; with distinct labels the
        // candidate order is (score desc, parent rank, label).
        beam.sort_by(|a, b| {
            prefer((a.score, a.rank), (b.score, b.rank)).then(a.label.cmp(&b.label))
        });
        beam.truncate(width);
        rerank(&mut beam, |h| (h.rank, h.label));
        if beam.is_empty() {
            return Err(Error::NoLegalSequence { gaps: rows });
        }
        steps.push(beam);
    }

    let last = steps[rows - 1]
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| prefer((a.score, a.rank), (b.score, b.rank)))
        .map(|(i, _)| i)
        .ok_or(Error::NoLegalSequence { gaps: rows })?;
    let mut labels = vec![0; rows];
    let mut at = last;
    for i in (0..rows).rev() {
        let h = steps[i][at];
        labels[i] = h.label;
        at = h.parent;
    }
    Ok(labels)
}

fn rerank<T: Scalar>(beam: &mut [Hyp<T>], key: impl Fn(&Hyp<T>) -> (usize, usize)) {
    let keys: Vec<(usize, usize)> = beam.iter().map(key).collect();
    for (h, r) in beam.iter_mut().zip(lex_ranks(&keys)) {
        h.rank = r;
    }
}

/// Exact maximization over all valid label sequences by dynamic programming
/// over the last label.
pub fn viterbi_decode<T: Scalar>(scores: &Tensor<T>, tagset: &TagSet) -> Result<GapLabels> {
    let (rows, labels) = score_rows(scores, Some(tagset.len()))?;
    if rows == 0 {
        return Ok(Vec::new());
    }
    let viable = viability(tagset, rows);
    let mut alive: Vec<bool> = (0..labels)
        .map(|l| tagset.start_allowed[l] && viable[0][l])
        .collect();
    let mut best: Vec<T> = scores.row(0).to_vec();
    let mut rank: Vec<usize> = (0..labels).collect();
    let mut back = vec![vec![usize::MAX; labels]; rows];

    for i in 1..rows {
        let row = scores.row(i);
        let mut next_alive = vec![false; labels];
        let mut next_best = vec![T::zero(); labels];
        let mut keys = vec![(usize::MAX, usize::MAX); labels];
        for l in 0..labels {
            if !viable[i][l] {
                continue;
            }
            let pred = tagset.predecessors[l]
                .iter()
                .copied()
                .filter(|&p| alive[p])
                .min_by(|&p, &q| prefer((best[p], rank[p]), (best[q], rank[q])));
            if let Some(p) = pred {
                next_alive[l] = true;
                next_best[l] = best[p] + row[l];
                back[i][l] = p;
                keys[l] = (rank[p], l);
            }
        }
        if !next_alive.iter().any(|&a| a) {
            return Err(Error::NoLegalSequence { gaps: rows });
        }
        rank = lex_ranks(&keys);
        alive = next_alive;
        best = next_best;
    }

    let mut at = (0..labels)
        .filter(|&l| alive[l])
        .min_by(|&p, &q| prefer((best[p], rank[p]), (best[q], rank[q])))
        .ok_or(Error::NoLegalSequence { gaps: rows })?;
    let mut out = vec![0; rows];
    for i in (0..rows).rev() {
        out[i] = at;
        at = back[i][at];
    }
    Ok(out)
}

/// Decodes gap scores and rebuilds the segmentation. Sentences of one
/// character come back as a single word.
pub fn segment<T: Scalar>(
    chars: &[char],
    scores: &Tensor<T>,
    tagset: &TagSet,
    decoder: Decoder,
) -> Result<SegmentedSentence> {
    decoder.check(tagset.kind)?;
    let (rows, _) = score_rows(scores, Some(tagset.len()))?;
    if rows + 1 != chars.len() {
        return Err(Error::Contract(format!(
            "{rows} score rows for {} characters",
            chars.len()
        )));
    }
    let labels = decoder.decode(scores, tagset)?;
    from_gap_labels(chars, &labels, tagset)
}

/// Tab-separated dump: gap index then one column per label.
pub fn dump_scores<T: Scalar>(scores: &Tensor<T>, tagset: &TagSet) -> Result<String> {
    let (rows, _) = score_rows(scores, Some(tagset.len()))?;
    let mut out = String::from("gap");
    for l in &tagset.labels {
        out.push('\t');
        out.push_str(l);
    }
    out.push('\n');
    for i in 0..rows {
        out.push_str(&(i + 1).to_string());
        for v in scores.row(i) {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}
