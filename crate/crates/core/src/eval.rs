//! Word-level scoring, length buckets and the long-sentence combiner.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::SegmentedSentence;
use crate::error::{Error, Result};

/// Micro-averaged word counts and the derived scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub gold_words: usize,
    pub predicted_words: usize,
    pub correct_words: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalReport {
    pub fn from_counts(gold_words: usize, predicted_words: usize, correct_words: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct_words, predicted_words);
        let recall = ratio(correct_words, gold_words);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalReport {
            gold_words,
            predicted_words,
            correct_words,
            precision,
            recall,
            f1,
        }
    }

    fn merge(self, other: EvalReport) -> Self {
        Self::from_counts(
            self.gold_words + other.gold_words,
            self.predicted_words + other.predicted_words,
            self.correct_words + other.correct_words,
        )
    }
}

/// Number of predicted spans that exactly match a gold span.
pub fn correct_words(gold: &SegmentedSentence, pred: &SegmentedSentence) -> usize {
    let spans: HashSet<(usize, usize)> = gold.spans().collect();
    pred.spans().filter(|s| spans.contains(s)).count()
}

fn check_aligned(gold: &[SegmentedSentence], pred: &[SegmentedSentence]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment {
            index: gold.len().min(pred.len()),
            msg: format!("{} gold sentences but {} predicted", gold.len(), pred.len()),
        });
    }
    for (k, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.chars() != p.chars() {
            return Err(Error::Alignment {
                index: k,
                msg: "character sequences differ".into(),
            });
        }
    }
    Ok(())
}

fn sentence_report(gold: &SegmentedSentence, pred: &SegmentedSentence) -> EvalReport {
    EvalReport::from_counts(gold.word_count(), pred.word_count(), correct_words(gold, pred))
}

pub fn f1(gold: &[SegmentedSentence], pred: &[SegmentedSentence]) -> Result<EvalReport> {
    check_aligned(gold, pred)?;
    Ok(gold
        .iter()
        .zip(pred)
        .map(|(g, p)| sentence_report(g, p))
        .fold(EvalReport::default(), EvalReport::merge))
}

/// Character-count buckets given by their inclusive upper bounds; the last
/// bucket is open-ended.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthBuckets {
    upper: Vec<usize>,
}

impl Default for LengthBuckets {
    fn default() -> Self {
        LengthBuckets {
            upper: vec![30, 60, 90, 120],
        }
    }
}

impl LengthBuckets {
    pub fn new(upper: Vec<usize>) -> Result<Self> {
        if upper.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("bucket bounds must increase: {upper:?}")));
        }
        Ok(LengthBuckets { upper })
    }

    pub fn len(&self) -> usize {
        self.upper.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, chars: usize) -> usize {
        self.upper.iter().position(|&u| chars <= u).unwrap_or(self.upper.len())
    }

    pub fn label(&self, bucket: usize) -> String {
        let lo = if bucket == 0 { 0 } else { self.upper[bucket - 1] + 1 };
        match self.upper.get(bucket) {
            Some(hi) => format!("{lo}-{hi}"),
            None => format!("{lo}-inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketReport {
    pub label: String,
    pub sentences: usize,
    pub report: EvalReport,
}

pub fn bucketed_f1(
    gold: &[SegmentedSentence],
    pred: &[SegmentedSentence],
    buckets: &LengthBuckets,
) -> Result<Vec<BucketReport>> {
    check_aligned(gold, pred)?;
    let mut out: Vec<BucketReport> = (0..buckets.len())
        .map(|b| BucketReport {
            label: buckets.label(b),
            sentences: 0,
            report: EvalReport::default(),
        })
        .collect();
    for (g, p) in gold.iter().zip(pred) {
        let slot = &mut out[buckets.index_of(g.len())];
        slot.sentences += 1;
        slot.report = slot.report.merge(sentence_report(g, p));
    }
    Ok(out)
}

/// Takes `ours[k]` for sentences longer than `threshold` characters and
/// `base[k]` otherwise.
pub fn hybrid_combine(
    base: &[SegmentedSentence],
    ours: &[SegmentedSentence],
    threshold: usize,
) -> Result<Vec<SegmentedSentence>> {
    check_aligned(base, ours)?;
    Ok(base
        .iter()
        .zip(ours)
        .map(|(b, o)| if b.len() > threshold { o.clone() } else { b.clone() })
        .collect())
}

pub const DEFAULT_HYBRID_THRESHOLD: usize = 90;

/// Human-readable table of the overall report and optional buckets.
pub fn format_table(overall: &EvalReport, buckets: Option<&[BucketReport]>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "bucket", "sentences", "gold", "pred", "correct", "P", "R", "F1"
    );
    let mut row = |label: &str, sentences: Option<usize>, r: &EvalReport| {
        let sentences = sentences.map_or_else(|| "-".to_string(), |s| s.to_string());
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>8} {:>8} {:>8} {:>8.4} {:>8.4} {:>8.4}",
            label, sentences, r.gold_words, r.predicted_words, r.correct_words, r.precision, r.recall, r.f1
        );
    };
    row("all", None, overall);
    for b in buckets.unwrap_or_default() {
        row(&b.label, Some(b.sentences), &b.report);
    }
    out
}

/// One `bucket=<label> metric=<name> value=<v>` line per metric. The overall
/// report uses `bucket=all`. Metrics: gold, pred, correct, precision,
/// recall, f1, plus sentences for length buckets.
pub fn format_key_values(overall: &EvalReport, buckets: Option<&[BucketReport]>) -> String {
    let mut out = String::new();
    let mut emit = |label: &str, sentences: Option<usize>, r: &EvalReport| {
        if let Some(s) = sentences {
            let _ = writeln!(out, "bucket={label} metric=sentences value={s}");
        }
        let _ = writeln!(out, "bucket={label} metric=gold value={}", r.gold_words);
        let _ = writeln!(out, "bucket={label} metric=pred value={}", r.predicted_words);
        let _ = writeln!(out, "bucket={label} metric=correct value={}", r.correct_words);
        let _ = writeln!(out, "bucket={label} metric=precision value={:.6}", r.precision);
        let _ = writeln!(out, "bucket={label} metric=recall value={:.6}", r.recall);
        let _ = writeln!(out, "bucket={label} metric=f1 value={:.6}", r.f1);
    };
    emit("all", None, overall);
    for b in buckets.unwrap_or_default() {
        emit(&b.label, Some(b.sentences), &b.report);
    }
    out
}
