//! Inference timing split by phase and by sentence length.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::decode::{segment, Decoder};
use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::model::Segmenter;
use crate::scalar::Scalar;
use crate::tape::Tape;

/// Sentences with more characters than this count as long.
pub const LONG_SENTENCE_CHARS: usize = 30;

/// Wall-clock seconds per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PhaseTimes {
    pub encode: f64,
    pub score: f64,
    pub decode: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.encode + self.score + self.decode
    }

    fn add(&mut self, other: &PhaseTimes) {
        self.encode += other.encode;
        self.score += other.score;
        self.decode += other.decode;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SplitReport {
    pub sentences: usize,
    pub chars: usize,
    /// Per phase, the median over repeats of the summed split time.
    pub times: PhaseTimes,
}

impl SplitReport {
    pub fn seconds_per_sentence(&self) -> f64 {
        per(self.times.total(), self.sentences)
    }

    pub fn seconds_per_char(&self) -> f64 {
        per(self.times.total(), self.chars)
    }

    pub fn decode_seconds_per_char(&self) -> f64 {
        per(self.times.decode, self.chars)
    }
}

fn per(total: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub repeat: usize,
    pub decoder: String,
    pub short: SplitReport,
    pub long: SplitReport,
    /// Median over sentences of each sentence's median end-to-end time.
    pub median_sentence_seconds: f64,
}

impl BenchReport {
    pub fn all(&self) -> SplitReport {
        let mut times = self.short.times;
        times.add(&self.long.times);
        SplitReport {
            sentences: self.short.sentences + self.long.sentences,
            chars: self.short.chars + self.long.chars,
            times,
        }
    }
}

/// Median of `values`; the mean of the middle pair for even lengths.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

/// Times one sentence through encoding, scoring and decoding.
pub fn time_sentence<T: Scalar>(model: &Segmenter<T>, chars: &[char], decoder: Decoder) -> Result<PhaseTimes> {
    let indices = model.vocab().encode(chars);
    let start = Instant::now();
    let mut tape = Tape::new(model.params());
    let g = model.encode_on(&mut tape, &indices, &mut Mode::Inference)?;
    let encoded = Instant::now();
    let s = model.score_on(&mut tape, g, &mut Mode::Inference)?;
    let scores = tape.value(s).clone();
    let scored = Instant::now();
    let out = segment(chars, &scores, model.tagset(), decoder)?;
    let decoded = Instant::now();
    std::hint::black_box(out);
    Ok(PhaseTimes {
        encode: (encoded - start).as_secs_f64(),
        score: (scored - encoded).as_secs_f64(),
        decode: (decoded - scored).as_secs_f64(),
    })
}

/// Runs every non-empty sentence `repeat` times on the current thread.
pub fn bench<T: Scalar>(
    model: &Segmenter<T>,
    sentences: &[Vec<char>],
    decoder: Decoder,
    repeat: usize,
) -> Result<BenchReport> {
    if repeat == 0 {
        return Err(Error::Config("repeat must be at least 1".into()));
    }
    decoder.check(model.config().tagset)?;
    let sentences: Vec<&Vec<char>> = sentences.iter().filter(|s| !s.is_empty()).collect();
    let mut per_sentence = vec![Vec::with_capacity(repeat); sentences.len()];
    let mut short_runs = Vec::with_capacity(repeat);
    let mut long_runs = Vec::with_capacity(repeat);
    for _ in 0..repeat {
        let (mut short, mut long) = (PhaseTimes::default(), PhaseTimes::default());
        for (k, chars) in sentences.iter().enumerate() {
            let t = time_sentence(model, chars, decoder)?;
            per_sentence[k].push(t.total());
            if chars.len() > LONG_SENTENCE_CHARS {
                long.add(&t);
            } else {
                short.add(&t);
            }
        }
        short_runs.push(short);
        long_runs.push(long);
    }
    let split = |runs: &[PhaseTimes], long: bool| {
        let members = sentences.iter().filter(|s| (s.len() > LONG_SENTENCE_CHARS) == long);
        let pick = |f: fn(&PhaseTimes) -> f64| median(&mut runs.iter().map(f).collect::<Vec<_>>());
        SplitReport {
            sentences: members.clone().count(),
            chars: members.map(|s| s.len()).sum(),
            times: PhaseTimes {
                encode: pick(|t| t.encode),
                score: pick(|t| t.score),
                decode: pick(|t| t.decode),
            },
        }
    };
    let mut sentence_medians: Vec<f64> = per_sentence.iter_mut().map(|v| median(v)).collect();
    Ok(BenchReport {
        repeat,
        decoder: decoder.to_string(),
        short: split(&short_runs, false),
        long: split(&long_runs, true),
        median_sentence_seconds: median(&mut sentence_medians),
    })
}

fn splits(report: &BenchReport) -> [(&'static str, SplitReport); 3] {
    [("short", report.short), ("long", report.long), ("all", report.all())]
}

pub fn format_table(report: &BenchReport) -> String {
    let mut out = format!(
        "decoder={} repeat={} median_sentence_ms={:.4}\n",
        report.decoder,
        report.repeat,
        report.median_sentence_seconds * 1e3
    );
    let _ = writeln!(
        out,
        "{:<6} {:>9} {:>8} {:>10} {:>10} {:>10} {:>12} {:>12}",
        "split", "sentences", "chars", "encode_s", "score_s", "decode_s", "us/sentence", "us/char"
    );
    for (name, s) in splits(report) {
        let _ = writeln!(
            out,
            "{:<6} {:>9} {:>8} {:>10.4} {:>10.4} {:>10.4} {:>12.2} {:>12.3}",
            name,
            s.sentences,
            s.chars,
            s.times.encode,
            s.times.score,
            s.times.decode,
            s.seconds_per_sentence() * 1e6,
            s.seconds_per_char() * 1e6
        );
    }
    out
}

/// `split=<short|long|all> metric=<name> value=<v>` lines. Times are seconds.
pub fn format_key_values(report: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "split=all metric=median_sentence_seconds value={:.9}", report.median_sentence_seconds);
    for (name, s) in splits(report) {
        let _ = writeln!(out, "split={name} metric=sentences value={}", s.sentences);
        let _ = writeln!(out, "split={name} metric=chars value={}", s.chars);
        let _ = writeln!(out, "split={name} metric=encode_seconds value={:.9}", s.times.encode);
        let _ = writeln!(out, "split={name} metric=score_seconds value={:.9}", s.times.score);
        let _ = writeln!(out, "split={name} metric=decode_seconds value={:.9}", s.times.decode);
        let _ = writeln!(out, "split={name} metric=seconds_per_sentence value={:.9}", s.seconds_per_sentence());
        let _ = writeln!(out, "split={name} metric=seconds_per_char value={:.9}", s.seconds_per_char());
    }
    out
}
