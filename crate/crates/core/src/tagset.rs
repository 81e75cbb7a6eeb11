//! Gap labeling schemes.
//!
//! A gap sits between two adjacent characters. The binary scheme labels a
//! gap `1` when a word boundary falls there. The paired schemes label a gap
//! with the character tags on either side of it, so consecutive gap labels
//! share a character: the right tag of one label is the left tag of the next.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Index of a label inside its [`TagSet`].
pub type GapLabel = usize;

/// One label per gap, `n - 1` entries for a sentence of `n` characters.
pub type GapLabels = Vec<GapLabel>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TagSetKind {
    #[serde(rename = "01")]
    Binary,
    #[serde(rename = "BE")]
    BeginEnd,
    #[serde(rename = "BEMS")]
    Bems,
}

impl TagSetKind {
    pub const ALL: [TagSetKind; 3] = [TagSetKind::Binary, TagSetKind::BeginEnd, TagSetKind::Bems];

    pub fn name(self) -> &'static str {
        match self {
            TagSetKind::Binary => "01",
            TagSetKind::BeginEnd => "BE",
            TagSetKind::Bems => "BEMS",
        }
    }

    pub fn tagset(self) -> &'static TagSet {
        static SETS: OnceLock<[TagSet; 3]> = OnceLock::new();
        let sets = SETS.get_or_init(|| [binary(), begin_end(), bems()]);
        match self {
            TagSetKind::Binary => &sets[0],
            TagSetKind::BeginEnd => &sets[1],
            TagSetKind::Bems => &sets[2],
        }
    }

    pub fn label_count(self) -> usize {
        self.tagset().len()
    }
}

impl fmt::Display for TagSetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TagSetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_uppercase().as_str() {
            "01" => Ok(TagSetKind::Binary),
            "BE" => Ok(TagSetKind::BeginEnd),
            "BEMS" | "BMES" => Ok(TagSetKind::Bems),
            _ => Err(Error::Config(format!(
                "unknown tag set `{s}` (expected 01, be or bems)"
            ))),
        }
    }
}

/// Per-character position tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CharTag {
    B,
    E,
    M,
    S,
}

impl CharTag {
    fn parse(c: char) -> CharTag {
        match c {
            'B' => CharTag::B,
            'E' => CharTag::E,
            'M' => CharTag::M,
            'S' => CharTag::S,
            other => unreachable!("no character tag {other}"),
        }
    }

    /// Whether a word starts at a character carrying this tag.
    pub fn starts_word(self) -> bool {
        matches!(self, CharTag::B | CharTag::S)
    }
}

/// Label inventory, transition table, and boundary constraints of one scheme.
#[derive(Clone, Debug)]
pub struct TagSet {
    pub kind: TagSetKind,
    pub labels: Vec<&'static str>,
    /// Left and right character tags for the paired schemes.
    pub pairs: Option<Vec<(CharTag, CharTag)>>,
    pub successors: Vec<Vec<GapLabel>>,
    pub predecessors: Vec<Vec<GapLabel>>,
    pub start_allowed: Vec<bool>,
    pub end_allowed: Vec<bool>,
    /// Whether a label places a word boundary at its gap.
    pub boundary: Vec<bool>,
}

/// First point where a label sequence breaks the scheme's constraints.
/// `position` counts gaps from 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub kind: ViolationKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    UnknownLabel(GapLabel),
    BadStart(GapLabel),
    BadTransition { prev: GapLabel, next: GapLabel },
    BadEnd(GapLabel),
}

impl Violation {
    pub fn describe(&self, tagset: &TagSet) -> String {
        let name = |l: GapLabel| tagset.labels.get(l).copied().unwrap_or("?");
        match self.kind {
            ViolationKind::UnknownLabel(l) => format!("gap {}: unknown label index {l}", self.position),
            ViolationKind::BadStart(l) => {
                format!("gap {}: {} cannot start a sentence", self.position, name(l))
            }
            ViolationKind::BadTransition { prev, next } => format!(
                "gap {}: {} cannot follow {}",
                self.position,
                name(next),
                name(prev)
            ),
            ViolationKind::BadEnd(l) => {
                format!("gap {}: {} cannot end a sentence", self.position, name(l))
            }
        }
    }
}

impl TagSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, name: &str) -> Option<GapLabel> {
        self.labels.iter().position(|&l| l == name)
    }

    pub fn name_of(&self, label: GapLabel) -> &'static str {
        self.labels[label]
    }

    pub fn allows(&self, prev: GapLabel, next: GapLabel) -> bool {
        self.successors[prev].contains(&next)
    }

    /// Label index for a pair of character tags.
    pub fn pair_label(&self, left: CharTag, right: CharTag) -> Option<GapLabel> {
        self.pairs
            .as_ref()?
            .iter()
            .position(|&p| p == (left, right))
    }

    pub fn is_constrained(&self) -> bool {
        self.kind != TagSetKind::Binary
    }

    /// Checks the start constraint, every adjacent transition, and the end
    /// constraint. An empty sequence is valid.
    pub fn validate(&self, labels: &[GapLabel]) -> Result<(), Violation> {
        for (i, &l) in labels.iter().enumerate() {
            if l >= self.len() {
                return Err(Violation {
                    position: i + 1,
                    kind: ViolationKind::UnknownLabel(l),
                });
            }
        }
        let Some(&first) = labels.first() else {
            return Ok(());
        };
        if !self.start_allowed[first] {
            return Err(Violation {
                position: 1,
                kind: ViolationKind::BadStart(first),
            });
        }
        for (i, w) in labels.windows(2).enumerate() {
            if !self.allows(w[0], w[1]) {
                return Err(Violation {
                    position: i + 2,
                    kind: ViolationKind::BadTransition {
                        prev: w[0],
                        next: w[1],
                    },
                });
            }
        }
        let last = labels[labels.len() - 1];
        if !self.end_allowed[last] {
            return Err(Violation {
                position: labels.len(),
                kind: ViolationKind::BadEnd(last),
            });
        }
        Ok(())
    }
}

/// The three schemes: `01`, `BE`, `BEMS`.
pub fn builtin_tagsets() -> [&'static TagSet; 3] {
    TagSetKind::ALL.map(TagSetKind::tagset)
}

fn binary() -> TagSet {
    let all = vec![0, 1];
    TagSet {
        kind: TagSetKind::Binary,
        labels: vec!["0", "1"],
        pairs: None,
        successors: vec![all.clone(), all.clone()],
        predecessors: vec![all.clone(), all],
        start_allowed: vec![true, true],
        end_allowed: vec![true, true],
        boundary: vec![false, true],
    }
}

fn begin_end() -> TagSet {
    paired(
        TagSetKind::BeginEnd,
        &["BB", "BE", "EB", "EE"],
        &[
            ("BE", ["EB", "EE"]),
            ("BB", ["BB", "BE"]),
            ("EB", ["BB", "BE"]),
            ("EE", ["EB", "EE"]),
        ],
        // the first character always starts a word: B
        |left, _| left == CharTag::B,
        // a word may end on either tag (a lone final character is "B")
        |_, _| true,
    )
}

fn bems() -> TagSet {
    paired(
        TagSetKind::Bems,
        &["BE", "BM", "EB", "ES", "SS", "SB", "ME", "MM"],
        &[
            ("BE", ["EB", "ES"]),
            ("BM", ["ME", "MM"]),
            ("EB", ["BE", "BM"]),
            ("ES", ["SB", "SS"]),
            ("SS", ["SS", "SB"]),
            ("SB", ["BE", "BM"]),
            ("ME", ["EB", "ES"]),
            ("MM", ["MM", "ME"]),
        ],
        |left, _| matches!(left, CharTag::B | CharTag::S),
        |_, right| matches!(right, CharTag::E | CharTag::S),
    )
}

fn paired(
    kind: TagSetKind,
    names: &[&'static str],
    table: &[(&str, [&str; 2])],
    start: impl Fn(CharTag, CharTag) -> bool,
    end: impl Fn(CharTag, CharTag) -> bool,
) -> TagSet {
    let index = |name: &str| names.iter().position(|&n| n == name).expect("label in table");
    let pairs: Vec<(CharTag, CharTag)> = names
        .iter()
        .map(|n| {
            let mut cs = n.chars();
            (
                CharTag::parse(cs.next().unwrap()),
                CharTag::parse(cs.next().unwrap()),
            )
        })
        .collect();
    let mut successors = vec![Vec::new(); names.len()];
    for (from, to) in table {
        let mut next: Vec<GapLabel> = to.iter().map(|n| index(n)).collect();
        next.sort_unstable();
        successors[index(from)] = next;
    }
    let mut predecessors = vec![Vec::new(); names.len()];
    for (p, succ) in successors.iter().enumerate() {
        for &s in succ {
            predecessors[s].push(p);
        }
    }
    TagSet {
        kind,
        labels: names.to_vec(),
        start_allowed: pairs.iter().map(|&(l, r)| start(l, r)).collect(),
        end_allowed: pairs.iter().map(|&(l, r)| end(l, r)).collect(),
        boundary: pairs.iter().map(|&(_, r)| r.starts_word()).collect(),
        pairs: Some(pairs),
        successors,
        predecessors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(ts: &TagSet, labels: &[GapLabel]) -> Vec<&'static str> {
        labels.iter().map(|&l| ts.name_of(l)).collect()
    }

    fn seq(ts: &TagSet, names: &[&str]) -> GapLabels {
        names.iter().map(|n| ts.label(n).unwrap()).collect()
    }

    #[test]
    fn begin_end_successors() {
        let ts = TagSetKind::BeginEnd.tagset();
        let be = ts.label("BE").unwrap();
        assert_eq!(names(ts, &ts.successors[be]), ["EB", "EE"]);
    }

    #[test]
    fn bems_successors_of_es() {
        let ts = TagSetKind::Bems.tagset();
        let es = ts.label("ES").unwrap();
        let mut got = names(ts, &ts.successors[es]);
        got.sort();
        assert_eq!(got, ["SB", "SS"]);
    }

    #[test]
    fn paired_sets_have_two_successors_that_chain() {
        for kind in [TagSetKind::BeginEnd, TagSetKind::Bems] {
            let ts = kind.tagset();
            let pairs = ts.pairs.as_ref().unwrap();
            for (l, succ) in ts.successors.iter().enumerate() {
                assert_eq!(succ.len(), 2, "{} {}", kind, ts.name_of(l));
                for &s in succ {
                    assert_eq!(pairs[l].1, pairs[s].0);
                }
            }
        }
    }

    #[test]
    fn binary_is_unconstrained() {
        let ts = TagSetKind::Binary.tagset();
        assert!(ts.validate(&[0, 1, 1, 0, 0]).is_ok());
        assert_eq!(ts.boundary, [false, true]);
    }

    #[test]
    fn validate_begin_end() {
        let ts = TagSetKind::BeginEnd.tagset();
        assert!(ts.validate(&seq(ts, &["BE", "EB"])).is_ok());
        let v = ts.validate(&seq(ts, &["BE", "BB"])).unwrap_err();
        assert_eq!(v.position, 2);
        assert!(matches!(v.kind, ViolationKind::BadTransition { .. }));
        assert_eq!(v.describe(ts), "gap 2: BB cannot follow BE");
        assert!(ts.validate(&[]).is_ok());
        let v = ts.validate(&seq(ts, &["EB"])).unwrap_err();
        assert_eq!(v.kind, ViolationKind::BadStart(ts.label("EB").unwrap()));
    }

    #[test]
    fn validate_bems_end_and_unknown() {
        let ts = TagSetKind::Bems.tagset();
        let v = ts.validate(&seq(ts, &["BM"])).unwrap_err();
        assert_eq!(v.kind, ViolationKind::BadEnd(ts.label("BM").unwrap()));
        let v = ts.validate(&[0, 42]).unwrap_err();
        assert_eq!(v.position, 2);
        assert!(ts.validate(&seq(ts, &["SB", "BM", "MM", "ME"])).is_ok());
    }

    #[test]
    fn start_and_end_sets() {
        let bems = TagSetKind::Bems.tagset();
        let start: Vec<_> = (0..8).filter(|&l| bems.start_allowed[l]).collect();
        assert_eq!(names(bems, &start), ["BE", "BM", "SS", "SB"]);
        let end: Vec<_> = (0..8).filter(|&l| bems.end_allowed[l]).collect();
        assert_eq!(names(bems, &end), ["BE", "ES", "SS", "ME"]);
        let be = TagSetKind::BeginEnd.tagset();
        assert_eq!(be.start_allowed, [true, true, false, false]);
        assert_eq!(be.end_allowed, [true; 4]);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("bems".parse::<TagSetKind>().unwrap(), TagSetKind::Bems);
        assert_eq!("01".parse::<TagSetKind>().unwrap(), TagSetKind::Binary);
        assert!("bio".parse::<TagSetKind>().is_err());
        assert_eq!(TagSetKind::BeginEnd.label_count(), 4);
    }
}
