//! Annotated relation corpus: instance model, JSON-lines I/O, relation
//! contexts and the lemma-frequency filter.
//!
//! Tokens arrive pre-annotated (surface text, lemma, universal POS tag); this
//! module never tokenizes or tags anything itself.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Universal POS tags accepted in token annotations.
pub const POS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN", "PUNCT", "SCONJ",
    "SYM", "VERB", "X",
];

/// Default minimum lemma count for a context word to be kept.
pub const DEFAULT_MIN_LEMMA_FREQ: usize = 5;

/// The six semantic relation classes, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "COMPARE")]
    Compare,
    #[serde(rename = "MODEL-FEATURE")]
    ModelFeature,
    #[serde(rename = "PART_WHOLE")]
    PartWhole,
    #[serde(rename = "RESULT")]
    Result,
    #[serde(rename = "TOPIC")]
    Topic,
    #[serde(rename = "USAGE")]
    Usage,
}

impl Relation {
    pub const COUNT: usize = 6;

    /// All labels in label order. The order is also lexicographic on the
    /// label names, and is the tie-break order for every argmax.
    pub const ALL: [Relation; 6] = [
        Relation::Compare,
        Relation::ModelFeature,
        Relation::PartWhole,
        Relation::Result,
        Relation::Topic,
        Relation::Usage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Compare => "COMPARE",
            Relation::ModelFeature => "MODEL-FEATURE",
            Relation::PartWhole => "PART_WHOLE",
            Relation::Result => "RESULT",
            Relation::Topic => "TOPIC",
            Relation::Usage => "USAGE",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Relation> {
        Relation::ALL.get(i).copied()
    }

    /// Only COMPARE is symmetric; all other relations have a start and an
    /// end entity.
    pub fn is_symmetric(self) -> bool {
        matches!(self, Relation::Compare)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown relation label {s:?}")))
    }
}

/// Probabilities for the six relation classes, in label order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassDistribution(pub [f64; Relation::COUNT]);

impl ClassDistribution {
    pub fn get(&self, r: Relation) -> f64 {
        self.0[r.index()]
    }

    /// Most probable class; ties go to the first label in label order.
    pub fn argmax(&self) -> Relation {
        argmax(&self.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Relation, f64)> + '_ {
        Relation::ALL.iter().map(move |&r| (r, self.0[r.index()]))
    }
}

pub fn argmax(p: &[f64; Relation::COUNT]) -> Relation {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    Relation::ALL[best]
}

impl fmt::Display for ClassDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|(r, p)| format!("{r}={p:.4}")).collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subtask {
    #[serde(rename = "1.1")]
    Clean,
    #[serde(rename = "1.2")]
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub lemma: String,
    pub pos: String,
}

impl Token {
    pub fn new(text: &str, lemma: &str, pos: &str) -> Self {
        Token {
            text: text.to_string(),
            lemma: lemma.to_string(),
            pos: pos.to_string(),
        }
    }

    /// Key used for embedding lookups: the lowercased lemma.
    pub fn embedding_key(&self) -> String {
        self.lemma.to_lowercase()
    }
}

/// Inclusive token-index span, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn token_count(&self) -> usize {
        self.end + 1 - self.start
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

/// One entity pair with its sentence context and (optionally) its gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub id: String,
    pub tokens: Vec<Token>,
    pub e1: Span,
    pub e2: Span,
    pub label: Option<Relation>,
    pub reverse: bool,
    pub subtask: Subtask,
}

impl RelationInstance {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(Error::Validation {
                id: self.id.clone(),
                msg,
            })
        };
        let n = self.tokens.len();
        if self.e1.start > self.e1.end {
            return fail(format!("e1 span {:?} is inverted", self.e1));
        }
        if self.e2.start > self.e2.end {
            return fail(format!("e2 span {:?} is inverted", self.e2));
        }
        if self.e1.end >= self.e2.start {
            return fail(format!("e1 {:?} must end before e2 {:?} starts", self.e1, self.e2));
        }
        if self.e2.end >= n {
            return fail(format!("e2 span {:?} out of range for {n} tokens", self.e2));
        }
        for (i, t) in self.tokens.iter().enumerate() {
            if t.text.is_empty() || t.lemma.is_empty() {
                return fail(format!("token {i} has an empty text or lemma"));
            }
            if !POS_TAGS.contains(&t.pos.as_str()) {
                return fail(format!("token {i} has unknown POS tag {:?}", t.pos));
            }
        }
        Ok(())
    }

    pub fn entity_tokens(&self, span: Span) -> &[Token] {
        &self.tokens[span.start..=span.end]
    }

    /// The semantic start entity span: e1 unless the direction flag is set.
    pub fn start_span(&self) -> Span {
        if self.reverse {
            self.e2
        } else {
            self.e1
        }
    }

    pub fn end_span(&self) -> Span {
        if self.reverse {
            self.e1
        } else {
            self.e2
        }
    }

    /// Tokens strictly between the two entities, in surface order.
    pub fn context(&self) -> &[Token] {
        &self.tokens[self.e1.end + 1..self.e2.start]
    }
}

/// Tokens strictly between the two entity spans.
pub fn extract_context(inst: &RelationInstance) -> Vec<Token> {
    inst.context().to_vec()
}

/// Parse a JSON-lines corpus file.
pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Vec<RelationInstance>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parse JSON-lines records from any reader. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<RelationInstance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: RelationInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

pub fn parse_corpus_str(s: &str) -> Result<Vec<RelationInstance>> {
    read_corpus(s.as_bytes())
}

pub fn write_corpus<W: Write>(mut w: W, instances: &[RelationInstance]) -> std::io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn corpus_to_string(instances: &[RelationInstance]) -> String {
    let mut buf = Vec::new();
    write_corpus(&mut buf, instances).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Lemma occurrence counts over the context tokens of a corpus partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<String, u64>,
}

impl FrequencyTable {
    pub fn count(&self, lemma: &str) -> u64 {
        self.counts.get(lemma).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl FromIterator<(String, u64)> for FrequencyTable {
    fn from_iter<I: IntoIterator<Item = (String, u64)>>(iter: I) -> Self {
        let mut counts = BTreeMap::new();
        for (k, v) in iter {
            if v > 0 {
                *counts.entry(k).or_insert(0) += v;
            }
        }
        FrequencyTable { counts }
    }
}

pub fn build_lemma_counts(instances: &[RelationInstance]) -> FrequencyTable {
    let mut counts = BTreeMap::new();
    for inst in instances {
        for tok in inst.context() {
            *counts.entry(tok.lemma.clone()).or_insert(0) += 1;
        }
    }
    FrequencyTable { counts }
}

/// Keep the context tokens whose lemma occurs at least `threshold` times.
pub fn filter_context<'a>(context: &'a [Token], freq: &FrequencyTable, threshold: usize) -> Vec<&'a Token> {
    assert!(threshold >= 1, "frequency threshold must be positive");
    context
        .iter()
        .filter(|t| freq.count(&t.lemma) >= threshold as u64)
        .collect()
}
