//! Boolean lexical features over the relation context and the entities, and
//! the SVM input vector: boolean block followed by a MinMax-scaled dense
//! block `[context mean | start entity | end entity]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_lemma_counts, filter_context, FrequencyTable, RelationInstance, Token};
use crate::embeddings::{cosine, EmbeddingTable};
use crate::error::{Error, Result};

/// Feature namespaces. Variants are declared in lexicographic order of their
/// names so the derived `Ord` matches string order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Namespace {
    #[serde(rename = "bow")]
    Bow,
    #[serde(rename = "dist")]
    Dist,
    #[serde(rename = "endEnt")]
    EndEnt,
    #[serde(rename = "ents")]
    Ents,
    #[serde(rename = "lc")]
    Levin,
    #[serde(rename = "pos")]
    Pos,
    #[serde(rename = "pospath")]
    PosPath,
    #[serde(rename = "sim100")]
    Sim100,
    #[serde(rename = "simb")]
    SimBucket,
    #[serde(rename = "startEnt")]
    StartEnt,
}

impl Namespace {
    pub const ALL: [Namespace; 10] = [
        Namespace::Bow,
        Namespace::Dist,
        Namespace::EndEnt,
        Namespace::Ents,
        Namespace::Levin,
        Namespace::Pos,
        Namespace::PosPath,
        Namespace::Sim100,
        Namespace::SimBucket,
        Namespace::StartEnt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::Bow => "bow",
            Namespace::Dist => "dist",
            Namespace::EndEnt => "endEnt",
            Namespace::Ents => "ents",
            Namespace::Levin => "lc",
            Namespace::Pos => "pos",
            Namespace::PosPath => "pospath",
            Namespace::Sim100 => "sim100",
            Namespace::SimBucket => "simb",
            Namespace::StartEnt => "startEnt",
        }
    }
}

impl FromStr for Namespace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Namespace::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature namespace {s:?}")))
    }
}

/// A boolean feature: namespace plus value, displayed as `ns:value`.
///
/// The `pospath` value may be empty (an empty context has an empty path).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub ns: Namespace,
    pub value: String,
}

impl FeatureKey {
    pub fn new(ns: Namespace, value: impl Into<String>) -> Self {
        FeatureKey {
            ns,
            value: value.into(),
        }
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ns.as_str(), self.value)
    }
}

pub type KeySet = BTreeSet<FeatureKey>;

// ─── Levin classes ───────────────────────────────────────────────────

/// Verb lemma → top-level Levin class ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevinTable {
    classes: BTreeMap<String, BTreeSet<u32>>,
}

impl LevinTable {
    pub fn insert(&mut self, lemma: &str, class_id: &str) -> Result<()> {
        let top = top_level_class(class_id)
            .ok_or_else(|| Error::InvalidArgument(format!("bad Levin class id {class_id:?}")))?;
        self.classes.entry(lemma.to_string()).or_default().insert(top);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// "45.4" → 45, "13.1-1" → 13. Ids must be positive.
fn top_level_class(id: &str) -> Option<u32> {
    let digits: String = id.trim().chars().take_while(|c| c.is_ascii_digit()).collect();
    match digits.parse::<u32>() {
        Ok(n) if n > 0 => Some(n),
        _ => None,
    }
}

/// Load the TSV Levin table: `lemma<TAB>id,id,...` per line.
pub fn load_levin(path: impl AsRef<Path>) -> Result<LevinTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_levin(BufReader::new(file))
}

pub fn read_levin<R: BufRead>(reader: R) -> Result<LevinTable> {
    let mut table = LevinTable::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<levin>", e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::LevinFormat { line: i + 1, msg };
        let (lemma, ids) = line
            .split_once('\t')
            .ok_or_else(|| err("expected lemma<TAB>class ids".into()))?;
        let lemma = lemma.trim();
        if lemma.is_empty() {
            return Err(err("empty lemma".into()));
        }
        for id in ids.split(',').filter(|s| !s.trim().is_empty()) {
            table
                .insert(lemma, id)
                .map_err(|_| err(format!("bad class id {id:?}")))?;
        }
    }
    Ok(table)
}

pub fn levin_lookup(lemma: &str, levin: &LevinTable) -> BTreeSet<u32> {
    levin.classes.get(lemma).cloned().unwrap_or_default()
}

// ─── Context features ────────────────────────────────────────────────

/// First letter of each POS tag, in order.
pub fn pos_path<'a, I>(context: I) -> String
where
    I: IntoIterator<Item = &'a Token>,
{
    context.into_iter().filter_map(|t| t.pos.chars().next()).collect()
}

/// `bow`, `pos` and `lc` over the filtered context; `pospath` and `dist`
/// over the full context of the instance.
pub fn context_lexical(inst: &RelationInstance, filtered: &[&Token], levin: &LevinTable) -> KeySet {
    let mut keys = KeySet::new();
    for tok in filtered {
        keys.insert(FeatureKey::new(Namespace::Bow, tok.lemma.clone()));
        keys.insert(FeatureKey::new(Namespace::Pos, tok.pos.clone()));
        if tok.pos == "VERB" {
            for class in levin_lookup(&tok.lemma, levin) {
                keys.insert(FeatureKey::new(Namespace::Levin, class.to_string()));
            }
        }
    }
    let path = pos_path(inst.context());
    keys.insert(FeatureKey::new(Namespace::Dist, path.chars().count().to_string()));
    keys.insert(FeatureKey::new(Namespace::PosPath, path));
    keys
}

// ─── Entity features ─────────────────────────────────────────────────

/// Lowercased surface string of the entity, plus its head noun (last token)
/// when the entity is a multi-token nominal phrase.
fn entity_strings(tokens: &[Token]) -> Vec<String> {
    let full = tokens
        .iter()
        .map(|t| t.text.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ");
    let mut out = vec![full];
    if let [_, .., last] = tokens {
        if matches!(last.pos.as_str(), "NOUN" | "PROPN") {
            out.push(last.text.to_lowercase());
        }
    }
    out
}

pub fn entity_lexical(inst: &RelationInstance) -> KeySet {
    let mut keys = KeySet::new();
    let start = entity_strings(inst.entity_tokens(inst.start_span()));
    let end = entity_strings(inst.entity_tokens(inst.end_span()));
    for s in &start {
        keys.insert(FeatureKey::new(Namespace::Ents, s.clone()));
        keys.insert(FeatureKey::new(Namespace::StartEnt, s.clone()));
    }
    for s in &end {
        keys.insert(FeatureKey::new(Namespace::Ents, s.clone()));
        keys.insert(FeatureKey::new(Namespace::EndEnt, s.clone()));
    }
    keys
}

pub(crate) fn entity_keys(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(Token::embedding_key).collect()
}

/// Cosine of the two entity phrase vectors.
pub fn entity_similarity(inst: &RelationInstance, table: &EmbeddingTable) -> f64 {
    let a = table.phrase_vector(&entity_keys(inst.entity_tokens(inst.e1)));
    let b = table.phrase_vector(&entity_keys(inst.entity_tokens(inst.e2)));
    cosine(&a, &b)
}

/// Cosine truncated toward zero to two decimals, e.g. `0.43`, `-0.20`.
pub fn sim100_value(cos: f64) -> String {
    let scaled = cos.clamp(-1.0, 1.0) * 100.0;
    // 0.29 * 100 = 28.999999999999996; nudge by far less than one unit
    let mut t = (scaled + scaled.signum() * 1e-9).trunc() / 100.0;
    if t == 0.0 {
        t = 0.0;
    }
    format!("{t:.2}")
}

/// Bucket of `[-1,0) [0,.25) [.25,.5) [.5,.75) [.75,1]`.
pub fn sim_bucket(cos: f64) -> &'static str {
    match cos {
        c if c < 0.0 => "q0",
        c if c < 0.25 => "q25",
        c if c < 0.5 => "q50",
        c if c < 0.75 => "q75",
        _ => "q100",
    }
}

pub fn similarity_keys(cos: f64) -> KeySet {
    [
        FeatureKey::new(Namespace::Sim100, sim100_value(cos)),
        FeatureKey::new(Namespace::SimBucket, sim_bucket(cos)),
    ]
    .into_iter()
    .collect()
}

pub fn similarity_features(inst: &RelationInstance, table: &EmbeddingTable) -> KeySet {
    similarity_keys(entity_similarity(inst, table))
}

// ─── Feature space and vectors ───────────────────────────────────────

/// Frozen mapping from feature keys to column indices, in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureSpace {
    keys: Vec<FeatureKey>,
    index: HashMap<FeatureKey, u32>,
}

impl FeatureSpace {
    pub fn from_sorted_keys(keys: Vec<FeatureKey>) -> Result<Self> {
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Model("feature keys not strictly sorted".into()));
        }
        let index = keys.iter().enumerate().map(|(i, k)| (k.clone(), i as u32)).collect();
        Ok(FeatureSpace { keys, index })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, key: &FeatureKey) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn keys(&self) -> &[FeatureKey] {
        &self.keys
    }

    /// Sorted column indices of the keys present in the space; unseen keys
    /// are dropped.
    pub fn encode(&self, keys: &KeySet) -> Vec<u32> {
        let mut active: Vec<u32> = keys.iter().filter_map(|k| self.get(k)).collect();
        active.sort_unstable();
        active
    }
}

pub fn build_feature_space<'a, I>(train: I) -> FeatureSpace
where
    I: IntoIterator<Item = &'a KeySet>,
{
    let all: BTreeSet<FeatureKey> = train.into_iter().flatten().cloned().collect();
    FeatureSpace::from_sorted_keys(all.into_iter().collect()).expect("BTreeSet is sorted")
}

/// Per-column affine map onto [0, 1], fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Panics on an empty training set or ragged rows.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        assert!(!rows.is_empty(), "MinMaxScaler::fit needs training rows");
        let d = rows[0].as_ref().len();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), d, "ragged dense rows");
            for j in 0..d {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        MinMaxScaler { min, max }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Constant columns map to 0; values outside the training range clamp.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "dense block dimension mismatch");
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Active boolean columns plus the scaled dense block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub active: Vec<u32>,
    pub dense: Vec<f64>,
}

impl FeatureVector {
    pub fn squared_norm(&self) -> f64 {
        self.active.len() as f64 + self.dense.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Fitted feature extraction state: lemma counts, Levin table, feature space
/// and scaler. Everything prediction needs besides the embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePipeline {
    pub min_lemma_freq: usize,
    pub freq: FrequencyTable,
    pub levin: LevinTable,
    pub space: FeatureSpace,
    pub scaler: MinMaxScaler,
}

impl FeaturePipeline {
    /// Fit on labeled or unlabeled training instances. Lemma counts come
    /// from `train` only.
    pub fn fit(
        train: &[RelationInstance],
        table: &EmbeddingTable,
        levin: LevinTable,
        min_lemma_freq: usize,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Training("empty training set".into()));
        }
        if min_lemma_freq == 0 {
            return Err(Error::InvalidArgument("min_lemma_freq must be positive".into()));
        }
        let freq = build_lemma_counts(train);
        let key_sets: Vec<KeySet> = train
            .iter()
            .map(|inst| instance_keys(inst, &freq, min_lemma_freq, &levin, table))
            .collect();
        let space = build_feature_space(&key_sets);
        let dense: Vec<Vec<f64>> = train
            .iter()
            .map(|inst| raw_dense(inst, &freq, min_lemma_freq, table))
            .collect();
        let scaler = MinMaxScaler::fit(&dense);
        Ok(FeaturePipeline {
            min_lemma_freq,
            freq,
            levin,
            space,
            scaler,
        })
    }

    pub fn keys(&self, inst: &RelationInstance, table: &EmbeddingTable) -> KeySet {
        instance_keys(inst, &self.freq, self.min_lemma_freq, &self.levin, table)
    }

    pub fn transform(&self, inst: &RelationInstance, table: &EmbeddingTable) -> Result<FeatureVector> {
        if 3 * table.dim() != self.scaler.dim() {
            return Err(Error::Dimension {
                expected: self.scaler.dim() / 3,
                found: table.dim(),
            });
        }
        Ok(assemble(
            inst,
            &self.space,
            &self.scaler,
            table,
            &self.levin,
            &self.freq,
            self.min_lemma_freq,
        ))
    }
}

/// Every boolean key of an instance: context, entity and similarity features.
pub fn instance_keys(
    inst: &RelationInstance,
    freq: &FrequencyTable,
    min_lemma_freq: usize,
    levin: &LevinTable,
    table: &EmbeddingTable,
) -> KeySet {
    let filtered = filter_context(inst.context(), freq, min_lemma_freq);
    let mut keys = context_lexical(inst, &filtered, levin);
    keys.extend(entity_lexical(inst));
    keys.extend(similarity_features(inst, table));
    keys
}

/// Unscaled dense block `[context mean | start entity | end entity]`.
pub fn raw_dense(
    inst: &RelationInstance,
    freq: &FrequencyTable,
    min_lemma_freq: usize,
    table: &EmbeddingTable,
) -> Vec<f64> {
    let filtered = filter_context(inst.context(), freq, min_lemma_freq);
    let ctx: Vec<String> = filtered.iter().map(|t| t.embedding_key()).collect();
    let mut out = table.context_vector(&ctx);
    out.extend(table.phrase_vector(&entity_keys(inst.entity_tokens(inst.start_span()))));
    out.extend(table.phrase_vector(&entity_keys(inst.entity_tokens(inst.end_span()))));
    out
}

pub fn assemble(
    inst: &RelationInstance,
    space: &FeatureSpace,
    scaler: &MinMaxScaler,
    table: &EmbeddingTable,
    levin: &LevinTable,
    freq: &FrequencyTable,
    min_lemma_freq: usize,
) -> FeatureVector {
    let keys = instance_keys(inst, freq, min_lemma_freq, levin, table);
    FeatureVector {
        active: space.encode(&keys),
        dense: scaler.apply(&raw_dense(inst, freq, min_lemma_freq, table)),
    }
}

/// Group a key set by namespace, values in key order.
pub fn group_by_namespace(keys: &KeySet) -> BTreeMap<&'static str, Vec<String>> {
    let mut out: BTreeMap<&'static str, Vec<String>> = BTreeMap::new();
    for k in keys {
        out.entry(k.ns.as_str()).or_default().push(k.value.clone());
    }
    out
}
