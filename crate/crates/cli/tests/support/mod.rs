//! Synthetic keyword corpus shared by the CLI and acceptance tests.
//!
//! Six classes, each marked by one keyword somewhere in the context. The
//! 50-dimensional embedding table gives every keyword its own block of
//! strongly positive components; fillers and entity nouns get small noise.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relclass::corpus::{write_corpus, Relation, RelationInstance, Span, Subtask, Token};
use relclass::embeddings::EmbeddingTable;

pub const DIM: usize = 50;
pub const PER_CLASS: usize = 100;

const KEYWORDS: [&str; 6] = ["outperform", "characterize", "comprise", "yield", "discuss", "employ"];
const FILLER_POS: [&str; 4] = ["DET", "ADJ", "ADP", "NOUN"];

pub struct Synthetic {
    pub instances: Vec<RelationInstance>,
    pub table: EmbeddingTable,
}

fn noise(rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..DIM).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn synthetic(seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fillers: Vec<String> = (0..30).map(|i| format!("filler{i:02}")).collect();
    let nouns: Vec<String> = (0..20).map(|i| format!("noun{i:02}")).collect();

    let mut rows = Vec::new();
    for (c, kw) in KEYWORDS.iter().enumerate() {
        let mut v = noise(&mut rng, 0.1);
        for x in &mut v[c * 8..c * 8 + 8] {
            *x += 1.0;
        }
        rows.push((kw.to_string(), v));
    }
    for w in fillers.iter().chain(&nouns) {
        rows.push((w.clone(), noise(&mut rng, 0.3)));
    }
    let table = EmbeddingTable::from_rows("synthetic", rows).expect("valid table");

    let mut instances = Vec::new();
    for (c, rel) in Relation::ALL.iter().enumerate() {
        for n in 0..PER_CLASS {
            let mut tokens = Vec::new();
            let e1_len = rng.gen_range(1..=2);
            for _ in 0..e1_len {
                let w = nouns.choose(&mut rng).unwrap();
                tokens.push(Token::new(w, w, "NOUN"));
            }
            let ctx_len = rng.gen_range(2..=5);
            let kw_at = rng.gen_range(0..=ctx_len);
            for i in 0..=ctx_len {
                if i == kw_at {
                    tokens.push(Token::new(KEYWORDS[c], KEYWORDS[c], "VERB"));
                } else {
                    let w = fillers.choose(&mut rng).unwrap();
                    tokens.push(Token::new(w, w, FILLER_POS.choose(&mut rng).unwrap()));
                }
            }
            let e2_start = tokens.len();
            let e2_len = rng.gen_range(1..=2);
            for _ in 0..e2_len {
                let w = nouns.choose(&mut rng).unwrap();
                tokens.push(Token::new(w, w, "NOUN"));
            }
            instances.push(RelationInstance {
                id: format!("S{c}.{n:03}"),
                e1: Span::new(0, e1_len - 1),
                e2: Span::new(e2_start, e2_start + e2_len - 1),
                tokens,
                label: Some(*rel),
                reverse: !rel.is_symmetric() && rng.gen_bool(0.3),
                subtask: if n % 2 == 0 { Subtask::Clean } else { Subtask::Noisy },
            });
        }
    }
    instances.shuffle(&mut rng);
    Synthetic { instances, table }
}

/// Write the corpus and table into `dir`, returning their paths.
pub fn write_synthetic(dir: &Path, data: &Synthetic) -> (PathBuf, PathBuf) {
    let corpus = dir.join("synthetic.jsonl");
    let table = dir.join("synthetic.vec");
    write_corpus(std::fs::File::create(&corpus).unwrap(), &data.instances).unwrap();
    data.table.write(std::fs::File::create(&table).unwrap()).unwrap();
    (corpus, table)
}

pub fn write_instances(path: &Path, instances: &[RelationInstance]) {
    write_corpus(std::fs::File::create(path).unwrap(), instances).unwrap();
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}
