//! Pre-trained word embedding tables: text-format loader, zero-vector OOV
//! lookup, phrase/context averaging and cosine similarity.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Token → dense vector mapping with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    name: String,
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    zero: Vec<f64>,
}

impl EmbeddingTable {
    /// Build a table from `(token, vector)` rows. Fails on inconsistent
    /// lengths, duplicate tokens or non-finite components.
    pub fn from_rows<I, S>(name: &str, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut builder = Builder::default();
        for (i, (tok, vec)) in rows.into_iter().enumerate() {
            builder.push(i + 1, tok.into(), vec)?;
        }
        builder.finish(name, 0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Stored vector for `token`, or the zero vector for OOV tokens.
    /// Matching is exact on the token string.
    pub fn lookup(&self, token: &str) -> &[f64] {
        match self.index.get(token) {
            Some(&i) => &self.data[i * self.dim..(i + 1) * self.dim],
            None => &self.zero,
        }
    }

    /// Mean of the token vectors. OOV tokens count in the denominator.
    ///
    /// Panics on an empty phrase.
    pub fn phrase_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        assert!(!tokens.is_empty(), "phrase_vector needs at least one token");
        self.mean(tokens)
    }

    /// Mean of the token vectors; the zero vector for an empty context.
    pub fn context_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        if tokens.is_empty() {
            return self.zero.clone();
        }
        self.mean(tokens)
    }

    fn mean<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for t in tokens {
            for (a, v) in acc.iter_mut().zip(self.lookup(t.as_ref())) {
                *a += v;
            }
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.tokens.len(), self.dim)?;
        for (i, tok) in self.tokens.iter().enumerate() {
            w.write_all(tok.as_bytes())?;
            for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Builder {
    dim: Option<usize>,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl Builder {
    fn push(&mut self, line: usize, token: String, vec: Vec<f64>) -> Result<()> {
        let err = |msg: String| Error::EmbeddingFormat { line, msg };
        match self.dim {
            None if vec.is_empty() => return Err(err("row has no vector components".into())),
            None => self.dim = Some(vec.len()),
            Some(d) if d != vec.len() => return Err(err(format!("expected {d} components, found {}", vec.len()))),
            Some(_) => {}
        }
        if let Some(v) = vec.iter().find(|v| !v.is_finite()) {
            return Err(err(format!("non-finite component {v}")));
        }
        if self.index.contains_key(&token) {
            return Err(err(format!("duplicate token {token:?}")));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend(vec);
        Ok(())
    }

    fn finish(self, name: &str, last_line: usize) -> Result<EmbeddingTable> {
        let dim = self.dim.ok_or(Error::EmbeddingFormat {
            line: last_line,
            msg: "no embedding rows".into(),
        })?;
        Ok(EmbeddingTable {
            name: name.to_string(),
            dim,
            tokens: self.tokens,
            index: self.index,
            data: self.data,
            zero: vec![0.0; dim],
        })
    }
}

/// Load a text-format embedding table; the table is named after the file stem.
pub fn load_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(&name, BufReader::new(file))
}

/// Parse the text embedding format: an optional `<count> <dim>` header line,
/// then `token v1 … vd` per line.
pub fn read_table<R: BufRead>(name: &str, reader: R) -> Result<EmbeddingTable> {
    let mut builder = Builder::default();
    let mut header: Option<(usize, usize)> = None;
    let mut line_no = 0;
    for (i, line) in reader.lines().enumerate() {
        line_no = i + 1;
        let line = line.map_err(|e| Error::io(name, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 {
            if let (Ok(count), Ok(dim)) = (fields[0].parse(), fields[1].parse()) {
                header = Some((count, dim));
                builder.dim = Some(dim);
                continue;
            }
        }
        let vec = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::EmbeddingFormat {
                line: line_no,
                msg: format!("bad component: {e}"),
            })?;
        builder.push(line_no, fields[0].to_string(), vec)?;
    }
    if let Some((count, _)) = header {
        if count != builder.tokens.len() {
            return Err(Error::EmbeddingFormat {
                line: 1,
                msg: format!("header declares {count} rows but {} were read", builder.tokens.len()),
            });
        }
    }
    builder.finish(name, line_no)
}

/// Cosine similarity, defined as 0.0 when either vector has zero norm.
///
/// Panics if the lengths differ.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different lengths");
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}
