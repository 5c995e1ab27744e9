//! TOML run configuration.
//!
//! Every field is optional; command-line flags override file values.
//! Relative paths are resolved against the directory holding the file.
//!
//! ```toml
//! seed = 7
//! model = "svm"              # or "clstm"
//! train = ["data/train.1.1.jsonl", "data/train.1.2.jsonl"]
//! test = "data/test.jsonl"
//! embeddings = "data/vectors.txt"
//! levin = "data/levin.tsv"
//! min_lemma_freq = 5
//!
//! [svm]
//! c = 100.0
//! gamma = 0.001
//!
//! [clstm]
//! num_filters = 384
//! filter_width = 3
//! rnn_units = 93
//! dropout_rate = 0.23
//! l2_scale = 0.79
//!
//! [search]
//! n_trials = 20
//! validation_fraction = 0.1
//! num_filters = [10, 500]
//!
//! [crossval]
//! k = 10
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use relclass::clstm::Hyperparams;
use relclass::search::{SearchSettings, SearchSpace};
use relclass::svm::SvmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svm,
    Clstm,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub model: Option<ModelKind>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub train: Vec<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub levin: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub min_lemma_freq: Option<usize>,
    #[serde(default)]
    pub svm: SvmSection,
    #[serde(default)]
    pub clstm: ClstmSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub crossval: CrossvalSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmSection {
    pub c: Option<f64>,
    pub gamma: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub calibration_folds: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClstmSection {
    pub num_filters: Option<usize>,
    pub filter_width: Option<usize>,
    pub rnn_units: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub l2_scale: Option<f64>,
    pub stride: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub n_trials: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub num_filters: Option<(usize, usize)>,
    pub filter_width: Option<(usize, usize)>,
    pub rnn_units: Option<(usize, usize)>,
    pub dropout_rate: Option<(f64, f64)>,
    pub l2_scale: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossvalSection {
    pub k: Option<usize>,
}

fn one_or_many<'de, D>(d: D) -> Result<Vec<PathBuf>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PathBuf),
        Many(Vec<PathBuf>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(p) => vec![p],
        OneOrMany::Many(v) => v,
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.train.iter_mut().for_each(fix);
        for p in [&mut self.test, &mut self.embeddings, &mut self.levin, &mut self.out]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn min_lemma_freq(&self) -> usize {
        self.min_lemma_freq.unwrap_or(relclass::corpus::DEFAULT_MIN_LEMMA_FREQ)
    }

    pub fn svm_config(&self) -> SvmConfig {
        let d = SvmConfig::default();
        let s = &self.svm;
        SvmConfig {
            c: s.c.unwrap_or(d.c),
            gamma: s.gamma.unwrap_or(d.gamma),
            tol: s.tol.unwrap_or(d.tol),
            max_iter: s.max_iter.unwrap_or(d.max_iter),
            calibration_folds: s.calibration_folds.unwrap_or(d.calibration_folds),
            min_lemma_freq: self.min_lemma_freq(),
            seed: self.seed(),
        }
    }

    /// The selected configuration, overridden field by field.
    pub fn hyperparams(&self) -> Hyperparams {
        let d = Hyperparams::selected();
        let s = &self.clstm;
        Hyperparams {
            num_filters: s.num_filters.unwrap_or(d.num_filters),
            filter_width: s.filter_width.unwrap_or(d.filter_width),
            rnn_units: s.rnn_units.unwrap_or(d.rnn_units),
            dropout_rate: s.dropout_rate.unwrap_or(d.dropout_rate),
            l2_scale: s.l2_scale.unwrap_or(d.l2_scale),
            stride: s.stride.unwrap_or(d.stride),
            learning_rate: s.learning_rate.unwrap_or(d.learning_rate),
            batch_size: s.batch_size.unwrap_or(d.batch_size),
            epochs: s.epochs.unwrap_or(d.epochs),
            seed: self.seed(),
        }
    }

    pub fn search_settings(&self) -> SearchSettings {
        let d = SearchSettings::default();
        let ds = SearchSpace::default();
        let s = &self.search;
        SearchSettings {
            n_trials: s.n_trials.unwrap_or(d.n_trials),
            seed: self.seed(),
            validation_fraction: s.validation_fraction.unwrap_or(d.validation_fraction),
            min_lemma_freq: self.min_lemma_freq(),
            template: self.hyperparams(),
            space: SearchSpace {
                num_filters: s.num_filters.unwrap_or(ds.num_filters),
                filter_width: s.filter_width.unwrap_or(ds.filter_width),
                rnn_units: s.rnn_units.unwrap_or(ds.rnn_units),
                dropout_rate: s.dropout_rate.unwrap_or(ds.dropout_rate),
                l2_scale: s.l2_scale.unwrap_or(ds.l2_scale),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let text = r#"
seed = 7
model = "clstm"
train = ["a.jsonl", "/abs/b.jsonl"]
embeddings = "vec.txt"

[clstm]
epochs = 3

[search]
n_trials = 2
filter_width = [2, 3]
"#;
        let mut cfg: RunConfig = toml::from_str(text).unwrap();
        cfg.resolve(Path::new("/cfg"));
        assert_eq!(cfg.model, Some(ModelKind::Clstm));
        assert_eq!(
            cfg.train,
            vec![PathBuf::from("/cfg/a.jsonl"), PathBuf::from("/abs/b.jsonl")]
        );
        assert_eq!(cfg.embeddings, Some(PathBuf::from("/cfg/vec.txt")));
        let h = cfg.hyperparams();
        assert_eq!((h.epochs, h.num_filters, h.seed), (3, 384, 7));
        let s = cfg.search_settings();
        assert_eq!(s.n_trials, 2);
        assert_eq!(s.space.filter_width, (2, 3));
        assert_eq!(s.template.epochs, 3);
    }

    #[test]
    fn single_train_path_and_unknown_keys() {
        let cfg: RunConfig = toml::from_str(r#"train = "x.jsonl""#).unwrap();
        assert_eq!(cfg.train.len(), 1);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }
}
