//! Random hyperparameter search for the C-LSTM.
//!
//! A stratified sample of the training data is held out once per search
//! run. Every trial draws a configuration uniformly from the search space,
//! trains on the remainder and is scored by validation macro-F1; the best
//! trial wins, ties going to the earlier one.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clstm::{self, Hyperparams};
use crate::corpus::{Relation, RelationInstance};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::ScoreReport;

pub const DEFAULT_TRIALS: usize = 20;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub num_filters: (usize, usize),
    pub filter_width: (usize, usize),
    pub rnn_units: (usize, usize),
    pub dropout_rate: (f64, f64),
    pub l2_scale: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            num_filters: (10, 500),
            filter_width: (2, 5),
            rnn_units: (16, 500),
            dropout_rate: (0.0, 0.5),
            l2_scale: (0.0, 3.0),
        }
    }
}

impl SearchSpace {
    /// Every range must be non-empty.
    pub fn validate(&self) -> Result<()> {
        let ints = [
            ("num_filters", self.num_filters),
            ("filter_width", self.filter_width),
            ("rnn_units", self.rnn_units),
        ];
        for (name, (lo, hi)) in ints {
            if lo > hi || lo == 0 {
                return Err(Error::Hyperparams(format!("bad {name} range [{lo}, {hi}]")));
            }
        }
        for (name, (lo, hi)) in [("dropout_rate", self.dropout_rate), ("l2_scale", self.l2_scale)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Hyperparams(format!("bad {name} range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Check that a configuration lies inside the space.
    pub fn contains(&self, h: &Hyperparams) -> Result<()> {
        fn check<T: PartialOrd + std::fmt::Display>(name: &str, v: T, (lo, hi): (T, T)) -> Result<()> {
            if v < lo || v > hi {
                return Err(Error::Hyperparams(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
            Ok(())
        }
        check("num_filters", h.num_filters, self.num_filters)?;
        check("filter_width", h.filter_width, self.filter_width)?;
        check("rnn_units", h.rnn_units, self.rnn_units)?;
        check("dropout_rate", h.dropout_rate, self.dropout_rate)?;
        check("l2_scale", h.l2_scale, self.l2_scale)?;
        h.check()
    }
}

/// Draw architecture values uniformly from `space` and take the fixed
/// training settings (stride, learning rate, batch size, epochs) from
/// `template`. The training seed is drawn from `rng` as well.
pub fn sample_with<R: Rng>(space: &SearchSpace, template: &Hyperparams, rng: &mut R) -> Hyperparams {
    Hyperparams {
        num_filters: rng.gen_range(space.num_filters.0..=space.num_filters.1),
        filter_width: rng.gen_range(space.filter_width.0..=space.filter_width.1),
        rnn_units: rng.gen_range(space.rnn_units.0..=space.rnn_units.1),
        dropout_rate: rng.gen_range(space.dropout_rate.0..=space.dropout_rate.1),
        l2_scale: rng.gen_range(space.l2_scale.0..=space.l2_scale.1),
        seed: rng.gen(),
        ..*template
    }
}

/// One configuration with the default fixed settings (batch 128, 100
/// epochs, learning rate 0.002, stride 1).
pub fn sample_config(space: &SearchSpace, seed: u64) -> Hyperparams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(space, &Hyperparams::fixed(0), &mut rng)
}

/// Round half up.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Stratified hold-out split over `labels`, returning sorted
/// `(train, validation)` index lists.
///
/// Each class contributes `round(fraction · size)` instances, at least one
/// when the class has two or more and `fraction > 0`. If the per-class
/// counts miss `round(fraction · n)`, the largest classes are moved by one
/// instance each, as long as they stay within one instance of the exact
/// proportion.
pub fn stratified_split_labels(labels: &[Relation], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty corpus".into()));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {fraction} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = Relation::ALL
        .iter()
        .map(|&r| (0..labels.len()).filter(|&i| labels[i] == r).collect())
        .collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }

    let mut take: Vec<usize> = groups
        .iter()
        .map(|g| {
            let want = round_half_up(fraction * g.len() as f64);
            if fraction > 0.0 && g.len() >= 2 {
                want.max(1)
            } else {
                want
            }
        })
        .collect();
    for (r, g) in Relation::ALL.iter().zip(&groups) {
        if g.len() == 1 && fraction > 0.0 {
            log::info!("class {r} has a single instance; it stays in the training part");
        }
    }

    let target = round_half_up(fraction * labels.len() as f64);
    let mut by_size: Vec<usize> = (0..groups.len()).collect();
    by_size.sort_by_key(|&c| std::cmp::Reverse(groups[c].len()));
    for &c in &by_size {
        let total: usize = take.iter().sum();
        let exact = fraction * groups[c].len() as f64;
        if total > target && take[c] > 0 && (take[c] - 1) as f64 > exact - 1.0 {
            let floor_ok = !(fraction > 0.0 && groups[c].len() >= 2 && take[c] == 1);
            if floor_ok {
                take[c] -= 1;
            }
        } else if total < target && take[c] < groups[c].len() && ((take[c] + 1) as f64) < exact + 1.0 {
            take[c] += 1;
        }
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    for (g, &t) in groups.iter().zip(&take) {
        val.extend_from_slice(&g[..t]);
        train.extend_from_slice(&g[t..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// [`stratified_split_labels`] over labeled instances.
pub fn stratified_split(
    instances: &[RelationInstance],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<RelationInstance>, Vec<RelationInstance>)> {
    let labels = gold_labels(instances)?;
    let (tr, va) = stratified_split_labels(&labels, fraction, seed)?;
    Ok((
        tr.iter().map(|&i| instances[i].clone()).collect(),
        va.iter().map(|&i| instances[i].clone()).collect(),
    ))
}

fn gold_labels(instances: &[RelationInstance]) -> Result<Vec<Relation>> {
    instances
        .iter()
        .map(|i| {
            i.label
                .ok_or_else(|| Error::InvalidArgument(format!("instance {} has no label", i.id)))
        })
        .collect()
}

// ─── Search driver ───────────────────────────────────────────────────

/// Scores one configuration: returns validation (macro-F1, micro-F1).
pub trait TrialRunner {
    fn run(&self, hyper: &Hyperparams) -> Result<(f64, f64)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

/// One line of the trial log. Everything except `timing` is a pure function
/// of the search inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub hyper: Hyperparams,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best_trial: usize,
    pub best: Hyperparams,
    pub trials: Vec<TrialResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub n_trials: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub min_lemma_freq: usize,
    /// Source of the fixed training settings for every trial.
    pub template: Hyperparams,
    pub space: SearchSpace,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            n_trials: DEFAULT_TRIALS,
            seed: 0,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            min_lemma_freq: crate::corpus::DEFAULT_MIN_LEMMA_FREQ,
            template: Hyperparams::fixed(0),
            space: SearchSpace::default(),
        }
    }
}

/// RNG for trial `i`, independent of every other trial.
fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    rng
}

/// Run `n_trials` sampled configurations through `runner`. `sink` sees each
/// result as soon as its trial finishes.
pub fn random_search_with<R, S>(
    runner: &R,
    space: &SearchSpace,
    template: &Hyperparams,
    n_trials: usize,
    seed: u64,
    mut sink: S,
) -> Result<SearchOutcome>
where
    R: TrialRunner + ?Sized,
    S: FnMut(&TrialResult) -> Result<()>,
{
    space.validate()?;
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be at least 1".into()));
    }
    let mut trials: Vec<TrialResult> = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let hyper = sample_with(space, template, &mut trial_rng(seed, t));
        let start = Instant::now();
        let (macro_f1, micro_f1) = runner.run(&hyper)?;
        let result = TrialResult {
            trial: t,
            seed: hyper.seed,
            hyper,
            macro_f1,
            micro_f1,
            timing: Timing {
                wall_seconds: start.elapsed().as_secs_f64(),
            },
        };
        log::info!(
            "trial {}/{n_trials}: k={} ws={} units={} dropout={:.3} l2={:.3} -> macro-F1 {macro_f1:.4}",
            t + 1,
            hyper.num_filters,
            hyper.filter_width,
            hyper.rnn_units,
            hyper.dropout_rate,
            hyper.l2_scale
        );
        sink(&result)?;
        trials.push(result);
    }
    let mut best_trial = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.macro_f1 > trials[best_trial].macro_f1 {
            best_trial = i;
        }
    }
    Ok(SearchOutcome {
        best_trial,
        best: trials[best_trial].hyper,
        trials,
    })
}

/// Trains a C-LSTM per configuration and scores it on a fixed validation
/// set.
pub struct ClstmRunner<'a> {
    pub train: &'a [RelationInstance],
    pub validation: &'a [RelationInstance],
    pub table: &'a EmbeddingTable,
    pub min_lemma_freq: usize,
}

impl TrialRunner for ClstmRunner<'_> {
    fn run(&self, hyper: &Hyperparams) -> Result<(f64, f64)> {
        let model = clstm::train(self.train, self.table, hyper, self.min_lemma_freq)?;
        let mut gold = Vec::with_capacity(self.validation.len());
        let mut pred = Vec::with_capacity(self.validation.len());
        for inst in self.validation {
            gold.push(inst.label.expect("validation instances are labeled"));
            pred.push(model.predict(inst, self.table)?);
        }
        let r = ScoreReport::from_labels(&gold, &pred);
        Ok((r.macro_f1, r.micro_f1))
    }
}

/// Full search over labeled instances: one stratified validation split,
/// then [`random_search_with`] with a [`ClstmRunner`].
pub fn random_search<S>(
    instances: &[RelationInstance],
    table: &EmbeddingTable,
    settings: &SearchSettings,
    sink: S,
) -> Result<SearchOutcome>
where
    S: FnMut(&TrialResult) -> Result<()>,
{
    let (train, validation) = stratified_split(instances, settings.validation_fraction, settings.seed)?;
    if validation.is_empty() {
        return Err(Error::InvalidArgument("validation split is empty".into()));
    }
    let runner = ClstmRunner {
        train: &train,
        validation: &validation,
        table,
        min_lemma_freq: settings.min_lemma_freq,
    };
    random_search_with(
        &runner,
        &settings.space,
        &settings.template,
        settings.n_trials,
        settings.seed,
        sink,
    )
}

/// Append one JSON line per trial.
pub fn write_trial<W: Write>(mut w: W, t: &TrialResult) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, t)?;
    w.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use Relation::{Compare, Topic, Usage};

    #[test]
    fn selected_config_is_inside_the_space() {
        SearchSpace::default().contains(&Hyperparams::selected()).unwrap();
        let mut h = Hyperparams::selected();
        h.filter_width = 6;
        assert!(SearchSpace::default().contains(&h).is_err());
    }

    #[test]
    fn samples_stay_in_bounds_and_cover_widths() {
        let space = SearchSpace::default();
        let mut seen = [0usize; 6];
        for s in 0..1000 {
            let h = sample_config(&space, s);
            space.contains(&h).unwrap();
            assert_eq!((h.batch_size, h.epochs, h.stride), (128, 100, 1));
            assert_eq!(h.learning_rate, 0.002);
            seen[h.filter_width] += 1;
        }
        assert!(seen[2..=5].iter().all(|&c| c > 0));
        assert_eq!(sample_config(&space, 42), sample_config(&space, 42));
    }

    #[test]
    fn inverted_range_is_rejected() {
        let space = SearchSpace {
            rnn_units: (10, 5),
            ..SearchSpace::default()
        };
        assert!(space.validate().is_err());
    }

    #[test]
    fn split_example() {
        let labels: Vec<Relation> = (0..100).map(|i| if i < 60 { Compare } else { Usage }).collect();
        let (tr, va) = stratified_split_labels(&labels, 0.1, 3).unwrap();
        let a = va.iter().filter(|&&i| labels[i] == Compare).count();
        assert_eq!((a, va.len() - a), (6, 4));
        assert_eq!(tr.len() + va.len(), 100);
    }

    #[test]
    fn zero_fraction_and_singletons() {
        let labels = vec![Compare, Compare, Compare, Topic];
        let (tr, va) = stratified_split_labels(&labels, 0.0, 0).unwrap();
        assert!(va.is_empty());
        assert_eq!(tr, vec![0, 1, 2, 3]);
        let (tr, va) = stratified_split_labels(&labels, 0.1, 0).unwrap();
        assert!(tr.contains(&3));
        assert_eq!(va.len(), 1);
    }

    struct Table(Vec<f64>);

    impl TrialRunner for Table {
        fn run(&self, h: &Hyperparams) -> Result<(f64, f64)> {
            // score keyed by filter width
            Ok((self.0[h.filter_width], 0.0))
        }
    }

    #[test]
    fn search_picks_known_maximum() {
        let runner = Table(vec![0.0, 0.0, 0.2, 0.9, 0.4, 0.1]);
        let out = random_search_with(&runner, &SearchSpace::default(), &Hyperparams::fixed(0), 12, 5, |_| {
            Ok(())
        })
        .unwrap();
        assert_eq!(out.trials.len(), 12);
        assert_eq!(out.best.filter_width, 3);
        let first = out.trials.iter().position(|t| t.hyper.filter_width == 3).unwrap();
        assert_eq!(out.best_trial, first);

        let one = random_search_with(&runner, &SearchSpace::default(), &Hyperparams::fixed(0), 1, 5, |_| {
            Ok(())
        })
        .unwrap();
        assert_eq!(one.best_trial, 0);
    }

    #[test]
    fn search_is_reproducible() {
        let runner = Table(vec![0.0, 0.0, 0.2, 0.9, 0.4, 0.1]);
        let run = || {
            let mut log = Vec::new();
            random_search_with(&runner, &SearchSpace::default(), &Hyperparams::fixed(0), 6, 9, |t| {
                log.push(t.hyper);
                Ok(())
            })
            .unwrap();
            log
        };
        assert_eq!(run(), run());
    }

    proptest::proptest! {
        #[test]
        fn split_stays_within_one_per_class(
            sizes in proptest::collection::vec(1usize..150, 6),
            fraction in 0.05f64..0.5,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let labels: Vec<Relation> = sizes
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(Relation::ALL[c], n))
                .collect();
            let (train, val) = stratified_split_labels(&labels, fraction, seed).unwrap();
            let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for (c, &n) in sizes.iter().enumerate() {
                let got = val.iter().filter(|&&i| labels[i] == Relation::ALL[c]).count() as f64;
                proptest::prop_assert!((got - fraction * n as f64).abs() <= 1.0);
            }
        }

        #[test]
        fn samples_stay_in_bounds(seed in proptest::prelude::any::<u64>()) {
            let space = SearchSpace::default();
            proptest::prop_assert!(space.contains(&sample_config(&space, seed)).is_ok());
        }
    }
}
