//! Micro/macro F1 scoring and stratified k-fold cross-validation.
//!
//! Macro-F1 averages the six per-class F1 values, including classes with no
//! gold instances, so small classes weigh as much as large ones. Micro-F1 in
//! this single-label setting equals accuracy.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Relation, RelationInstance};
use crate::error::{Error, Result};

const N: usize = Relation::COUNT;

/// Rows are gold labels, columns predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn add(&mut self, gold: Relation, pred: Relation) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    pub fn get(&self, gold: Relation, pred: Relation) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..N).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(gold: &[Relation], pred: &[Relation]) -> ConfusionMatrix {
    assert_eq!(gold.len(), pred.len(), "gold and predicted label counts differ");
    assert!(!gold.is_empty(), "nothing to score");
    let mut cm = ConfusionMatrix::default();
    for (&g, &p) in gold.iter().zip(pred) {
        cm.add(g, p);
    }
    cm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub relation: Relation,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_class: Vec<ClassScore>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1, with 0 for any zero denominator.
pub fn f1_scores(cm: &ConfusionMatrix) -> ScoreReport {
    let total = cm.total();
    assert!(total > 0, "empty confusion matrix");
    let per_class: Vec<ClassScore> = Relation::ALL
        .iter()
        .map(|&r| {
            let i = r.index();
            let tp = cm.counts[i][i];
            let predicted: u64 = (0..N).map(|g| cm.counts[g][i]).sum();
            let support: u64 = cm.counts[i].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScore {
                relation: r,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / N as f64;
    ScoreReport {
        per_class,
        macro_f1,
        micro_f1: ratio(cm.correct(), total),
        total,
    }
}

impl ScoreReport {
    pub fn from_labels(gold: &[Relation], pred: &[Relation]) -> Self {
        f1_scores(&confusion(gold, pred))
    }

    /// Aligned text table with per-class rows and the two averages.
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "F1", "support"
        );
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<14} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.relation.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            );
        }
        let _ = writeln!(s, "{:<14} {:>9} {:>9}", "", "macro F1", "micro F1");
        let _ = writeln!(s, "{:<14} {:>9.4} {:>9.4}", "all", self.macro_f1, self.micro_f1);
        s
    }
}

// ─── Stratified folds ────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split indices `0..labels.len()` into `k` stratified folds.
///
/// Each class is shuffled and dealt round-robin over the folds; the deal
/// continues where the previous class stopped, so fold sizes differ by at
/// most one as well.
pub fn stratified_kfold(labels: &[Relation], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} available instances",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = vec![Vec::new(); k];
    let mut next = 0;
    for r in Relation::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == r).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            tests[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; labels.len()];
            for &i in &test {
                in_test[i] = true;
            }
            let train = (0..labels.len()).filter(|&i| !in_test[i]).collect();
            Fold { train, test }
        })
        .collect())
}

// ─── Cross-validation ────────────────────────────────────────────────

/// Anything that labels an instance. Closures qualify.
pub trait Classifier {
    fn classify(&self, inst: &RelationInstance) -> Result<Relation>;
}

impl<F> Classifier for F
where
    F: Fn(&RelationInstance) -> Result<Relation>,
{
    fn classify(&self, inst: &RelationInstance) -> Result<Relation> {
        self(inst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<ScoreReport>,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    pub mean_micro_f1: f64,
    pub std_micro_f1: f64,
}

/// Mean and sample standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train a fresh model on k−1 folds, score it on the held-out fold, repeat.
pub fn cross_validate<F, C>(instances: &[RelationInstance], k: usize, seed: u64, mut factory: F) -> Result<CvReport>
where
    F: FnMut(&[RelationInstance]) -> Result<C>,
    C: Classifier,
{
    let labels: Vec<Relation> = instances
        .iter()
        .map(|i| {
            i.label
                .ok_or_else(|| Error::InvalidArgument(format!("instance {} has no label", i.id)))
        })
        .collect::<Result<_>>()?;
    let folds = stratified_kfold(&labels, k, seed)?;
    let mut reports = Vec::with_capacity(k);
    for (n, fold) in folds.iter().enumerate() {
        let train: Vec<RelationInstance> = fold.train.iter().map(|&i| instances[i].clone()).collect();
        let model = factory(&train)?;
        let mut gold = Vec::with_capacity(fold.test.len());
        let mut pred = Vec::with_capacity(fold.test.len());
        for &i in &fold.test {
            gold.push(labels[i]);
            pred.push(model.classify(&instances[i])?);
        }
        let report = ScoreReport::from_labels(&gold, &pred);
        log::info!(
            "fold {}/{k}: macro-F1 {:.4} micro-F1 {:.4}",
            n + 1,
            report.macro_f1,
            report.micro_f1
        );
        reports.push(report);
    }
    let macros: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    let micros: Vec<f64> = reports.iter().map(|r| r.micro_f1).collect();
    let (mean_macro_f1, std_macro_f1) = mean_std(&macros);
    let (mean_micro_f1, std_micro_f1) = mean_std(&micros);
    Ok(CvReport {
        k,
        seed,
        folds: reports,
        mean_macro_f1,
        std_macro_f1,
        mean_micro_f1,
        std_micro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::worked_instance;
    use Relation::{Compare, Result, Topic, Usage};

    #[test]
    fn diagonal_for_perfect_predictions() {
        let labels = [Compare, Usage, Usage, Topic];
        let cm = confusion(&labels, &labels);
        for g in Relation::ALL {
            for p in Relation::ALL {
                if g != p {
                    assert_eq!(cm.get(g, p), 0);
                }
            }
        }
        let r = f1_scores(&cm);
        assert_eq!(r.micro_f1, 1.0);
        // absent classes score 0 and still count in the macro average
        assert!((r.macro_f1 - 3.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn all_correct_over_all_classes() {
        let labels = Relation::ALL.to_vec();
        let r = ScoreReport::from_labels(&labels, &labels);
        assert_eq!((r.macro_f1, r.micro_f1), (1.0, 1.0));
    }

    #[test]
    fn single_off_diagonal() {
        let cm = confusion(&[Compare], &[Usage]);
        assert_eq!(cm.get(Compare, Usage), 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn order_does_not_matter() {
        let g = [Compare, Usage, Topic, Result];
        let p = [Usage, Usage, Topic, Compare];
        let cm = confusion(&g, &p);
        let rg = [Result, Topic, Usage, Compare];
        let rp = [Compare, Topic, Usage, Usage];
        assert_eq!(cm, confusion(&rg, &rp));
    }

    #[test]
    fn constant_prediction_on_two_classes() {
        let n = 10;
        let gold: Vec<Relation> = (0..2 * n).map(|i| if i < n { Compare } else { Usage }).collect();
        let pred = vec![Compare; 2 * n];
        let r = ScoreReport::from_labels(&gold, &pred);
        assert_eq!(r.micro_f1, 0.5);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[5].f1, 0.0);
        assert!((r.macro_f1 - (2.0 / 3.0) / 6.0).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "differ")]
    fn length_mismatch_panics() {
        confusion(&[Compare], &[]);
    }

    #[test]
    fn text_table_lists_every_class() {
        let r = ScoreReport::from_labels(&[Compare, Topic], &[Compare, Usage]);
        let t = r.text_table();
        for rel in Relation::ALL {
            assert!(t.contains(rel.as_str()));
        }
        assert!(t.contains("macro F1"));
    }

    #[test]
    fn kfold_example_counts() {
        let labels: Vec<Relation> = (0..30).map(|i| if i < 20 { Compare } else { Usage }).collect();
        let folds = stratified_kfold(&labels, 10, 1).unwrap();
        let mut seen = [0; 30];
        for f in &folds {
            let a = f.test.iter().filter(|&&i| labels[i] == Compare).count();
            let b = f.test.len() - a;
            assert_eq!((a, b), (2, 1));
            assert_eq!(f.train.len() + f.test.len(), 30);
            for &i in &f.test {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(folds, stratified_kfold(&labels, 10, 1).unwrap());
    }

    #[test]
    fn kfold_rejects_bad_k() {
        let labels = vec![Compare; 3];
        assert!(stratified_kfold(&labels, 1, 0).is_err());
        assert!(stratified_kfold(&labels, 4, 0).is_err());
    }

    #[test]
    fn constant_classifier_cross_validation() {
        let instances: Vec<RelationInstance> = (0..20)
            .map(|i| {
                let mut inst = worked_instance();
                inst.id = format!("i{i}");
                inst.label = Some(if i % 2 == 0 { Compare } else { Usage });
                inst
            })
            .collect();
        let report = cross_validate(&instances, 10, 3, |_train: &[RelationInstance]| {
            Ok(|_: &RelationInstance| Ok(Compare))
        })
        .unwrap();
        assert_eq!(report.folds.len(), 10);
        assert!(report.folds.iter().all(|f| f.micro_f1 == 0.5));
        assert_eq!(report.std_micro_f1, 0.0);
    }

    proptest::proptest! {
        #[test]
        fn kfold_partitions_and_stratifies(
            sizes in proptest::collection::vec(0usize..40, 6),
            k in 2usize..11,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let labels: Vec<Relation> = sizes
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(Relation::ALL[c], n))
                .collect();
            proptest::prop_assume!(labels.len() >= k);
            let folds = stratified_kfold(&labels, k, seed).unwrap();
            let mut seen = vec![0; labels.len()];
            for f in &folds {
                proptest::prop_assert_eq!(f.train.len() + f.test.len(), labels.len());
                for &i in &f.test {
                    seen[i] += 1;
                }
                for (c, &n) in sizes.iter().enumerate() {
                    let got = f.test.iter().filter(|&&i| labels[i] == Relation::ALL[c]).count() as f64;
                    proptest::prop_assert!((got - n as f64 / k as f64).abs() <= 1.0);
                }
            }
            proptest::prop_assert!(seen.iter().all(|&s| s == 1));
        }
    }
}
