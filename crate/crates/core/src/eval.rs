//! Minority-class precision/recall/F1, multi-seed aggregation and report
//! tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, Variant};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    pub fn new(precision: f64, recall: f64, f1: f64) -> Self {
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 with `positive` as the positive class. Every
/// 0/0 ratio is taken as 0.
pub fn prf1(predictions: &[Label], labels: &[Label], positive: Label) -> Result<Scores> {
    if predictions.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == positive, y == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Scores::new(precision, recall, f1))
}

/// The less frequent label; ties go to `Hateful`.
pub fn minority_class(labels: &[Label]) -> Label {
    let hateful = labels.iter().filter(|l| **l == Label::Hateful).count();
    if hateful * 2 <= labels.len() {
        Label::Hateful
    } else {
        Label::NonHateful
    }
}

/// Mean and standard error of the mean (sample standard deviation over
/// sqrt(n)) of one metric.
pub fn mean_sem(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Metric(format!("standard error needs at least 2 runs, got {n}")));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok((mean, (var / nf).sqrt()))
}

/// `"0.484 ± 0.019"`.
pub fn format_mean_sem(mean: f64, sem: f64) -> String {
    format!("{mean:.3} ± {sem:.3}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: Scores,
    pub sem: Scores,
}

impl Aggregate {
    pub fn precision(&self) -> String {
        format_mean_sem(self.mean.precision, self.sem.precision)
    }

    pub fn recall(&self) -> String {
        format_mean_sem(self.mean.recall, self.sem.recall)
    }

    pub fn f1(&self) -> String {
        format_mean_sem(self.mean.f1, self.sem.f1)
    }
}

pub fn aggregate(scores: &[Scores]) -> Result<Aggregate> {
    let column = |f: fn(&Scores) -> f64| mean_sem(&scores.iter().map(f).collect::<Vec<_>>());
    let (mp, sp) = column(|s| s.precision)?;
    let (mr, sr) = column(|s| s.recall)?;
    let (mf, sf) = column(|s| s.f1)?;
    Ok(Aggregate {
        n: scores.len(),
        mean: Scores::new(mp, mr, mf),
        sem: Scores::new(sp, sr, sf),
    })
}

/// One seeded training run as seen by the reporting step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub dev: Scores,
    pub dev_loss: f64,
    pub test: Scores,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevCriterion {
    #[default]
    F1,
    Loss,
}

impl std::str::FromStr for DevCriterion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "f1" => Ok(DevCriterion::F1),
            "loss" => Ok(DevCriterion::Loss),
            other => Err(format!("unknown dev criterion {other:?} (expected f1 or loss)")),
        }
    }
}

/// The run with the best development score: highest dev F1 or lowest dev
/// loss. Ties go to the lowest seed.
pub fn select_best_dev(runs: &[SeedRun], criterion: DevCriterion) -> Result<&SeedRun> {
    let mut best: Option<&SeedRun> = None;
    for run in runs {
        best = match best {
            None => Some(run),
            Some(b) => {
                let better = match criterion {
                    DevCriterion::F1 => run.dev.f1 > b.dev.f1,
                    DevCriterion::Loss => run.dev_loss < b.dev_loss,
                };
                let tie = match criterion {
                    DevCriterion::F1 => run.dev.f1 == b.dev.f1,
                    DevCriterion::Loss => run.dev_loss == b.dev_loss,
                };
                if better || (tie && run.seed < b.seed) {
                    Some(run)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.ok_or_else(|| Error::Metric("no runs to select from".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub runs: Vec<SeedRun>,
    pub test: Aggregate,
    pub best_dev_seed: u64,
    pub best_dev_test: Scores,
}

impl RunReport {
    pub fn new(variant: Variant, runs: Vec<SeedRun>, criterion: DevCriterion) -> Result<Self> {
        let test = aggregate(&runs.iter().map(|r| r.test).collect::<Vec<_>>())?;
        let best = select_best_dev(&runs, criterion)?;
        let (best_dev_seed, best_dev_test) = (best.seed, best.test);
        Ok(Self {
            variant,
            runs,
            test,
            best_dev_seed,
            best_dev_test,
        })
    }
}

/// Markdown table with one row per variant: mean ± SEM over seeds, then the
/// test scores of the best-on-dev run.
pub fn render_report(reports: &[RunReport]) -> String {
    let mut out = String::new();
    out.push_str("| Model | P | R | F1 |\n|---|---|---|---|\n");
    for r in reports {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.variant.model_name(),
            r.test.precision(),
            r.test.recall(),
            r.test.f1()
        );
    }
    out.push_str("\nBest model on the development set:\n\n");
    out.push_str("| Model | Seed | P | R | F1 |\n|---|---|---|---|---|\n");
    for r in reports {
        let s = r.best_dev_test;
        let _ = writeln!(
            out,
            "| {} | {} | {:.3} | {:.3} | {:.3} |",
            r.variant.model_name(),
            r.best_dev_seed,
            s.precision,
            s.recall,
            s.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Hateful as H, NonHateful as N};

    #[test]
    fn prf1_examples() {
        let y = [H, N, H];
        assert_eq!(prf1(&y, &y, H).unwrap(), Scores::new(1.0, 1.0, 1.0));
        // TP=3 FP=1 FN=2
        let pred = [H, H, H, H, N, N, N];
        let gold = [H, H, H, N, H, H, N];
        let s = prf1(&pred, &gold, H).unwrap();
        assert_eq!(s.precision, 0.75);
        assert_eq!(s.recall, 0.6);
        assert!((s.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-15);
        assert_eq!(prf1(&[N, N], &[H, N], H).unwrap(), Scores::default());
        assert!(prf1(&[N], &[H, N], H).is_err());
    }

    #[test]
    fn sem_examples() {
        let (m, s) = mean_sem(&[0.4, 0.6]).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        assert_eq!(format!("{s:.3}"), "0.100");
        let (_, s) = mean_sem(&[0.3; 5]).unwrap();
        assert_eq!(format!("{s:.3}"), "0.000");
        assert!(mean_sem(&[0.3]).is_err());
    }

    #[test]
    fn best_dev_rules() {
        let run = |seed, f1: f64, loss| SeedRun {
            seed,
            dev: Scores::new(0.0, 0.0, f1),
            dev_loss: loss,
            test: Scores::new(seed as f64, 0.0, 0.0),
        };
        let runs = vec![run(0, 0.3, 0.9), run(1, 0.5, 0.8), run(2, 0.4, 0.7)];
        assert_eq!(select_best_dev(&runs, DevCriterion::F1).unwrap().seed, 1);
        assert_eq!(select_best_dev(&runs, DevCriterion::Loss).unwrap().seed, 2);
        let tie = vec![run(1, 0.5, 0.1), run(0, 0.5, 0.1)];
        assert_eq!(select_best_dev(&tie, DevCriterion::F1).unwrap().seed, 0);
        assert!(select_best_dev(&[], DevCriterion::F1).is_err());
    }

    #[test]
    fn minority() {
        assert_eq!(minority_class(&[H, N, N]), H);
        assert_eq!(minority_class(&[H, H, N]), N);
        assert_eq!(minority_class(&[H, N]), H);
    }
}
