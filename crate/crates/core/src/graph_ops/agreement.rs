use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotationRecord, ObjectVerdict, RelationVerdict, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Objects,
    Relations,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Objects => "objects",
            Category::Relations => "relations",
        })
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "objects" => Ok(Category::Objects),
            "relations" => Ok(Category::Relations),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

/// 2x2 contingency counts over binary correct/incorrect verdicts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementBreakdown {
    pub both_correct: u64,
    pub both_incorrect: u64,
    pub only_a_correct: u64,
    pub only_b_correct: u64,
    /// Items both found incorrect and corrected identically (same
    /// replacement label, same corrected triple, or both removed).
    pub same_correction: u64,
}

impl AgreementBreakdown {
    pub fn total(&self) -> u64 {
        self.both_correct + self.both_incorrect + self.only_a_correct + self.only_b_correct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub category: Category,
    pub percent_agreement: f64,
    pub kappa: f64,
    pub n_items: u64,
    pub breakdown: AgreementBreakdown,
}

/// Accumulates verdict pairs over many memes before computing agreement.
#[derive(Debug, Clone)]
pub struct AgreementTable {
    category: Category,
    counts: AgreementBreakdown,
}

impl AgreementTable {
    pub fn new(category: Category) -> Self {
        Self {
            category,
            counts: AgreementBreakdown::default(),
        }
    }

    pub fn from_counts(category: Category, counts: AgreementBreakdown) -> Self {
        Self { category, counts }
    }

    /// Adds one meme's pair of records. Items are the union of both records'
    /// keys; an item missing from one record counts as correct there.
    pub fn add(&mut self, a: &AnnotationRecord, b: &AnnotationRecord) -> Result<()> {
        if a.meme_id != b.meme_id {
            return Err(Error::Agreement(format!(
                "records cover different memes: {} vs {}",
                a.meme_id, b.meme_id
            )));
        }
        let (ka, kb): (BTreeSet<usize>, BTreeSet<usize>) = match self.category {
            Category::Objects => (
                a.object_verdicts.keys().copied().collect(),
                b.object_verdicts.keys().copied().collect(),
            ),
            Category::Relations => (
                a.relation_verdicts.keys().copied().collect(),
                b.relation_verdicts.keys().copied().collect(),
            ),
        };
        if !ka.is_empty() && !kb.is_empty() && ka.is_disjoint(&kb) {
            return Err(Error::Agreement(format!(
                "disjoint {} item sets for meme {}",
                self.category, a.meme_id
            )));
        }
        let keys: Vec<usize> = ka.union(&kb).copied().collect();
        self.count(&keys, a, b);
        Ok(())
    }

    /// Adds one meme's pair of records over every item of `graph`, so items
    /// neither annotator touched count as agreed-correct.
    pub fn add_on_graph(&mut self, graph: &SceneGraph, a: &AnnotationRecord, b: &AnnotationRecord) -> Result<()> {
        for r in [a, b] {
            let bad = r.unresolved_keys(graph);
            if !bad.is_empty() {
                return Err(Error::Agreement(format!(
                    "record of {} does not fit graph {}: {}",
                    r.annotator_id,
                    graph.meme_id,
                    bad.join(", ")
                )));
            }
        }
        let keys: Vec<usize> = match self.category {
            Category::Objects => graph.objects.iter().map(|o| o.index).collect(),
            Category::Relations => (0..graph.relations.len()).collect(),
        };
        self.count(&keys, a, b);
        Ok(())
    }

    fn count(&mut self, keys: &[usize], a: &AnnotationRecord, b: &AnnotationRecord) {
        for key in keys {
            let (ca, cb, same) = match self.category {
                Category::Objects => {
                    let (va, vb) = (a.object_verdict(*key), b.object_verdict(*key));
                    (va.is_correct(), vb.is_correct(), same_object_fix(va, vb))
                }
                Category::Relations => {
                    let (va, vb) = (a.relation_verdict(*key), b.relation_verdict(*key));
                    (va.is_correct(), vb.is_correct(), same_relation_fix(va, vb))
                }
            };
            match (ca, cb) {
                (true, true) => self.counts.both_correct += 1,
                (false, false) => {
                    self.counts.both_incorrect += 1;
                    if same {
                        self.counts.same_correction += 1;
                    }
                }
                (true, false) => self.counts.only_a_correct += 1,
                (false, true) => self.counts.only_b_correct += 1,
            }
        }
    }

    pub fn counts(&self) -> AgreementBreakdown {
        self.counts
    }

    pub fn report(&self) -> Result<AgreementReport> {
        let c = self.counts;
        let n = c.total();
        if n == 0 {
            return Err(Error::Agreement(format!("no {} items to compare", self.category)));
        }
        let nf = n as f64;
        let p_o = (c.both_correct + c.both_incorrect) as f64 / nf;
        let a_correct = (c.both_correct + c.only_a_correct) as f64 / nf;
        let b_correct = (c.both_correct + c.only_b_correct) as f64 / nf;
        let p_e = a_correct * b_correct + (1.0 - a_correct) * (1.0 - b_correct);
        // Both raters used a single identical verdict throughout: chance
        // agreement is 1 and the ratio is 0/0. Treat it as perfect agreement.
        let degenerate = (c.only_a_correct + c.only_b_correct == 0)
            && (c.both_correct == n || c.both_incorrect == n);
        let kappa = if degenerate {
            1.0
        } else {
            (p_o - p_e) / (1.0 - p_e)
        };
        Ok(AgreementReport {
            category: self.category,
            percent_agreement: p_o,
            kappa,
            n_items: n,
            breakdown: c,
        })
    }
}

/// Percent agreement and Cohen's kappa between two annotators on one meme.
pub fn agreement_stats(
    a: &AnnotationRecord,
    b: &AnnotationRecord,
    category: Category,
) -> Result<AgreementReport> {
    let mut table = AgreementTable::new(category);
    table.add(a, b)?;
    table.report()
}

fn same_object_fix(a: &ObjectVerdict, b: &ObjectVerdict) -> bool {
    match (a, b) {
        (ObjectVerdict::Removed, ObjectVerdict::Removed) => true,
        (
            ObjectVerdict::Incorrect { replacement: ra },
            ObjectVerdict::Incorrect { replacement: rb },
        ) => ra.is_some() && ra == rb,
        _ => false,
    }
}

fn same_relation_fix(a: &RelationVerdict, b: &RelationVerdict) -> bool {
    match (a, b) {
        (RelationVerdict::Removed, RelationVerdict::Removed) => true,
        (RelationVerdict::Corrected { triple: ta }, RelationVerdict::Corrected { triple: tb }) => ta == tb,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, verdicts: &[(usize, bool)]) -> AnnotationRecord {
        let mut r = AnnotationRecord::new("m", id);
        for &(k, ok) in verdicts {
            r.object_verdicts.insert(
                k,
                if ok {
                    ObjectVerdict::Correct
                } else {
                    ObjectVerdict::Removed
                },
            );
        }
        r
    }

    #[test]
    fn perfect_agreement_mixed_classes() {
        let v: Vec<(usize, bool)> = (0..10).map(|i| (i, i % 3 != 0)).collect();
        let rep = agreement_stats(&record("a", &v), &record("b", &v), Category::Objects).unwrap();
        assert_eq!(rep.percent_agreement, 1.0);
        assert_eq!(rep.kappa, 1.0);
        assert_eq!(rep.n_items, 10);
    }

    #[test]
    fn degenerate_single_class_is_one() {
        let v: Vec<(usize, bool)> = (0..5).map(|i| (i, true)).collect();
        let rep = agreement_stats(&record("a", &v), &record("b", &v), Category::Objects).unwrap();
        assert_eq!(rep.kappa, 1.0);
    }

    #[test]
    fn hand_computed_table() {
        // both-correct 40, both-incorrect 10, a-only 5, b-only 5.
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut k = 0;
        for (n, va, vb) in [(40, true, true), (10, false, false), (5, true, false), (5, false, true)] {
            for _ in 0..n {
                a.push((k, va));
                b.push((k, vb));
                k += 1;
            }
        }
        let rep = agreement_stats(&record("a", &a), &record("b", &b), Category::Objects).unwrap();
        // p_o = 50/60, marginals 45/60 each, p_e = 0.75^2 + 0.25^2 = 0.625
        // kappa = (5/6 - 5/8) / (3/8) = 5/9
        assert!((rep.percent_agreement - 50.0 / 60.0).abs() < 1e-15);
        assert!((rep.kappa - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_items_error() {
        let a = record("a", &[(0, true)]);
        let b = record("b", &[(1, true)]);
        assert!(agreement_stats(&a, &b, Category::Objects).is_err());
    }

    #[test]
    fn same_correction_counted() {
        let mut a = AnnotationRecord::new("m", "a");
        let mut b = AnnotationRecord::new("m", "b");
        a.object_verdicts.insert(10, ObjectVerdict::incorrect("hair"));
        b.object_verdicts.insert(10, ObjectVerdict::incorrect("hair"));
        a.object_verdicts.insert(13, ObjectVerdict::incorrect("shoe"));
        b.object_verdicts.insert(13, ObjectVerdict::incorrect("foot"));
        let rep = agreement_stats(&a, &b, Category::Objects).unwrap();
        assert_eq!(rep.breakdown.both_incorrect, 2);
        assert_eq!(rep.breakdown.same_correction, 1);
    }
}
