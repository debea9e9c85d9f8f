//! Accuracy, per-class and macro F1, confusion matrices, and the
//! three-rater consensus analysis.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::text::{ConnectiveLexicon, LabelId};

/// Rounds a 0–100 score to two decimals, ties to even.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round_ties_even() / 100.0
}

/// Counts with rows = gold label and columns = predicted label.
///
/// When several annotations per item are pooled, `per_item` records how
/// many; [`value`](Self::value) divides by it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
    pub per_item: u64,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
            per_item: 1,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    pub fn add(&mut self, gold: LabelId, predicted: LabelId) {
        self.counts[gold * self.k + predicted] += 1;
    }

    pub fn count(&self, gold: LabelId, predicted: LabelId) -> u64 {
        self.counts[gold * self.k + predicted]
    }

    pub fn value(&self, gold: LabelId, predicted: LabelId) -> f64 {
        self.count(gold, predicted) as f64 / self.per_item as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, gold: LabelId) -> u64 {
        self.counts[gold * self.k..(gold + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, predicted: LabelId) -> u64 {
        (0..self.k).map(|g| self.count(g, predicted)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.count(i, i)).sum()
    }

    /// CSV with a header row and a leading label column.
    pub fn write_csv(&self, mut out: impl Write, names: &[String]) -> Result<()> {
        let quote = |s: &str| {
            if s.contains([',', '"']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        write!(out, "gold\\predicted")?;
        for n in names.iter().take(self.k) {
            write!(out, ",{}", quote(n))?;
        }
        writeln!(out)?;
        for (g, name) in names.iter().enumerate().take(self.k) {
            write!(out, "{}", quote(name))?;
            for p in 0..self.k {
                if self.per_item == 1 {
                    write!(out, ",{}", self.count(g, p))?;
                } else {
                    write!(out, ",{:.2}", self.value(g, p))?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScores {
    pub label: LabelId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Scores on the 0–100 scale, unrounded.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub items: usize,
    pub accuracy: f64,
    /// Mean F1 over the classes that occur in gold or predictions.
    pub macro_f1: f64,
    /// One entry per label id; classes absent from both sides have zeros.
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, items: usize) -> Self {
        let k = confusion.num_labels();
        let total = confusion.total();
        let mut per_class = Vec::with_capacity(k);
        let mut f1_sum = 0.0;
        let mut present = 0usize;
        for c in 0..k {
            let tp = confusion.count(c, c) as f64;
            let gold = confusion.row_sum(c);
            let pred = confusion.col_sum(c);
            let precision = if pred == 0 { 0.0 } else { tp / pred as f64 };
            let recall = if gold == 0 { 0.0 } else { tp / gold as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            if gold + pred > 0 {
                present += 1;
                f1_sum += f1;
            }
            per_class.push(ClassScores {
                label: c,
                precision: 100.0 * precision,
                recall: 100.0 * recall,
                f1: 100.0 * f1,
                support: gold / confusion.per_item,
            });
        }
        let accuracy = if total == 0 {
            0.0
        } else {
            100.0 * confusion.trace() as f64 / total as f64
        };
        let macro_f1 = if present == 0 {
            0.0
        } else {
            100.0 * f1_sum / present as f64
        };
        Self {
            items,
            accuracy,
            macro_f1,
            per_class,
            confusion,
        }
    }

    /// JSON form with two-decimal scores and label names.
    pub fn to_json(&self, names: &[String]) -> serde_json::Value {
        let per_class: Vec<_> = self
            .per_class
            .iter()
            .map(|c| {
                serde_json::json!({
                    "label": names[c.label],
                    "precision": round2(c.precision),
                    "recall": round2(c.recall),
                    "f1": round2(c.f1),
                    "support": c.support,
                })
            })
            .collect();
        let confusion: Vec<Vec<f64>> = (0..self.confusion.num_labels())
            .map(|g| {
                (0..self.confusion.num_labels())
                    .map(|p| self.confusion.value(g, p))
                    .collect()
            })
            .collect();
        serde_json::json!({
            "items": self.items,
            "accuracy": round2(self.accuracy),
            "macro_f1": round2(self.macro_f1),
            "per_class": per_class,
            "labels": names,
            "confusion": confusion,
        })
    }
}

fn check_labels(labels: &[LabelId], k: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= k) {
        Some(&label) => Err(Error::LabelOutOfRange { label, num_labels: k }),
        None => Ok(()),
    }
}

pub fn evaluate(predictions: &[LabelId], gold: &[LabelId], num_labels: usize) -> Result<EvalReport> {
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    check_labels(predictions, num_labels)?;
    check_labels(gold, num_labels)?;
    let mut cm = ConfusionMatrix::new(num_labels);
    for (&p, &g) in predictions.iter().zip(gold) {
        cm.add(g, p);
    }
    Ok(EvalReport::from_confusion(cm, gold.len()))
}

/// Label chosen by at least two of the three raters.
pub fn majority_vote(labels: &[LabelId; 3]) -> Option<LabelId> {
    let [x, y, z] = *labels;
    if x == y || x == z {
        Some(x)
    } else if y == z {
        Some(y)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SettingReport {
    pub items: usize,
    pub raters: EvalReport,
    pub model: EvalReport,
}

/// Settings A (all items), B (items with a rater majority) and C (B without
/// items where gold, majority or model label is the no-connective class).
#[derive(Clone, Debug, PartialEq)]
pub struct RaterAnalysis {
    pub a: SettingReport,
    pub b: SettingReport,
    pub c: SettingReport,
}

impl RaterAnalysis {
    pub fn to_json(&self, names: &[String]) -> serde_json::Value {
        let s = |r: &SettingReport| {
            serde_json::json!({
                "items": r.items,
                "raters": r.raters.to_json(names),
                "model": r.model.to_json(names),
            })
        };
        serde_json::json!({"A": s(&self.a), "B": s(&self.b), "C": s(&self.c)})
    }
}

/// Items keyed by id; every input must cover exactly the same ids.
pub fn rater_analysis(
    gold: &[(String, LabelId)],
    model: &[(String, LabelId)],
    annotations: &[(String, [LabelId; 3])],
    num_labels: usize,
    no_connective: LabelId,
) -> Result<RaterAnalysis> {
    let model_by_id = index_by_id(model, "model predictions")?;
    let ann_by_id = index_by_id(annotations, "annotations")?;
    index_by_id(gold, "gold labels")?;
    for (name, len) in [("model predictions", model.len()), ("annotations", annotations.len())] {
        if len != gold.len() {
            return Err(Error::MisalignedItems(format!(
                "{name} cover {len} items, gold covers {}",
                gold.len()
            )));
        }
    }

    let mut rows = Vec::with_capacity(gold.len());
    for (id, g) in gold {
        let m = *model_by_id
            .get(id.as_str())
            .ok_or_else(|| Error::MisalignedItems(format!("item {id:?} missing from model predictions")))?;
        let a = *ann_by_id
            .get(id.as_str())
            .ok_or_else(|| Error::MisalignedItems(format!("item {id:?} missing from annotations")))?;
        check_labels(&[*g, m], num_labels)?;
        check_labels(&a, num_labels)?;
        rows.push((*g, m, a));
    }

    let mut pooled = ConfusionMatrix::new(num_labels);
    pooled.per_item = 3;
    for &(g, _, a) in &rows {
        for r in a {
            pooled.add(g, r);
        }
    }
    let model_a = evaluate(
        &rows.iter().map(|r| r.1).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        num_labels,
    )?;
    let a = SettingReport {
        items: rows.len(),
        raters: EvalReport::from_confusion(pooled, rows.len()),
        model: model_a,
    };

    let consensus: Vec<(LabelId, LabelId, LabelId)> = rows
        .iter()
        .filter_map(|&(g, m, a)| majority_vote(&a).map(|v| (g, m, v)))
        .collect();
    let setting = |items: &[(LabelId, LabelId, LabelId)]| -> Result<SettingReport> {
        let gold: Vec<_> = items.iter().map(|r| r.0).collect();
        let model: Vec<_> = items.iter().map(|r| r.1).collect();
        let raters: Vec<_> = items.iter().map(|r| r.2).collect();
        Ok(SettingReport {
            items: items.len(),
            raters: evaluate(&raters, &gold, num_labels)?,
            model: evaluate(&model, &gold, num_labels)?,
        })
    };
    let b = setting(&consensus)?;
    let explicit: Vec<_> = consensus
        .iter()
        .copied()
        .filter(|&(g, m, v)| g != no_connective && m != no_connective && v != no_connective)
        .collect();
    let c = setting(&explicit)?;
    Ok(RaterAnalysis { a, b, c })
}

fn index_by_id<'a, V: Copy>(rows: &'a [(String, V)], what: &str) -> Result<HashMap<&'a str, V>> {
    let mut map = HashMap::with_capacity(rows.len());
    for (id, v) in rows {
        if map.insert(id.as_str(), *v).is_some() {
            return Err(Error::MisalignedItems(format!("duplicate item {id:?} in {what}")));
        }
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConsensusStats {
    pub items: usize,
    /// Percentage of items where at least two raters agree.
    pub at_least_two: f64,
    /// Percentage of items where all three agree.
    pub all_three: f64,
}

pub fn consensus_stats(annotations: &[[LabelId; 3]]) -> ConsensusStats {
    let n = annotations.len();
    let two = annotations.iter().filter(|a| majority_vote(a).is_some()).count();
    let three = annotations.iter().filter(|a| a[0] == a[1] && a[1] == a[2]).count();
    let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
    ConsensusStats {
        items: n,
        at_least_two: pct(two),
        all_three: pct(three),
    }
}

fn label(lex: &ConnectiveLexicon, name: &str, path: &Path, line: usize) -> Result<LabelId> {
    lex.label_of(name)
        .ok_or_else(|| Error::schema(path, line, format!("unknown label {name:?}")))
}

/// Reads `item_id<TAB>label` rows. A four-column dataset TSV is also
/// accepted, in which case the item id is the zero-based row number.
pub fn read_labels(reader: impl BufRead, path: &Path, lex: &ConnectiveLexicon) -> Result<Vec<(String, LabelId)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let row = match cols.len() {
            2 => (cols[0].to_string(), label(lex, cols[1], path, idx + 1)?),
            4 => (out.len().to_string(), label(lex, cols[0], path, idx + 1)?),
            n => {
                return Err(Error::schema(
                    path,
                    idx + 1,
                    format!("expected 2 or 4 columns, found {n}"),
                ))
            }
        };
        out.push(row);
    }
    Ok(out)
}

pub fn write_labels(mut out: impl Write, rows: &[(String, LabelId)], lex: &ConnectiveLexicon) -> Result<()> {
    for (id, l) in rows {
        writeln!(out, "{id}\t{}", lex.name(*l))?;
    }
    Ok(())
}

/// Reads `item_id<TAB>label1<TAB>label2<TAB>label3` rows.
pub fn read_annotations(
    reader: impl BufRead,
    path: &Path,
    lex: &ConnectiveLexicon,
) -> Result<Vec<(String, [LabelId; 3])>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::schema(
                path,
                idx + 1,
                format!("expected item id and 3 labels, found {} columns", cols.len()),
            ));
        }
        let mut labels = [0; 3];
        for (slot, name) in labels.iter_mut().zip(&cols[1..]) {
            *slot = label(lex, name, path, idx + 1)?;
        }
        out.push((cols[0].to_string(), labels));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let gold: Vec<_> = (0..40).map(|i| i % 20).collect();
        let r = evaluate(&gold, &gold, 20).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (100.0, 100.0));
    }

    #[test]
    fn length_and_range_errors() {
        assert!(matches!(evaluate(&[0], &[0, 1], 2), Err(Error::LengthMismatch { .. })));
        assert!(matches!(evaluate(&[2], &[0], 2), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        let r = evaluate(&[0, 0, 0, 0], &[0, 0, 1, 1], 3).unwrap();
        assert_eq!(r.per_class[1].f1, 0.0);
        // Class 0: P = 1/2, R = 1, F1 = 2/3. Class 2 is absent everywhere.
        assert!((r.macro_f1 - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.accuracy, 50.0);
    }

    #[test]
    fn votes() {
        assert_eq!(majority_vote(&[4, 4, 7]), Some(4));
        assert_eq!(majority_vote(&[4, 7, 7]), Some(7));
        assert_eq!(majority_vote(&[7, 4, 7]), Some(7));
        assert_eq!(majority_vote(&[1, 2, 3]), None);
        assert_eq!(majority_vote(&[5, 5, 5]), Some(5));
    }

    #[test]
    fn consensus_extremes() {
        let same = consensus_stats(&[[1, 1, 1], [2, 2, 2]]);
        assert_eq!((same.at_least_two, same.all_three), (100.0, 100.0));
        let distinct = consensus_stats(&[[1, 2, 3], [4, 5, 6]]);
        assert_eq!((distinct.at_least_two, distinct.all_three), (0.0, 0.0));
    }

    #[test]
    fn rounding_is_half_even() {
        assert_eq!(round2(12.125), 12.12);
        assert_eq!(round2(12.375), 12.38);
        assert_eq!(round2(5.0), 5.0);
    }

    #[test]
    fn raters_agreeing_with_gold() {
        let gold: Vec<_> = (0..6).map(|i| (format!("i{i}"), i % 3)).collect();
        let ann: Vec<_> = gold.iter().map(|(id, l)| (id.clone(), [*l; 3])).collect();
        let model: Vec<_> = gold.iter().map(|(id, _)| (id.clone(), 0)).collect();
        let r = rater_analysis(&gold, &model, &ann, 3, 2).unwrap();
        assert_eq!(r.a.items, r.b.items);
        assert_eq!(r.b.raters.macro_f1, 100.0);
        assert_eq!(r.a.raters.accuracy, 100.0);
    }

    #[test]
    fn misaligned_ids() {
        let gold = vec![("x".to_string(), 0)];
        let model = vec![("y".to_string(), 0)];
        let ann = vec![("x".to_string(), [0, 0, 0])];
        assert!(matches!(
            rater_analysis(&gold, &model, &ann, 2, 1),
            Err(Error::MisalignedItems(_))
        ));
    }
}
