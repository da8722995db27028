use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::EvalError;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub test_size: usize,
}

/// Mean and sample standard deviation over folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldStats {
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean F1 over classes with non-zero support.
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// `(K, accuracy)` for K = 1, 2, 3.
    pub topk: Vec<(usize, f64)>,
    pub folds: Vec<FoldMetrics>,
    pub fold_stats: Option<FoldStats>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub(crate) fn from_confusion(
        labels: Vec<String>,
        confusion: Vec<Vec<usize>>,
        topk: Vec<(usize, f64)>,
        folds: Vec<FoldMetrics>,
    ) -> Self {
        let k = labels.len();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                let tp = confusion[c][c];
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let supported: Vec<f64> = per_class.iter().filter(|m| m.support > 0).map(|m| m.f1).collect();
        if supported.len() < k {
            let missing: Vec<&str> = labels
                .iter()
                .zip(&per_class)
                .filter(|(_, m)| m.support == 0)
                .map(|(l, _)| l.as_str())
                .collect();
            log::warn!(
                "classes without test support left out of macro-F1: {}",
                missing.join(", ")
            );
        }
        let macro_f1 = if supported.is_empty() {
            0.0
        } else {
            supported.iter().sum::<f64>() / supported.len() as f64
        };
        let mut report = Self {
            labels,
            per_class,
            macro_f1,
            accuracy: ratio(correct, total),
            confusion,
            topk,
            folds: Vec::new(),
            fold_stats: None,
        };
        report.set_folds(folds);
        report
    }

    pub(crate) fn set_folds(&mut self, folds: Vec<FoldMetrics>) {
        self.fold_stats = if folds.is_empty() {
            None
        } else {
            let (macro_f1_mean, macro_f1_std) = mean_std(&folds.iter().map(|f| f.macro_f1).collect::<Vec<_>>());
            let (accuracy_mean, accuracy_std) = mean_std(&folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
            Some(FoldStats {
                macro_f1_mean,
                macro_f1_std,
                accuracy_mean,
                accuracy_std,
            })
        };
        self.folds = folds;
    }

    /// Long-format CSV `section,key,column,value`. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        let mut row = |section: &str, key: &str, column: &str, value: String| {
            out.write_record([section, key, column, &value])
                .map_err(|e| EvalError::Format(e.to_string()))
        };
        row("section", "key", "column", "value".into())?;
        for l in &self.labels {
            row("label", l, "", String::new())?;
        }
        row("summary", "macro_f1", "value", self.macro_f1.to_string())?;
        row("summary", "accuracy", "value", self.accuracy.to_string())?;
        for (l, m) in self.labels.iter().zip(&self.per_class) {
            row("class", l, "precision", m.precision.to_string())?;
            row("class", l, "recall", m.recall.to_string())?;
            row("class", l, "f1", m.f1.to_string())?;
            row("class", l, "support", m.support.to_string())?;
        }
        for (truth, counts) in self.labels.iter().zip(&self.confusion) {
            for (pred, c) in self.labels.iter().zip(counts) {
                row("confusion", truth, pred, c.to_string())?;
            }
        }
        for (k, acc) in &self.topk {
            row("topk", &k.to_string(), "accuracy", acc.to_string())?;
        }
        for (i, f) in self.folds.iter().enumerate() {
            row("fold", &i.to_string(), "macro_f1", f.macro_f1.to_string())?;
            row("fold", &i.to_string(), "accuracy", f.accuracy.to_string())?;
            row("fold", &i.to_string(), "test_size", f.test_size.to_string())?;
        }
        if let Some(s) = &self.fold_stats {
            row("folds", "macro_f1", "mean", s.macro_f1_mean.to_string())?;
            row("folds", "macro_f1", "std", s.macro_f1_std.to_string())?;
            row("folds", "accuracy", "mean", s.accuracy_mean.to_string())?;
            row("folds", "accuracy", "std", s.accuracy_std.to_string())?;
        }
        out.flush().map_err(|e| EvalError::Format(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, EvalError> {
        let fmt = |m: String| EvalError::Format(m);
        let mut reader = csv::Reader::from_reader(r);
        let mut labels = Vec::new();
        let mut cells: BTreeMap<(String, String, String), String> = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| fmt(e.to_string()))?;
            if rec.len() != 4 {
                return Err(fmt(format!("expected 4 fields, found {}", rec.len())));
            }
            if &rec[0] == "label" {
                labels.push(rec[1].to_string());
            } else {
                cells.insert(
                    (rec[0].to_string(), rec[1].to_string(), rec[2].to_string()),
                    rec[3].to_string(),
                );
            }
        }
        let get = |s: &str, k: &str, c: &str| -> Result<&String, EvalError> {
            cells
                .get(&(s.to_string(), k.to_string(), c.to_string()))
                .ok_or_else(|| fmt(format!("missing {s}/{k}/{c}")))
        };
        let f = |s: &str, k: &str, c: &str| -> Result<f64, EvalError> {
            get(s, k, c)?
                .parse::<f64>()
                .map_err(|e| fmt(format!("{s}/{k}/{c}: {e}")))
        };
        let u = |s: &str, k: &str, c: &str| -> Result<usize, EvalError> {
            get(s, k, c)?
                .parse::<usize>()
                .map_err(|e| fmt(format!("{s}/{k}/{c}: {e}")))
        };
        let per_class = labels
            .iter()
            .map(|l| {
                Ok(ClassMetrics {
                    precision: f("class", l, "precision")?,
                    recall: f("class", l, "recall")?,
                    f1: f("class", l, "f1")?,
                    support: u("class", l, "support")?,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let confusion = labels
            .iter()
            .map(|t| labels.iter().map(|p| u("confusion", t, p)).collect())
            .collect::<Result<Vec<Vec<usize>>, EvalError>>()?;
        let mut topk = Vec::new();
        for k in 1.. {
            match cells.get(&("topk".into(), k.to_string(), "accuracy".into())) {
                Some(_) => topk.push((k, f("topk", &k.to_string(), "accuracy")?)),
                None => break,
            }
        }
        let mut folds = Vec::new();
        for i in 0.. {
            let key = i.to_string();
            if !cells.contains_key(&("fold".into(), key.clone(), "macro_f1".into())) {
                break;
            }
            folds.push(FoldMetrics {
                macro_f1: f("fold", &key, "macro_f1")?,
                accuracy: f("fold", &key, "accuracy")?,
                test_size: u("fold", &key, "test_size")?,
            });
        }
        let fold_stats = if cells.contains_key(&("folds".into(), "macro_f1".into(), "mean".into())) {
            Some(FoldStats {
                macro_f1_mean: f("folds", "macro_f1", "mean")?,
                macro_f1_std: f("folds", "macro_f1", "std")?,
                accuracy_mean: f("folds", "accuracy", "mean")?,
                accuracy_std: f("folds", "accuracy", "std")?,
            })
        } else {
            None
        };
        Ok(Self {
            macro_f1: f("summary", "macro_f1", "value")?,
            accuracy: f("summary", "accuracy", "value")?,
            labels,
            per_class,
            confusion,
            topk,
            folds,
            fold_stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let labels = vec![
            "Action".to_string(),
            "Image, large".to_string(),
            "PlainText".to_string(),
        ];
        let confusion = vec![vec![5, 1, 0], vec![2, 7, 1], vec![0, 0, 3]];
        let folds = vec![
            FoldMetrics {
                macro_f1: 0.1 + 0.2,
                accuracy: 1.0 / 3.0,
                test_size: 9,
            },
            FoldMetrics {
                macro_f1: 0.7,
                accuracy: 2.0 / 3.0,
                test_size: 10,
            },
        ];
        let r = EvalReport::from_confusion(
            labels,
            confusion,
            vec![(1, 0.7894736842105263), (2, 0.9), (3, 1.0)],
            folds,
        );
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(EvalReport::read_csv(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn confusion_rows_are_supports() {
        let r = EvalReport::from_confusion(
            vec!["a".into(), "b".into()],
            vec![vec![3, 1], vec![0, 4]],
            Vec::new(),
            Vec::new(),
        );
        assert_eq!(r.per_class[0].support, 4);
        assert_eq!(r.per_class[1].support, 4);
        assert_eq!(r.accuracy, 7.0 / 8.0);
        let f1s = r.per_class.iter().map(|m| m.f1).sum::<f64>() / 2.0;
        assert_eq!(r.macro_f1, f1s);
    }
}
