//! Accuracy over schema subsets, consistency over switched pairs, reports and
//! data-size curves.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::schema::{resolve, ModelBundle, ParseIndex, Prediction, Schema};
use crate::tokenizer::Vocab;
use crate::trainer::{fine_tune, make_training_examples, subsample, EpochLog, Hyperparams};

/// Correct/total over a subset. `accuracy` is `None` for an empty subset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub correct: usize,
    pub total: usize,
    pub accuracy: Option<f64>,
}

impl Metric {
    pub fn new(correct: usize, total: usize) -> Self {
        Metric {
            correct,
            total,
            accuracy: (total > 0).then(|| correct as f64 / total as f64),
        }
    }

    pub fn render(&self) -> String {
        match self.accuracy {
            Some(a) => format!("{:.1}% ({}/{})", 100.0 * a, self.correct, self.total),
            None => "n/a (0)".to_string(),
        }
    }
}

/// Schema subsets. Switched copies only count toward `Switched`, so the full
/// set is the original corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    Full,
    Associative,
    NonAssociative,
    Unswitched,
    Switched,
}

impl Subset {
    pub fn contains(self, s: &Schema) -> bool {
        match self {
            Subset::Full => !s.switched,
            Subset::Associative => !s.switched && s.associative,
            Subset::NonAssociative => !s.switched && !s.associative,
            Subset::Unswitched => s.switchable && !s.switched,
            Subset::Switched => s.switched,
        }
    }
}

fn index_predictions(predictions: &[Prediction]) -> HashMap<&str, &Prediction> {
    predictions.iter().map(|p| (p.schema_id.as_str(), p)).collect()
}

pub fn accuracy(schemas: &[Schema], predictions: &[Prediction], subset: Subset) -> Result<Metric> {
    let by_id = index_predictions(predictions);
    let mut correct = 0;
    let mut total = 0;
    for s in schemas.iter().filter(|s| subset.contains(s)) {
        let p = by_id
            .get(s.id.as_str())
            .ok_or_else(|| Error::Coverage(s.id.clone()))?;
        total += 1;
        correct += p.correct as usize;
    }
    Ok(Metric::new(correct, total))
}

/// Fraction of switch groups whose original and switched members are both
/// answered correctly.
pub fn consistent_accuracy(schemas: &[Schema], predictions: &[Prediction]) -> Result<Metric> {
    let by_id = index_predictions(predictions);
    let mut groups: BTreeMap<&str, [Vec<&Schema>; 2]> = BTreeMap::new();
    for s in schemas {
        if let Some(g) = &s.switch_group {
            groups.entry(g).or_default()[s.switched as usize].push(s);
        }
    }
    let mut correct = 0;
    for (group, [orig, switched]) in &groups {
        if orig.len() != 1 || switched.len() != 1 {
            return Err(Error::Pairing {
                group: group.to_string(),
                message: format!("{} original and {} switched members", orig.len(), switched.len()),
            });
        }
        let both = [orig[0], switched[0]].iter().try_fold(true, |acc, s| {
            let p = by_id.get(s.id.as_str()).ok_or_else(|| Error::Pairing {
                group: group.to_string(),
                message: format!("no prediction for member {}", s.id),
            })?;
            Ok::<_, Error>(acc && p.correct)
        })?;
        correct += both as usize;
    }
    Ok(Metric::new(correct, groups.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub full: Metric,
    pub associative: Metric,
    pub non_associative: Metric,
    pub unswitched: Metric,
    pub switched: Metric,
    pub consistent: Metric,
    pub ties: usize,
    /// Sorted by schema id.
    pub predictions: Vec<Prediction>,
    pub config_digest: Option<String>,
    pub checkpoint_digest: Option<String>,
}

impl Report {
    pub fn from_predictions(schemas: &[Schema], mut predictions: Vec<Prediction>) -> Result<Self> {
        predictions.sort_by(|a, b| a.schema_id.cmp(&b.schema_id));
        Ok(Report {
            full: accuracy(schemas, &predictions, Subset::Full)?,
            associative: accuracy(schemas, &predictions, Subset::Associative)?,
            non_associative: accuracy(schemas, &predictions, Subset::NonAssociative)?,
            unswitched: accuracy(schemas, &predictions, Subset::Unswitched)?,
            switched: accuracy(schemas, &predictions, Subset::Switched)?,
            consistent: consistent_accuracy(schemas, &predictions)?,
            ties: predictions.iter().filter(|p| p.tie).count(),
            predictions,
            config_digest: None,
            checkpoint_digest: None,
        })
    }

    pub fn metrics(&self) -> [(&'static str, &Metric); 6] {
        [
            ("Full", &self.full),
            ("Associative", &self.associative),
            ("Non-Assoc.", &self.non_associative),
            ("Unswitched", &self.unswitched),
            ("Switched", &self.switched),
            ("Consistent", &self.consistent),
        ]
    }

    /// Aligned plain-text table, one column per metric, then the prediction rows.
    pub fn to_table(&self) -> String {
        let cells: Vec<(&str, String)> = self.metrics().iter().map(|(h, m)| (*h, m.render())).collect();
        let widths: Vec<usize> = cells.iter().map(|(h, c)| h.len().max(c.len())).collect();
        let mut out = String::new();
        for ((h, _), w) in cells.iter().zip(&widths) {
            let _ = write!(out, "{h:<w$}  ");
        }
        out = out.trim_end().to_string();
        out.push('\n');
        for ((_, c), w) in cells.iter().zip(&widths) {
            let _ = write!(out, "{c:<w$}  ");
        }
        out = out.trim_end().to_string();
        out.push('\n');
        let _ = writeln!(out, "ties: {}", self.ties);
        if let Some(d) = &self.config_digest {
            let _ = writeln!(out, "config: {d}");
        }
        if let Some(d) = &self.checkpoint_digest {
            let _ = writeln!(out, "checkpoint: {d}");
        }
        let id_w = self.predictions.iter().map(|p| p.schema_id.len()).max().unwrap_or(2).max(2);
        let _ = writeln!(out, "\n{:<id_w$}  {:>10}  {:>10}  pred  tie  correct", "id", "score0", "score1");
        for p in &self.predictions {
            let _ = writeln!(
                out,
                "{:<id_w$}  {:>10.6}  {:>10.6}  {:>4}  {:>3}  {:>7}",
                p.schema_id,
                p.scores[0],
                p.scores[1],
                p.predicted_index,
                if p.tie { "yes" } else { "no" },
                if p.correct { "yes" } else { "no" },
            );
        }
        out
    }
}

/// Resolves every schema (in parallel) and aggregates the metrics.
pub fn evaluate(bundle: ModelBundle<'_>, corpus: &[Schema], parses: &ParseIndex) -> Result<Report> {
    let predictions = corpus
        .par_iter()
        .map(|s| resolve(bundle, s, parses.pair(&s.id)?))
        .collect::<Result<Vec<_>>>()?;
    Report::from_predictions(corpus, predictions)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub fraction: f64,
    pub train_size: usize,
    pub report: Report,
    pub log: Vec<EpochLog>,
}

/// Training data and its parses.
#[derive(Clone, Copy)]
pub struct Corpus<'a> {
    pub schemas: &'a [Schema],
    pub parses: &'a ParseIndex,
}

/// For each fraction: subsample the training corpus, fine-tune from `init`
/// and evaluate. Fraction 0 (or an empty sample) evaluates `init` untouched.
pub fn size_curve(
    init: &Model,
    vocab: &Vocab,
    train: Corpus<'_>,
    eval: Corpus<'_>,
    fractions: &[f64],
    hyper: &Hyperparams,
) -> Result<Vec<CurveRow>> {
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::contract(format!("fraction {f} outside [0, 1]")));
    }
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let sample = subsample(train.schemas, fraction, hyper.seed)?;
        let (model, log) = if sample.is_empty() {
            (init.clone(), Vec::new())
        } else {
            let examples = make_training_examples(&sample, vocab, train.parses, hyper.max_seq_len)?;
            fine_tune(init, &examples, hyper)?
        };
        let report = evaluate(ModelBundle { model: &model, vocab }, eval.schemas, eval.parses)?;
        log::info!("fraction {fraction}: {} schemas, full {}", sample.len(), report.full.render());
        rows.push(CurveRow {
            fraction,
            train_size: sample.len(),
            report,
            log,
        });
    }
    Ok(rows)
}
