//! Running a trained model over a dataset split and scoring it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::classification::ConfusionMatrix;
use super::rouge::{rouge_l, rouge_n, RougeScore};
use crate::autodiff::argmax;
use crate::error::{Error, Result};
use crate::model::{disagreement_rate, merged_predict, predict_example, PredictOptions};
use crate::par::{try_map_indexed, Parallelism};
use crate::text::{Dataset, Split};
use crate::train::ModelArtifact;
use crate::HyperParams;

/// Which classifier supplies the headline label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierChoice {
    #[default]
    Source,
    Summary,
    /// Mean of the source-view and summary-view distributions.
    Merged,
}

impl FromStr for ClassifierChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(ClassifierChoice::Source),
            "summary" => Ok(ClassifierChoice::Summary),
            "merged" => Ok(ClassifierChoice::Merged),
            _ => Err(Error::Config(format!("unknown classifier `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub predict: PredictOptions,
    pub classifier: ClassifierChoice,
    /// Headline summary-view and merged labels use teacher-forced states.
    pub teacher_forcing: bool,
    pub parallelism: Parallelism,
    /// Evaluate only the first `limit` examples of the split.
    pub limit: Option<usize>,
}

impl EvalOptions {
    pub fn from_hyper(hp: &HyperParams) -> Self {
        EvalOptions {
            predict: PredictOptions::from_hyper(hp),
            classifier: ClassifierChoice::Source,
            teacher_forcing: false,
            parallelism: Parallelism::default(),
            limit: None,
        }
    }
}

/// Everything predicted for one example. Labels are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: u64,
    pub generated: Vec<String>,
    pub reference: Vec<String>,
    /// Reference tokens that only the copy mechanism can produce.
    pub reference_oov: Vec<String>,
    pub log_prob: f64,
    pub gold: usize,
    pub source: usize,
    pub summary_tf: usize,
    pub summary_free: usize,
    pub merged: usize,
    pub merged_tf: usize,
}

impl ExampleRecord {
    pub fn label(&self, choice: ClassifierChoice, teacher_forcing: bool) -> usize {
        match (choice, teacher_forcing) {
            (ClassifierChoice::Source, _) => self.source,
            (ClassifierChoice::Summary, true) => self.summary_tf,
            (ClassifierChoice::Summary, false) => self.summary_free,
            (ClassifierChoice::Merged, true) => self.merged_tf,
            (ClassifierChoice::Merged, false) => self.merged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScores {
    pub macro_f1: f64,
    pub balanced_acc: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl ClassifierScores {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        Ok(ClassifierScores {
            macro_f1: confusion.macro_f1()?,
            balanced_acc: confusion.balanced_accuracy()?,
            accuracy: confusion.accuracy()?,
            confusion,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub classifier: ClassifierChoice,
    pub teacher_forcing: bool,
    pub macro_f1: f64,
    pub balanced_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeScore,
    pub source: ClassifierScores,
    pub summary_tf: ClassifierScores,
    pub summary_free: ClassifierScores,
    pub merged: ClassifierScores,
    pub merged_tf: ClassifierScores,
    /// Source view against the summary view over generated summaries.
    pub disagreement_rate: f64,
    /// Source view against the summary view over reference summaries.
    pub disagreement_rate_tf: f64,
    /// Share of copy-only reference tokens present in the generated
    /// summaries; absent when the references contain none.
    pub oov_copy_rate: Option<f64>,
    pub selected: Selected,
}

impl EvalReport {
    /// Scalar metrics keyed as `rouge1.f1`, `source.macro_f1`, and so on.
    pub fn flat_metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (name, r) in [("rouge1", &self.rouge1), ("rouge2", &self.rouge2), ("rougeL", &self.rouge_l)] {
            m.insert(format!("{name}.r"), r.recall);
            m.insert(format!("{name}.p"), r.precision);
            m.insert(format!("{name}.f1"), r.f1);
        }
        for (name, c) in self.classifiers() {
            m.insert(format!("{name}.macro_f1"), c.macro_f1);
            m.insert(format!("{name}.balanced_acc"), c.balanced_acc);
        }
        m.insert("disagreement_rate".into(), self.disagreement_rate);
        m.insert("disagreement_rate_tf".into(), self.disagreement_rate_tf);
        if let Some(c) = self.oov_copy_rate {
            m.insert("oov_copy_rate".into(), c);
        }
        m
    }

    pub fn classifiers(&self) -> [(&'static str, &ClassifierScores); 5] {
        [
            ("source", &self.source),
            ("summary_tf", &self.summary_tf),
            ("summary_free", &self.summary_free),
            ("merged", &self.merged),
            ("merged_tf", &self.merged_tf),
        ]
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "examples: {}", self.examples);
        let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>8}", "", "R", "P", "F1");
        for (name, r) in [("ROUGE-1", &self.rouge1), ("ROUGE-2", &self.rouge2), ("ROUGE-L", &self.rouge_l)] {
            let _ = writeln!(
                out,
                "{:<10} {:>8.2} {:>8.2} {:>8.2}",
                name,
                100.0 * r.recall,
                100.0 * r.precision,
                100.0 * r.f1
            );
        }
        let _ = writeln!(out, "{:<14} {:>9} {:>9}", "classifier", "macro F1", "bal. acc");
        for (name, c) in self.classifiers() {
            let _ = writeln!(
                out,
                "{:<14} {:>9.2} {:>9.2}",
                name,
                100.0 * c.macro_f1,
                100.0 * c.balanced_acc
            );
        }
        let _ = writeln!(out, "disagreement rate: {:.2}%", 100.0 * self.disagreement_rate);
        let _ = writeln!(out, "disagreement rate (tf): {:.2}%", 100.0 * self.disagreement_rate_tf);
        if let Some(c) = self.oov_copy_rate {
            let _ = writeln!(out, "oov copy rate: {:.2}%", 100.0 * c);
        }
        let _ = writeln!(
            out,
            "selected {:?} (teacher forcing {}): macro F1 {:.2}, balanced acc {:.2}",
            self.selected.classifier,
            if self.selected.teacher_forcing { "on" } else { "off" },
            100.0 * self.selected.macro_f1,
            100.0 * self.selected.balanced_acc
        );
        out
    }
}

/// Scores already-predicted examples.
pub fn summarize(
    records: &[ExampleRecord],
    num_classes: usize,
    classifier: ClassifierChoice,
    teacher_forcing: bool,
) -> Result<EvalReport> {
    let zero = |l: usize| {
        l.checked_sub(1)
            .ok_or_else(|| Error::contract("labels are 1-based"))
    };
    let gold: Vec<usize> = records.iter().map(|r| zero(r.gold)).collect::<Result<_>>()?;
    let scores = |pick: &dyn Fn(&ExampleRecord) -> usize| -> Result<ClassifierScores> {
        let pred: Vec<usize> = records.iter().map(|r| zero(pick(r))).collect::<Result<_>>()?;
        ClassifierScores::from_confusion(ConfusionMatrix::from_labels(&gold, &pred, num_classes)?)
    };
    let source = scores(&|r| r.source)?;
    let summary_tf = scores(&|r| r.summary_tf)?;
    let summary_free = scores(&|r| r.summary_free)?;
    let merged = scores(&|r| r.merged)?;
    let merged_tf = scores(&|r| r.merged_tf)?;
    let chosen = scores(&|r| r.label(classifier, teacher_forcing))?;

    let r1: Vec<RougeScore> = records.iter().map(|r| rouge_n(&r.generated, &r.reference, 1)).collect();
    let r2: Vec<RougeScore> = records.iter().map(|r| rouge_n(&r.generated, &r.reference, 2)).collect();
    let rl: Vec<RougeScore> = records.iter().map(|r| rouge_l(&r.generated, &r.reference)).collect();

    let labels = |f: fn(&ExampleRecord) -> usize| records.iter().map(f).collect::<Vec<_>>();
    let src = labels(|r| r.source);
    let (mut planted, mut copied) = (0usize, 0usize);
    for r in records {
        planted += r.reference_oov.len();
        copied += r.reference_oov.iter().filter(|w| r.generated.contains(w)).count();
    }
    Ok(EvalReport {
        examples: records.len(),
        rouge1: RougeScore::mean(&r1),
        rouge2: RougeScore::mean(&r2),
        rouge_l: RougeScore::mean(&rl),
        disagreement_rate: disagreement_rate(&src, &labels(|r| r.summary_free))?,
        disagreement_rate_tf: disagreement_rate(&src, &labels(|r| r.summary_tf))?,
        oov_copy_rate: (planted > 0).then(|| copied as f64 / planted as f64),
        selected: Selected {
            classifier,
            teacher_forcing,
            macro_f1: chosen.macro_f1,
            balanced_acc: chosen.balanced_acc,
        },
        source,
        summary_tf,
        summary_free,
        merged,
        merged_tf,
    })
}

/// Generates summaries and labels for every example of `split`.
pub fn predict_split(
    artifact: &ModelArtifact,
    dataset: &Dataset,
    split: Split,
    opts: &EvalOptions,
) -> Result<Vec<ExampleRecord>> {
    artifact.check_vocab(&dataset.vocab)?;
    if dataset.num_classes != artifact.model.hp.num_classes {
        return Err(Error::Compatibility(format!(
            "dataset has {} classes but the model predicts {}",
            dataset.num_classes, artifact.model.hp.num_classes
        )));
    }
    let mut examples = dataset.split(split);
    if let Some(n) = opts.limit {
        examples = &examples[..n.min(examples.len())];
    }
    let mut popts = opts.predict.clone();
    popts.teacher_forced = true;
    let model = &artifact.model;
    let vocab = &dataset.vocab;
    try_map_indexed(examples, opts.parallelism, |_, ex| -> Result<ExampleRecord> {
        let p = predict_example(model, ex, vocab, &popts)?;
        let p_tf = p
            .p_dc_tf
            .as_ref()
            .ok_or_else(|| Error::contract("teacher-forced distribution missing"))?;
        let reference_oov = ex
            .tgt_words
            .iter()
            .filter(|w| vocab.id(w).is_none() && ex.oov_words.contains(w))
            .cloned()
            .collect();
        Ok(ExampleRecord {
            id: ex.id,
            generated: p.words,
            reference: ex.tgt_words.clone(),
            reference_oov,
            log_prob: p.log_prob,
            gold: ex.rating(),
            source: argmax(&p.p_ec) + 1,
            summary_tf: argmax(p_tf) + 1,
            summary_free: argmax(&p.p_dc_free) + 1,
            merged: merged_predict(&p.p_ec, &p.p_dc_free)?.1 + 1,
            merged_tf: merged_predict(&p.p_ec, p_tf)?.1 + 1,
        })
    })
}

/// Predicts and scores one split.
pub fn evaluate_run(
    artifact: &ModelArtifact,
    dataset: &Dataset,
    split: Split,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<ExampleRecord>)> {
    let records = predict_split(artifact, dataset, split, opts)?;
    let report = summarize(&records, dataset.num_classes, opts.classifier, opts.teacher_forcing)?;
    Ok((report, records))
}
