//! ROUGE, classification metrics and run reports.

mod classification;
mod report;
mod rouge;

pub use classification::{balanced_accuracy, macro_f1, ConfusionMatrix};
pub use report::{
    evaluate_run, predict_split, summarize, ClassifierChoice, ClassifierScores, EvalOptions, EvalReport,
    ExampleRecord, Selected,
};
pub use rouge::{lcs_len, rouge_l, rouge_n, RougeScore};
