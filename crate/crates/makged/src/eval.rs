//! Scoring of decisions against gold labels with macro-averaged metrics,
//! plus the text and JSON report renderers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ExampleRecord, Label, LabeledExample};
use crate::protocol::{Decision, DecisionRecord, RunStats};

/// Counts with Incorrect fixed as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl ConfusionMatrix {
    pub fn n(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Accumulates (predicted, gold) label pairs.
    pub fn from_labels<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (Label, Label)>,
    {
        let mut cm = ConfusionMatrix::default();
        for (predicted, gold) in pairs {
            match (predicted, gold) {
                (Label::Incorrect, Label::Incorrect) => cm.true_pos += 1,
                (Label::Incorrect, Label::Correct) => cm.false_pos += 1,
                (Label::Correct, Label::Incorrect) => cm.false_neg += 1,
                (Label::Correct, Label::Correct) => cm.true_neg += 1,
            }
        }
        cm
    }
}

/// Accuracy plus unweighted two-class means of precision, recall, and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub n: usize,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions and gold differ in length: {predictions} vs {gold}")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("inputs disagree on the triple at index {index}")]
    MisalignedInputs { index: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

/// Scores decisions against gold examples aligned index by index.
pub fn confusion(
    decisions: &[Decision],
    gold: &[LabeledExample],
) -> Result<ConfusionMatrix, EvalError> {
    if decisions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predictions: decisions.len(),
            gold: gold.len(),
        });
    }
    for (index, (d, e)) in decisions.iter().zip(gold).enumerate() {
        if d.triple != e.triple {
            return Err(EvalError::MisalignedInputs { index });
        }
    }
    Ok(ConfusionMatrix::from_labels(
        decisions.iter().zip(gold).map(|(d, e)| (d.label, e.label)),
    ))
}

/// Same scoring over wire records, aligned by surface form.
pub fn confusion_records(
    decisions: &[DecisionRecord],
    gold: &[ExampleRecord],
) -> Result<ConfusionMatrix, EvalError> {
    if decisions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predictions: decisions.len(),
            gold: gold.len(),
        });
    }
    for (index, (d, e)) in decisions.iter().zip(gold).enumerate() {
        if d.triple != e.triple_record() {
            return Err(EvalError::MisalignedInputs { index });
        }
    }
    Ok(ConfusionMatrix::from_labels(
        decisions.iter().zip(gold).map(|(d, e)| (d.label, e.label)),
    ))
}

/// Precision, recall, and F1 for one class, 0/0 counting as 0.
fn class_scores(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let n = cm.n();
    if n == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let (p_incorrect, r_incorrect, f_incorrect) =
        class_scores(cm.true_pos, cm.false_pos, cm.false_neg);
    let (p_correct, r_correct, f_correct) =
        class_scores(cm.true_neg, cm.false_neg, cm.false_pos);
    Ok(MetricsReport {
        accuracy: (cm.true_pos + cm.true_neg) as f64 / n as f64,
        macro_precision: (p_incorrect + p_correct) / 2.0,
        macro_recall: (r_incorrect + r_correct) / 2.0,
        macro_f1: (f_incorrect + f_correct) / 2.0,
        n,
    })
}

/// Four-column metric table plus the protocol statistics lines.
pub fn report(metrics: &MetricsReport, stats: &RunStats) -> String {
    format!(
        "accuracy f1 precision recall\n{:.4} {:.4} {:.4} {:.4}\navg_rounds={:.2}\ntie_rate={:.2}\n",
        metrics.accuracy,
        metrics.macro_f1,
        metrics.macro_precision,
        metrics.macro_recall,
        stats.mean_rounds,
        stats.tie_fraction,
    )
}

pub fn report_json(metrics: &MetricsReport, stats: &RunStats) -> serde_json::Value {
    serde_json::json!({ "metrics": metrics, "stats": stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats_with(mean_rounds: f64, tie_fraction: f64) -> RunStats {
        RunStats {
            decided: 100,
            failed: 0,
            mean_rounds,
            tie_fraction,
            consensus: 0,
            majority: 0,
            summarizer: 0,
        }
    }

    fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Label, Label)> {
        (0..n)
            .map(|_| {
                let pick = |r: &mut ChaCha8Rng| {
                    if r.gen_bool(0.5) {
                        Label::Incorrect
                    } else {
                        Label::Correct
                    }
                };
                (pick(rng), pick(rng))
            })
            .collect()
    }

    #[test]
    fn worked_confusion_matrix_example() {
        let cm = ConfusionMatrix { true_pos: 3, false_pos: 1, false_neg: 1, true_neg: 5 };
        let m = metrics(&cm).unwrap();
        assert_eq!(m.n, 10);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
        let expected = (0.75 + 5.0 / 6.0) / 2.0;
        assert!((m.macro_precision - expected).abs() < 1e-12);
        assert!((m.macro_recall - expected).abs() < 1e-12);
        assert!((m.macro_f1 - expected).abs() < 1e-12);
        assert!((m.macro_precision - 0.791667).abs() < 1e-6);
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let cm = ConfusionMatrix { true_pos: 4, false_pos: 0, false_neg: 0, true_neg: 6 };
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_precision, 1.0);
        assert_eq!(m.macro_recall, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        let text = report(&m, &stats_with(0.0, 0.0));
        assert!(text.contains("1.0000 1.0000 1.0000 1.0000"));
    }

    #[test]
    fn single_class_predictions_zero_out_the_other_class() {
        let cm = ConfusionMatrix { true_pos: 7, false_pos: 3, false_neg: 0, true_neg: 0 };
        let m = metrics(&cm).unwrap();
        let (p_correct, r_correct, f_correct) = class_scores(0, 0, 3);
        assert_eq!((p_correct, r_correct, f_correct), (0.0, 0.0, 0.0));
        assert!((m.macro_recall - 0.5).abs() < 1e-12);
        assert!(m.macro_f1 > 0.0);
    }

    #[test]
    fn empty_matrix_is_rejected() {
        assert!(matches!(metrics(&ConfusionMatrix::default()), Err(EvalError::EmptyMatrix)));
    }

    #[test]
    fn report_renders_values_at_four_decimals() {
        let m = MetricsReport {
            accuracy: 0.7748,
            macro_precision: 0.7686,
            macro_recall: 0.7252,
            macro_f1: 0.7367,
            n: 1000,
        };
        let text = report(&m, &stats_with(1.8, 0.12));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "accuracy f1 precision recall");
        assert_eq!(lines[1], "0.7748 0.7367 0.7686 0.7252");
        assert_eq!(lines[2], "avg_rounds=1.80");
        assert_eq!(lines[3], "tie_rate=0.12");
    }

    #[test]
    fn report_json_carries_both_sections() {
        let m = metrics(&ConfusionMatrix { true_pos: 1, false_pos: 0, false_neg: 0, true_neg: 1 })
            .unwrap();
        let value = report_json(&m, &stats_with(0.5, 0.0));
        assert_eq!(value["metrics"]["accuracy"], 1.0);
        assert_eq!(value["metrics"]["n"], 2);
        assert_eq!(value["stats"]["mean_rounds"], 0.5);
    }

    #[test]
    fn swapping_the_positive_class_convention_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 1 + rng.gen_range(0..200);
            let pairs = random_labels(&mut rng, n);
            let cm = ConfusionMatrix::from_labels(pairs.clone());
            let swapped = ConfusionMatrix {
                true_pos: cm.true_neg,
                false_pos: cm.false_neg,
                false_neg: cm.false_pos,
                true_neg: cm.true_pos,
            };
            let a = metrics(&cm).unwrap();
            let b = metrics(&swapped).unwrap();
            assert!((a.accuracy - b.accuracy).abs() < 1e-15);
            assert!((a.macro_precision - b.macro_precision).abs() < 1e-15);
            assert!((a.macro_recall - b.macro_recall).abs() < 1e-15);
            assert!((a.macro_f1 - b.macro_f1).abs() < 1e-15);
        }
    }

    #[test]
    fn inverting_predictions_inverts_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = 1 + rng.gen_range(0..200);
            let pairs = random_labels(&mut rng, n);
            let flip = |l: Label| match l {
                Label::Correct => Label::Incorrect,
                Label::Incorrect => Label::Correct,
            };
            let cm = ConfusionMatrix::from_labels(pairs.clone());
            let inverted =
                ConfusionMatrix::from_labels(pairs.iter().map(|&(p, g)| (flip(p), g)));
            let a = metrics(&cm).unwrap();
            let b = metrics(&inverted).unwrap();
            assert!((a.accuracy + b.accuracy - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn metrics_match_a_per_example_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let n = 1 + rng.gen_range(0..1000);
            let pairs = random_labels(&mut rng, n);
            let cm = ConfusionMatrix::from_labels(pairs.clone());
            let m = metrics(&cm).unwrap();

            let n = pairs.len() as f64;
            let count = |f: &dyn Fn(Label, Label) -> bool| {
                pairs.iter().filter(|&&(p, g)| f(p, g)).count() as f64
            };
            let matches = count(&|p, g| p == g);
            assert!((m.accuracy - matches / n).abs() < 1e-12);

            let mut per_class = Vec::new();
            for class in [Label::Incorrect, Label::Correct] {
                let tp = count(&|p, g| p == class && g == class);
                let pred = count(&|p, _| p == class);
                let gold = count(&|_, g| g == class);
                let precision = if pred == 0.0 { 0.0 } else { tp / pred };
                let recall = if gold == 0.0 { 0.0 } else { tp / gold };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                per_class.push((precision, recall, f1));
            }
            let macro_p = (per_class[0].0 + per_class[1].0) / 2.0;
            let macro_r = (per_class[0].1 + per_class[1].1) / 2.0;
            let macro_f = (per_class[0].2 + per_class[1].2) / 2.0;
            assert!((m.macro_precision - macro_p).abs() < 1e-12);
            assert!((m.macro_recall - macro_r).abs() < 1e-12);
            assert!((m.macro_f1 - macro_f).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_is_checked_before_scoring() {
        use crate::kg::KnowledgeGraph;
        use crate::protocol::{DecisionMethod, DiscussionTranscript};

        let g = KnowledgeGraph::ingest("a\tr1\tb\nb\tr1\tc\n".as_bytes()).unwrap();
        let t0 = g.resolve("a", "r1", "b").unwrap();
        let t1 = g.resolve("b", "r1", "c").unwrap();
        let decision = |triple, label| Decision {
            triple,
            label,
            method: DecisionMethod::Consensus,
            rounds_used: 0,
            transcript: DiscussionTranscript { turns: vec![], rounds_used: 0 },
            summarizer_turn: None,
        };
        let example = |triple, label| LabeledExample {
            triple,
            label,
            corruption: crate::dataset::CorruptionKind::None,
            original: None,
        };

        let decisions = vec![decision(t0, Label::Correct), decision(t1, Label::Incorrect)];
        let gold = vec![example(t0, Label::Correct), example(t1, Label::Correct)];
        let cm = confusion(&decisions, &gold).unwrap();
        assert_eq!(cm, ConfusionMatrix { true_pos: 0, false_pos: 1, false_neg: 0, true_neg: 1 });

        let misordered = vec![example(t1, Label::Correct), example(t0, Label::Correct)];
        assert!(matches!(
            confusion(&decisions, &misordered),
            Err(EvalError::MisalignedInputs { index: 0 })
        ));
        assert!(matches!(
            confusion(&decisions, &gold[..1]),
            Err(EvalError::LengthMismatch { predictions: 2, gold: 1 })
        ));
    }
}
