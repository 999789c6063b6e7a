/// Precision, recall and F1 for one class, with the 0/0 -> 0 convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Classification metrics over a prediction set, plus the mean loss
/// terms when produced by an evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// F1 from globally pooled TP/FP/FN; equals accuracy for
    /// single-label multiclass prediction.
    pub micro_f1: f64,
    /// Unweighted mean of per-class F1.
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub mean_total_loss: f64,
    pub mean_pred_loss: f64,
    pub mean_reg_loss: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Metrics {
    pub fn from_predictions(preds: &[usize], truth: &[usize], num_classes: usize) -> Self {
        assert_eq!(preds.len(), truth.len(), "one prediction per target");
        assert!(!preds.is_empty(), "metrics need at least one prediction");
        let mut tp = vec![0usize; num_classes];
        let mut fp = vec![0usize; num_classes];
        let mut fne = vec![0usize; num_classes];
        let mut correct = 0usize;
        for (&p, &t) in preds.iter().zip(truth) {
            assert!(p < num_classes && t < num_classes, "class index out of range");
            if p == t {
                tp[t] += 1;
                correct += 1;
            } else {
                fp[p] += 1;
                fne[t] += 1;
            }
        }
        let per_class: Vec<ClassMetrics> = (0..num_classes)
            .map(|c| {
                let precision = ratio(tp[c] as f64, (tp[c] + fp[c]) as f64);
                let recall = ratio(tp[c] as f64, (tp[c] + fne[c]) as f64);
                let f1 = ratio(2.0 * precision * recall, precision + recall);
                ClassMetrics { precision, recall, f1 }
            })
            .collect();
        let tp_all: usize = tp.iter().sum();
        let fp_all: usize = fp.iter().sum();
        let fn_all: usize = fne.iter().sum();
        let micro_p = ratio(tp_all as f64, (tp_all + fp_all) as f64);
        let micro_r = ratio(tp_all as f64, (tp_all + fn_all) as f64);
        let micro_f1 = ratio(2.0 * micro_p * micro_r, micro_p + micro_r);
        let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / num_classes as f64;
        Metrics {
            accuracy: correct as f64 / preds.len() as f64,
            micro_f1,
            macro_f1,
            per_class,
            mean_total_loss: 0.0,
            mean_pred_loss: 0.0,
            mean_reg_loss: 0.0,
        }
    }
}
