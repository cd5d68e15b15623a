//! Evaluation metrics: average and final displacement error in source
//! pixels, and pooled F1/accuracy of the thresholded crossing probability.

use crate::domain::BoundingBox;
use crate::error::{PtiError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Distance convention for displacement errors: full 4-vector (x, y, w, h)
/// by default, or center-only (x, y) for comparison with center-based
/// reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMode {
    #[default]
    FullBox,
    CenterOnly,
}

/// Which (probability, label) pairs enter the classification report: every
/// future step pooled, or only each sample's final step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IntentPooling {
    #[default]
    AllSteps,
    FinalStep,
}

fn check_grid<A, B>(pred: &[Vec<A>], gt: &[Vec<B>], what: &str) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(PtiError::Shape {
            context: what.into(),
            expected: format!("{} nonempty rows", gt.len()),
            got: format!("{}", pred.len()),
        });
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() || p.is_empty() {
            return Err(PtiError::Shape {
                context: what.into(),
                expected: format!("row length {}", g.len()),
                got: format!("{}", p.len()),
            });
        }
    }
    Ok(())
}

fn step_distance(p: &BoundingBox, g: &BoundingBox, mode: DistanceMode) -> f64 {
    let d = p.diff(g).as_array();
    let sq = match mode {
        DistanceMode::FullBox => d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3],
        DistanceMode::CenterOnly => d[0] * d[0] + d[1] * d[1],
    };
    sq.sqrt()
}

/// Mean distance between predicted and true boxes over all N·n steps.
pub fn ade(
    pred: &[Vec<BoundingBox>],
    gt: &[Vec<BoundingBox>],
    mode: DistanceMode,
) -> Result<f64> {
    check_grid(pred, gt, "ade")?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pr, gr) in pred.iter().zip(gt) {
        for (p, g) in pr.iter().zip(gr) {
            sum += step_distance(p, g, mode);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Mean distance at each sample's final step only.
pub fn fde(
    pred: &[Vec<BoundingBox>],
    gt: &[Vec<BoundingBox>],
    mode: DistanceMode,
) -> Result<f64> {
    check_grid(pred, gt, "fde")?;
    let mut sum = 0.0;
    for (pr, gr) in pred.iter().zip(gt) {
        sum += step_distance(pr.last().unwrap(), gr.last().unwrap(), mode);
    }
    Ok(sum / pred.len() as f64)
}

/// Pooled-threshold classification report; returns (f1, accuracy).
/// F1 falls back to 0 whenever precision or recall has an empty denominator.
pub fn classification_report(
    probs: &[Vec<f64>],
    labels: &[Vec<u8>],
    threshold: f64,
    pooling: IntentPooling,
) -> Result<(f64, f64)> {
    check_grid(probs, labels, "classification report")?;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    let mut tn = 0u64;
    for (pr, lr) in probs.iter().zip(labels) {
        let pairs: Vec<(f64, u8)> = match pooling {
            IntentPooling::AllSteps => pr.iter().copied().zip(lr.iter().copied()).collect(),
            IntentPooling::FinalStep => vec![(*pr.last().unwrap(), *lr.last().unwrap())],
        };
        for (p, l) in pairs {
            if !(0.0..=1.0).contains(&p) {
                return Err(PtiError::Numeric(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
            if l > 1 {
                return Err(PtiError::Numeric(format!("label {l} outside {{0, 1}}")));
            }
            let pred_pos = p >= threshold;
            match (pred_pos, l == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let total = (tp + fp + fn_ + tn) as f64;
    let accuracy = (tp + tn) as f64 / total;
    let f1 = if tp + fp == 0 || tp + fn_ == 0 {
        0.0
    } else {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fn_) as f64;
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    };
    Ok((f1, accuracy))
}

/// Number of future steps covered by a horizon in seconds at the given frame
/// rate (nearest integer).
pub fn horizon_steps(seconds: f64, fps: f64) -> usize {
    (seconds * fps).round() as usize
}

/// Map key used in reports, e.g. 0.5 -> "0.5s".
pub fn horizon_label(seconds: f64) -> String {
    format!("{seconds:.1}s")
}

/// Aggregated evaluation results; displacement errors are keyed by horizon
/// label ("0.5s", "1.0s", "1.5s").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ade_pixels: BTreeMap<String, f64>,
    pub fde_pixels: BTreeMap<String, f64>,
    pub f1: f64,
    pub accuracy: f64,
    pub sample_count: usize,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in self.ade_pixels.iter().chain(self.fde_pixels.iter()) {
            if !(*v >= 0.0) {
                return Err(PtiError::Numeric(format!(
                    "displacement error for {k} is negative or NaN: {v}"
                )));
            }
        }
        for (name, v) in [("f1", self.f1), ("accuracy", self.accuracy)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PtiError::Numeric(format!("{name} outside [0, 1]: {v}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(rows: &[&[[f64; 4]]]) -> Vec<Vec<BoundingBox>> {
        rows.iter()
            .map(|r| r.iter().map(|b| BoundingBox::from_array(*b)).collect())
            .collect()
    }

    #[test]
    fn ade_zero_when_equal() {
        let p = grid(&[&[[10.0, 20.0, 5.0, 9.0], [11.0, 21.0, 5.0, 9.0]]]);
        assert_eq!(ade(&p, &p, DistanceMode::FullBox).unwrap(), 0.0);
    }

    #[test]
    fn ade_uniform_diff() {
        let gt = grid(&[&[[0.0; 4], [0.0; 4], [0.0; 4]]]);
        let pr = grid(&[&[[3.0, 4.0, 0.0, 0.0]; 3]]);
        assert_eq!(ade(&pr, &gt, DistanceMode::FullBox).unwrap(), 5.0);
    }

    #[test]
    fn ade_mean_of_norms() {
        let gt = grid(&[&[[0.0; 4], [0.0; 4]]]);
        let pr = grid(&[&[[3.0, 4.0, 0.0, 0.0], [5.0, 12.0, 0.0, 0.0]]]);
        assert_eq!(ade(&pr, &gt, DistanceMode::FullBox).unwrap(), 9.0);
    }

    #[test]
    fn fde_zero_when_equal() {
        let p = grid(&[&[[1.0, 2.0, 3.0, 4.0]]]);
        assert_eq!(fde(&p, &p, DistanceMode::FullBox).unwrap(), 0.0);
    }

    #[test]
    fn fde_ignores_earlier_steps() {
        let gt = grid(&[&[[0.0; 4], [0.0; 4]]]);
        let pr = grid(&[&[[99.0, -47.0, 3.0, 8.0], [3.0, 4.0, 0.0, 0.0]]]);
        assert_eq!(fde(&pr, &gt, DistanceMode::FullBox).unwrap(), 5.0);
    }

    #[test]
    fn fde_mean_over_samples() {
        let gt = grid(&[&[[0.0; 4]], &[[0.0; 4]]]);
        let pr = grid(&[&[[3.0, 4.0, 0.0, 0.0]], &[[9.0, 12.0, 0.0, 0.0]]]);
        assert_eq!(fde(&pr, &gt, DistanceMode::FullBox).unwrap(), 10.0);
    }

    #[test]
    fn center_only_ignores_size_channels() {
        let gt = grid(&[&[[0.0; 4]]]);
        let pr = grid(&[&[[3.0, 4.0, 70.0, -20.0]]]);
        assert_eq!(ade(&pr, &gt, DistanceMode::CenterOnly).unwrap(), 5.0);
        assert_eq!(fde(&pr, &gt, DistanceMode::CenterOnly).unwrap(), 5.0);
    }

    #[test]
    fn displacement_shape_mismatch_rejected() {
        let a = grid(&[&[[0.0; 4]]]);
        let b = grid(&[&[[0.0; 4], [0.0; 4]]]);
        assert!(ade(&a, &b, DistanceMode::FullBox).is_err());
        assert!(fde(&a, &b, DistanceMode::FullBox).is_err());
        assert!(ade(&[], &[], DistanceMode::FullBox).is_err());
    }

    #[test]
    fn report_all_correct() {
        let probs = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let labels = vec![vec![1, 0], vec![0, 1]];
        let (f1, acc) =
            classification_report(&probs, &labels, 0.5, IntentPooling::AllSteps).unwrap();
        assert_eq!((f1, acc), (1.0, 1.0));
    }

    #[test]
    fn report_confusion_example() {
        // preds [1,1,0,0] vs labels [1,0,0,0]: precision 1/2, recall 1,
        // f1 = 2/3, accuracy 3/4.
        let probs = vec![vec![0.9, 0.8, 0.1, 0.3]];
        let labels = vec![vec![1, 0, 0, 0]];
        let (f1, acc) =
            classification_report(&probs, &labels, 0.5, IntentPooling::AllSteps).unwrap();
        assert_relative_eq!(f1, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(f1, 0.666667, epsilon = 1e-6);
        assert_eq!(acc, 0.75);
    }

    #[test]
    fn report_no_positives_convention() {
        let probs = vec![vec![0.1, 0.2]];
        let labels = vec![vec![0, 0]];
        let (f1, acc) =
            classification_report(&probs, &labels, 0.5, IntentPooling::AllSteps).unwrap();
        assert_eq!(f1, 0.0);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn report_zero_denominator_conventions() {
        // No predicted positives but real positives: recall defined, precision
        // not -> f1 = 0.
        let (f1, acc) = classification_report(
            &[vec![0.1, 0.1]],
            &[vec![1, 0]],
            0.5,
            IntentPooling::AllSteps,
        )
        .unwrap();
        assert_eq!(f1, 0.0);
        assert_eq!(acc, 0.5);
        // Predicted positives but no real positives.
        let (f1, _) = classification_report(
            &[vec![0.9, 0.1]],
            &[vec![0, 0]],
            0.5,
            IntentPooling::AllSteps,
        )
        .unwrap();
        assert_eq!(f1, 0.0);
    }

    #[test]
    fn report_final_step_pooling() {
        // Earlier steps are wrong, finals are right: final-step pooling sees a
        // perfect classifier.
        let probs = vec![vec![0.9, 0.9, 0.9], vec![0.9, 0.9, 0.1]];
        let labels = vec![vec![0, 0, 1], vec![0, 0, 0]];
        let (f1_all, acc_all) =
            classification_report(&probs, &labels, 0.5, IntentPooling::AllSteps).unwrap();
        let (f1_final, acc_final) =
            classification_report(&probs, &labels, 0.5, IntentPooling::FinalStep).unwrap();
        assert!(acc_all < 0.5);
        assert!(f1_all < 0.5);
        assert_eq!(f1_final, 1.0);
        assert_eq!(acc_final, 1.0);
    }

    #[test]
    fn report_threshold_is_inclusive() {
        let (_, acc) = classification_report(
            &[vec![0.5]],
            &[vec![1]],
            0.5,
            IntentPooling::AllSteps,
        )
        .unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn report_rejects_bad_inputs() {
        assert!(classification_report(
            &[vec![1.5]],
            &[vec![1]],
            0.5,
            IntentPooling::AllSteps
        )
        .is_err());
        assert!(classification_report(
            &[vec![0.5]],
            &[vec![2]],
            0.5,
            IntentPooling::AllSteps
        )
        .is_err());
    }

    #[test]
    fn horizon_step_counts() {
        assert_eq!(horizon_steps(0.5, 30.0), 15);
        assert_eq!(horizon_steps(1.0, 30.0), 30);
        assert_eq!(horizon_steps(1.5, 30.0), 45);
        assert_eq!(horizon_label(0.5), "0.5s");
        assert_eq!(horizon_label(1.5), "1.5s");
    }

    #[test]
    fn ade_bounds_and_fde_equality_at_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let rows = rng.gen_range(1..5);
            let cols = rng.gen_range(1..6);
            let mut pred = Vec::new();
            let mut gt = Vec::new();
            for _ in 0..rows {
                let mut pr = Vec::new();
                let mut gr = Vec::new();
                for _ in 0..cols {
                    pr.push(BoundingBox::from_array([
                        rng.gen_range(-100.0..100.0),
                        rng.gen_range(-100.0..100.0),
                        rng.gen_range(1.0..50.0),
                        rng.gen_range(1.0..50.0),
                    ]));
                    gr.push(BoundingBox::from_array([
                        rng.gen_range(-100.0..100.0),
                        rng.gen_range(-100.0..100.0),
                        rng.gen_range(1.0..50.0),
                        rng.gen_range(1.0..50.0),
                    ]));
                }
                pred.push(pr);
                gt.push(gr);
            }
            let a = ade(&pred, &gt, DistanceMode::FullBox).unwrap();
            let norms: Vec<f64> = pred
                .iter()
                .zip(&gt)
                .flat_map(|(pr, gr)| {
                    pr.iter()
                        .zip(gr)
                        .map(|(p, g)| step_distance(p, g, DistanceMode::FullBox))
                })
                .collect();
            let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(a >= lo - 1e-9 && a <= hi + 1e-9, "{lo} <= {a} <= {hi}");

            if cols == 1 {
                assert_eq!(
                    a,
                    fde(&pred, &gt, DistanceMode::FullBox).unwrap(),
                    "single-step ade equals fde"
                );
            }
        }
    }

    /// Brute-force re-implementations used purely as oracles: index-based
    /// loops, same floating-point formula, different code path.
    mod oracle {
        use super::*;

        pub fn ade(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>]) -> f64 {
            let mut sum = 0.0;
            let mut count = 0usize;
            let mut i = 0;
            while i < pred.len() {
                let mut j = 0;
                while j < pred[i].len() {
                    let p = &pred[i][j];
                    let g = &gt[i][j];
                    let dx = p.x - g.x;
                    let dy = p.y - g.y;
                    let dw = p.w - g.w;
                    let dh = p.h - g.h;
                    sum += (dx * dx + dy * dy + dw * dw + dh * dh).sqrt();
                    count += 1;
                    j += 1;
                }
                i += 1;
            }
            sum / count as f64
        }

        pub fn fde(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>]) -> f64 {
            let mut sum = 0.0;
            let mut i = 0;
            while i < pred.len() {
                let j = pred[i].len() - 1;
                let p = &pred[i][j];
                let g = &gt[i][j];
                let dx = p.x - g.x;
                let dy = p.y - g.y;
                let dw = p.w - g.w;
                let dh = p.h - g.h;
                sum += (dx * dx + dy * dy + dw * dw + dh * dh).sqrt();
                i += 1;
            }
            sum / pred.len() as f64
        }

        pub fn report(probs: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> (f64, f64) {
            let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
            let mut i = 0;
            while i < probs.len() {
                let mut j = 0;
                while j < probs[i].len() {
                    let pos = probs[i][j] >= threshold;
                    let lab = labels[i][j] == 1;
                    if pos && lab {
                        tp += 1;
                    } else if pos {
                        fp += 1;
                    } else if lab {
                        fn_ += 1;
                    } else {
                        tn += 1;
                    }
                    j += 1;
                }
                i += 1;
            }
            let acc = (tp + tn) as f64 / (tp + fp + fn_ + tn) as f64;
            let f1 = if tp + fp == 0 || tp + fn_ == 0 {
                0.0
            } else {
                let p = tp as f64 / (tp + fp) as f64;
                let r = tp as f64 / (tp + fn_) as f64;
                if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                }
            };
            (f1, acc)
        }
    }

    #[test]
    fn oracle_equivalence_over_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..200 {
            let rows = rng.gen_range(1..6);
            let cols = rng.gen_range(1..8);
            let mut pred = Vec::new();
            let mut gt = Vec::new();
            let mut probs = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..rows {
                let mut pr = Vec::new();
                let mut gr = Vec::new();
                let mut qr = Vec::new();
                let mut lr = Vec::new();
                for _ in 0..cols {
                    pr.push(BoundingBox::from_array([
                        rng.gen_range(-300.0..300.0),
                        rng.gen_range(-300.0..300.0),
                        rng.gen_range(0.5..80.0),
                        rng.gen_range(0.5..80.0),
                    ]));
                    gr.push(BoundingBox::from_array([
                        rng.gen_range(-300.0..300.0),
                        rng.gen_range(-300.0..300.0),
                        rng.gen_range(0.5..80.0),
                        rng.gen_range(0.5..80.0),
                    ]));
                    qr.push(rng.gen_range(0.0..1.0));
                    lr.push(rng.gen_range(0..2) as u8);
                }
                pred.push(pr);
                gt.push(gr);
                probs.push(qr);
                labels.push(lr);
            }
            let a = ade(&pred, &gt, DistanceMode::FullBox).unwrap();
            let f = fde(&pred, &gt, DistanceMode::FullBox).unwrap();
            let (f1, acc) =
                classification_report(&probs, &labels, 0.5, IntentPooling::AllSteps).unwrap();
            assert_eq!(a, oracle::ade(&pred, &gt), "trial {trial} ade");
            assert_eq!(f, oracle::fde(&pred, &gt), "trial {trial} fde");
            let (of1, oacc) = oracle::report(&probs, &labels, 0.5);
            assert_eq!(f1, of1, "trial {trial} f1");
            assert_eq!(acc, oacc, "trial {trial} accuracy");
        }
    }

    #[test]
    fn metric_report_serialization_shape() {
        let mut ade_pixels = BTreeMap::new();
        let mut fde_pixels = BTreeMap::new();
        for (h, a, f) in [(0.5, 12.1, 20.5), (1.0, 24.0, 41.0), (1.5, 37.5, 66.25)] {
            ade_pixels.insert(horizon_label(h), a);
            fde_pixels.insert(horizon_label(h), f);
        }
        let report = MetricReport {
            ade_pixels,
            fde_pixels,
            f1: 0.82,
            accuracy: 0.9,
            sample_count: 128,
        };
        report.validate().unwrap();
        let json = serde_json::to_value(&report).unwrap();
        let obj = json.as_object().unwrap();
        assert_eq!(
            obj.keys().collect::<Vec<_>>(),
            vec!["accuracy", "ade_pixels", "f1", "fde_pixels", "sample_count"]
        );
        assert!(json["ade_pixels"].get("0.5s").is_some());
        assert!(json["fde_pixels"].get("1.5s").is_some());
        let back: MetricReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn metric_report_validation_catches_bad_values() {
        let report = MetricReport {
            ade_pixels: BTreeMap::from([("0.5s".to_string(), -1.0)]),
            fde_pixels: BTreeMap::new(),
            f1: 0.5,
            accuracy: 0.5,
            sample_count: 1,
        };
        assert!(report.validate().is_err());
        let report = MetricReport {
            ade_pixels: BTreeMap::new(),
            fde_pixels: BTreeMap::new(),
            f1: 1.5,
            accuracy: 0.5,
            sample_count: 1,
        };
        assert!(report.validate().is_err());
    }
}
