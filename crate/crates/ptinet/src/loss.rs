//! Training objective: KL regularizer per latent path, trajectory RMSE,
//! per-step binary cross-entropy on crossing probability, and their weighted
//! total. Each term exists twice — as a plain f64 function (used for
//! reporting and as the oracle in tests) and as a graph builder (used for
//! backprop). Tests pin the two to each other.

use crate::autodiff::{Graph, NodeId};
use crate::domain::BoundingBox;
use crate::error::{PtiError, Result};
use crate::model::LatentGaussian;
use serde::{Deserialize, Serialize};

/// Weights of the combined objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// KL weight inside the trajectory loss.
    pub beta: f64,
    pub lambda_traj: f64,
    pub lambda_int: f64,
    /// Probability clamp for the BCE logs.
    pub epsilon: f64,
    /// Adds a Gaussian negative log-likelihood term for reconstructing the
    /// encoder's input sequence.
    pub reconstruction_reg: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 1.0,
            lambda_traj: 1.0,
            lambda_int: 1.0,
            epsilon: 1e-7,
            reconstruction_reg: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(PtiError::Config("beta must be nonnegative".into()));
        }
        if !(self.lambda_traj >= 0.0) || !(self.lambda_int >= 0.0) {
            return Err(PtiError::Config("loss weights must be nonnegative".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(PtiError::Config(
                "epsilon must lie strictly inside (0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// KL(N(μ, diag(exp(log_var))) ‖ N(0, I))
/// = 0.5·Σ_d (exp(log_var_d) + μ_d² − 1 − log_var_d); nonnegative, zero only
/// at the prior.
pub fn kl_diagonal_gaussian(g: &LatentGaussian) -> Result<f64> {
    if !g.is_finite() {
        return Err(PtiError::Numeric(
            "non-finite latent statistics in KL term".into(),
        ));
    }
    let mut acc = 0.0;
    for (m, lv) in g.mean.iter().zip(&g.log_var) {
        acc += lv.exp() + m * m - 1.0 - lv;
    }
    Ok(0.5 * acc)
}

fn check_grid<T>(pred: &[Vec<T>], gt: &[Vec<T>], what: &str) -> Result<()> {
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

/// sqrt( Σ_i Σ_j ‖pred_ij − gt_ij‖² / (N·n) ) over the 4-vector box
/// difference.
pub fn rmse_trajectory(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>]) -> Result<f64> {
    check_grid(pred, gt, "rmse trajectories")?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pr, gr) in pred.iter().zip(gt) {
        for (p, g) in pr.iter().zip(gr) {
            let d = p.diff(g).as_array();
            sum += d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3];
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Gaussian negative log-likelihood of `x` under per-element (mean, log_var):
/// 0.5·Σ (log_var + (x−mean)²·exp(−log_var) + ln 2π), averaged over steps.
pub fn gaussian_nll(x: &[Vec<f64>], stats: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if x.len() != stats.len() || x.is_empty() {
        return Err(PtiError::Shape {
            context: "reconstruction NLL".into(),
            expected: format!("{} steps", x.len()),
            got: format!("{}", stats.len()),
        });
    }
    const LN_2PI: f64 = 1.8378770664093453;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (xs, (mean, log_var)) in x.iter().zip(stats) {
        if xs.len() != mean.len() || xs.len() != log_var.len() {
            return Err(PtiError::Shape {
                context: "reconstruction NLL step".into(),
                expected: format!("width {}", xs.len()),
                got: format!("{}/{}", mean.len(), log_var.len()),
            });
        }
        for i in 0..xs.len() {
            let d = xs[i] - mean[i];
            acc += 0.5 * (log_var[i] + d * d * (-log_var[i]).exp() + LN_2PI);
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// β·Σ KL over latents + RMSE(pred, gt), plus the reconstruction NLL when
/// the regularizer is enabled (`recon` must then be supplied).
pub fn trajectory_loss(
    pred: &[Vec<BoundingBox>],
    gt: &[Vec<BoundingBox>],
    latents: &[LatentGaussian],
    cfg: &LossConfig,
    recon: Option<f64>,
) -> Result<f64> {
    cfg.validate()?;
    let mut kl = 0.0;
    for g in latents {
        kl += kl_diagonal_gaussian(g)?;
    }
    let rmse = rmse_trajectory(pred, gt)?;
    let mut total = cfg.beta * kl + rmse;
    if cfg.reconstruction_reg {
        let r = recon.ok_or_else(|| {
            PtiError::Config("reconstruction_reg=on but no reconstruction term supplied".into())
        })?;
        total += r;
    }
    Ok(total)
}

/// Mean binary cross-entropy over all N·n (probability, label) pairs, with
/// probabilities clamped to [ε, 1−ε] before the logs.
pub fn intention_loss(probs: &[Vec<f64>], labels: &[Vec<u8>], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(PtiError::Shape {
            context: "intention loss".into(),
            expected: format!("{} rows", labels.len()),
            got: format!("{}", probs.len()),
        });
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (pr, lr) in probs.iter().zip(labels) {
        if pr.len() != lr.len() || pr.is_empty() {
            return Err(PtiError::Shape {
                context: "intention loss row".into(),
                expected: format!("length {}", lr.len()),
                got: format!("{}", pr.len()),
            });
        }
        for (&p, &l) in pr.iter().zip(lr) {
            debug_assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
            let pc = p.clamp(cfg.epsilon, 1.0 - cfg.epsilon);
            acc -= if l == 1 { pc.ln() } else { (1.0 - pc).ln() };
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// λ_traj·traj + λ_int·int.
pub fn total_loss(traj: f64, int: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda_traj * traj + cfg.lambda_int * int
}

// --- graph builders ---------------------------------------------------------

/// Left-fold a list of 0-dim scalar nodes into their sum.
fn sum_scalars(g: &mut Graph, terms: &[NodeId]) -> NodeId {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    acc
}

/// KL node for one latent's (mean, log_var) node pair: 0.5·Σ(exp(lv)+μ²−1−lv).
pub fn kl_node(g: &mut Graph, mean: NodeId, log_var: NodeId) -> NodeId {
    let e = g.exp(log_var);
    let m2 = g.mul(mean, mean);
    let s = g.add(e, m2);
    let neg_lv = g.affine_scalar(log_var, -1.0, -1.0);
    let inner = g.add(s, neg_lv);
    let total = g.sum(inner);
    g.affine_scalar(total, 0.5, 0.0)
}

/// Σ‖pred − gt‖² over all steps of one sample's predicted box nodes. The
/// caller divides by N·n and takes the square root outside the graph (the
/// chain coefficient 1/(2·RMSE·N·n) re-enters through the backward seed).
pub fn sq_err_sum_node(g: &mut Graph, pred: &[NodeId], gt: &[BoundingBox]) -> NodeId {
    assert_eq!(pred.len(), gt.len(), "sq_err_sum rows");
    let mut terms = Vec::with_capacity(pred.len());
    for (&p, t) in pred.iter().zip(gt) {
        let tgt = g.input1(ndarray::Array1::from_vec(t.as_array().to_vec()));
        let neg = g.affine_scalar(tgt, -1.0, 0.0);
        let d = g.add(p, neg);
        let d2 = g.mul(d, d);
        terms.push(g.sum(d2));
    }
    sum_scalars(g, &terms)
}

/// Σ BCE terms (unaveraged) over one sample's per-step probability nodes:
/// −Σ [ l·ln(clamp(p)) + (1−l)·ln(clamp(1−p)) ].
pub fn bce_sum_node(g: &mut Graph, probs: &[NodeId], labels: &[u8], epsilon: f64) -> NodeId {
    assert_eq!(probs.len(), labels.len(), "bce_sum rows");
    let mut terms = Vec::with_capacity(probs.len());
    for (&p, &l) in probs.iter().zip(labels) {
        let arg = if l == 1 {
            p
        } else {
            // 1 − p
            g.affine_scalar(p, -1.0, 1.0)
        };
        let clamped = g.clamp(arg, epsilon, 1.0 - epsilon);
        let ln = g.ln(clamped);
        let neg = g.affine_scalar(ln, -1.0, 0.0);
        terms.push(g.sum(neg));
    }
    sum_scalars(g, &terms)
}

/// Per-step Gaussian NLL node for the reconstruction regularizer, averaged
/// over all elements: 0.5·mean(lv + (x−μ)²·exp(−lv) + ln 2π).
pub fn gaussian_nll_node(
    g: &mut Graph,
    x: &[NodeId],
    stats: &[(NodeId, NodeId)],
) -> NodeId {
    assert_eq!(x.len(), stats.len(), "nll steps");
    const LN_2PI: f64 = 1.8378770664093453;
    let mut terms = Vec::with_capacity(x.len());
    let mut count = 0usize;
    for (&xi, &(mean, log_var)) in x.iter().zip(stats) {
        let neg_mean = g.affine_scalar(mean, -1.0, 0.0);
        let d = g.add(xi, neg_mean);
        let d2 = g.mul(d, d);
        let neg_lv = g.affine_scalar(log_var, -1.0, 0.0);
        let inv_var = g.exp(neg_lv);
        let quad = g.mul(d2, inv_var);
        let lv_term = g.affine_scalar(log_var, 1.0, LN_2PI);
        let inner = g.add(quad, lv_term);
        count += g.value(inner).len();
        terms.push(g.sum(inner));
    }
    let total = sum_scalars(g, &terms);
    g.affine_scalar(total, 0.5 / count as f64, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxes(rows: &[&[[f64; 4]]]) -> Vec<Vec<BoundingBox>> {
        rows.iter()
            .map(|r| r.iter().map(|b| BoundingBox::from_array(*b)).collect())
            .collect()
    }

    #[test]
    fn kl_zero_at_prior() {
        let g = LatentGaussian::new(vec![0.0; 64], vec![0.0; 64]).unwrap();
        assert_eq!(kl_diagonal_gaussian(&g).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_mean() {
        let g = LatentGaussian::new(vec![1.0], vec![0.0]).unwrap();
        assert_relative_eq!(kl_diagonal_gaussian(&g).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kl_log_var_ln4() {
        let g = LatentGaussian::new(vec![0.0], vec![(4.0f64).ln()]).unwrap();
        let expect = 0.5 * (4.0 - 1.0 - (4.0f64).ln());
        assert_relative_eq!(kl_diagonal_gaussian(&g).unwrap(), expect, epsilon = 1e-12);
        assert_relative_eq!(kl_diagonal_gaussian(&g).unwrap(), 0.806853, epsilon = 1e-6);
    }

    #[test]
    fn kl_rejects_non_finite() {
        let g = LatentGaussian::new(vec![f64::NAN], vec![0.0]).unwrap();
        assert!(matches!(
            kl_diagonal_gaussian(&g),
            Err(PtiError::Numeric(_))
        ));
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_only_at_prior(
            mean in proptest::collection::vec(-3.0f64..3.0, 1..8),
            log_var in proptest::collection::vec(-3.0f64..3.0, 1..8),
        ) {
            let d = mean.len().min(log_var.len());
            let g = LatentGaussian::new(mean[..d].to_vec(), log_var[..d].to_vec()).unwrap();
            let kl = kl_diagonal_gaussian(&g).unwrap();
            prop_assert!(kl >= 0.0);
            let at_prior = g.mean.iter().all(|&m| m == 0.0) && g.log_var.iter().all(|&v| v == 0.0);
            if !at_prior {
                // exp(v) − 1 − v > 0 for v ≠ 0 and μ² > 0 for μ ≠ 0, so any
                // deviation from the prior forces a strictly positive KL.
                prop_assert!(kl > 0.0);
            }
        }
    }

    #[test]
    fn rmse_zero_when_equal() {
        let p = boxes(&[&[[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]]]);
        assert_eq!(rmse_trajectory(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn rmse_single_diff_is_norm() {
        let p = boxes(&[&[[3.0, 4.0, 0.0, 0.0]]]);
        let t = boxes(&[&[[0.0, 0.0, 0.0, 0.0]]]);
        assert_eq!(rmse_trajectory(&p, &t).unwrap(), 5.0);
    }

    #[test]
    fn rmse_two_steps() {
        let p = boxes(&[&[[3.0, 4.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]]);
        let t = boxes(&[&[[0.0; 4], [0.0; 4]]]);
        assert_relative_eq!(
            rmse_trajectory(&p, &t).unwrap(),
            (25.0f64 / 2.0).sqrt(),
            epsilon = 1e-12
        );
        assert_relative_eq!(rmse_trajectory(&p, &t).unwrap(), 3.535534, epsilon = 1e-6);
    }

    #[test]
    fn rmse_rejects_shape_mismatch() {
        let p = boxes(&[&[[0.0; 4]]]);
        let t = boxes(&[&[[0.0; 4], [0.0; 4]]]);
        assert!(rmse_trajectory(&p, &t).is_err());
    }

    proptest! {
        #[test]
        fn rmse_reconstruction_identity(
            diffs in proptest::collection::vec(
                proptest::collection::vec(-50.0f64..50.0, 4), 1..12),
        ) {
            // rmse² · N·n = Σ‖diff‖² exactly up to fp re-rounding of sqrt².
            let n = diffs.len();
            let pred: Vec<Vec<BoundingBox>> = vec![diffs
                .iter()
                .map(|d| BoundingBox::from_array([d[0], d[1], d[2], d[3]]))
                .collect()];
            let gt: Vec<Vec<BoundingBox>> = vec![vec![BoundingBox::from_array([0.0; 4]); n]];
            let rmse = rmse_trajectory(&pred, &gt).unwrap();
            let direct: f64 = diffs.iter().map(|d| d.iter().map(|v| v * v).sum::<f64>()).sum();
            prop_assert!((rmse * rmse * n as f64 - direct).abs() <= 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn trajectory_loss_beta_zero_is_rmse() {
        let p = boxes(&[&[[3.0, 4.0, 0.0, 0.0]]]);
        let t = boxes(&[&[[0.0; 4]]]);
        let latents = [LatentGaussian::new(vec![1.0], vec![0.5]).unwrap()];
        let cfg = LossConfig {
            beta: 0.0,
            ..LossConfig::default()
        };
        assert_eq!(
            trajectory_loss(&p, &t, &latents, &cfg, None).unwrap(),
            rmse_trajectory(&p, &t).unwrap()
        );
    }

    #[test]
    fn trajectory_loss_zero_at_perfect_prediction_and_prior() {
        let p = boxes(&[&[[1.0, 2.0, 3.0, 4.0]]]);
        let latents = [LatentGaussian::new(vec![0.0; 4], vec![0.0; 4]).unwrap()];
        assert_eq!(
            trajectory_loss(&p, &p, &latents, &LossConfig::default(), None).unwrap(),
            0.0
        );
    }

    #[test]
    fn trajectory_loss_additivity() {
        // KL sum 0.5 (unit mean, one dim), RMSE 1.0, β=1 → 1.5.
        let p = boxes(&[&[[1.0, 0.0, 0.0, 0.0]]]);
        let t = boxes(&[&[[0.0; 4]]]);
        let latents = [LatentGaussian::new(vec![1.0], vec![0.0]).unwrap()];
        assert_relative_eq!(
            trajectory_loss(&p, &t, &latents, &LossConfig::default(), None).unwrap(),
            1.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn trajectory_loss_requires_recon_when_enabled() {
        let p = boxes(&[&[[0.0; 4]]]);
        let cfg = LossConfig {
            reconstruction_reg: true,
            ..LossConfig::default()
        };
        assert!(trajectory_loss(&p, &p, &[], &cfg, None).is_err());
        let loss = trajectory_loss(&p, &p, &[], &cfg, Some(2.25)).unwrap();
        assert_eq!(loss, 2.25);
    }

    #[test]
    fn bce_half_everywhere_is_ln2() {
        let probs = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let labels = vec![vec![1, 0], vec![0, 1]];
        assert_relative_eq!(
            intention_loss(&probs, &labels, &LossConfig::default()).unwrap(),
            (2.0f64).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn bce_confident_correct_is_near_zero() {
        let eps = LossConfig::default().epsilon;
        let probs = vec![vec![1.0 - eps]];
        let labels = vec![vec![1]];
        let loss = intention_loss(&probs, &labels, &LossConfig::default()).unwrap();
        assert!(loss >= 0.0 && loss <= 2.0 * eps, "loss {loss}");
    }

    #[test]
    fn bce_example_two_steps() {
        let probs = vec![vec![0.9, 0.2]];
        let labels = vec![vec![1, 0]];
        let expect = -((0.9f64).ln() + (0.8f64).ln()) / 2.0;
        let got = intention_loss(&probs, &labels, &LossConfig::default()).unwrap();
        assert_relative_eq!(got, expect, epsilon = 1e-12);
        assert_relative_eq!(got, 0.164252, epsilon = 1e-6);
    }

    #[test]
    fn bce_minimized_at_labels() {
        // Grid-search the single-probability BCE at resolution 1e-3: the
        // minimizer must sit at the label (up to the clamp).
        for label in [0u8, 1u8] {
            let mut best = (f64::INFINITY, -1.0);
            let mut p = 0.0f64;
            while p <= 1.0 + 1e-12 {
                let loss = intention_loss(
                    &[vec![p.min(1.0)]],
                    &[vec![label]],
                    &LossConfig::default(),
                )
                .unwrap();
                if loss < best.0 {
                    best = (loss, p);
                }
                p += 1e-3;
            }
            assert!(
                (best.1 - label as f64).abs() < 1e-9,
                "label {label} minimizer {}",
                best.1
            );
        }
    }

    #[test]
    fn total_loss_weighted_sum() {
        let cfg = LossConfig::default();
        assert_eq!(total_loss(2.0, 0.5, &cfg), 2.5);
        let only_traj = LossConfig {
            lambda_int: 0.0,
            ..cfg.clone()
        };
        assert_eq!(total_loss(2.0, 0.5, &only_traj), 2.0);
        let only_int = LossConfig {
            lambda_traj: 0.0,
            ..cfg
        };
        assert_eq!(total_loss(2.0, 0.5, &only_int), 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig {
            beta: -0.1,
            ..LossConfig::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            epsilon: 0.0,
            ..LossConfig::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            epsilon: 0.5,
            ..LossConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn gaussian_nll_matches_closed_form() {
        // Standard normal at x=0: 0.5·ln 2π per element.
        let x = vec![vec![0.0, 0.0]];
        let stats = vec![(vec![0.0, 0.0], vec![0.0, 0.0])];
        let got = gaussian_nll(&x, &stats).unwrap();
        assert_relative_eq!(got, 0.5 * 1.8378770664093453, epsilon = 1e-12);
    }

    // --- graph builders agree with the plain functions ---

    #[test]
    fn kl_node_matches_plain() {
        let mean = vec![0.3, -1.4, 0.9];
        let lv = vec![0.2, -0.8, 1.1];
        let plain =
            kl_diagonal_gaussian(&LatentGaussian::new(mean.clone(), lv.clone()).unwrap()).unwrap();
        let mut g = Graph::new();
        let m = g.input1(Array1::from_vec(mean));
        let l = g.input1(Array1::from_vec(lv));
        let node = kl_node(&mut g, m, l);
        assert_relative_eq!(g.scalar(node), plain, epsilon = 1e-12);
    }

    #[test]
    fn sq_err_sum_node_matches_rmse() {
        let pred_rows = [[31.0, 14.0, 5.0, 9.0], [30.0, 15.0, 5.5, 9.5]];
        let gt = vec![
            BoundingBox::from_array([30.0, 13.0, 5.0, 9.0]),
            BoundingBox::from_array([31.0, 16.0, 5.0, 9.0]),
        ];
        let mut g = Graph::new();
        let pred_nodes: Vec<NodeId> = pred_rows
            .iter()
            .map(|b| g.input1(Array1::from_vec(b.to_vec())))
            .collect();
        let node = sq_err_sum_node(&mut g, &pred_nodes, &gt);
        let sq_sum = g.scalar(node);
        let pred_boxes = vec![pred_rows
            .iter()
            .map(|b| BoundingBox::from_array(*b))
            .collect::<Vec<_>>()];
        let rmse = rmse_trajectory(&pred_boxes, &vec![gt]).unwrap();
        assert_relative_eq!((sq_sum / 2.0).sqrt(), rmse, epsilon = 1e-12);
    }

    #[test]
    fn bce_sum_node_matches_plain() {
        let probs = [0.9, 0.2, 0.5, 0.01];
        let labels = [1u8, 0, 1, 0];
        let cfg = LossConfig::default();
        let mut g = Graph::new();
        let prob_nodes: Vec<NodeId> = probs
            .iter()
            .map(|&p| g.input1(Array1::from_vec(vec![p])))
            .collect();
        let node = bce_sum_node(&mut g, &prob_nodes, &labels, cfg.epsilon);
        let plain = intention_loss(&[probs.to_vec()], &[labels.to_vec()], &cfg).unwrap();
        assert_relative_eq!(g.scalar(node) / probs.len() as f64, plain, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_nll_node_matches_plain() {
        let x = vec![vec![0.4, -0.3], vec![1.0, 0.2]];
        let stats = vec![
            (vec![0.5, 0.0], vec![0.1, -0.2]),
            (vec![0.9, 0.1], vec![0.0, 0.3]),
        ];
        let plain = gaussian_nll(&x, &stats).unwrap();
        let mut g = Graph::new();
        let xs: Vec<NodeId> = x
            .iter()
            .map(|v| g.input1(Array1::from_vec(v.clone())))
            .collect();
        let st: Vec<(NodeId, NodeId)> = stats
            .iter()
            .map(|(m, lv)| {
                (
                    g.input1(Array1::from_vec(m.clone())),
                    g.input1(Array1::from_vec(lv.clone())),
                )
            })
            .collect();
        let node = gaussian_nll_node(&mut g, &xs, &st);
        assert_relative_eq!(g.scalar(node), plain, epsilon = 1e-12);
    }

    // --- gradients of the loss nodes match finite differences ---

    #[test]
    fn kl_node_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let step = 1e-6;
        for trial in 0..5 {
            let mean: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lv: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let as_param = |g: &mut Graph, v: &[f64]| {
                let arr =
                    ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[v.len()]), v.to_vec())
                        .unwrap();
                g.param(std::rc::Rc::new(arr))
            };
            let build = |mean: &[f64], lv: &[f64]| {
                let mut g = Graph::new();
                let m = as_param(&mut g, mean);
                let l = as_param(&mut g, lv);
                let node = kl_node(&mut g, m, l);
                (g, m, l, node)
            };
            let (g, m_id, l_id, node) = build(&mean, &lv);
            let grads = g.backward(node);
            let gm = grads.get_or_zeros(m_id, &[3]);
            let gl = grads.get_or_zeros(l_id, &[3]);
            for i in 0..3 {
                let mut mp = mean.clone();
                mp[i] += step;
                let mut mm = mean.clone();
                mm[i] -= step;
                let fp = {
                    let (g, _, _, n) = build(&mp, &lv);
                    g.scalar(n)
                };
                let fm = {
                    let (g, _, _, n) = build(&mm, &lv);
                    g.scalar(n)
                };
                let fd = (fp - fm) / (2.0 * step);
                let an = gm.as_slice().unwrap()[i];
                assert_relative_eq!(an, fd, epsilon = 1e-5, max_relative = 1e-4);

                let mut lp = lv.clone();
                lp[i] += step;
                let mut lm = lv.clone();
                lm[i] -= step;
                let fp = {
                    let (g, _, _, n) = build(&mean, &lp);
                    g.scalar(n)
                };
                let fm = {
                    let (g, _, _, n) = build(&mean, &lm);
                    g.scalar(n)
                };
                let fd = (fp - fm) / (2.0 * step);
                let an = gl.as_slice().unwrap()[i];
                assert_relative_eq!(an, fd, epsilon = 1e-5, max_relative = 1e-4);
            }
            let _ = trial;
        }
    }

    #[test]
    fn sq_err_node_gradient_matches_finite_differences() {
        let gt = vec![
            BoundingBox::from_array([30.0, 13.0, 5.0, 9.0]),
            BoundingBox::from_array([31.0, 16.0, 5.0, 9.0]),
        ];
        let pred = [[31.0, 14.0, 5.0, 9.25], [30.0, 15.0, 5.5, 9.5]];
        let build = |pred: &[[f64; 4]; 2]| {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = pred
                .iter()
                .map(|b| {
                    let arr = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[4]), b.to_vec())
                        .unwrap();
                    g.param(std::rc::Rc::new(arr))
                })
                .collect();
            let node = sq_err_sum_node(&mut g, &ids, &gt);
            (g, ids, node)
        };
        let (g, ids, node) = build(&pred);
        let grads = g.backward(node);
        let step = 1e-6;
        for (r, &id) in ids.iter().enumerate() {
            let an = grads.get_or_zeros(id, &[4]);
            for i in 0..4 {
                let mut pp = pred;
                pp[r][i] += step;
                let mut pm = pred;
                pm[r][i] -= step;
                let fp = {
                    let (g, _, n) = build(&pp);
                    g.scalar(n)
                };
                let fm = {
                    let (g, _, n) = build(&pm);
                    g.scalar(n)
                };
                let fd = (fp - fm) / (2.0 * step);
                assert_relative_eq!(
                    an.as_slice().unwrap()[i],
                    fd,
                    epsilon = 1e-4,
                    max_relative = 1e-4
                );
            }
        }
    }

    #[test]
    fn bce_node_gradient_matches_finite_differences() {
        let labels = [1u8, 0, 1];
        let probs = [0.8, 0.3, 0.45];
        let eps = LossConfig::default().epsilon;
        let build = |probs: &[f64; 3]| {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = probs
                .iter()
                .map(|&p| {
                    let arr =
                        ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[1]), vec![p]).unwrap();
                    g.param(std::rc::Rc::new(arr))
                })
                .collect();
            let node = bce_sum_node(&mut g, &ids, &labels, eps);
            (g, ids, node)
        };
        let (g, ids, node) = build(&probs);
        let grads = g.backward(node);
        let step = 1e-7;
        for (i, &id) in ids.iter().enumerate() {
            let an = grads.get_or_zeros(id, &[1]).as_slice().unwrap()[0];
            let mut pp = probs;
            pp[i] += step;
            let mut pm = probs;
            pm[i] -= step;
            let fp = {
                let (g, _, n) = build(&pp);
                g.scalar(n)
            };
            let fm = {
                let (g, _, n) = build(&pm);
                g.scalar(n)
            };
            let fd = (fp - fm) / (2.0 * step);
            assert_relative_eq!(an, fd, epsilon = 1e-4, max_relative = 1e-4);
        }
    }
}
