//! Evaluation: predictor abstraction, baselines, and metric computation in
//! source-pixel space.

use crate::data::denormalize_box;
use crate::domain::{BoundingBox, PedestrianSample, PredictionOutput};
use crate::error::{PtiError, Result};
use crate::metrics::{
    ade, classification_report, fde, horizon_label, horizon_steps, DistanceMode, IntentPooling,
    MetricReport,
};
use crate::model::decoders::TrajectoryHead;
use crate::model::{EncoderConfig, ParamStore};
use crate::train::{predict_sample, Dataset, DATASET_FPS};
use std::collections::BTreeMap;

/// Anything that can produce an n-step future for a sample.
pub trait Predictor {
    fn predict(&mut self, sample: &PedestrianSample, n: usize) -> Result<PredictionOutput>;
    /// Whether `predict` reads images/flows; lets callers skip decoding.
    fn needs_context(&self) -> bool {
        false
    }
}

/// Runs the trained model deterministically (latent means, no sampling).
pub struct ModelPredictor<'a> {
    pub store: &'a ParamStore,
    pub encoder: &'a EncoderConfig,
    pub head: TrajectoryHead,
    pub couple: bool,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&mut self, sample: &PedestrianSample, n: usize) -> Result<PredictionOutput> {
        predict_sample(self.store, sample, self.encoder, n, self.head, self.couple)
    }

    fn needs_context(&self) -> bool {
        true
    }
}

/// Extrapolates the last observed velocity; emits 0.5 crossing probability.
pub struct ConstantVelocityPredictor;

impl Predictor for ConstantVelocityPredictor {
    fn predict(&mut self, sample: &PedestrianSample, n: usize) -> Result<PredictionOutput> {
        let last = *sample
            .past
            .positions
            .last()
            .ok_or_else(|| PtiError::InvalidSequence("empty past trajectory".into()))?;
        let vel = sample
            .past
            .velocities
            .last()
            .copied()
            .ok_or_else(|| PtiError::InvalidSequence("empty velocity sequence".into()))?;
        let [dx, dy, dw, dh] = vel.as_array();
        let boxes = (1..=n)
            .map(|k| {
                let k = k as f64;
                BoundingBox::new(
                    last.x + k * dx,
                    last.y + k * dy,
                    last.w + k * dw,
                    last.h + k * dh,
                )
            })
            .collect();
        PredictionOutput::new(boxes, vec![0.5; n])
    }
}

/// Returns the ground truth; for testing metric plumbing end to end.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&mut self, sample: &PedestrianSample, n: usize) -> Result<PredictionOutput> {
        if sample.future_boxes.len() < n {
            return Err(PtiError::InvalidSequence(format!(
                "oracle asked for {n} steps but sample has {}",
                sample.future_boxes.len()
            )));
        }
        let boxes = sample.future_boxes[..n].to_vec();
        let probs = sample.future_intentions[..n]
            .iter()
            .map(|&l| l as f64)
            .collect();
        PredictionOutput::new(boxes, probs)
    }
}

/// What to evaluate and how.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Horizons in seconds; each must fit within the trained horizon.
    pub horizons: Vec<f64>,
    /// Allow horizons shorter than the trained one (scored on the rollout
    /// prefix).
    pub allow_prefix: bool,
    pub distance: DistanceMode,
    pub pooling: IntentPooling,
    pub threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            horizons: vec![0.5],
            allow_prefix: false,
            distance: DistanceMode::FullBox,
            pooling: IntentPooling::AllSteps,
            threshold: 0.5,
        }
    }
}

/// Run a predictor over a dataset and compute displacement metrics per
/// horizon plus classification metrics at the longest horizon. Distances are
/// measured in source-image pixels: predictions and ground truth are both
/// mapped back through the dataset's normalization before scoring.
pub fn evaluate(
    predictor: &mut dyn Predictor,
    data: &mut Dataset,
    n_trained: usize,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(PtiError::Config("evaluation dataset is empty".into()));
    }
    if opts.horizons.is_empty() {
        return Err(PtiError::Config("no evaluation horizons given".into()));
    }
    let mut steps = Vec::with_capacity(opts.horizons.len());
    for &h in &opts.horizons {
        let n_h = horizon_steps(h, DATASET_FPS);
        if n_h == 0 {
            return Err(PtiError::Config(format!("horizon {h}s yields zero steps")));
        }
        if n_h > n_trained {
            return Err(PtiError::Config(format!(
                "horizon {h}s needs {n_h} steps but the model was trained for {n_trained}"
            )));
        }
        if n_h < n_trained && !opts.allow_prefix {
            return Err(PtiError::Config(format!(
                "horizon {h}s is shorter than the trained horizon ({n_h} < {n_trained} steps); \
                 pass allow_prefix to score the rollout prefix"
            )));
        }
        steps.push((h, n_h));
    }
    let n_max = steps.iter().map(|&(_, n)| n).max().expect("nonempty");

    // Collect denormalized predictions and ground truth once at n_max, then
    // slice prefixes per horizon.
    let mut preds: Vec<Vec<BoundingBox>> = Vec::with_capacity(data.len());
    let mut gts: Vec<Vec<BoundingBox>> = Vec::with_capacity(data.len());
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(data.len());
    let mut labels: Vec<Vec<u8>> = Vec::with_capacity(data.len());
    for idx in 0..data.len() {
        let sample = if predictor.needs_context() {
            data.materialize(idx)?
        } else {
            data.samples[idx].clone()
        };
        let out = predictor.predict(&sample, n_max)?;
        let dims = data.source_dims[idx];
        let denorm = |b: &BoundingBox| denormalize_box(b, dims, data.normalize);
        preds.push(out.boxes.iter().map(denorm).collect::<Result<_>>()?);
        gts.push(
            sample.future_boxes[..n_max]
                .iter()
                .map(denorm)
                .collect::<Result<_>>()?,
        );
        probs.push(out.intention_probs);
        labels.push(sample.future_intentions[..n_max].to_vec());
    }

    let mut ade_pixels = BTreeMap::new();
    let mut fde_pixels = BTreeMap::new();
    for &(h, n_h) in &steps {
        let p: Vec<Vec<BoundingBox>> = preds.iter().map(|v| v[..n_h].to_vec()).collect();
        let g: Vec<Vec<BoundingBox>> = gts.iter().map(|v| v[..n_h].to_vec()).collect();
        let label = horizon_label(h);
        ade_pixels.insert(label.clone(), ade(&p, &g, opts.distance)?);
        fde_pixels.insert(label, fde(&p, &g, opts.distance)?);
    }
    let (f1, accuracy) = classification_report(&probs, &labels, opts.threshold, opts.pooling)?;

    let report = MetricReport {
        ade_pixels,
        fde_pixels,
        f1,
        accuracy,
        sample_count: data.len(),
    };
    report.validate()?;
    Ok(report)
}
