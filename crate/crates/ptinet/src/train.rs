//! Training: configuration, polynomial learning-rate schedule, Adam with
//! decoupled-into-gradient L2 weight decay, the deterministic epoch loop,
//! and binary checkpoints.

use crate::data::{
    attach_global_context, parse_track_file, AttributeVocabulary, FrameCache, GlobalToggles,
    NormalizeMode, PedestrianTrack, ATTR_FIELDS, BEHAVIOR_FIELDS, SCENE_FIELDS,
};
use crate::domain::{BoundingBox, PedestrianSample};
use crate::error::{PtiError, Result};
use crate::loss::{bce_sum_node, gaussian_nll_node, kl_node, sq_err_sum_node, LossConfig};
use crate::metrics::{horizon_steps, DistanceMode, IntentPooling};
use crate::model::decoders::{decode_intention, decode_trajectory, TrajectoryHead};
use crate::model::encoders::{encode_sample, lstm_vae_reconstruct, EncodeOutput, SampleNoise};
use crate::model::{ensure_conv_fc, init_params, EncoderConfig, ModelCtx, ModelDims, ParamStore};
use crate::{autodiff::Graph, autodiff::NodeId};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;
use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Sampling rate the window horizons are defined against.
pub const DATASET_FPS: f64 = 30.0;

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Observed past frames per window.
    pub m: usize,
    /// Prediction horizon in seconds; n = round(horizon * 30).
    pub horizon_seconds: f64,
    pub lr_init: f64,
    pub lr_power: f64,
    pub max_epoch: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Anchor spacing when windowing tracks.
    pub stride: usize,
    pub normalize: NormalizeMode,
    /// Image/flow resolution fed to the model, as (H, W).
    pub target_dims: (usize, usize),
    /// Global-feature ablations.
    pub use_images: bool,
    pub use_flow: bool,
    pub trajectory_head: TrajectoryHead,
    /// Feed predicted boxes to the intention decoder after step 0.
    pub couple_intention: bool,
    pub train_data: PathBuf,
    /// Falls back to the training set when absent.
    pub val_data: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    pub distance_mode: DistanceMode,
    pub intent_pooling: IntentPooling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 16,
            horizon_seconds: 0.5,
            lr_init: 1e-4,
            lr_power: 0.9,
            max_epoch: 200,
            batch_size: 4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-9,
            weight_decay: 1e-4,
            seed: 0,
            stride: 1,
            normalize: NormalizeMode::ScaleToUnit,
            target_dims: (240, 420),
            use_images: true,
            use_flow: true,
            trajectory_head: TrajectoryHead::Offset,
            couple_intention: false,
            train_data: PathBuf::new(),
            val_data: None,
            out_dir: PathBuf::new(),
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
            distance_mode: DistanceMode::FullBox,
            intent_pooling: IntentPooling::AllSteps,
        }
    }
}

/// Supported prediction horizons in seconds.
pub const HORIZONS: [f64; 3] = [0.5, 1.0, 1.5];

impl TrainConfig {
    /// Future window length implied by the horizon.
    pub fn n(&self) -> usize {
        horizon_steps(self.horizon_seconds, DATASET_FPS)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(PtiError::Config(format!("m must be >= 2, got {}", self.m)));
        }
        if !HORIZONS
            .iter()
            .any(|h| (h - self.horizon_seconds).abs() < 1e-9)
        {
            return Err(PtiError::Config(format!(
                "horizon_seconds must be one of {HORIZONS:?}, got {}",
                self.horizon_seconds
            )));
        }
        for (name, v) in [
            ("lr_init", self.lr_init),
            ("lr_power", self.lr_power),
            ("adam_epsilon", self.adam_epsilon),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(PtiError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(PtiError::Config("weight_decay must be >= 0".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(PtiError::Config(format!("{name} must be in [0,1), got {b}")));
            }
        }
        if self.max_epoch == 0 || self.batch_size == 0 || self.stride == 0 {
            return Err(PtiError::Config(
                "max_epoch, batch_size, and stride must be >= 1".into(),
            ));
        }
        if self.target_dims.0 == 0 || self.target_dims.1 == 0 {
            return Err(PtiError::Config("target_dims must be positive".into()));
        }
        if self.n() < 1 {
            return Err(PtiError::Config("horizon yields zero future steps".into()));
        }
        self.loss.validate()?;
        self.encoder.validate()?;
        Ok(())
    }
}

/// Polynomial decay: lr_init * (1 - epoch/max_epoch)^power.
pub fn poly_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.max_epoch {
        return Err(PtiError::Config(format!(
            "epoch {epoch} outside schedule of {} epochs",
            cfg.max_epoch
        )));
    }
    let frac = 1.0 - epoch as f64 / cfg.max_epoch as f64;
    Ok(cfg.lr_init * frac.powf(cfg.lr_power))
}

// --- dataset ------------------------------------------------------------------

/// A windowed, normalized dataset with lazy image/flow attachment.
pub struct Dataset {
    /// Window skeletons: boxes normalized, `global_ctx` left empty.
    pub samples: Vec<PedestrianSample>,
    /// Source resolution per sample, for de-normalization.
    pub source_dims: Vec<(usize, usize)>,
    /// Track index per sample.
    pub track_of: Vec<usize>,
    pub tracks: Vec<PedestrianTrack>,
    pub vocab: AttributeVocabulary,
    pub normalize: NormalizeMode,
    m: usize,
    target_dims: (usize, usize),
    toggles: GlobalToggles,
    cache: FrameCache,
}

impl Dataset {
    /// Load `tracks.jsonl` (+ `vocab.json`) from a directory and window every
    /// track. Pass `vocab` to encode with another dataset's vocabulary (a
    /// validation set must reuse the training vocabulary).
    #[allow(clippy::too_many_arguments)]
    pub fn load(
        dir: &Path,
        vocab: Option<&AttributeVocabulary>,
        m: usize,
        n: usize,
        stride: usize,
        target_dims: (usize, usize),
        toggles: GlobalToggles,
        normalize: NormalizeMode,
    ) -> Result<Self> {
        let tracks_path = dir.join("tracks.jsonl");
        let bytes = std::fs::read(&tracks_path).map_err(|e| PtiError::io(&tracks_path, e))?;
        let tracks = parse_track_file(&bytes)?;
        let vocab = match vocab {
            Some(v) => v.clone(),
            None => {
                let vocab_path = dir.join("vocab.json");
                match std::fs::read(&vocab_path) {
                    Ok(b) => AttributeVocabulary::from_json(&b)?,
                    Err(_) => AttributeVocabulary::from_tracks(&tracks),
                }
            }
        };
        let mut samples = Vec::new();
        let mut source_dims = Vec::new();
        let mut track_of = Vec::new();
        for (ti, track) in tracks.iter().enumerate() {
            for s in crate::data::window_track(track, &vocab, m, n, stride)? {
                let normed = crate::data::normalize_sample(&s, track.image_dims, normalize)?;
                samples.push(normed);
                source_dims.push(track.image_dims);
                track_of.push(ti);
            }
        }
        Ok(Dataset {
            samples,
            source_dims,
            track_of,
            tracks,
            vocab,
            normalize,
            m,
            target_dims,
            toggles,
            cache: FrameCache::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Input widths the vocabulary implies.
    pub fn model_dims(&self) -> ModelDims {
        let scene_w = self.vocab.group_width(&SCENE_FIELDS);
        ModelDims {
            attrs_in: self.vocab.group_width(&ATTR_FIELDS),
            behavior_in: self.vocab.group_width(&BEHAVIOR_FIELDS),
            scene_in: (scene_w > 0).then_some(scene_w),
        }
    }

    /// Clone sample `idx` with its images and flows attached (cached decode).
    pub fn materialize(&mut self, idx: usize) -> Result<PedestrianSample> {
        let mut s = self.samples[idx].clone();
        let track = &self.tracks[self.track_of[idx]];
        attach_global_context(
            &mut s,
            track,
            self.m,
            self.target_dims,
            self.toggles,
            &mut self.cache,
        )?;
        Ok(s)
    }
}

// --- forward pass -------------------------------------------------------------

/// Graph nodes of one sample's forward pass.
pub struct ForwardNodes {
    pub boxes: Vec<NodeId>,
    pub probs: Vec<NodeId>,
    pub encode: EncodeOutput,
}

/// Build the full forward graph for one sample: encode, then both decoders.
pub fn forward_sample(
    ctx: &mut ModelCtx,
    sample: &PedestrianSample,
    enc: &EncoderConfig,
    n: usize,
    head: TrajectoryHead,
    couple: bool,
    noise: Option<&SampleNoise>,
) -> Result<ForwardNodes> {
    let encode = encode_sample(ctx, sample, enc, noise)?;
    let last_box = *sample
        .past
        .positions
        .last()
        .ok_or_else(|| PtiError::InvalidSequence("empty past trajectory".into()))?;
    let boxes = decode_trajectory(ctx, encode.fused, &last_box, n, head)?;
    let probs = decode_intention(
        ctx,
        encode.fused,
        &last_box,
        n,
        couple.then_some(boxes.as_slice()),
    )?;
    Ok(ForwardNodes {
        boxes,
        probs,
        encode,
    })
}

/// Deterministic-evaluation forward pass returning plain values.
pub fn predict_sample(
    store: &ParamStore,
    sample: &PedestrianSample,
    enc: &EncoderConfig,
    n: usize,
    head: TrajectoryHead,
    couple: bool,
) -> Result<crate::domain::PredictionOutput> {
    let mut g = Graph::new();
    let mut ctx = ModelCtx::new(&mut g, store);
    let fwd = forward_sample(&mut ctx, sample, enc, n, head, couple, None)?;
    let boxes = fwd
        .boxes
        .iter()
        .map(|&id| {
            let v = g.value(id);
            BoundingBox::new(v[[0]], v[[1]], v[[2]], v[[3]])
        })
        .collect();
    let probs = fwd.probs.iter().map(|&id| g.scalar(id)).collect();
    crate::domain::PredictionOutput::new(boxes, probs)
}

// --- checkpoint ---------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"PTCK";
const CKPT_VERSION: u32 = 1;

/// A saved model: parameters (float32), config snapshot, the attribute
/// vocabulary the model was trained with, epoch, and RNG state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub params: ParamStore,
    pub config: TrainConfig,
    pub model_dims: ModelDims,
    pub vocab: AttributeVocabulary,
    pub epoch: usize,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

#[derive(Serialize, Deserialize)]
struct CkptTrailer {
    config: TrainConfig,
    model_dims: ModelDims,
    vocab: AttributeVocabulary,
    epoch: usize,
    rng_seed: u64,
    /// u128 serialized as a decimal string for JSON safety.
    rng_word_pos: String,
}

impl Checkpoint {
    /// Write: magic, version, entry count, then per entry name/shape/f32
    /// data (all length-prefixed, little-endian), then a JSON trailer.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| PtiError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let werr = |e: std::io::Error| PtiError::io(path, e);
        out.write_all(CKPT_MAGIC).map_err(werr)?;
        out.write_u32::<LittleEndian>(self.version).map_err(werr)?;
        out.write_u32::<LittleEndian>(self.params.len() as u32)
            .map_err(werr)?;
        for (name, value) in self.params.iter() {
            out.write_u32::<LittleEndian>(name.len() as u32).map_err(werr)?;
            out.write_all(name.as_bytes()).map_err(werr)?;
            out.write_u32::<LittleEndian>(value.ndim() as u32)
                .map_err(werr)?;
            for &d in value.shape() {
                out.write_u32::<LittleEndian>(d as u32).map_err(werr)?;
            }
            for &v in value.iter() {
                out.write_f32::<LittleEndian>(v as f32).map_err(werr)?;
            }
        }
        let trailer = CkptTrailer {
            config: self.config.clone(),
            model_dims: self.model_dims.clone(),
            vocab: self.vocab.clone(),
            epoch: self.epoch,
            rng_seed: self.rng_seed,
            rng_word_pos: self.rng_word_pos.to_string(),
        };
        let json = serde_json::to_vec(&trailer).expect("trailer serialization");
        out.write_u32::<LittleEndian>(json.len() as u32).map_err(werr)?;
        out.write_all(&json).map_err(werr)?;
        out.flush().map_err(werr)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path).map_err(|e| PtiError::io(path, e))?;
        let mut input = BufReader::new(file);
        let rerr = |e: std::io::Error| PtiError::io(path, e);
        let badfmt = |msg: &str| PtiError::Format {
            path: path.display().to_string(),
            msg: msg.into(),
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(rerr)?;
        if &magic != CKPT_MAGIC {
            return Err(badfmt("bad checkpoint magic"));
        }
        let version = input.read_u32::<LittleEndian>().map_err(rerr)?;
        if version != CKPT_VERSION {
            return Err(badfmt(&format!("unsupported checkpoint version {version}")));
        }
        let count = input.read_u32::<LittleEndian>().map_err(rerr)? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = input.read_u32::<LittleEndian>().map_err(rerr)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name).map_err(rerr)?;
            let name = String::from_utf8(name).map_err(|_| badfmt("non-UTF-8 entry name"))?;
            let ndim = input.read_u32::<LittleEndian>().map_err(rerr)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(input.read_u32::<LittleEndian>().map_err(rerr)? as usize);
            }
            let total: usize = shape.iter().product();
            let mut data = Vec::with_capacity(total);
            for _ in 0..total {
                data.push(input.read_f32::<LittleEndian>().map_err(rerr)? as f64);
            }
            let arr = ArrayD::from_shape_vec(shape, data)
                .map_err(|e| badfmt(&format!("bad entry shape: {e}")))?;
            params.insert(name, arr);
        }
        let json_len = input.read_u32::<LittleEndian>().map_err(rerr)? as usize;
        let mut json = vec![0u8; json_len];
        input.read_exact(&mut json).map_err(rerr)?;
        let trailer: CkptTrailer = serde_json::from_slice(&json)?;
        let rng_word_pos = trailer
            .rng_word_pos
            .parse::<u128>()
            .map_err(|_| badfmt("bad rng_word_pos"))?;
        Ok(Checkpoint {
            version,
            params,
            config: trailer.config,
            model_dims: trailer.model_dims,
            vocab: trailer.vocab,
            epoch: trailer.epoch,
            rng_seed: trailer.rng_seed,
            rng_word_pos,
        })
    }
}

// --- optimizer ----------------------------------------------------------------

/// Classic Adam with L2 regularization folded into the gradient.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    step: u64,
    moments: IndexMap<String, (ArrayD<f64>, ArrayD<f64>)>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
            weight_decay: cfg.weight_decay,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    /// Apply one update over the provided gradients (missing params skip).
    pub fn step(&mut self, store: &mut ParamStore, grads: &IndexMap<String, ArrayD<f64>>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, grad) in grads {
            let theta = store.get_mut(name);
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (ArrayD::zeros(grad.shape()), ArrayD::zeros(grad.shape())));
            for ((t_i, g_i), (m_i, v_i)) in theta
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = g_i + self.weight_decay * *t_i;
                *m_i = self.beta1 * *m_i + (1.0 - self.beta1) * g;
                *v_i = self.beta2 * *v_i + (1.0 - self.beta2) * g * g;
                let m_hat = *m_i / bc1;
                let v_hat = *v_i / bc2;
                *t_i -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

// --- training loop ------------------------------------------------------------

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_traj: f64,
    pub loss_int: f64,
    pub val_ade: f64,
    pub val_fde: f64,
    pub val_f1: f64,
    pub val_acc: f64,
}

/// Artifacts of a completed run.
pub struct TrainOutput {
    pub records: Vec<EpochRecord>,
    pub log_path: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    /// Validation report computed from the reloaded last checkpoint, so it
    /// reflects exactly what `last_checkpoint` reproduces.
    pub final_report: crate::metrics::MetricReport,
}

fn draw_normals(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

fn draw_noise(rng: &mut ChaCha8Rng, enc: &EncoderConfig, scene_active: bool) -> SampleNoise {
    let d = enc.latent_dim;
    SampleNoise {
        pv: draw_normals(rng, d),
        lcf_b: draw_normals(rng, d),
        lcf_s: scene_active.then(|| draw_normals(rng, d)),
    }
}

/// Per-batch losses and gradient accumulation. Each sample gets its own
/// graph; per-sample scalar roots (squared-error sum, KLs, BCE sum, optional
/// reconstruction NLL) are combined into the batch objective outside the
/// graph, and the chain-rule coefficients seed each graph's backward pass.
struct BatchOutcome {
    loss_total: f64,
    loss_traj: f64,
    loss_int: f64,
    grads: IndexMap<String, ArrayD<f64>>,
}

fn run_batch(
    store: &ParamStore,
    cfg: &TrainConfig,
    batch: &[PedestrianSample],
    noises: &[SampleNoise],
) -> Result<BatchOutcome> {
    struct SampleGraph {
        graph: Graph,
        bound: IndexMap<String, NodeId>,
        sq: NodeId,
        kls: Vec<NodeId>,
        bce: NodeId,
        recon: Option<NodeId>,
    }

    let n = cfg.n();
    let b = batch.len();
    let mut built = Vec::with_capacity(b);
    for (sample, noise) in batch.iter().zip(noises) {
        let mut g = Graph::new();
        let mut ctx = ModelCtx::new(&mut g, store);
        let fwd = forward_sample(
            &mut ctx,
            sample,
            &cfg.encoder,
            n,
            cfg.trajectory_head,
            cfg.couple_intention,
            Some(noise),
        )?;
        let kls: Vec<NodeId> = fwd
            .encode
            .latents
            .iter()
            .map(|&(mean, lv)| kl_node(ctx.g, mean, lv))
            .collect();
        let sq = sq_err_sum_node(ctx.g, &fwd.boxes, &sample.future_boxes);
        let bce = bce_sum_node(
            ctx.g,
            &fwd.probs,
            &sample.future_intentions,
            cfg.loss.epsilon,
        );
        let recon = if cfg.loss.reconstruction_reg {
            let z = fwd.encode.latent_features[0];
            let stats = lstm_vae_reconstruct(&mut ctx, "pv", z, sample.past.positions.len(), &cfg.encoder)?;
            Some(gaussian_nll_node(ctx.g, &fwd.encode.pv_inputs, &stats))
        } else {
            None
        };
        let bound = ctx.into_bound();
        built.push(SampleGraph {
            graph: g,
            bound,
            sq,
            kls,
            bce,
            recon,
        });
    }

    // Batch objective from the per-sample scalar roots.
    let denom = (b * n) as f64;
    let sq_total: f64 = built.iter().map(|s| s.graph.scalar(s.sq)).sum();
    let kl_total: f64 = built
        .iter()
        .flat_map(|s| s.kls.iter().map(|&k| s.graph.scalar(k)))
        .sum();
    let bce_total: f64 = built.iter().map(|s| s.graph.scalar(s.bce)).sum();
    let recon_total: f64 = built
        .iter()
        .filter_map(|s| s.recon.map(|r| s.graph.scalar(r)))
        .sum();
    let rmse = (sq_total / denom).sqrt();
    let loss_traj = cfg.loss.beta * kl_total
        + rmse
        + if cfg.loss.reconstruction_reg {
            recon_total / b as f64
        } else {
            0.0
        };
    let loss_int = bce_total / denom;
    let loss_total = cfg.loss.lambda_traj * loss_traj + cfg.loss.lambda_int * loss_int;

    // Chain-rule coefficients for each root, then one seeded backward pass
    // per graph, accumulated by parameter name.
    let d_sq = if rmse > 1e-12 {
        cfg.loss.lambda_traj / (2.0 * rmse * denom)
    } else {
        0.0
    };
    let d_kl = cfg.loss.lambda_traj * cfg.loss.beta;
    let d_bce = cfg.loss.lambda_int / denom;
    let d_recon = cfg.loss.lambda_traj / b as f64;

    let mut grads: IndexMap<String, ArrayD<f64>> = IndexMap::new();
    for s in &built {
        let mut seeds = vec![(s.sq, d_sq), (s.bce, d_bce)];
        seeds.extend(s.kls.iter().map(|&k| (k, d_kl)));
        if let Some(r) = s.recon {
            seeds.push((r, d_recon));
        }
        let g = s.graph.backward_seeded(&seeds);
        for (name, &node) in &s.bound {
            if let Some(grad) = g.get(node) {
                match grads.get_mut(name) {
                    Some(acc) => *acc += grad,
                    None => {
                        grads.insert(name.clone(), grad.clone());
                    }
                }
            }
        }
    }

    Ok(BatchOutcome {
        loss_total,
        loss_traj,
        loss_int,
        grads,
    })
}

/// Run the full training loop; deterministic for a fixed config and seed.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutput> {
    // The top-level ablation toggles drive both the data loader and the
    // encoder paths; sync them here so checkpoints carry the effective
    // configuration.
    let mut cfg = cfg.clone();
    cfg.encoder.use_images = cfg.use_images;
    cfg.encoder.use_flow = cfg.use_flow;
    let cfg = &cfg;
    cfg.validate()?;
    let n = cfg.n();
    let toggles = GlobalToggles {
        use_images: cfg.use_images,
        use_flow: cfg.use_flow,
    };
    let mut train_data = Dataset::load(
        &cfg.train_data,
        None,
        cfg.m,
        n,
        cfg.stride,
        cfg.target_dims,
        toggles,
        cfg.normalize,
    )?;
    if train_data.is_empty() {
        return Err(PtiError::Config(format!(
            "no training samples windowed from {}",
            cfg.train_data.display()
        )));
    }
    let mut val_data = match &cfg.val_data {
        Some(dir) => Dataset::load(
            dir,
            Some(&train_data.vocab),
            cfg.m,
            n,
            cfg.stride,
            cfg.target_dims,
            toggles,
            cfg.normalize,
        )?,
        None => Dataset::load(
            &cfg.train_data,
            Some(&train_data.vocab),
            cfg.m,
            n,
            cfg.stride,
            cfg.target_dims,
            toggles,
            cfg.normalize,
        )?,
    };

    let dims = train_data.model_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = init_params(&cfg.encoder, &dims, &mut rng);
    ensure_conv_fc(&mut store, &cfg.encoder, cfg.target_dims, &mut rng);
    let scene_active = cfg.encoder.use_scene_attrs && dims.scene_in.is_some();

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| PtiError::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join("train_log.jsonl");
    let log_file =
        std::fs::File::create(&log_path).map_err(|e| PtiError::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let last_path = cfg.out_dir.join("last.ckpt");
    let best_path = cfg.out_dir.join("best.ckpt");

    let mut adam = Adam::new(cfg);
    let mut records = Vec::with_capacity(cfg.max_epoch);
    let mut best_ade = f64::INFINITY;
    let eval_opts = crate::eval::EvalOptions {
        horizons: vec![cfg.horizon_seconds],
        allow_prefix: false,
        distance: cfg.distance_mode,
        pooling: cfg.intent_pooling,
        threshold: 0.5,
    };

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 0..cfg.max_epoch {
        let lr = poly_lr(epoch, cfg)?;
        // Deterministic shuffle, then batches in order.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut sum_total = 0.0;
        let mut sum_traj = 0.0;
        let mut sum_int = 0.0;
        let mut batches = 0.0;
        let mut step = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // Noise drawn sequentially before the batch is built.
            let noises: Vec<SampleNoise> = chunk
                .iter()
                .map(|_| draw_noise(&mut rng, &cfg.encoder, scene_active))
                .collect();
            let batch: Vec<PedestrianSample> = chunk
                .iter()
                .map(|&i| train_data.materialize(i))
                .collect::<Result<_>>()?;
            let out = run_batch(&store, cfg, &batch, &noises)?;
            if !out.loss_total.is_finite() {
                return Err(PtiError::NonFinite {
                    what: format!(
                        "total loss (traj {}, int {})",
                        out.loss_traj, out.loss_int
                    ),
                    epoch,
                    step,
                });
            }
            adam.step(&mut store, &out.grads, lr);
            sum_total += out.loss_total;
            sum_traj += out.loss_traj;
            sum_int += out.loss_int;
            batches += 1.0;
            step += 1;
        }

        let mut predictor = crate::eval::ModelPredictor {
            store: &store,
            encoder: &cfg.encoder,
            head: cfg.trajectory_head,
            couple: cfg.couple_intention,
        };
        let report = crate::eval::evaluate(&mut predictor, &mut val_data, n, &eval_opts)?;
        let label = crate::metrics::horizon_label(cfg.horizon_seconds);
        let record = EpochRecord {
            epoch,
            lr,
            loss_total: sum_total / batches,
            loss_traj: sum_traj / batches,
            loss_int: sum_int / batches,
            val_ade: report.ade_pixels[&label],
            val_fde: report.fde_pixels[&label],
            val_f1: report.f1,
            val_acc: report.accuracy,
        };
        let line = serde_json::to_string(&record).expect("record serialization");
        writeln!(log, "{line}").map_err(|e| PtiError::io(&log_path, e))?;
        log.flush().map_err(|e| PtiError::io(&log_path, e))?;

        let ckpt = Checkpoint {
            version: CKPT_VERSION,
            params: store.clone(),
            config: cfg.clone(),
            model_dims: dims.clone(),
            vocab: train_data.vocab.clone(),
            epoch,
            rng_seed: cfg.seed,
            rng_word_pos: rng.get_word_pos(),
        };
        ckpt.save(&last_path)?;
        if record.val_ade < best_ade {
            best_ade = record.val_ade;
            ckpt.save(&best_path)?;
        }
        records.push(record);
    }

    // Reload the saved checkpoint so the reported metrics are exactly what
    // the float32 artifact reproduces.
    let reloaded = Checkpoint::load(&last_path)?;
    let mut predictor = crate::eval::ModelPredictor {
        store: &reloaded.params,
        encoder: &cfg.encoder,
        head: cfg.trajectory_head,
        couple: cfg.couple_intention,
    };
    let final_report = crate::eval::evaluate(&mut predictor, &mut val_data, n, &eval_opts)?;

    Ok(TrainOutput {
        records,
        log_path,
        last_checkpoint: last_path,
        best_checkpoint: best_path,
        final_report,
    })
}
