//! Model configuration, parameter storage, and the fused-feature layout.
//!
//! Parameters live in an insertion-ordered name -> array map so that
//! initialization, optimizer iteration, and checkpoint layout are all
//! deterministic given a seed.

pub mod decoders;
pub mod encoders;

use crate::autodiff::{Graph, NodeId};
use crate::error::{PtiError, Result};
use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Diagonal Gaussian over a latent vector: elementwise mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(PtiError::Shape {
                context: "LatentGaussian".into(),
                expected: format!("log_var length {}", mean.len()),
                got: format!("{}", log_var.len()),
            });
        }
        Ok(LatentGaussian { mean, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.log_var.iter()).all(|v| v.is_finite())
    }
}

/// Flow-path backbone choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowBackbone {
    /// Four residual blocks with three stride-2 reductions.
    SmallCnn,
    /// 50-layer bottleneck residual network (no pretrained weights).
    Residual50,
}

/// Widths and switches for the four encoder paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Latent width of each LSTM-VAE path (PV, LCF_b, LCF_s).
    pub latent_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Hidden and output width of the attribute MLP (LCF_p path).
    pub mlp_width: usize,
    pub convlstm_filters: usize,
    pub convlstm_kernel: usize,
    pub convlstm_stride: usize,
    pub pool_size: usize,
    pub flow_backbone: FlowBackbone,
    /// Channel width of the flow backbone's first stage.
    pub flow_base_channels: usize,
    pub gf_img_dim: usize,
    pub gf_o_dim: usize,
    pub use_images: bool,
    pub use_flow: bool,
    pub use_scene_attrs: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            latent_dim: 64,
            lstm_hidden: 512,
            lstm_layers: 2,
            mlp_width: 64,
            convlstm_filters: 32,
            convlstm_kernel: 5,
            convlstm_stride: 2,
            pool_size: 2,
            flow_backbone: FlowBackbone::SmallCnn,
            flow_base_channels: 8,
            gf_img_dim: 256,
            gf_o_dim: 128,
            use_images: true,
            use_flow: true,
            use_scene_attrs: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("latent_dim", self.latent_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("mlp_width", self.mlp_width),
            ("convlstm_filters", self.convlstm_filters),
            ("convlstm_kernel", self.convlstm_kernel),
            ("convlstm_stride", self.convlstm_stride),
            ("pool_size", self.pool_size),
            ("flow_base_channels", self.flow_base_channels),
            ("gf_img_dim", self.gf_img_dim),
            ("gf_o_dim", self.gf_o_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(PtiError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Input widths that come from the dataset rather than the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub attrs_in: usize,
    pub behavior_in: usize,
    /// Absent for datasets without scene annotations.
    pub scene_in: Option<usize>,
}

/// Segment layout of the fused feature F: fixed path order
/// [PV, LCF_p, LCF_b, LCF_s, GF_img, GF_o].
#[derive(Debug, Clone, PartialEq)]
pub struct FusedLayout {
    segments: [(&'static str, usize, usize); 6],
    total: usize,
}

pub const PATH_ORDER: [&str; 6] = ["pv", "lcf_p", "lcf_b", "lcf_s", "gf_img", "gf_o"];

impl FusedLayout {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let widths = [
            cfg.latent_dim,
            cfg.mlp_width,
            cfg.latent_dim,
            cfg.latent_dim,
            cfg.gf_img_dim,
            cfg.gf_o_dim,
        ];
        let mut segments = [("", 0, 0); 6];
        let mut off = 0;
        for (i, (&name, &w)) in PATH_ORDER.iter().zip(widths.iter()).enumerate() {
            segments[i] = (name, off, w);
            off += w;
        }
        FusedLayout {
            segments,
            total: off,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// (offset, width) of a named path segment.
    pub fn segment(&self, name: &str) -> (usize, usize) {
        self.segments
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, off, w)| (*off, *w))
            .unwrap_or_else(|| panic!("unknown path segment {name}"))
    }

    pub fn segments(&self) -> &[(&'static str, usize, usize); 6] {
        &self.segments
    }
}

/// Insertion-ordered parameter map. Arrays are reference-counted so that
/// binding them into a graph never copies.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Rc<ArrayD<f64>>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        let name = name.into();
        debug_assert!(!self.entries.contains_key(&name), "duplicate param {name}");
        self.entries.insert(name, Rc::new(value));
    }

    pub fn get(&self, name: &str) -> &Rc<ArrayD<f64>> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown param {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Rc<ArrayD<f64>>> {
        self.entries.get(name)
    }

    /// Mutable view of one parameter (clone-on-write under the hood).
    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        Rc::make_mut(
            self.entries
                .get_mut(name)
                .unwrap_or_else(|| panic!("unknown param {name}")),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Rc<ArrayD<f64>>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }

    /// Replace every parameter with zeros of the same shape (test helper for
    /// zero-propagation contracts).
    pub fn zeroed(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, v) in self.iter() {
            out.insert(name, ArrayD::zeros(v.raw_dim()));
        }
        out
    }

    /// Zero only the bias parameters (names ending in `.b`).
    pub fn with_zero_biases(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, v) in self.iter() {
            if name.ends_with(".b") {
                out.insert(name, ArrayD::zeros(v.raw_dim()));
            } else {
                out.insert(name, (**v).clone());
            }
        }
        out
    }
}

/// Forward-pass context: a graph plus lazily bound parameters, recording the
/// node id of every parameter touched so gradients can be read back by name.
pub struct ModelCtx<'g, 's> {
    pub g: &'g mut Graph,
    store: &'s ParamStore,
    bound: IndexMap<String, NodeId>,
}

impl<'g, 's> ModelCtx<'g, 's> {
    pub fn new(g: &'g mut Graph, store: &'s ParamStore) -> Self {
        ModelCtx {
            g,
            store,
            bound: IndexMap::new(),
        }
    }

    /// Bind (or reuse) the named parameter as a graph leaf.
    pub fn p(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let id = self.g.param(self.store.get(name).clone());
        self.bound.insert(name.to_string(), id);
        id
    }

    pub fn has(&self, name: &str) -> bool {
        self.store.contains(name)
    }

    /// Shape of a stored parameter without binding it.
    pub fn param_shape(&self, name: &str) -> &[usize] {
        self.store.get(name).shape()
    }

    pub fn bound(&self) -> &IndexMap<String, NodeId> {
        &self.bound
    }

    pub fn into_bound(self) -> IndexMap<String, NodeId> {
        self.bound
    }
}

/// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], the usual recurrent /
/// linear layer default.
fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let k = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-k..k)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Append one affine layer's weight and bias.
fn init_linear(ps: &mut ParamStore, prefix: &str, out: usize, inp: usize, rng: &mut ChaCha8Rng) {
    ps.insert(format!("{prefix}.w"), uniform_init(&[out, inp], inp, rng));
    ps.insert(format!("{prefix}.b"), uniform_init(&[out], inp, rng));
}

/// Append one LSTM layer (packed i,f,g,o gates, single bias).
fn init_lstm_layer(
    ps: &mut ParamStore,
    prefix: &str,
    hidden: usize,
    inp: usize,
    rng: &mut ChaCha8Rng,
) {
    ps.insert(
        format!("{prefix}.w_ih"),
        uniform_init(&[4 * hidden, inp], hidden, rng),
    );
    ps.insert(
        format!("{prefix}.w_hh"),
        uniform_init(&[4 * hidden, hidden], hidden, rng),
    );
    ps.insert(format!("{prefix}.b"), uniform_init(&[4 * hidden], hidden, rng));
}

/// Append a stacked-LSTM VAE path: encoder layers, Gaussian head, and the
/// reconstruction decoder (used only by the optional regularizer).
fn init_vae_path(
    ps: &mut ParamStore,
    prefix: &str,
    input: usize,
    latent: usize,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) {
    let h = cfg.lstm_hidden;
    for l in 0..cfg.lstm_layers {
        let inp = if l == 0 { input } else { h };
        init_lstm_layer(ps, &format!("{prefix}.enc{l}"), h, inp, rng);
    }
    init_linear(ps, &format!("{prefix}.head_mean"), latent, h, rng);
    init_linear(ps, &format!("{prefix}.head_logvar"), latent, h, rng);
    for l in 0..cfg.lstm_layers {
        let inp = if l == 0 { latent } else { h };
        init_lstm_layer(ps, &format!("{prefix}.dec{l}"), h, inp, rng);
    }
    init_linear(ps, &format!("{prefix}.recon_mean"), input, h, rng);
    init_linear(ps, &format!("{prefix}.recon_logvar"), input, h, rng);
}

fn init_conv(
    ps: &mut ParamStore,
    prefix: &str,
    oc: usize,
    ic: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) {
    let fan_in = ic * k * k;
    ps.insert(
        format!("{prefix}.w"),
        uniform_init(&[oc, ic, k, k], fan_in, rng),
    );
    ps.insert(format!("{prefix}.b"), uniform_init(&[oc], fan_in, rng));
}

/// Residual-50 stage plan: (blocks, mid-channel multiplier) per stage,
/// bottleneck expansion 4. 1 stem + 3*(3+4+6+3) convs + the final affine
/// = 50 weighted layers.
pub(crate) const R50_STAGES: [(usize, usize); 4] = [(3, 1), (4, 2), (6, 4), (3, 8)];

/// Build and initialize every model parameter for the given configuration.
/// Insertion order is fixed; initialization is deterministic given the rng.
pub fn init_params(
    cfg: &EncoderConfig,
    dims: &ModelDims,
    rng: &mut ChaCha8Rng,
) -> ParamStore {
    let mut ps = ParamStore::new();
    let latent = cfg.latent_dim;

    // PV path: [x,y,w,h,dx,dy,dw,dh] per step.
    init_vae_path(&mut ps, "pv", 8, latent, cfg, rng);
    // Attribute MLP.
    init_linear(&mut ps, "lcf_p.fc1", cfg.mlp_width, dims.attrs_in, rng);
    init_linear(&mut ps, "lcf_p.fc2", cfg.mlp_width, cfg.mlp_width, rng);
    // Behavior VAE.
    init_vae_path(&mut ps, "lcf_b", dims.behavior_in, latent, cfg, rng);
    // Scene VAE, only when the dataset carries scene attributes.
    if let Some(scene_in) = dims.scene_in {
        init_vae_path(&mut ps, "lcf_s", scene_in, latent, cfg, rng);
    }

    // ConvLSTM image path: three cells, each input conv is strided, the
    // hidden conv is stride 1; gates packed i,f,g,o.
    let f = cfg.convlstm_filters;
    let k = cfg.convlstm_kernel;
    let mut in_ch = 3;
    for l in 0..3 {
        init_conv(&mut ps, &format!("gf_img.cell{l}.x"), 4 * f, in_ch, k, rng);
        let fan_in = f * k * k;
        ps.insert(
            format!("gf_img.cell{l}.h.w"),
            uniform_init(&[4 * f, f, k, k], fan_in, rng),
        );
        in_ch = f;
    }
    // The FC after the last pool depends on the runtime spatial dims, so the
    // weight is sized lazily at first forward; only declared here via dims
    // recorded at build time. See `encoders::conv_lstm_forward`.

    match cfg.flow_backbone {
        FlowBackbone::SmallCnn => {
            let c = cfg.flow_base_channels;
            init_conv(&mut ps, "gf_o.stem", c, 2, 3, rng);
            init_conv(&mut ps, "gf_o.block0.c1", c, c, 3, rng);
            init_conv(&mut ps, "gf_o.block0.c2", c, c, 3, rng);
            init_conv(&mut ps, "gf_o.down1", 2 * c, c, 3, rng);
            init_conv(&mut ps, "gf_o.block1.c1", 2 * c, 2 * c, 3, rng);
            init_conv(&mut ps, "gf_o.block1.c2", 2 * c, 2 * c, 3, rng);
            init_conv(&mut ps, "gf_o.down2", 4 * c, 2 * c, 3, rng);
            init_conv(&mut ps, "gf_o.block2.c1", 4 * c, 4 * c, 3, rng);
            init_conv(&mut ps, "gf_o.block2.c2", 4 * c, 4 * c, 3, rng);
            init_conv(&mut ps, "gf_o.block3.c1", 4 * c, 4 * c, 3, rng);
            init_conv(&mut ps, "gf_o.block3.c2", 4 * c, 4 * c, 3, rng);
            // gf_o.fc reads the flattened feature map, so its width depends
            // on the input resolution; sized lazily like gf_img.fc.
        }
        FlowBackbone::Residual50 => {
            let base = cfg.flow_base_channels;
            init_conv(&mut ps, "gf_o.r50.stem", base, 2, 7, rng);
            let mut in_c = base;
            for (s, (blocks, mult)) in R50_STAGES.iter().enumerate() {
                let mid = base * mult;
                let out_c = 4 * mid;
                for b in 0..*blocks {
                    let pre = format!("gf_o.r50.s{s}.b{b}");
                    init_conv(&mut ps, &format!("{pre}.c1"), mid, in_c, 1, rng);
                    init_conv(&mut ps, &format!("{pre}.c2"), mid, mid, 3, rng);
                    init_conv(&mut ps, &format!("{pre}.c3"), out_c, mid, 1, rng);
                    if b == 0 {
                        init_conv(&mut ps, &format!("{pre}.proj"), out_c, in_c, 1, rng);
                    }
                    in_c = out_c;
                }
            }
            init_linear(&mut ps, "gf_o.r50.fc", cfg.gf_o_dim, in_c, rng);
        }
    }

    // Decoders: hidden width is |F|; trajectory head -> 4, intention -> 2.
    let fw = FusedLayout::new(cfg).total();
    init_lstm_layer(&mut ps, "dec_traj.lstm", fw, 4, rng);
    init_linear(&mut ps, "dec_traj.head", 4, fw, rng);
    init_lstm_layer(&mut ps, "dec_int.lstm", fw, 4, rng);
    init_linear(&mut ps, "dec_int.head", 2, fw, rng);

    ps
}

/// The image- and flow-path FC weights are sized by post-conv spatial dims,
/// which depend on the input resolution. Insert them for a known resolution.
pub fn ensure_conv_fc(
    ps: &mut ParamStore,
    cfg: &EncoderConfig,
    input_hw: (usize, usize),
    rng: &mut ChaCha8Rng,
) {
    if !ps.contains("gf_img.fc.w") {
        let trace = encoders::conv_lstm_spatial_trace(cfg, input_hw);
        let (h, w) = *trace.last().unwrap();
        let flat = cfg.convlstm_filters * h * w;
        init_linear(ps, "gf_img.fc", cfg.gf_img_dim, flat, rng);
    }
    if cfg.flow_backbone == FlowBackbone::SmallCnn && !ps.contains("gf_o.fc.w") {
        let (h, w) = encoders::flow_cnn_spatial_dims(input_hw);
        let flat = 4 * cfg.flow_base_channels * h * w;
        init_linear(ps, "gf_o.fc", cfg.gf_o_dim, flat, rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn fused_layout_defaults_partition_640() {
        let layout = FusedLayout::new(&EncoderConfig::default());
        assert_eq!(layout.total(), 640);
        // Segments must tile [0, total) in order with no gaps.
        let mut expect_off = 0;
        for (name, off, w) in layout.segments() {
            assert_eq!(*off, expect_off, "segment {name} misplaced");
            assert!(*w > 0);
            expect_off += w;
        }
        assert_eq!(expect_off, layout.total());
        assert_eq!(layout.segment("pv"), (0, 64));
        assert_eq!(layout.segment("gf_img"), (256, 256));
        assert_eq!(layout.segment("gf_o"), (512, 128));
    }

    #[test]
    fn init_is_deterministic_and_ordered() {
        let cfg = EncoderConfig {
            latent_dim: 4,
            lstm_hidden: 8,
            mlp_width: 4,
            convlstm_filters: 2,
            convlstm_kernel: 3,
            flow_base_channels: 2,
            gf_img_dim: 6,
            gf_o_dim: 5,
            ..EncoderConfig::default()
        };
        let dims = ModelDims {
            attrs_in: 3,
            behavior_in: 4,
            scene_in: Some(5),
        };
        let a = init_params(&cfg, &dims, &mut ChaCha8Rng::seed_from_u64(9));
        let b = init_params(&cfg, &dims, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.len(), b.len());
        for ((na, va), (nb, vb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn scene_path_params_only_when_present() {
        let cfg = EncoderConfig {
            latent_dim: 4,
            lstm_hidden: 8,
            mlp_width: 4,
            convlstm_filters: 2,
            convlstm_kernel: 3,
            flow_base_channels: 2,
            gf_img_dim: 6,
            gf_o_dim: 5,
            ..EncoderConfig::default()
        };
        let with = init_params(
            &cfg,
            &ModelDims {
                attrs_in: 3,
                behavior_in: 4,
                scene_in: Some(5),
            },
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let without = init_params(
            &cfg,
            &ModelDims {
                attrs_in: 3,
                behavior_in: 4,
                scene_in: None,
            },
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(with.contains("lcf_s.enc0.w_ih"));
        assert!(!without.contains("lcf_s.enc0.w_ih"));
    }
}
