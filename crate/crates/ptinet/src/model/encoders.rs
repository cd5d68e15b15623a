//! The four encoding paths and their fusion into one feature vector.
//!
//! Paths, in fused order: position-velocity sequence (recurrent VAE),
//! pedestrian attributes (MLP), behavior sequence (recurrent VAE), scene
//! sequence (recurrent VAE), image sequence (stacked ConvLSTM), and optical
//! flow (per-frame CNN with temporal mean-pooling).

use super::{EncoderConfig, FlowBackbone, FusedLayout, LatentGaussian, ModelCtx, R50_STAGES};
use crate::autodiff::{Graph, NodeId};
use crate::domain::PedestrianSample;
use crate::error::{PtiError, Result};
use ndarray::{Array1, ArrayD, IxDyn};

/// Hidden/cell node pair for one recurrent layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

pub(crate) fn zeros_node(g: &mut Graph, shape: &[usize]) -> NodeId {
    g.input(ArrayD::zeros(IxDyn(shape)))
}

/// One step of an LSTM cell. Gates are packed [input, forget, cell, output];
/// a single bias vector covers all four.
pub fn lstm_step(
    ctx: &mut ModelCtx,
    prefix: &str,
    x: NodeId,
    state: LstmState,
    hidden: usize,
) -> LstmState {
    let w_ih = ctx.p(&format!("{prefix}.w_ih"));
    let w_hh = ctx.p(&format!("{prefix}.w_hh"));
    let b = ctx.p(&format!("{prefix}.b"));
    let gx = ctx.g.matvec(w_ih, x);
    let gh = ctx.g.matvec(w_hh, state.h);
    let s = ctx.g.add(gx, gh);
    let gates = ctx.g.add(s, b);
    let i = ctx.g.narrow(gates, 0, hidden);
    let f = ctx.g.narrow(gates, hidden, hidden);
    let c_hat = ctx.g.narrow(gates, 2 * hidden, hidden);
    let o = ctx.g.narrow(gates, 3 * hidden, hidden);
    let i = ctx.g.sigmoid(i);
    let f = ctx.g.sigmoid(f);
    let c_hat = ctx.g.tanh(c_hat);
    let o = ctx.g.sigmoid(o);
    let fc = ctx.g.mul(f, state.c);
    let ic = ctx.g.mul(i, c_hat);
    let c = ctx.g.add(fc, ic);
    let tc = ctx.g.tanh(c);
    let h = ctx.g.mul(o, tc);
    LstmState { h, c }
}

/// Run a stacked LSTM over a sequence from zero initial state; returns the
/// top layer's hidden node at every step.
pub fn lstm_stack(
    ctx: &mut ModelCtx,
    prefix: &str,
    inputs: &[NodeId],
    hidden: usize,
    layers: usize,
) -> Vec<NodeId> {
    let mut states: Vec<LstmState> = (0..layers)
        .map(|_| LstmState {
            h: zeros_node(ctx.g, &[hidden]),
            c: zeros_node(ctx.g, &[hidden]),
        })
        .collect();
    let mut tops = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let mut inp = x;
        for (l, st) in states.iter_mut().enumerate() {
            *st = lstm_step_at(ctx, prefix, l, inp, *st, hidden);
            inp = st.h;
        }
        tops.push(inp);
    }
    tops
}

fn lstm_step_at(
    ctx: &mut ModelCtx,
    prefix: &str,
    layer: usize,
    x: NodeId,
    state: LstmState,
    hidden: usize,
) -> LstmState {
    lstm_step(ctx, &format!("{prefix}{layer}"), x, state, hidden)
}

/// Affine layer `{prefix}.w` x + `{prefix}.b`.
pub fn affine_layer(ctx: &mut ModelCtx, prefix: &str, x: NodeId) -> NodeId {
    let w = ctx.p(&format!("{prefix}.w"));
    let b = ctx.p(&format!("{prefix}.b"));
    let wx = ctx.g.matvec(w, x);
    ctx.g.add(wx, b)
}

/// Encoder result: the fused-path feature plus the Gaussian head outputs.
#[derive(Debug, Clone, Copy)]
pub struct VaeOut {
    pub feature: NodeId,
    pub mean: NodeId,
    pub log_var: NodeId,
}

/// Sequence-to-latent encoder. The stacked recurrent encoder consumes the
/// sequence; its final hidden feeds mean/log-variance heads. With `noise`
/// the feature is the reparameterized sample (training); without, the mean
/// (deterministic evaluation).
pub fn lstm_vae_encode(
    ctx: &mut ModelCtx,
    prefix: &str,
    inputs: &[NodeId],
    cfg: &EncoderConfig,
    noise: Option<&[f64]>,
) -> Result<VaeOut> {
    if inputs.is_empty() {
        return Err(PtiError::InvalidSequence(format!(
            "{prefix}: empty input sequence"
        )));
    }
    let got = ctx.g.value(inputs[0]).len();
    let expect = ctx.param_shape(&format!("{prefix}.enc0.w_ih"))[1];
    if got != expect {
        return Err(PtiError::Shape {
            context: format!("{prefix} encoder input"),
            expected: format!("width {expect}"),
            got: format!("width {got}"),
        });
    }
    let tops = lstm_stack(
        ctx,
        &format!("{prefix}.enc"),
        inputs,
        cfg.lstm_hidden,
        cfg.lstm_layers,
    );
    let last = *tops.last().unwrap();
    let mean = affine_layer(ctx, &format!("{prefix}.head_mean"), last);
    let log_var = affine_layer(ctx, &format!("{prefix}.head_logvar"), last);
    let feature = match noise {
        Some(eps) => {
            let latent = ctx.g.value(mean).len();
            if eps.len() != latent {
                return Err(PtiError::Shape {
                    context: format!("{prefix} noise"),
                    expected: format!("length {latent}"),
                    got: format!("length {}", eps.len()),
                });
            }
            reparameterize_node(ctx.g, mean, log_var, eps)
        }
        None => mean,
    };
    Ok(VaeOut {
        feature,
        mean,
        log_var,
    })
}

/// z = mean + exp(log_var / 2) ⊙ ε on plain vectors.
pub fn reparameterize(g: &LatentGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.dim() {
        return Err(PtiError::Shape {
            context: "reparameterize".into(),
            expected: format!("noise length {}", g.dim()),
            got: format!("{}", eps.len()),
        });
    }
    Ok(g
        .mean
        .iter()
        .zip(&g.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
        .collect())
}

/// Graph form of [`reparameterize`]; ε enters as a constant leaf.
pub fn reparameterize_node(g: &mut Graph, mean: NodeId, log_var: NodeId, eps: &[f64]) -> NodeId {
    let half = g.affine_scalar(log_var, 0.5, 0.0);
    let std = g.exp(half);
    let e = g.input1(Array1::from_vec(eps.to_vec()));
    let se = g.mul(std, e);
    g.add(mean, se)
}

/// Unroll the reconstruction decoder from a latent: the latent is fed as the
/// input at every step, initial state is zero, and a per-step Gaussian head
/// emits (mean, log_var) node pairs. Only the optional reconstruction
/// regularizer consumes this.
pub fn lstm_vae_reconstruct(
    ctx: &mut ModelCtx,
    prefix: &str,
    z: NodeId,
    steps: usize,
    cfg: &EncoderConfig,
) -> Result<Vec<(NodeId, NodeId)>> {
    if steps == 0 {
        return Err(PtiError::InvalidSequence(format!(
            "{prefix}: reconstruction over zero steps"
        )));
    }
    let got = ctx.g.value(z).len();
    let expect = ctx.param_shape(&format!("{prefix}.dec0.w_ih"))[1];
    if got != expect {
        return Err(PtiError::Shape {
            context: format!("{prefix} reconstruction latent"),
            expected: format!("width {expect}"),
            got: format!("width {got}"),
        });
    }
    let inputs = vec![z; steps];
    let tops = lstm_stack(
        ctx,
        &format!("{prefix}.dec"),
        &inputs,
        cfg.lstm_hidden,
        cfg.lstm_layers,
    );
    Ok(tops
        .into_iter()
        .map(|h| {
            (
                affine_layer(ctx, &format!("{prefix}.recon_mean"), h),
                affine_layer(ctx, &format!("{prefix}.recon_logvar"), h),
            )
        })
        .collect())
}

/// Two affine layers with a ReLU between. `nonlinear=false` replaces the
/// hidden activation with identity so tests can exercise the affine identity
/// f(a)+f(b)−f(0) = f(a+b).
pub fn mlp_encode(ctx: &mut ModelCtx, x: NodeId, nonlinear: bool) -> Result<NodeId> {
    let got = ctx.g.value(x).len();
    let expect = ctx.param_shape("lcf_p.fc1.w")[1];
    if got != expect {
        return Err(PtiError::Shape {
            context: "lcf_p input".into(),
            expected: format!("width {expect}"),
            got: format!("width {got}"),
        });
    }
    let h = affine_layer(ctx, "lcf_p.fc1", x);
    let h = if nonlinear { ctx.g.relu(h) } else { h };
    Ok(affine_layer(ctx, "lcf_p.fc2", h))
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Spatial size after each of the three conv(stride)+pool stages, starting
/// from the input size. Entry 0 is the input; entries 1..=3 are per-stage
/// post-pool sizes.
pub fn conv_lstm_spatial_trace(cfg: &EncoderConfig, input_hw: (usize, usize)) -> Vec<(usize, usize)> {
    let (mut h, mut w) = input_hw;
    let mut out = vec![(h, w)];
    for _ in 0..3 {
        h = ceil_div(h, cfg.convlstm_stride) / cfg.pool_size;
        w = ceil_div(w, cfg.convlstm_stride) / cfg.pool_size;
        out.push((h, w));
    }
    out
}

/// Three ConvLSTM cells, each followed by max-pooling; recurrent state lives
/// at the post-input-conv resolution. The final pooled hidden state is
/// flattened through an affine layer to the configured image-feature width.
pub fn conv_lstm_forward(
    ctx: &mut ModelCtx,
    images: &[NodeId],
    cfg: &EncoderConfig,
) -> Result<NodeId> {
    if images.is_empty() {
        return Err(PtiError::InvalidSequence(
            "image path enabled but the sample has no frames".into(),
        ));
    }
    let shape = ctx.g.value(images[0]).shape().to_vec();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(PtiError::Shape {
            context: "gf_img input".into(),
            expected: "[3, H, W] frames".into(),
            got: format!("{shape:?}"),
        });
    }
    let trace = conv_lstm_spatial_trace(cfg, (shape[1], shape[2]));
    if trace.iter().any(|&(h, w)| h == 0 || w == 0) {
        return Err(PtiError::Shape {
            context: "gf_img stages".into(),
            expected: "resolution surviving three conv+pool stages".into(),
            got: format!("trace {trace:?}"),
        });
    }
    let f = cfg.convlstm_filters;
    let mut seq: Vec<NodeId> = images.to_vec();
    let (mut h_in, mut w_in) = (shape[1], shape[2]);
    for l in 0..3 {
        let ch = ceil_div(h_in, cfg.convlstm_stride);
        let cw = ceil_div(w_in, cfg.convlstm_stride);
        let w_x = ctx.p(&format!("gf_img.cell{l}.x.w"));
        let b = ctx.p(&format!("gf_img.cell{l}.x.b"));
        let w_h = ctx.p(&format!("gf_img.cell{l}.h.w"));
        let mut state = LstmState {
            h: zeros_node(ctx.g, &[f, ch, cw]),
            c: zeros_node(ctx.g, &[f, ch, cw]),
        };
        let mut outs = Vec::with_capacity(seq.len());
        for &x in &seq {
            let gx = ctx.g.conv2d_same(x, w_x, cfg.convlstm_stride);
            let gh = ctx.g.conv2d_same(state.h, w_h, 1);
            let s = ctx.g.add(gx, gh);
            let gates = ctx.g.add_chan_bias(s, b);
            let i = ctx.g.narrow_chan(gates, 0, f);
            let fg = ctx.g.narrow_chan(gates, f, f);
            let c_hat = ctx.g.narrow_chan(gates, 2 * f, f);
            let o = ctx.g.narrow_chan(gates, 3 * f, f);
            let i = ctx.g.sigmoid(i);
            let fg = ctx.g.sigmoid(fg);
            let c_hat = ctx.g.tanh(c_hat);
            let o = ctx.g.sigmoid(o);
            let fc = ctx.g.mul(fg, state.c);
            let ic = ctx.g.mul(i, c_hat);
            let c = ctx.g.add(fc, ic);
            let tc = ctx.g.tanh(c);
            let h = ctx.g.mul(o, tc);
            state = LstmState { h, c };
            outs.push(ctx.g.max_pool2(h, cfg.pool_size));
        }
        seq = outs;
        (h_in, w_in) = trace[l + 1];
    }
    let last = *seq.last().unwrap();
    let flat_width = f * h_in * w_in;
    if !ctx.has("gf_img.fc.w") || ctx.param_shape("gf_img.fc.w")[1] != flat_width {
        return Err(PtiError::Shape {
            context: "gf_img.fc".into(),
            expected: format!("weight sized for flat width {flat_width}"),
            got: if ctx.has("gf_img.fc.w") {
                format!("input width {}", ctx.param_shape("gf_img.fc.w")[1])
            } else {
                "missing".into()
            },
        });
    }
    let flat = ctx.g.flatten(last);
    Ok(affine_layer(ctx, "gf_img.fc", flat))
}

fn conv_bias(ctx: &mut ModelCtx, prefix: &str, x: NodeId, stride: usize) -> NodeId {
    let w = ctx.p(&format!("{prefix}.w"));
    let b = ctx.p(&format!("{prefix}.b"));
    let c = ctx.g.conv2d_same(x, w, stride);
    ctx.g.add_chan_bias(c, b)
}

fn conv_relu(ctx: &mut ModelCtx, prefix: &str, x: NodeId, stride: usize) -> NodeId {
    let c = conv_bias(ctx, prefix, x, stride);
    ctx.g.relu(c)
}

/// conv3-relu-conv3 plus identity skip, then ReLU.
fn res_block(ctx: &mut ModelCtx, prefix: &str, x: NodeId) -> NodeId {
    let c1 = conv_relu(ctx, &format!("{prefix}.c1"), x, 1);
    let c2 = conv_bias(ctx, &format!("{prefix}.c2"), c1, 1);
    let s = ctx.g.add(c2, x);
    ctx.g.relu(s)
}

/// Spatial dims after the small flow CNN's three stride-2 convolutions
/// (same-padded, so each stage is a ceiling division).
pub fn flow_cnn_spatial_dims(input_hw: (usize, usize)) -> (usize, usize) {
    let stage = |d: usize| d.div_ceil(2);
    let (mut h, mut w) = input_hw;
    for _ in 0..3 {
        h = stage(h);
        w = stage(w);
    }
    (h, w)
}

fn small_cnn_embed(ctx: &mut ModelCtx, x: NodeId) -> Result<NodeId> {
    // Linear stem: motion components are signed and the informative agents
    // deviate only slightly from the dominant background value, so a stem
    // ReLU can silence the whole map before anything is learned.
    let h = conv_bias(ctx, "gf_o.stem", x, 2);
    let h = res_block(ctx, "gf_o.block0", h);
    let h = conv_relu(ctx, "gf_o.down1", h, 2);
    let h = res_block(ctx, "gf_o.block1", h);
    let h = conv_relu(ctx, "gf_o.down2", h, 2);
    let h = res_block(ctx, "gf_o.block2", h);
    let h = res_block(ctx, "gf_o.block3", h);
    // Positional head: moving agents cover a small fraction of the field, so
    // a global spatial mean would dilute their motion ~1/area; flattening
    // keeps per-location features at full magnitude for the FC.
    let flat_width = ctx.g.value(h).len();
    if !ctx.has("gf_o.fc.w") || ctx.param_shape("gf_o.fc.w")[1] != flat_width {
        return Err(PtiError::Shape {
            context: "gf_o.fc".into(),
            expected: format!("input width {flat_width} (size for this resolution first)"),
            got: if ctx.has("gf_o.fc.w") {
                format!("input width {}", ctx.param_shape("gf_o.fc.w")[1])
            } else {
                "missing".into()
            },
        });
    }
    let flat = ctx.g.flatten(h);
    Ok(affine_layer(ctx, "gf_o.fc", flat))
}

/// 1x1 reduce, 3x3 (carries the stride), 1x1 expand; projection shortcut on
/// the first block of a stage.
fn bottleneck(ctx: &mut ModelCtx, prefix: &str, x: NodeId, stride: usize, proj: bool) -> NodeId {
    let c1 = conv_relu(ctx, &format!("{prefix}.c1"), x, 1);
    let c2 = conv_relu(ctx, &format!("{prefix}.c2"), c1, stride);
    let c3 = conv_bias(ctx, &format!("{prefix}.c3"), c2, 1);
    let sc = if proj {
        conv_bias(ctx, &format!("{prefix}.proj"), x, stride)
    } else {
        x
    };
    let s = ctx.g.add(c3, sc);
    ctx.g.relu(s)
}

fn r50_embed(ctx: &mut ModelCtx, x: NodeId) -> NodeId {
    let mut h = conv_relu(ctx, "gf_o.r50.stem", x, 2);
    for (s, (blocks, _)) in R50_STAGES.iter().enumerate() {
        for b in 0..*blocks {
            let stride = if b == 0 && s > 0 { 2 } else { 1 };
            h = bottleneck(ctx, &format!("gf_o.r50.s{s}.b{b}"), h, stride, b == 0);
        }
    }
    let v = ctx.g.mean_spatial(h);
    affine_layer(ctx, "gf_o.r50.fc", v)
}

/// Fixed input gain applied to ego-compensated flow. Residual flow after
/// background subtraction is a fraction of a pixel per frame at working
/// resolutions; this is a unit choice that brings it to order one for the
/// convolution stack.
const FLOW_INPUT_GAIN: f64 = 8.0;

/// Per-frame flow embedding, mean-pooled across frames.
pub fn flow_backbone_forward(
    ctx: &mut ModelCtx,
    flows: &[NodeId],
    cfg: &EncoderConfig,
) -> Result<NodeId> {
    if flows.is_empty() {
        return Err(PtiError::InvalidSequence(
            "flow path enabled but the sample has no flow frames".into(),
        ));
    }
    let shape = ctx.g.value(flows[0]).shape().to_vec();
    if shape.len() != 3 || shape[0] != 2 {
        return Err(PtiError::Shape {
            context: "gf_o input".into(),
            expected: "[2, H, W] flow frames".into(),
            got: format!("{shape:?}"),
        });
    }
    let embeds: Vec<NodeId> = flows
        .iter()
        .map(|&x| {
            // Ego-motion compensation: the background carries the camera's
            // translation, which dwarfs and masks the agents' residual
            // motion; removing the per-channel spatial mean centers the
            // background near zero.
            let centered = ctx.g.sub_chan_mean(x);
            let scaled = ctx.g.affine_scalar(centered, FLOW_INPUT_GAIN, 0.0);
            match cfg.flow_backbone {
                FlowBackbone::SmallCnn => small_cnn_embed(ctx, scaled),
                FlowBackbone::Residual50 => Ok(r50_embed(ctx, scaled)),
            }
        })
        .collect::<Result<_>>()?;
    Ok(ctx.g.mean_of(&embeds))
}

/// Per-sample ε vectors for the reparameterized latents (training mode).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleNoise {
    pub pv: Vec<f64>,
    pub lcf_b: Vec<f64>,
    pub lcf_s: Option<Vec<f64>>,
}

/// Fused encoding of one sample plus the latent heads used by the KL term.
pub struct EncodeOutput {
    pub fused: NodeId,
    /// (mean, log_var) node pairs in path order: pv, lcf_b, then lcf_s when
    /// the scene path is active.
    pub latents: Vec<(NodeId, NodeId)>,
    /// Per-step inputs of the position-velocity path, retained for the
    /// optional reconstruction regularizer.
    pub pv_inputs: Vec<NodeId>,
    /// Reparameterized (or mean) latent features per VAE path, same order as
    /// `latents`.
    pub latent_features: Vec<NodeId>,
}

fn with_path(path: &str, e: PtiError) -> PtiError {
    match e {
        PtiError::Shape {
            context,
            expected,
            got,
        } => PtiError::Shape {
            context: format!("{path}: {context}"),
            expected,
            got,
        },
        other => other,
    }
}

/// Encode every enabled path of a sample and concatenate in the fixed order.
/// `noise=None` is deterministic evaluation; disabled paths contribute zero
/// segments and no latent.
pub fn encode_sample(
    ctx: &mut ModelCtx,
    sample: &PedestrianSample,
    cfg: &EncoderConfig,
    noise: Option<&SampleNoise>,
) -> Result<EncodeOutput> {
    let layout = FusedLayout::new(cfg);
    let m = sample.past.positions.len();

    let pv_inputs: Vec<NodeId> = (0..m)
        .map(|t| {
            let p = &sample.past.positions[t];
            let v = &sample.past.velocities[t];
            ctx.g.input1(Array1::from_vec(vec![
                p.x, p.y, p.w, p.h, v.dx, v.dy, v.dw, v.dh,
            ]))
        })
        .collect();
    let pv = lstm_vae_encode(ctx, "pv", &pv_inputs, cfg, noise.map(|n| n.pv.as_slice()))
        .map_err(|e| with_path("pv", e))?;

    let attrs = ctx
        .g
        .input1(Array1::from_vec(sample.local.pedestrian_attrs.clone()));
    let lcf_p = mlp_encode(ctx, attrs, true).map_err(|e| with_path("lcf_p", e))?;

    let b_inputs: Vec<NodeId> = sample
        .local
        .behavior_attrs
        .iter()
        .map(|v| ctx.g.input1(Array1::from_vec(v.clone())))
        .collect();
    let lcf_b = lstm_vae_encode(
        ctx,
        "lcf_b",
        &b_inputs,
        cfg,
        noise.map(|n| n.lcf_b.as_slice()),
    )
    .map_err(|e| with_path("lcf_b", e))?;

    let scene_active =
        cfg.use_scene_attrs && sample.local.scene_attrs.is_some() && ctx.has("lcf_s.enc0.w_ih");
    let lcf_s = if scene_active {
        let s_inputs: Vec<NodeId> = sample
            .local
            .scene_attrs
            .as_ref()
            .unwrap()
            .iter()
            .map(|v| ctx.g.input1(Array1::from_vec(v.clone())))
            .collect();
        Some(
            lstm_vae_encode(
                ctx,
                "lcf_s",
                &s_inputs,
                cfg,
                noise.and_then(|n| n.lcf_s.as_deref()),
            )
            .map_err(|e| with_path("lcf_s", e))?,
        )
    } else {
        None
    };
    let lcf_s_feat = match &lcf_s {
        Some(out) => out.feature,
        None => zeros_node(ctx.g, &[layout.segment("lcf_s").1]),
    };

    let gf_img = if cfg.use_images {
        let imgs: Vec<NodeId> = sample
            .global_ctx
            .images
            .iter()
            .map(|a| ctx.g.input(a.clone().into_dyn()))
            .collect();
        conv_lstm_forward(ctx, &imgs, cfg).map_err(|e| with_path("gf_img", e))?
    } else {
        zeros_node(ctx.g, &[cfg.gf_img_dim])
    };

    let gf_o = if cfg.use_flow {
        let fl: Vec<NodeId> = sample
            .global_ctx
            .flows
            .iter()
            .map(|a| ctx.g.input(a.clone().into_dyn()))
            .collect();
        flow_backbone_forward(ctx, &fl, cfg).map_err(|e| with_path("gf_o", e))?
    } else {
        zeros_node(ctx.g, &[cfg.gf_o_dim])
    };

    let fused = ctx
        .g
        .concat(&[pv.feature, lcf_p, lcf_b.feature, lcf_s_feat, gf_img, gf_o]);
    debug_assert_eq!(ctx.g.value(fused).len(), layout.total());

    let mut latents = vec![(pv.mean, pv.log_var), (lcf_b.mean, lcf_b.log_var)];
    let mut latent_features = vec![pv.feature, lcf_b.feature];
    if let Some(out) = lcf_s {
        latents.push((out.mean, out.log_var));
        latent_features.push(out.feature);
    }
    Ok(EncodeOutput {
        fused,
        latents,
        pv_inputs,
        latent_features,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::super::{init_params, EncoderConfig, ModelDims, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Miniature config every model test uses: small enough that full
    /// forward/backward passes and finite-difference sweeps run in
    /// milliseconds.
    pub fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            latent_dim: 4,
            lstm_hidden: 8,
            lstm_layers: 2,
            mlp_width: 4,
            convlstm_filters: 2,
            convlstm_kernel: 3,
            convlstm_stride: 2,
            pool_size: 1,
            flow_base_channels: 2,
            gf_img_dim: 6,
            gf_o_dim: 5,
            ..EncoderConfig::default()
        }
    }

    pub fn tiny_dims() -> ModelDims {
        ModelDims {
            attrs_in: 3,
            behavior_in: 4,
            scene_in: Some(5),
        }
    }

    pub fn tiny_store(seed: u64) -> ParamStore {
        init_params(&tiny_config(), &tiny_dims(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// `tiny_store` plus the lazily-sized conv FCs for the given input dims.
    pub fn tiny_store_at(seed: u64, input_hw: (usize, usize)) -> ParamStore {
        let mut ps = tiny_store(seed);
        crate::model::ensure_conv_fc(
            &mut ps,
            &tiny_config(),
            input_hw,
            &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        );
        ps
    }
}
