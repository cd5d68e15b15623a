//! Iterative recurrent decoders: n-step future boxes and per-step crossing
//! probability, both rolled out from the fused feature as the initial hidden
//! state.

use super::encoders::{affine_layer, lstm_step, zeros_node, LstmState};
use super::ModelCtx;
use crate::autodiff::NodeId;
use crate::domain::BoundingBox;
use crate::error::{PtiError, Result};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

/// Trajectory head semantics: the affine head's 4-vector is either an offset
/// added to the previous box (default, numerically stabler) or the absolute
/// next box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryHead {
    #[default]
    Offset,
    Absolute,
}

fn check_hidden(ctx: &ModelCtx, which: &str, fused_len: usize) -> Result<()> {
    let w_hh = ctx.param_shape(&format!("{which}.lstm.w_hh"));
    if w_hh[1] != fused_len {
        return Err(PtiError::Shape {
            context: format!("{which} hidden width"),
            expected: format!("{}", w_hh[1]),
            got: format!("fused feature of width {fused_len}"),
        });
    }
    Ok(())
}

/// Roll the trajectory decoder n steps. The hidden state starts at the fused
/// feature; the cell consumes the last observed box first, then its own
/// outputs. Returns one 4-vector node per step.
pub fn decode_trajectory(
    ctx: &mut ModelCtx,
    fused: NodeId,
    last_box: &BoundingBox,
    n: usize,
    head: TrajectoryHead,
) -> Result<Vec<NodeId>> {
    if n == 0 {
        return Err(PtiError::InvalidSequence(
            "trajectory horizon must be at least 1".into(),
        ));
    }
    let fw = ctx.g.value(fused).len();
    check_hidden(ctx, "dec_traj", fw)?;
    let mut state = LstmState {
        h: fused,
        c: zeros_node(ctx.g, &[fw]),
    };
    let mut prev = ctx.g.input1(Array1::from_vec(last_box.as_array().to_vec()));
    let mut outs = Vec::with_capacity(n);
    for _ in 0..n {
        state = lstm_step(ctx, "dec_traj.lstm", prev, state, fw);
        let head_out = affine_layer(ctx, "dec_traj.head", state.h);
        let step_box = match head {
            TrajectoryHead::Offset => ctx.g.add(prev, head_out),
            TrajectoryHead::Absolute => head_out,
        };
        outs.push(step_box);
        prev = step_box;
    }
    Ok(outs)
}

/// Roll the intention decoder n steps and return the per-step probability of
/// crossing (softmax component 1 of a 2-logit head). By default the input is
/// the last observed box held constant; passing the trajectory decoder's
/// outputs couples the two streams (input t becomes prediction t−1).
pub fn decode_intention(
    ctx: &mut ModelCtx,
    fused: NodeId,
    last_box: &BoundingBox,
    n: usize,
    coupled_boxes: Option<&[NodeId]>,
) -> Result<Vec<NodeId>> {
    if n == 0 {
        return Err(PtiError::InvalidSequence(
            "intention horizon must be at least 1".into(),
        ));
    }
    if let Some(boxes) = coupled_boxes {
        if boxes.len() < n - 1 {
            return Err(PtiError::Shape {
                context: "dec_int coupled inputs".into(),
                expected: format!("at least {} boxes", n - 1),
                got: format!("{}", boxes.len()),
            });
        }
    }
    let fw = ctx.g.value(fused).len();
    check_hidden(ctx, "dec_int", fw)?;
    let mut state = LstmState {
        h: fused,
        c: zeros_node(ctx.g, &[fw]),
    };
    let observed = ctx.g.input1(Array1::from_vec(last_box.as_array().to_vec()));
    let mut outs = Vec::with_capacity(n);
    for t in 0..n {
        let x = match coupled_boxes {
            Some(boxes) if t > 0 => boxes[t - 1],
            _ => observed,
        };
        state = lstm_step(ctx, "dec_int.lstm", x, state, fw);
        let logits = affine_layer(ctx, "dec_int.head", state.h);
        let probs = ctx.g.softmax(logits);
        outs.push(ctx.g.narrow(probs, 1, 1));
    }
    Ok(outs)
}
