//! Canonical value types shared by every other module.
//!
//! Boxes are center-based (x, y, w, h) in image-plane pixels. A sample is one
//! training/eval window: m observed frames plus n future frames of a single
//! pedestrian.

use crate::error::{PtiError, Result};
use ndarray::Array3;

/// Axis-aligned bounding box, center coordinates plus extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl serde::Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_array().serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 4]>::deserialize(d)?;
        Ok(BoundingBox::from_array(a))
    }
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoundingBox::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    /// Componentwise difference `self - prev` as a velocity.
    pub fn diff(&self, prev: &BoundingBox) -> BoxVelocity {
        BoxVelocity {
            dx: self.x - prev.x,
            dy: self.y - prev.y,
            dw: self.w - prev.w,
            dh: self.h - prev.h,
        }
    }
}

/// Per-frame change of a bounding box, pixels/frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxVelocity {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxVelocity {
    pub fn zero() -> Self {
        BoxVelocity::default()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dw.is_finite() && self.dh.is_finite()
    }
}

/// Observed motion history: m boxes and their per-frame velocities.
///
/// `velocities[t]` equals `positions[t] - positions[t-1]` for t >= 1.
/// Element 0 is the velocity into the window start: windowing fills it from
/// the frame preceding the window when one exists, and with zeros at a true
/// track start.
#[derive(Debug, Clone, PartialEq)]
pub struct PastTrajectory {
    pub positions: Vec<BoundingBox>,
    pub velocities: Vec<BoxVelocity>,
}

/// Per-pedestrian context vectors: time-invariant attributes, per-frame
/// binary behavior vectors, and optional per-frame scene attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalContext {
    pub pedestrian_attrs: Vec<f64>,
    pub behavior_attrs: Vec<Vec<f64>>,
    pub scene_attrs: Option<Vec<Vec<f64>>>,
}

/// Full-frame context: m RGB frames `[3, H, W]` in [0,1] and m-1 dense flow
/// fields `[2, H, W]` (u, v planes) between consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalContext {
    pub images: Vec<Array3<f64>>,
    pub flows: Vec<Array3<f64>>,
}

/// One training/evaluation window for a single pedestrian.
#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianSample {
    pub past: PastTrajectory,
    pub local: LocalContext,
    pub global_ctx: GlobalContext,
    pub future_boxes: Vec<BoundingBox>,
    /// Per future step: 1 if the pedestrian will cross, else 0.
    pub future_intentions: Vec<u8>,
    pub pedestrian_id: String,
    pub video_id: String,
    /// Absolute frame index of the last observed frame.
    pub anchor_frame: usize,
}

/// Model output for one sample: n future boxes plus per-step crossing
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub boxes: Vec<BoundingBox>,
    pub intention_probs: Vec<f64>,
}

impl PredictionOutput {
    /// Construct with length/range validation.
    pub fn new(boxes: Vec<BoundingBox>, intention_probs: Vec<f64>) -> Result<Self> {
        if boxes.len() != intention_probs.len() || boxes.is_empty() {
            return Err(PtiError::InvalidSequence(format!(
                "prediction lengths differ or empty: {} boxes, {} probabilities",
                boxes.len(),
                intention_probs.len()
            )));
        }
        if let Some(p) = intention_probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(PtiError::InvalidSequence(format!(
                "intention probability {p} outside [0,1]"
            )));
        }
        Ok(PredictionOutput {
            boxes,
            intention_probs,
        })
    }
}

/// Per-frame box differences: element 0 is the zero vector, element t is
/// `positions[t] - positions[t-1]`.
pub fn compute_velocities(positions: &[BoundingBox]) -> Result<Vec<BoxVelocity>> {
    if positions.len() < 2 {
        return Err(PtiError::InvalidSequence(format!(
            "need at least 2 positions to difference, got {}",
            positions.len()
        )));
    }
    let mut out = Vec::with_capacity(positions.len());
    out.push(BoxVelocity::zero());
    for t in 1..positions.len() {
        out.push(positions[t].diff(&positions[t - 1]));
    }
    Ok(out)
}

/// Outcome of [`validate_sample`]: either valid, or the first violated
/// invariant with a short machine-checkable reason.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationResult {
    Valid,
    Invalid { reason: String },
}

impl ValidationResult {
    pub fn is_valid(&self) -> bool {
        matches!(self, ValidationResult::Valid)
    }

    fn invalid(reason: impl Into<String>) -> Self {
        ValidationResult::Invalid {
            reason: reason.into(),
        }
    }
}

/// Relative tolerance for velocity/position consistency. Windowed samples
/// satisfy it exactly; normalized samples only up to division rounding.
const VEL_REL_TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= VEL_REL_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Check every structural invariant of a sample against the expected window
/// lengths. Returns the first violation found rather than erroring.
pub fn validate_sample(sample: &PedestrianSample, m: usize, n: usize) -> ValidationResult {
    if m < 2 {
        return ValidationResult::invalid(format!("m must be >= 2, got {m}"));
    }
    if n < 1 {
        return ValidationResult::invalid(format!("n must be >= 1, got {n}"));
    }
    let past = &sample.past;
    if past.positions.len() != m {
        return ValidationResult::invalid(format!(
            "past positions length {} != m {}",
            past.positions.len(),
            m
        ));
    }
    if past.velocities.len() != m {
        return ValidationResult::invalid(format!(
            "past velocities length {} != m {}",
            past.velocities.len(),
            m
        ));
    }
    for (t, b) in past.positions.iter().enumerate() {
        if !b.is_finite() {
            return ValidationResult::invalid(format!("non-finite past box at step {t}"));
        }
        if b.w <= 0.0 || b.h <= 0.0 {
            return ValidationResult::invalid(format!(
                "degenerate box at past step {t}: w={}, h={}",
                b.w, b.h
            ));
        }
    }
    for (t, v) in past.velocities.iter().enumerate() {
        if !v.is_finite() {
            return ValidationResult::invalid(format!("non-finite velocity at step {t}"));
        }
        if t >= 1 {
            let d = past.positions[t].diff(&past.positions[t - 1]);
            let got = v.as_array();
            let want = d.as_array();
            if !(0..4).all(|k| close(got[k], want[k])) {
                return ValidationResult::invalid(format!(
                    "velocity at step {t} does not match position difference"
                ));
            }
        }
    }

    let local = &sample.local;
    if local.pedestrian_attrs.iter().any(|v| !v.is_finite()) {
        return ValidationResult::invalid("non-finite pedestrian attribute");
    }
    if local.behavior_attrs.len() != m {
        return ValidationResult::invalid(format!(
            "behavior length {} != m {}",
            local.behavior_attrs.len(),
            m
        ));
    }
    for (t, row) in local.behavior_attrs.iter().enumerate() {
        if row.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return ValidationResult::invalid(format!(
                "behavior entries at step {t} not in {{0,1}}"
            ));
        }
    }
    if let Some(scene) = &local.scene_attrs {
        if scene.len() != m {
            return ValidationResult::invalid(format!(
                "scene length {} != m {}",
                scene.len(),
                m
            ));
        }
        if scene.iter().flatten().any(|v| !v.is_finite()) {
            return ValidationResult::invalid("non-finite scene attribute");
        }
    }

    let g = &sample.global_ctx;
    if g.images.len() != m {
        return ValidationResult::invalid(format!(
            "image count {} != m {}",
            g.images.len(),
            m
        ));
    }
    if g.flows.len() + 1 != g.images.len() {
        return ValidationResult::invalid(format!(
            "flow count mismatch: {} flows for {} images",
            g.flows.len(),
            g.images.len()
        ));
    }
    let dims = g.images.first().map(|a| a.dim());
    if let Some((c, h, w)) = dims {
        if c != 3 {
            return ValidationResult::invalid(format!("image channel count {c} != 3"));
        }
        for (t, img) in g.images.iter().enumerate() {
            if img.dim() != (c, h, w) {
                return ValidationResult::invalid(format!("image {t} dims differ"));
            }
            if img.iter().any(|v| !v.is_finite()) {
                return ValidationResult::invalid(format!("non-finite pixel in image {t}"));
            }
        }
        for (t, flow) in g.flows.iter().enumerate() {
            if flow.dim() != (2, h, w) {
                return ValidationResult::invalid(format!(
                    "flow {t} dims {:?} do not match images ({h}, {w})",
                    flow.dim()
                ));
            }
            if flow.iter().any(|v| !v.is_finite()) {
                return ValidationResult::invalid(format!("non-finite value in flow {t}"));
            }
        }
    }

    if sample.future_boxes.len() != n {
        return ValidationResult::invalid(format!(
            "future box count {} != n {}",
            sample.future_boxes.len(),
            n
        ));
    }
    if sample.future_intentions.len() != n {
        return ValidationResult::invalid(format!(
            "future intention count {} != n {}",
            sample.future_intentions.len(),
            n
        ));
    }
    for (t, b) in sample.future_boxes.iter().enumerate() {
        if !b.is_finite() {
            return ValidationResult::invalid(format!("non-finite future box at step {t}"));
        }
        if b.w <= 0.0 || b.h <= 0.0 {
            return ValidationResult::invalid(format!(
                "degenerate box at future step {t}: w={}, h={}",
                b.w, b.h
            ));
        }
    }
    if let Some(l) = sample.future_intentions.iter().find(|l| **l > 1) {
        return ValidationResult::invalid(format!("intention label {l} not in {{0,1}}"));
    }
    ValidationResult::Valid
}

/// Minimal well-formed sample for the given window lengths (test fixture).
#[cfg(test)]
pub(crate) fn dummy_sample(m: usize, n: usize) -> PedestrianSample {
    let positions: Vec<BoundingBox> = (0..m)
        .map(|t| BoundingBox::new(10.0 + t as f64, 20.0, 5.0, 9.0))
        .collect();
    let velocities = compute_velocities(&positions).unwrap();
    PedestrianSample {
        past: PastTrajectory {
            positions,
            velocities,
        },
        local: LocalContext {
            pedestrian_attrs: vec![0.0, 1.0, 0.0],
            behavior_attrs: vec![vec![0.0, 1.0]; m],
            scene_attrs: Some(vec![vec![1.0, 0.0]; m]),
        },
        global_ctx: GlobalContext {
            images: vec![ndarray::Array3::zeros((3, 6, 8)); m],
            flows: vec![ndarray::Array3::zeros((2, 6, 8)); m - 1],
        },
        future_boxes: (0..n)
            .map(|t| BoundingBox::new(10.0 + (m + t) as f64, 20.0, 5.0, 9.0))
            .collect(),
        future_intentions: vec![0; n],
        pedestrian_id: "p0".into(),
        video_id: "v0".into(),
        anchor_frame: m - 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    #[test]
    fn velocities_difference_directly() {
        let v = compute_velocities(&[bb(10.0, 10.0, 5.0, 5.0), bb(12.0, 13.0, 5.0, 5.0)]).unwrap();
        assert_eq!(v[0], BoxVelocity::zero());
        assert_eq!(v[1].as_array(), [2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn velocities_constant_sequence_is_zero() {
        let v = compute_velocities(&[bb(4.0, 4.0, 2.0, 2.0); 5]).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.iter().all(|v| *v == BoxVelocity::zero()));
    }

    #[test]
    fn velocities_three_step_example() {
        let v = compute_velocities(&[
            bb(0.0, 0.0, 1.0, 1.0),
            bb(1.0, 0.0, 2.0, 1.0),
            bb(1.0, 2.0, 2.0, 3.0),
        ])
        .unwrap();
        assert_eq!(v[0].as_array(), [0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v[1].as_array(), [1.0, 0.0, 1.0, 0.0]);
        assert_eq!(v[2].as_array(), [0.0, 2.0, 0.0, 2.0]);
    }

    #[test]
    fn velocities_reject_short_input() {
        assert!(compute_velocities(&[bb(0.0, 0.0, 1.0, 1.0)]).is_err());
        assert!(compute_velocities(&[]).is_err());
    }

    #[test]
    fn validate_accepts_well_formed() {
        let s = dummy_sample(16, 15);
        assert_eq!(validate_sample(&s, 16, 15), ValidationResult::Valid);
    }

    #[test]
    fn validate_rejects_flow_count_mismatch() {
        let mut s = dummy_sample(4, 2);
        s.global_ctx.flows.push(Array3::zeros((2, 6, 8)));
        match validate_sample(&s, 4, 2) {
            ValidationResult::Invalid { reason } => {
                assert!(reason.contains("flow count mismatch"), "{reason}")
            }
            _ => panic!("expected rejection"),
        }
    }

    #[test]
    fn validate_rejects_degenerate_box() {
        let mut s = dummy_sample(4, 2);
        s.past.positions[2].w = 0.0;
        // Keep velocities consistent so the box check is what fires.
        s.past.velocities = compute_velocities(&s.past.positions).unwrap();
        match validate_sample(&s, 4, 2) {
            ValidationResult::Invalid { reason } => {
                assert!(reason.contains("degenerate box"), "{reason}")
            }
            _ => panic!("expected rejection"),
        }
    }

    #[test]
    fn validate_rejects_inconsistent_velocity() {
        let mut s = dummy_sample(4, 2);
        s.past.velocities[2].dx += 0.5;
        assert!(!validate_sample(&s, 4, 2).is_valid());
    }

    #[test]
    fn validate_allows_nonzero_window_start_velocity() {
        // Windowing fills element 0 from the preceding frame; any finite
        // value must be accepted there.
        let mut s = dummy_sample(4, 2);
        s.past.velocities[0].dx = 1.0;
        assert!(validate_sample(&s, 4, 2).is_valid());
    }

    #[test]
    fn validate_rejects_bad_label() {
        let mut s = dummy_sample(4, 2);
        s.future_intentions[1] = 2;
        assert!(!validate_sample(&s, 4, 2).is_valid());
    }

    proptest! {
        #[test]
        fn velocity_cumsum_reconstructs_positions(
            start in proptest::collection::vec(-512000i32..512000, 4),
            steps in proptest::collection::vec(proptest::collection::vec(-8192i32..8192, 4), 1..24),
        ) {
            // Coordinates quantized to 1/1024 px: sums and differences of
            // same-scale dyadics are exact in f64, so reconstruction must be
            // bitwise exact.
            let q = |v: i32| v as f64 / 1024.0;
            let mut positions = vec![bb(q(start[0]), q(start[1]), q(start[2]).abs() + 1.0, q(start[3]).abs() + 1.0)];
            for d in &steps {
                let p = positions.last().unwrap();
                positions.push(bb(p.x + q(d[0]), p.y + q(d[1]), p.w + q(d[2]).abs(), p.h + q(d[3]).abs()));
            }
            let vels = compute_velocities(&positions).unwrap();
            let mut acc = positions[0].as_array();
            for (t, v) in vels.iter().enumerate() {
                let dv = v.as_array();
                for k in 0..4 {
                    acc[k] += dv[k];
                }
                prop_assert_eq!(acc, positions[t].as_array());
            }
        }
    }
}
