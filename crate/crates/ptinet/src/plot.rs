//! Qualitative prediction plots: last observed frame as backdrop, predicted
//! and ground-truth boxes and trajectories, and a per-step crossing
//! probability bar inset.

use crate::data::{denormalize_box, resize_bilinear, write_png, NormalizeMode};
use crate::domain::{BoundingBox, PedestrianSample, PredictionOutput};
use crate::error::{PtiError, Result};
use ndarray::Array3;
use std::path::Path;

pub const COLOR_PRED: [f64; 3] = [1.0, 0.1, 0.1];
pub const COLOR_GT_BOX: [f64; 3] = [1.0, 1.0, 1.0];
pub const COLOR_GT_TRAJ: [f64; 3] = [0.2, 0.4, 1.0];
const COLOR_BAR: [f64; 3] = [1.0, 0.55, 0.1];
const COLOR_BAR_BG: [f64; 3] = [0.07, 0.07, 0.07];

/// Integer raster bounds (x0, y0, x1, y1), half-open, of a center-format box.
fn box_bounds(b: &BoundingBox, dims: (usize, usize)) -> (usize, usize, usize, usize) {
    let (h, w) = dims;
    let clamp = |v: f64, hi: usize| (v.round().max(0.0) as usize).min(hi);
    let x0 = clamp(b.x - b.w / 2.0, w);
    let x1 = clamp(b.x + b.w / 2.0, w);
    let y0 = clamp(b.y - b.h / 2.0, h);
    let y1 = clamp(b.y + b.h / 2.0, h);
    (x0, y0, x1, y1)
}

/// Pixels of a one-pixel-wide rectangle outline, clipped to the image.
/// Identical boxes always rasterize to identical pixel sets.
pub fn box_outline_pixels(b: &BoundingBox, dims: (usize, usize)) -> Vec<(usize, usize)> {
    let (x0, y0, x1, y1) = box_bounds(b, dims);
    if x1 <= x0 || y1 <= y0 {
        return Vec::new();
    }
    let mut px = Vec::new();
    for x in x0..x1 {
        px.push((x, y0));
        if y1 - 1 > y0 {
            px.push((x, y1 - 1));
        }
    }
    for y in (y0 + 1)..y1.saturating_sub(1) {
        px.push((x0, y));
        if x1 - 1 > x0 {
            px.push((x1 - 1, y));
        }
    }
    px.sort_unstable();
    px.dedup();
    px
}

/// Bar heights in pixels for the probability inset; 1.0 fills the inset.
pub fn bar_heights(probs: &[f64], inset_h: usize) -> Vec<usize> {
    probs
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * inset_h as f64).round() as usize)
        .collect()
}

fn put(img: &mut Array3<f64>, x: usize, y: usize, color: [f64; 3]) {
    for (c, &v) in color.iter().enumerate() {
        img[[c, y, x]] = v;
    }
}

fn draw_outline(img: &mut Array3<f64>, b: &BoundingBox, dims: (usize, usize), color: [f64; 3]) {
    for (x, y) in box_outline_pixels(b, dims) {
        put(img, x, y, color);
    }
}

/// A 2x2 dot at the box center, clipped.
fn draw_dot(img: &mut Array3<f64>, b: &BoundingBox, dims: (usize, usize), color: [f64; 3]) {
    let (h, w) = dims;
    let cx = b.x.round() as i64;
    let cy = b.y.round() as i64;
    for dy in 0..2i64 {
        for dx in 0..2i64 {
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                put(img, x as usize, y as usize, color);
            }
        }
    }
}

/// Render one sample's prediction against its ground truth and write a PNG.
///
/// Layout: the last observed frame (upscaled to source resolution, or mid
/// gray when no frames are attached) fills the canvas; the final predicted
/// box is drawn as an outline in red and the final ground-truth box in
/// white; per-step box centers are dotted along both trajectories (red
/// predicted, blue ground truth); a bottom inset shows one bar per future
/// step whose height is the predicted crossing probability.
pub fn emit_qualitative_plot(
    sample: &PedestrianSample,
    source_dims: (usize, usize),
    prediction: &PredictionOutput,
    normalize: NormalizeMode,
    out_path: &Path,
) -> Result<()> {
    let (h, w) = source_dims;
    if h < 8 || w < 8 {
        return Err(PtiError::Config(format!(
            "plot canvas {h}x{w} too small"
        )));
    }
    let n = prediction.boxes.len();
    if n == 0 || prediction.boxes.len() != prediction.intention_probs.len() {
        return Err(PtiError::InvalidSequence(
            "prediction must have matching, nonempty boxes and probabilities".into(),
        ));
    }
    if sample.future_boxes.len() < n {
        return Err(PtiError::InvalidSequence(format!(
            "sample has {} future boxes but prediction has {n}",
            sample.future_boxes.len()
        )));
    }

    let mut img = match sample.global_ctx.images.last() {
        Some(frame) => resize_bilinear(frame, h, w),
        None => Array3::from_elem((3, h, w), 0.5),
    };

    let denorm = |b: &BoundingBox| denormalize_box(b, source_dims, normalize);
    let pred: Vec<BoundingBox> = prediction.boxes.iter().map(denorm).collect::<Result<_>>()?;
    let gt: Vec<BoundingBox> = sample.future_boxes[..n]
        .iter()
        .map(denorm)
        .collect::<Result<_>>()?;

    // Trajectory dots first, then the final boxes on top: ground truth under
    // the prediction so identical outputs leave only the predicted color.
    for b in &gt {
        draw_dot(&mut img, b, source_dims, COLOR_GT_TRAJ);
    }
    for b in &pred {
        draw_dot(&mut img, b, source_dims, COLOR_PRED);
    }
    draw_outline(&mut img, gt.last().expect("n >= 1"), source_dims, COLOR_GT_BOX);
    draw_outline(&mut img, pred.last().expect("n >= 1"), source_dims, COLOR_PRED);

    // Probability inset along the bottom edge.
    let inset_h = (h / 6).clamp(3, 40);
    let heights = bar_heights(&prediction.intention_probs, inset_h);
    let y_top = h - inset_h;
    for y in y_top..h {
        for x in 0..w {
            put(&mut img, x, y, COLOR_BAR_BG);
        }
    }
    let slot = w as f64 / n as f64;
    for (i, &bh) in heights.iter().enumerate() {
        let x0 = (i as f64 * slot).round() as usize;
        let x1 = (((i + 1) as f64 * slot).round() as usize).min(w);
        // One blank column between bars when there is room.
        let x1 = if x1 > x0 + 1 { x1 - 1 } else { x1 };
        for y in (h - bh)..h {
            for x in x0..x1 {
                put(&mut img, x, y, COLOR_BAR);
            }
        }
    }

    write_png(out_path, &img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_png;
    use crate::domain::dummy_sample;

    #[test]
    fn identical_boxes_rasterize_identically() {
        let dims = (60, 80);
        let a = BoundingBox::new(30.0, 20.0, 11.0, 17.0);
        let b = BoundingBox::new(30.0, 20.0, 11.0, 17.0);
        assert_eq!(box_outline_pixels(&a, dims), box_outline_pixels(&b, dims));
        assert!(!box_outline_pixels(&a, dims).is_empty());
    }

    #[test]
    fn outline_is_hollow_and_clipped() {
        let dims = (40, 40);
        let b = BoundingBox::new(20.0, 20.0, 10.0, 10.0);
        let px = box_outline_pixels(&b, dims);
        // Interior pixel is absent.
        assert!(!px.contains(&(20, 20)));
        // A box hanging off the edge clips without panicking.
        let edge = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let px = box_outline_pixels(&edge, dims);
        assert!(px.iter().all(|&(x, y)| x < 40 && y < 40));
        assert!(!px.is_empty());
    }

    #[test]
    fn full_probability_fills_inset() {
        assert_eq!(bar_heights(&[1.0, 0.0, 0.5], 10), vec![10, 0, 5]);
        assert_eq!(bar_heights(&[2.0, -1.0], 8), vec![8, 0]);
    }

    #[test]
    fn perfect_prediction_leaves_no_gt_box_pixels() {
        let dims = (48, 64);
        let sample = dummy_sample(4, 3);
        let pred = PredictionOutput::new(
            sample.future_boxes.clone(),
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.png");
        emit_qualitative_plot(&sample, dims, &pred, NormalizeMode::None, &path).unwrap();
        let img = read_png(&path).unwrap();
        assert_eq!(img.shape(), [3, 48, 64]);
        // The white ground-truth outline must be fully overdrawn by the
        // identical predicted outline.
        let mut white = 0;
        let mut red = 0;
        for y in 0..48 {
            for x in 0..64 {
                let (r, g, b) = (img[[0, y, x]], img[[1, y, x]], img[[2, y, x]]);
                if r > 0.9 && g > 0.9 && b > 0.9 {
                    white += 1;
                }
                if r > 0.9 && g < 0.3 && b < 0.3 {
                    red += 1;
                }
            }
        }
        assert_eq!(white, 0, "ground-truth outline should be hidden");
        assert!(red > 0, "predicted outline should be visible");
        // Probability 1.0 everywhere: the inset's top row is fully bar
        // colored wherever a bar slot starts.
        let inset_h = (48usize / 6).clamp(3, 40);
        let y = 48 - inset_h;
        let bar_pixels = (0..64)
            .filter(|&x| {
                let (r, g, b) = (img[[0, y, x]], img[[1, y, x]], img[[2, y, x]]);
                r > 0.9 && g > 0.4 && g < 0.7 && b < 0.3
            })
            .count();
        assert!(bar_pixels > 32, "full-height bars expected, got {bar_pixels}");
    }

    #[test]
    fn divergent_prediction_shows_both_outlines() {
        let dims = (48, 64);
        let sample = dummy_sample(4, 3);
        let shifted: Vec<BoundingBox> = sample
            .future_boxes
            .iter()
            .map(|b| BoundingBox::new(b.x + 15.0, b.y + 10.0, b.w, b.h))
            .collect();
        let pred = PredictionOutput::new(shifted, vec![0.0, 0.5, 1.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.png");
        emit_qualitative_plot(&sample, dims, &pred, NormalizeMode::None, &path).unwrap();
        let img = read_png(&path).unwrap();
        let mut white = 0;
        let mut red = 0;
        for y in 0..48 {
            for x in 0..64 {
                let (r, g, b) = (img[[0, y, x]], img[[1, y, x]], img[[2, y, x]]);
                if r > 0.9 && g > 0.9 && b > 0.9 {
                    white += 1;
                }
                if r > 0.9 && g < 0.3 && b < 0.3 {
                    red += 1;
                }
            }
        }
        assert!(white > 0, "ground-truth outline should be visible");
        assert!(red > 0, "predicted outline should be visible");
    }

    #[test]
    fn rejects_mismatched_prediction() {
        let sample = dummy_sample(4, 3);
        let pred = PredictionOutput::new(
            sample.future_boxes[..2].to_vec(),
            vec![0.5, 0.5],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        // Shorter prediction than ground truth is fine (prefix)...
        emit_qualitative_plot(
            &sample,
            (48, 64),
            &pred,
            NormalizeMode::None,
            &dir.path().join("ok.png"),
        )
        .unwrap();
        // ...but a longer one is not.
        let long = PredictionOutput::new(
            vec![BoundingBox::new(5.0, 5.0, 2.0, 2.0); 9],
            vec![0.5; 9],
        )
        .unwrap();
        assert!(emit_qualitative_plot(
            &sample,
            (48, 64),
            &long,
            NormalizeMode::None,
            &dir.path().join("bad.png"),
        )
        .is_err());
    }
}
