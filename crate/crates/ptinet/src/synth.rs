//! Deterministic synthetic scenario generator: renders frames, analytic
//! optical flow, and annotated tracks in the canonical formats so the whole
//! pipeline runs without real datasets.
//!
//! Each pedestrian gets its own video. Crossing pedestrians walk parallel to
//! the road, then turn toward it at frame τ. Their intention label flips to 1
//! at λ = τ − intent_lead. An observable onset starts earlier still, at
//! o = λ − precue_lead: the true motion gains a small alternating vertical
//! wobble (visible exactly in the analytic flow, hidden in the jittered box
//! annotations), the rendered rectangle brightens frame by frame, and the
//! "look" behavior attribute steps through graded categories
//! (`glance-00`, `glance-01`, …) that track time since onset, saturating at
//! `precue_lead − 1` — precisely the point past which every future step is
//! already labeled positive. Together attributes, flow, and images make
//! per-step future labels recoverable, while the trajectory alone stays
//! ambiguous during the lead window.

use crate::data::{
    emit_tracks, flow_path_for, format_frame_uri, write_flow_file, write_png, AttrsRecord,
    BehaviorRecord, PedestrianTrack, SceneRecord,
};
use crate::domain::BoundingBox;
use crate::error::{PtiError, Result};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Frame rate all synthetic scenarios are annotated at.
pub const SYNTH_FPS: f64 = 30.0;

/// Knobs for one generated scenario (a set of single-pedestrian videos).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Number of pedestrians; each gets its own video and track.
    pub num_pedestrians: usize,
    /// Frames per track; must cover the window lengths callers intend to cut.
    pub frames_per_track: usize,
    /// Rendered frame size as (H, W).
    pub image_dims: (usize, usize),
    /// Fraction of pedestrians that cross, in [0, 1].
    pub crossing_fraction: f64,
    /// Background translation per frame (x, y), simulating ego motion.
    pub ego_speed: (f64, f64),
    /// Std-dev of the annotation jitter added to every box coordinate.
    pub noise_std: f64,
    /// Parallel-walk speed in pixels/frame.
    pub walk_speed: f64,
    /// Vertical speed after the turn, pixels/frame.
    pub turn_speed: f64,
    /// Relative per-track speed spread: each track draws its walk and turn
    /// speeds uniformly from `base * (1 ± speed_jitter)`. With annotation
    /// noise well above the per-pair box displacement this makes the
    /// noise-free flow the only precise velocity source.
    #[serde(default)]
    pub speed_jitter: f64,
    /// Amplitude of the alternating pre-turn wobble (kept below noise_std so
    /// the jittered boxes hide it while the analytic flow shows it exactly).
    pub wobble: f64,
    /// Frames between the label flip and the turn.
    pub intent_lead: usize,
    /// Frames between the observable onset and the label flip.
    pub precue_lead: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_pedestrians: 4,
            frames_per_track: 100,
            image_dims: (240, 420),
            crossing_fraction: 0.5,
            ego_speed: (2.0, 0.0),
            noise_std: 2.0,
            walk_speed: 2.0,
            turn_speed: 2.5,
            speed_jitter: 0.0,
            wobble: 1.2,
            intent_lead: 15,
            precue_lead: 15,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_pedestrians == 0 {
            return Err(PtiError::Config("num_pedestrians must be >= 1".into()));
        }
        if self.frames_per_track < 2 {
            return Err(PtiError::Config("frames_per_track must be >= 2".into()));
        }
        if self.image_dims.0 == 0 || self.image_dims.1 == 0 {
            return Err(PtiError::Config("image_dims must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.crossing_fraction) {
            return Err(PtiError::Config(format!(
                "crossing_fraction must be in [0,1], got {}",
                self.crossing_fraction
            )));
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("walk_speed", self.walk_speed),
            ("turn_speed", self.turn_speed),
            ("wobble", self.wobble),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(PtiError::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !self.ego_speed.0.is_finite() || !self.ego_speed.1.is_finite() {
            return Err(PtiError::Config("ego_speed must be finite".into()));
        }
        if !self.speed_jitter.is_finite() || !(0.0..1.0).contains(&self.speed_jitter) {
            return Err(PtiError::Config(format!(
                "speed_jitter must be in [0,1), got {}",
                self.speed_jitter
            )));
        }
        if self.intent_lead == 0 || self.precue_lead == 0 {
            return Err(PtiError::Config("leads must be >= 1".into()));
        }
        Ok(())
    }
}

/// Phase timestamps and true geometry for one generated track; enough to
/// re-derive every label independently of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPhases {
    pub video_id: String,
    pub pedestrian_id: String,
    pub crossing: bool,
    /// Observable onset frame (wobble + brightening start), crossing only.
    pub onset: Option<usize>,
    /// First frame with intention label 1, crossing only.
    pub label_start: Option<usize>,
    /// Turn frame, crossing only.
    pub turn: Option<usize>,
    /// True (un-jittered) box per frame.
    pub true_boxes: Vec<BoundingBox>,
}

/// Sidecar metadata written next to the tracks file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub fps: f64,
    pub config: ScenarioConfig,
    pub tracks: Vec<TrackPhases>,
}

/// Paths and in-memory copies of everything one generation run produced.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub tracks_path: PathBuf,
    pub vocab_path: PathBuf,
    pub meta_path: PathBuf,
    pub tracks: Vec<PedestrianTrack>,
    pub meta: ScenarioMeta,
}

/// Scene state of one frame, as consumed by [`analytic_flow`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    /// Background translation toward the next frame.
    pub ego: (f64, f64),
    /// True pedestrian box in this frame, if any pedestrian is present.
    pub ped_box: Option<BoundingBox>,
}

/// Integer pixel bounds (y0..y1, x0..x1 half-open) covered by a box, clipped
/// to the frame; `None` when fully outside. Shared by the renderer and the
/// flow writer so "inside the box" means the same pixels in both.
fn raster_bounds(b: &BoundingBox, dims: (usize, usize)) -> Option<(usize, usize, usize, usize)> {
    let (h, w) = dims;
    let y0 = (b.y - b.h / 2.0).round().max(0.0) as usize;
    let y1 = ((b.y + b.h / 2.0).round() as i64).min(h as i64);
    let x0 = (b.x - b.w / 2.0).round().max(0.0) as usize;
    let x1 = ((b.x + b.w / 2.0).round() as i64).min(w as i64);
    if y1 <= y0 as i64 || x1 <= x0 as i64 {
        return None;
    }
    Some((y0, y1 as usize, x0, x1 as usize))
}

/// Ground-truth optical flow between two consecutive scene states:
/// background pixels carry the ego translation, pixels inside the pedestrian
/// box at t carry that pedestrian's box-center displacement.
pub fn analytic_flow(at: &SceneState, next: &SceneState, dims: (usize, usize)) -> Array3<f64> {
    let (h, w) = dims;
    let mut flow = Array3::<f64>::zeros((2, h, w));
    for y in 0..h {
        for x in 0..w {
            flow[[0, y, x]] = at.ego.0;
            flow[[1, y, x]] = at.ego.1;
        }
    }
    if let (Some(b0), Some(b1)) = (&at.ped_box, &next.ped_box) {
        if let Some((y0, y1, x0, x1)) = raster_bounds(b0, dims) {
            let (du, dv) = (b1.x - b0.x, b1.y - b0.y);
            for y in y0..y1 {
                for x in x0..x1 {
                    flow[[0, y, x]] = du;
                    flow[[1, y, x]] = dv;
                }
            }
        }
    }
    flow
}

/// Smooth seeded background texture, larger than the frame by the total ego
/// drift so every frame crops inside it.
fn make_canvas(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array3<f64> {
    let mut raw = Array3::<f64>::zeros((3, h, w));
    for v in raw.iter_mut() {
        *v = rng.gen_range(0.15..0.85);
    }
    // One 3x3 box blur pass smooths per-pixel noise into soft texture.
    let mut out = Array3::<f64>::zeros((3, h, w));
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = y as i64 + dy;
                        let xx = x as i64 + dx;
                        if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                            acc += raw[[c, yy as usize, xx as usize]];
                            cnt += 1.0;
                        }
                    }
                }
                out[[c, y, x]] = acc / cnt;
            }
        }
    }
    out
}

/// Bilinear crop of the canvas at a fractional offset.
fn crop_canvas(canvas: &Array3<f64>, oy: f64, ox: f64, h: usize, w: usize) -> Array3<f64> {
    let ch = canvas.shape()[1];
    let cw = canvas.shape()[2];
    let mut out = Array3::<f64>::zeros((3, h, w));
    for y in 0..h {
        let sy = (y as f64 + oy).clamp(0.0, (ch - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(ch - 1);
        let fy = sy - y0 as f64;
        for x in 0..w {
            let sx = (x as f64 + ox).clamp(0.0, (cw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(cw - 1);
            let fx = sx - x0 as f64;
            for c in 0..3 {
                let a = canvas[[c, y0, x0]];
                let b = canvas[[c, y0, x1]];
                let d = canvas[[c, y1, x0]];
                let e = canvas[[c, y1, x1]];
                let top = a + (b - a) * fx;
                let bot = d + (e - d) * fx;
                out[[c, y, x]] = top + (bot - top) * fy;
            }
        }
    }
    out
}

fn fill_rect(img: &mut Array3<f64>, b: &BoundingBox, color: [f64; 3]) {
    let dims = (img.shape()[1], img.shape()[2]);
    if let Some((y0, y1, x0, x1)) = raster_bounds(b, dims) {
        for y in y0..y1 {
            for x in x0..x1 {
                for c in 0..3 {
                    img[[c, y, x]] = color[c];
                }
            }
        }
    }
}

struct TrackPlan {
    crossing: bool,
    onset: usize,
    label_start: usize,
    turn: usize,
    true_boxes: Vec<BoundingBox>,
    base_color: [f64; 3],
    attrs: AttrsRecord,
    scene: SceneRecord,
}

/// Brightness ramp of a crossing pedestrian's rectangle after the onset; the
/// per-frame green level directly encodes time-since-onset.
fn ped_color(base: [f64; 3], crossing: bool, onset: usize, frame: usize) -> [f64; 3] {
    if crossing && frame >= onset {
        let ramp = 0.04 * (frame - onset) as f64;
        [base[0], (base[1] + ramp).min(1.0), base[2]]
    } else {
        base
    }
}

fn plan_track(
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
    crossing: bool,
) -> Result<TrackPlan> {
    let (h, w) = (cfg.image_dims.0 as f64, cfg.image_dims.1 as f64);
    let l = cfg.frames_per_track;
    let margin = 2.0;
    // Boxes are sized generously relative to the frame so that after the
    // training-time downsample the agent still spans several feature cells.
    let bh = (0.35 * h).round().max(4.0);
    let bw = (0.45 * bh).round().max(3.0);

    // Per-track speeds; drawn unconditionally so the rng stream stays aligned
    // between crossing and non-crossing tracks.
    let jitter_factor = |rng: &mut ChaCha8Rng| {
        1.0 + cfg.speed_jitter * rng.gen_range(-1.0..=1.0)
    };
    let walk_speed = cfg.walk_speed * jitter_factor(rng);
    let turn_speed = cfg.turn_speed * jitter_factor(rng);

    // Phase schedule. The onset needs a couple of lead-in frames; the turn
    // must leave room for the descent to stay inside the frame.
    let lead_total = cfg.intent_lead + cfg.precue_lead;
    let y_walk = (0.30 * h).max(margin + bh / 2.0);
    let (onset, label_start, turn) = if crossing {
        let turn_lo = lead_total + 2;
        let y_room = h - margin - bh / 2.0 - y_walk;
        let turn_hi = l as i64 - 2;
        // Descent constraint: (l-1-turn)*turn_speed <= y_room.
        let turn_min_for_room = if turn_speed > 0.0 {
            (l as f64 - 1.0 - y_room / turn_speed).ceil().max(0.0) as i64
        } else {
            0
        };
        let lo = (turn_lo as i64).max(turn_min_for_room);
        if lo > turn_hi {
            return Err(PtiError::Generation(format!(
                "cannot place a turn: frames_per_track={l} with leads {lead_total} \
                 and turn descent needing {turn_min_for_room} leaves no room \
                 (frame {}x{} too small or track too short)",
                cfg.image_dims.0, cfg.image_dims.1
            )));
        }
        let turn = rng.gen_range(lo..=turn_hi) as usize;
        (turn - lead_total, turn - cfg.intent_lead, turn)
    } else {
        // Unused for non-crossing tracks; keep the rng draw count aligned so
        // crossing assignment does not shift later tracks' randomness.
        let _ = rng.gen_range(0..=1u32);
        (0, 0, 0)
    };

    // Walk path: horizontal at y_walk, direction chosen per track, slowing to
    // a quarter of walk speed after the turn.
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let pre_frames = if crossing { turn } else { l - 1 };
    let post_frames = l - 1 - pre_frames;
    let span = walk_speed * pre_frames as f64 + 0.25 * walk_speed * post_frames as f64;
    let need = span + bw + 2.0 * margin;
    if need > w {
        return Err(PtiError::Generation(format!(
            "walk path needs {need:.1} px horizontally but the frame is only {w:.0} px wide"
        )));
    }
    let x0 = if dir > 0.0 {
        margin + bw / 2.0
    } else {
        w - margin - bw / 2.0
    };

    let mut true_boxes = Vec::with_capacity(l);
    let mut x = x0;
    let mut y = y_walk;
    for f in 0..l {
        true_boxes.push(BoundingBox::new(x, y, bw, bh));
        if f + 1 < l {
            let (vx, vy) = if crossing && f >= turn {
                (0.25 * walk_speed * dir, turn_speed)
            } else if crossing && f >= onset && f < turn {
                let sign = if (f - onset) % 2 == 0 { 1.0 } else { -1.0 };
                (walk_speed * dir, cfg.wobble * sign)
            } else {
                (walk_speed * dir, 0.0)
            };
            x += vx;
            y += vy;
        }
    }

    // Every palette entry shares the same low base green: the crossing
    // pre-cue ramp (green channel, 0.04/frame) then encodes time-since-onset
    // as one global linear readout, unsaturated through the pre-turn window,
    // regardless of which color the pedestrian wears.
    let palette = [
        [0.85, 0.15, 0.15],
        [0.15, 0.15, 0.85],
        [0.60, 0.15, 0.60],
        [0.35, 0.15, 0.45],
    ];
    let base_color = *palette.choose(rng).unwrap();

    let ages = ["child", "adult", "senior"];
    let genders = ["female", "male"];
    let attrs = AttrsRecord {
        age: Some((*ages.choose(rng).unwrap()).to_string()),
        gender: Some((*genders.choose(rng).unwrap()).to_string()),
        group_size: Some(if crossing { "1" } else { "2" }.to_string()),
    };
    let scene = SceneRecord {
        motion_dir: Some("lateral".into()),
        lanes: Some(if rng.gen_bool(0.5) { "2" } else { "4" }.into()),
        sign: Some("none".into()),
        crossing: Some(if rng.gen_bool(0.5) { "zebra" } else { "unmarked" }.into()),
        road_type: Some("street".into()),
        signal: Some("none".into()),
    };

    Ok(TrackPlan {
        crossing,
        onset,
        label_start,
        turn,
        true_boxes,
        base_color,
        attrs,
        scene,
    })
}

/// Generate a full scenario under `out_dir`: frames and flow files per video,
/// plus `tracks.jsonl`, `vocab.json`, and `scenario_meta.json`.
pub fn generate_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = cfg.image_dims;
    let l = cfg.frames_per_track;

    // Deterministic crossing assignment: the first round(fraction*n) tracks
    // cross, then the order is shuffled.
    let n_cross = (cfg.crossing_fraction * cfg.num_pedestrians as f64).round() as usize;
    let mut crossing_flags: Vec<bool> = (0..cfg.num_pedestrians).map(|i| i < n_cross).collect();
    crossing_flags.shuffle(&mut rng);

    let jitter = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).map_err(|e| {
        PtiError::Config(format!("invalid noise_std: {e}"))
    })?;

    let mut tracks = Vec::with_capacity(cfg.num_pedestrians);
    let mut phases = Vec::with_capacity(cfg.num_pedestrians);

    for (i, &crossing) in crossing_flags.iter().enumerate() {
        let plan = plan_track(cfg, &mut rng, crossing)?;
        let video_id = format!("video_{i:04}");
        let frame_dir = out_dir.join("frames").join(&video_id);
        std::fs::create_dir_all(&frame_dir).map_err(|e| PtiError::io(&frame_dir, e))?;
        let frame_uri = frame_dir.join("%06d.png").to_string_lossy().into_owned();

        // Canvas sized for the total ego drift over the track.
        let pad_y = (l as f64 * cfg.ego_speed.1.abs()).ceil() as usize + 2;
        let pad_x = (l as f64 * cfg.ego_speed.0.abs()).ceil() as usize + 2;
        let canvas = make_canvas(&mut rng, h + pad_y, w + pad_x);
        let base_oy = if cfg.ego_speed.1 < 0.0 { pad_y as f64 } else { 0.0 };
        let base_ox = if cfg.ego_speed.0 < 0.0 { pad_x as f64 } else { 0.0 };

        // Render frames and flow, annotate with jitter.
        let mut boxes = Vec::with_capacity(l);
        let mut intent = Vec::with_capacity(l);
        let mut behavior = Vec::with_capacity(l);
        let mut scene_rows = Vec::with_capacity(l);
        for f in 0..l {
            let tb = &plan.true_boxes[f];
            let oy = base_oy + f as f64 * cfg.ego_speed.1;
            let ox = base_ox + f as f64 * cfg.ego_speed.0;
            let mut img = crop_canvas(&canvas, oy, ox, h, w);
            fill_rect(
                &mut img,
                tb,
                ped_color(plan.base_color, plan.crossing, plan.onset, f),
            );
            let img_path = PathBuf::from(format_frame_uri(&frame_uri, f as i64)?);
            write_png(&img_path, &img)?;

            if f + 1 < l {
                let flow = analytic_flow(
                    &SceneState {
                        ego: cfg.ego_speed,
                        ped_box: Some(*tb),
                    },
                    &SceneState {
                        ego: cfg.ego_speed,
                        ped_box: Some(plan.true_boxes[f + 1]),
                    },
                    (h, w),
                );
                write_flow_file(&flow_path_for(img_path.to_string_lossy().as_ref()), &flow)?;
            }

            let noisy = BoundingBox::new(
                tb.x + jitter.sample(&mut rng),
                tb.y + jitter.sample(&mut rng),
                (tb.w + jitter.sample(&mut rng)).max(1.5),
                (tb.h + jitter.sample(&mut rng)).max(1.5),
            );
            boxes.push(noisy);

            let labeled = plan.crossing && f >= plan.label_start;
            intent.push(u8::from(labeled));
            // Graded attention: the clamp at precue_lead − 1 merges exactly
            // the phases whose entire label horizon is already positive, so
            // the category stays a lossless readout of the switch step.
            let look = if plan.crossing && f >= plan.onset && f < plan.turn {
                let grade = (f - plan.onset).min(cfg.precue_lead.saturating_sub(1));
                format!("glance-{grade:02}")
            } else {
                "away".to_string()
            };
            let acting = plan.crossing && f >= plan.turn;
            behavior.push(BehaviorRecord {
                look: Some(look),
                nod: None,
                gesture: None,
                action: Some(if acting { "crossing" } else { "walking" }.into()),
            });
            scene_rows.push(plan.scene.clone());
        }

        tracks.push(PedestrianTrack {
            video_id: video_id.clone(),
            pedestrian_id: "ped_0".into(),
            frames: (0..l as i64).collect(),
            boxes,
            intent,
            behavior,
            scene: Some(scene_rows),
            attrs: plan.attrs.clone(),
            image_dims: (h, w),
            frame_uri,
        });
        phases.push(TrackPhases {
            video_id,
            pedestrian_id: "ped_0".into(),
            crossing: plan.crossing,
            onset: plan.crossing.then_some(plan.onset),
            label_start: plan.crossing.then_some(plan.label_start),
            turn: plan.crossing.then_some(plan.turn),
            true_boxes: plan.true_boxes.clone(),
        });
    }

    for t in &tracks {
        t.validate()?;
    }

    let tracks_path = out_dir.join("tracks.jsonl");
    std::fs::write(&tracks_path, emit_tracks(&tracks))
        .map_err(|e| PtiError::io(&tracks_path, e))?;

    let vocab = crate::data::AttributeVocabulary::from_tracks(&tracks);
    let vocab_path = out_dir.join("vocab.json");
    std::fs::write(&vocab_path, vocab.to_json()).map_err(|e| PtiError::io(&vocab_path, e))?;

    let meta = ScenarioMeta {
        fps: SYNTH_FPS,
        config: cfg.clone(),
        tracks: phases,
    };
    let meta_path = out_dir.join("scenario_meta.json");
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta serialization"),
    )
    .map_err(|e| PtiError::io(&meta_path, e))?;

    Ok(ScenarioOutput {
        tracks_path,
        vocab_path,
        meta_path,
        tracks,
        meta,
    })
}

/// Read back a previously generated scenario's metadata.
pub fn read_meta(path: &Path) -> Result<ScenarioMeta> {
    let bytes = std::fs::read(path).map_err(|e| PtiError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
