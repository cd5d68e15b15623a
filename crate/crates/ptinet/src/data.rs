//! Dataset plumbing: the JSONL track interchange format, categorical
//! attribute encoding, track windowing, normalization, and the image/flow
//! file loaders.
//!
//! Wire format, one JSON object per line:
//! `video_id`, `pedestrian_id`, `frames` (increasing ints), `boxes`
//! (`[x_center, y_center, w, h]` floats in source pixels), `intent`
//! (0/1 per frame), `behavior` (per-frame objects: look/nod/gesture/action),
//! `scene` (optional per-frame objects: motion_dir/lanes/sign/crossing/
//! road_type/signal), `attrs` (age/gender/group_size), `image_dims`
//! (`[H, W]`), `frame_uri` (printf-style pattern taking the frame index).
//! Unknown keys are ignored.

use crate::domain::{
    compute_velocities, BoundingBox, BoxVelocity, GlobalContext, LocalContext, PastTrajectory,
    PedestrianSample,
};
use crate::error::{PtiError, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Per-frame behavioral annotation; absent entries encode to zero segments.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BehaviorRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub look: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nod: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gesture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
}

/// Per-frame scene annotation (absent for datasets without scene labels).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SceneRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lanes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<String>,
}

/// Track-level pedestrian attributes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttrsRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_size: Option<String>,
}

/// One pedestrian's full annotated history inside one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianTrack {
    pub video_id: String,
    pub pedestrian_id: String,
    pub frames: Vec<i64>,
    pub boxes: Vec<BoundingBox>,
    pub intent: Vec<u8>,
    pub behavior: Vec<BehaviorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<Vec<SceneRecord>>,
    pub attrs: AttrsRecord,
    /// Source resolution as (H, W).
    pub image_dims: (usize, usize),
    /// printf-style pattern (`%d` or zero-padded `%0Nd`) locating each
    /// frame's image file; the matching flow file swaps the extension for
    /// `.ptfl`.
    pub frame_uri: String,
}

impl PedestrianTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Schema-level invariants: equal per-frame lengths, strictly increasing
    /// frame indices, binary intent labels, finite positive-extent boxes.
    pub fn validate(&self) -> Result<()> {
        let l = self.frames.len();
        let lens = [
            ("boxes", self.boxes.len()),
            ("intent", self.intent.len()),
            ("behavior", self.behavior.len()),
        ];
        for (name, n) in lens {
            if n != l {
                return Err(PtiError::Config(format!(
                    "{name} length {n} does not match {l} frames"
                )));
            }
        }
        if let Some(scene) = &self.scene {
            if scene.len() != l {
                return Err(PtiError::Config(format!(
                    "scene length {} does not match {l} frames",
                    scene.len()
                )));
            }
        }
        for w in self.frames.windows(2) {
            if w[1] <= w[0] {
                return Err(PtiError::Config(format!(
                    "frame indices must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if !b.is_finite() || b.w <= 0.0 || b.h <= 0.0 {
                return Err(PtiError::Config(format!(
                    "box {i} has non-finite or non-positive extent"
                )));
            }
        }
        for (i, &v) in self.intent.iter().enumerate() {
            if v > 1 {
                return Err(PtiError::Config(format!(
                    "intent label {v} at frame {i} is not 0/1"
                )));
            }
        }
        if self.image_dims.0 == 0 || self.image_dims.1 == 0 {
            return Err(PtiError::Config("image_dims must be positive".into()));
        }
        Ok(())
    }
}

/// Parse the JSONL interchange format; errors carry 1-based line numbers.
pub fn parse_track_file(bytes: &[u8]) -> Result<Vec<PedestrianTrack>> {
    let text = std::str::from_utf8(bytes).map_err(|e| PtiError::Schema {
        line: 0,
        msg: format!("input is not UTF-8: {e}"),
    })?;
    let mut tracks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let track: PedestrianTrack =
            serde_json::from_str(line).map_err(|e| PtiError::Schema {
                line: i + 1,
                msg: e.to_string(),
            })?;
        track.validate().map_err(|e| PtiError::Schema {
            line: i + 1,
            msg: e.to_string(),
        })?;
        tracks.push(track);
    }
    Ok(tracks)
}

/// Serialize tracks to the JSONL interchange format (inverse of
/// [`parse_track_file`]).
pub fn emit_tracks(tracks: &[PedestrianTrack]) -> String {
    let mut out = String::new();
    for t in tracks {
        out.push_str(&serde_json::to_string(t).expect("track serialization"));
        out.push('\n');
    }
    out
}

/// Fields of each categorical group, in schema order.
pub const ATTR_FIELDS: [&str; 3] = ["age", "gender", "group_size"];
pub const BEHAVIOR_FIELDS: [&str; 4] = ["look", "nod", "gesture", "action"];
pub const SCENE_FIELDS: [&str; 6] = [
    "motion_dir",
    "lanes",
    "sign",
    "crossing",
    "road_type",
    "signal",
];

/// Ordered categorical vocabulary: field name -> ordered value list. One-hot
/// encoding concatenates fields in the declared (insertion) order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeVocabulary {
    pub fields: IndexMap<String, Vec<String>>,
}

impl AttributeVocabulary {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let vocab: AttributeVocabulary = serde_json::from_slice(bytes)?;
        Ok(vocab)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.fields).expect("vocab serialization")
    }

    /// Build a vocabulary covering every value observed in `tracks`: fields
    /// in schema order, values sorted for determinism.
    pub fn from_tracks(tracks: &[PedestrianTrack]) -> Self {
        let mut sets: IndexMap<String, std::collections::BTreeSet<String>> = IndexMap::new();
        for f in ATTR_FIELDS.iter().chain(&BEHAVIOR_FIELDS).chain(&SCENE_FIELDS) {
            sets.insert((*f).to_string(), Default::default());
        }
        let mut push = |field: &str, v: &Option<String>| {
            if let Some(v) = v {
                sets.get_mut(field).unwrap().insert(v.clone());
            }
        };
        for t in tracks {
            push("age", &t.attrs.age);
            push("gender", &t.attrs.gender);
            push("group_size", &t.attrs.group_size);
            for b in &t.behavior {
                push("look", &b.look);
                push("nod", &b.nod);
                push("gesture", &b.gesture);
                push("action", &b.action);
            }
            if let Some(scene) = &t.scene {
                for s in scene {
                    push("motion_dir", &s.motion_dir);
                    push("lanes", &s.lanes);
                    push("sign", &s.sign);
                    push("crossing", &s.crossing);
                    push("road_type", &s.road_type);
                    push("signal", &s.signal);
                }
            }
        }
        let fields = sets
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect();
        AttributeVocabulary { fields }
    }

    /// Width of the concatenated one-hot over the given field group.
    pub fn group_width(&self, group: &[&str]) -> usize {
        self.fields
            .iter()
            .filter(|(f, _)| group.contains(&f.as_str()))
            .map(|(_, vals)| vals.len())
            .sum()
    }

    /// Whether the vocabulary declares any field of the group.
    pub fn has_group(&self, group: &[&str]) -> bool {
        self.fields.keys().any(|f| group.contains(&f.as_str()))
    }

    /// One-hot encode one group of a record; fields iterate in declared
    /// order, absent values contribute zero segments.
    fn encode_group(
        &self,
        group: &[&str],
        get: impl Fn(&str) -> Option<String>,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (field, values) in &self.fields {
            if !group.contains(&field.as_str()) {
                continue;
            }
            let base = out.len();
            out.resize(base + values.len(), 0.0);
            if let Some(raw) = get(field) {
                match values.iter().position(|v| *v == raw) {
                    Some(i) => out[base + i] = 1.0,
                    None => {
                        return Err(PtiError::UnknownAttribute {
                            field: field.clone(),
                            value: raw,
                        })
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Encoded per-frame context vectors for a whole track; windows slice these.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackContext {
    pub pedestrian_attrs: Vec<f64>,
    pub behavior: Vec<Vec<f64>>,
    pub scene: Option<Vec<Vec<f64>>>,
}

/// One-hot encode a track's categorical annotations.
pub fn encode_attributes(
    track: &PedestrianTrack,
    vocab: &AttributeVocabulary,
) -> Result<TrackContext> {
    let attrs = &track.attrs;
    let pedestrian_attrs = vocab.encode_group(&ATTR_FIELDS, |f| match f {
        "age" => attrs.age.clone(),
        "gender" => attrs.gender.clone(),
        "group_size" => attrs.group_size.clone(),
        _ => None,
    })?;
    let behavior = track
        .behavior
        .iter()
        .map(|b| {
            vocab.encode_group(&BEHAVIOR_FIELDS, |f| match f {
                "look" => b.look.clone(),
                "nod" => b.nod.clone(),
                "gesture" => b.gesture.clone(),
                "action" => b.action.clone(),
                _ => None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scene = match &track.scene {
        Some(records) => Some(
            records
                .iter()
                .map(|s| {
                    vocab.encode_group(&SCENE_FIELDS, |f| match f {
                        "motion_dir" => s.motion_dir.clone(),
                        "lanes" => s.lanes.clone(),
                        "sign" => s.sign.clone(),
                        "crossing" => s.crossing.clone(),
                        "road_type" => s.road_type.clone(),
                        "signal" => s.signal.clone(),
                        _ => None,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(TrackContext {
        pedestrian_attrs,
        behavior,
        scene,
    })
}

fn frames_consecutive(frames: &[i64], from: usize, to_inclusive: usize) -> bool {
    (from..to_inclusive)
        .all(|k| frames[k + 1] == frames[k] + 1)
}

/// Slice a track into samples: one per anchor t (index of the last observed
/// frame) where the m past and n future frames all exist consecutively,
/// anchors spaced by `stride`. The window-entry velocity comes from the frame
/// preceding the window when that frame exists and is consecutive; otherwise
/// it is zero (true track start).
///
/// Samples leave `global_ctx` empty; [`attach_global_context`] fills it.
pub fn window_track(
    track: &PedestrianTrack,
    vocab: &AttributeVocabulary,
    m: usize,
    n: usize,
    stride: usize,
) -> Result<Vec<PedestrianSample>> {
    if m < 2 || n < 1 || stride < 1 {
        return Err(PtiError::Config(format!(
            "window parameters out of range: m={m}, n={n}, stride={stride}"
        )));
    }
    track.validate()?;
    let ctx = encode_attributes(track, vocab)?;
    let l = track.len();
    let mut out = Vec::new();
    if l < m + n {
        return Ok(out);
    }
    let mut anchor = m - 1;
    while anchor + n <= l - 1 {
        let start = anchor + 1 - m;
        if !frames_consecutive(&track.frames, start, anchor + n) {
            anchor += stride;
            continue;
        }
        let positions = track.boxes[start..=anchor].to_vec();
        let mut velocities = compute_velocities(&positions)?;
        if start >= 1 && track.frames[start] == track.frames[start - 1] + 1 {
            velocities[0] = positions[0].diff(&track.boxes[start - 1]);
        }
        let local = LocalContext {
            pedestrian_attrs: ctx.pedestrian_attrs.clone(),
            behavior_attrs: ctx.behavior[start..=anchor].to_vec(),
            scene_attrs: ctx
                .scene
                .as_ref()
                .map(|s| s[start..=anchor].to_vec()),
        };
        out.push(PedestrianSample {
            past: PastTrajectory {
                positions,
                velocities,
            },
            local,
            global_ctx: GlobalContext {
                images: Vec::new(),
                flows: Vec::new(),
            },
            future_boxes: track.boxes[anchor + 1..=anchor + n].to_vec(),
            future_intentions: track.intent[anchor + 1..=anchor + n].to_vec(),
            pedestrian_id: track.pedestrian_id.clone(),
            video_id: track.video_id.clone(),
            anchor_frame: anchor,
        });
        anchor += stride;
    }
    Ok(out)
}

/// Box-coordinate normalization applied before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizeMode {
    #[default]
    None,
    /// Divide x, w by the source width and y, h by the source height.
    ScaleToUnit,
}

fn scale_box(b: &BoundingBox, sx: f64, sy: f64) -> BoundingBox {
    BoundingBox::new(b.x * sx, b.y * sy, b.w * sx, b.h * sy)
}

fn scale_velocity(v: &BoxVelocity, sx: f64, sy: f64) -> BoxVelocity {
    BoxVelocity {
        dx: v.dx * sx,
        dy: v.dy * sy,
        dw: v.dw * sx,
        dh: v.dh * sy,
    }
}

fn unit_scale(image_dims: (usize, usize)) -> Result<(f64, f64)> {
    let (h, w) = image_dims;
    if h == 0 || w == 0 {
        return Err(PtiError::Config(
            "cannot normalize with zero image dimensions".into(),
        ));
    }
    Ok((1.0 / w as f64, 1.0 / h as f64))
}

/// Normalize all box-valued fields of a sample; images/flows are untouched.
/// `image_dims` is the source resolution as (H, W).
pub fn normalize_sample(
    sample: &PedestrianSample,
    image_dims: (usize, usize),
    mode: NormalizeMode,
) -> Result<PedestrianSample> {
    match mode {
        NormalizeMode::None => Ok(sample.clone()),
        NormalizeMode::ScaleToUnit => {
            let (sx, sy) = unit_scale(image_dims)?;
            let mut out = sample.clone();
            out.past.positions = sample
                .past
                .positions
                .iter()
                .map(|b| scale_box(b, sx, sy))
                .collect();
            out.past.velocities = sample
                .past
                .velocities
                .iter()
                .map(|v| scale_velocity(v, sx, sy))
                .collect();
            out.future_boxes = sample
                .future_boxes
                .iter()
                .map(|b| scale_box(b, sx, sy))
                .collect();
            Ok(out)
        }
    }
}

/// Map a box from normalized space back to source pixels.
pub fn denormalize_box(
    b: &BoundingBox,
    image_dims: (usize, usize),
    mode: NormalizeMode,
) -> Result<BoundingBox> {
    match mode {
        NormalizeMode::None => Ok(*b),
        NormalizeMode::ScaleToUnit => {
            let (h, w) = image_dims;
            if h == 0 || w == 0 {
                return Err(PtiError::Config(
                    "cannot denormalize with zero image dimensions".into(),
                ));
            }
            Ok(scale_box(b, w as f64, h as f64))
        }
    }
}

// --- image and flow file io --------------------------------------------------

/// Substitute the frame index into a printf-style pattern supporting `%d`
/// and zero-padded `%0Nd`.
pub fn format_frame_uri(template: &str, frame: i64) -> Result<String> {
    let bytes = template.as_bytes();
    let pos = template.find('%').ok_or_else(|| PtiError::Format {
        path: template.into(),
        msg: "frame pattern lacks a % specifier".into(),
    })?;
    let mut i = pos + 1;
    let mut width = 0usize;
    let mut zero_pad = false;
    if i < bytes.len() && bytes[i] == b'0' {
        zero_pad = true;
        i += 1;
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(PtiError::Format {
                path: template.into(),
                msg: "malformed zero-padding width".into(),
            });
        }
        width = template[start..i].parse().unwrap();
    }
    if i >= bytes.len() || bytes[i] != b'd' {
        return Err(PtiError::Format {
            path: template.into(),
            msg: "frame pattern must end its specifier with d".into(),
        });
    }
    if template[i + 1..].contains('%') {
        return Err(PtiError::Format {
            path: template.into(),
            msg: "frame pattern has more than one % specifier".into(),
        });
    }
    let formatted = if zero_pad {
        format!("{frame:0width$}")
    } else {
        format!("{frame}")
    };
    Ok(format!(
        "{}{}{}",
        &template[..pos],
        formatted,
        &template[i + 1..]
    ))
}

/// Flow file convention: same path as the image of the pair's FIRST frame,
/// extension replaced with `.ptfl`.
pub fn flow_path_for(image_path: &str) -> PathBuf {
    let mut p = PathBuf::from(image_path);
    p.set_extension("ptfl");
    p
}

const FLOW_MAGIC: &[u8; 4] = b"PTFL";

/// Write a [2, H, W] flow field: magic, u32 H, u32 W, then f32 u- and
/// v-planes, all little-endian.
pub fn write_flow_file(path: &Path, flow: &Array3<f64>) -> Result<()> {
    let shape = flow.shape();
    assert_eq!(shape[0], 2, "flow arrays are [2, H, W]");
    let (h, w) = (shape[1], shape[2]);
    let file = std::fs::File::create(path).map_err(|e| PtiError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let werr = |e: std::io::Error| PtiError::io(path, e);
    out.write_all(FLOW_MAGIC).map_err(werr)?;
    out.write_u32::<LittleEndian>(h as u32).map_err(werr)?;
    out.write_u32::<LittleEndian>(w as u32).map_err(werr)?;
    for c in 0..2 {
        for y in 0..h {
            for x in 0..w {
                out.write_f32::<LittleEndian>(flow[[c, y, x]] as f32)
                    .map_err(werr)?;
            }
        }
    }
    out.flush().map_err(werr)?;
    Ok(())
}

/// Read a flow field written by [`write_flow_file`].
pub fn read_flow_file(path: &Path) -> Result<Array3<f64>> {
    let file = std::fs::File::open(path).map_err(|e| PtiError::io(path, e))?;
    let mut input = BufReader::new(file);
    let rerr = |e: std::io::Error| PtiError::io(path, e);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(rerr)?;
    if &magic != FLOW_MAGIC {
        return Err(PtiError::Format {
            path: path.display().to_string(),
            msg: "bad flow file magic".into(),
        });
    }
    let h = input.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    let w = input.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    let mut flow = Array3::<f64>::zeros((2, h, w));
    for c in 0..2 {
        for y in 0..h {
            for x in 0..w {
                flow[[c, y, x]] = input.read_f32::<LittleEndian>().map_err(|e| {
                    PtiError::Format {
                        path: path.display().to_string(),
                        msg: format!("truncated flow data: {e}"),
                    }
                })? as f64;
            }
        }
    }
    Ok(flow)
}

/// Write a [3, H, W] image with values in [0, 1] as an 8-bit PNG.
pub fn write_png(path: &Path, img: &Array3<f64>) -> Result<()> {
    let shape = img.shape();
    assert_eq!(shape[0], 3, "images are [3, H, W]");
    let (h, w) = (shape[1], shape[2]);
    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_u8(img[[0, y, x]]),
                to_u8(img[[1, y, x]]),
                to_u8(img[[2, y, x]]),
            ];
            rgb.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    rgb.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => PtiError::io(path, io),
        other => PtiError::Image(other),
    })
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Read a PNG into a [3, H, W] array scaled to [0, 1].
pub fn read_png(path: &Path) -> Result<Array3<f64>> {
    let bytes = std::fs::read(path).map_err(|e| PtiError::io(path, e))?;
    let img = image::load_from_memory(&bytes)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::<f64>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out[[c, y, x]] = px.0[c] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

/// Bilinear resize of a [C, H, W] array (pixel-center convention, edge
/// clamped). Identity when the size is unchanged.
pub fn resize_bilinear(src: &Array3<f64>, th: usize, tw: usize) -> Array3<f64> {
    let shape = src.shape();
    let (c, sh, sw) = (shape[0], shape[1], shape[2]);
    if (sh, sw) == (th, tw) {
        return src.clone();
    }
    let mut out = Array3::<f64>::zeros((c, th, tw));
    let ry = sh as f64 / th as f64;
    let rx = sw as f64 / tw as f64;
    for y in 0..th {
        let sy = ((y as f64 + 0.5) * ry - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for x in 0..tw {
            let sx = ((x as f64 + 0.5) * rx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let a = src[[ch, y0, x0]];
                let b = src[[ch, y0, x1]];
                let d = src[[ch, y1, x0]];
                let e = src[[ch, y1, x1]];
                let top = a + (b - a) * fx;
                let bot = d + (e - d) * fx;
                out[[ch, y, x]] = top + (bot - top) * fy;
            }
        }
    }
    out
}

/// Resize a [2, H, W] flow field and rescale its components by the resize
/// ratios (u by target_w/source_w, v by target_h/source_h).
pub fn resize_flow(src: &Array3<f64>, th: usize, tw: usize) -> Array3<f64> {
    let shape = src.shape();
    let (sh, sw) = (shape[1], shape[2]);
    let mut out = resize_bilinear(src, th, tw);
    let su = tw as f64 / sw as f64;
    let sv = th as f64 / sh as f64;
    for y in 0..th {
        for x in 0..tw {
            out[[0, y, x]] *= su;
            out[[1, y, x]] *= sv;
        }
    }
    out
}

/// Global-feature ablation switches: a disabled channel loads as zero arrays
/// of the target shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalToggles {
    pub use_images: bool,
    pub use_flow: bool,
}

impl Default for GlobalToggles {
    fn default() -> Self {
        GlobalToggles {
            use_images: true,
            use_flow: true,
        }
    }
}

/// Cache of decoded-and-resized frames and flow fields, keyed by path and
/// target size.
#[derive(Debug, Default)]
pub struct FrameCache {
    images: HashMap<String, Array3<f64>>,
    flows: HashMap<String, Array3<f64>>,
}

impl FrameCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.images.len() + self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty() && self.flows.is_empty()
    }
}

/// Load the m resized frames and m−1 resized flow fields for the window
/// ending at track index `anchor`. `target` is (H, W).
pub fn load_global_context(
    track: &PedestrianTrack,
    anchor: usize,
    m: usize,
    target: (usize, usize),
    toggles: GlobalToggles,
    cache: &mut FrameCache,
) -> Result<GlobalContext> {
    let (th, tw) = target;
    if anchor + 1 < m || anchor >= track.len() {
        return Err(PtiError::Config(format!(
            "window [{}..={anchor}] outside track of length {}",
            anchor as i64 - m as i64 + 1,
            track.len()
        )));
    }
    let start = anchor + 1 - m;
    let mut images = Vec::with_capacity(m);
    for idx in start..=anchor {
        if toggles.use_images {
            let path = format_frame_uri(&track.frame_uri, track.frames[idx])?;
            let key = format!("{path}|{th}x{tw}");
            if let Some(hit) = cache.images.get(&key) {
                images.push(hit.clone());
            } else {
                let img = read_png(Path::new(&path))?;
                let resized = resize_bilinear(&img, th, tw);
                cache.images.insert(key, resized.clone());
                images.push(resized);
            }
        } else {
            images.push(Array3::zeros((3, th, tw)));
        }
    }
    let mut flows = Vec::with_capacity(m - 1);
    for idx in start..anchor {
        if toggles.use_flow {
            let img_path = format_frame_uri(&track.frame_uri, track.frames[idx])?;
            let path = flow_path_for(&img_path);
            let key = format!("{}|{th}x{tw}", path.display());
            if let Some(hit) = cache.flows.get(&key) {
                flows.push(hit.clone());
            } else {
                let flow = read_flow_file(&path)?;
                let resized = resize_flow(&flow, th, tw);
                cache.flows.insert(key, resized.clone());
                flows.push(resized);
            }
        } else {
            flows.push(Array3::zeros((2, th, tw)));
        }
    }
    Ok(GlobalContext { images, flows })
}

/// Attach loaded global context to a windowed sample in place.
pub fn attach_global_context(
    sample: &mut PedestrianSample,
    track: &PedestrianTrack,
    m: usize,
    target: (usize, usize),
    toggles: GlobalToggles,
    cache: &mut FrameCache,
) -> Result<()> {
    sample.global_ctx = load_global_context(track, sample.anchor_frame, m, target, toggles, cache)?;
    Ok(())
}
