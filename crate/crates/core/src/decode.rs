//! Grid-tensor decoding: raw network outputs to scored, suppressed detections.
//!
//! A detector head partitions the frame into an `s x s` grid. Each cell owns
//! `num_anchors` slots, and every slot carries `5 + num_classes` raw channels
//! in the order `(tx, ty, tw, th, t_obj, class logits...)`. Decoding a slot
//! in cell `(cx, cy)` against anchor `(pw, ph)` gives
//!
//! ```text
//! bx = sigmoid(tx) + cx      bw = pw * exp(tw)
//! by = sigmoid(ty) + cy      bh = ph * exp(th)
//! objectness = sigmoid(t_obj)
//! class_probs = softmax(class logits)
//! ```
//!
//! in grid units. The slot score is `objectness * class_prob` of the
//! argmax class.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, Detection, Vocabulary};

/// Number of box and objectness channels preceding the class logits.
pub const BOX_CHANNELS: usize = 5;

/// Magic bytes opening a grid tensor file.
pub const TENSOR_MAGIC: &[u8; 4] = b"YGT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub s: usize,
    pub num_anchors: usize,
    pub num_classes: usize,
    pub frame_width: u32,
    pub frame_height: u32,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.num_anchors == 0 || self.num_classes == 0 {
            return Err(Error::ShapeMismatch(format!(
                "grid spec needs s, num_anchors, num_classes >= 1 (got {}, {}, {})",
                self.s, self.num_anchors, self.num_classes
            )));
        }
        if self.frame_width == 0 || self.frame_height == 0 {
            return Err(Error::ShapeMismatch("frame dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Channels per slot.
    pub fn channels(&self) -> usize {
        BOX_CHANNELS + self.num_classes
    }

    pub fn num_slots(&self) -> usize {
        self.s * self.s * self.num_anchors
    }

    pub fn num_values(&self) -> usize {
        self.num_slots() * self.channels()
    }

    /// Flat offset of the first channel of slot `(cell_y, cell_x, anchor)`.
    pub fn offset(&self, cell_y: usize, cell_x: usize, anchor: usize) -> usize {
        ((cell_y * self.s + cell_x) * self.num_anchors + anchor) * self.channels()
    }

    /// Pixels per grid unit along x and y.
    pub fn pixel_scale(&self) -> (f64, f64) {
        (
            f64::from(self.frame_width) / self.s as f64,
            f64::from(self.frame_height) / self.s as f64,
        )
    }
}

/// Prior box size in grid units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub pw: f64,
    pub ph: f64,
}

impl Anchor {
    pub const fn new(pw: f64, ph: f64) -> Self {
        Self { pw, ph }
    }
}

/// Raw channels of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCellPrediction {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
    pub t_obj: f64,
    pub class_logits: Vec<f64>,
}

impl RawCellPrediction {
    pub fn from_channels(ch: &[f64]) -> Self {
        Self {
            tx: ch[0],
            ty: ch[1],
            tw: ch[2],
            th: ch[3],
            t_obj: ch[4],
            class_logits: ch[BOX_CHANNELS..].to_vec(),
        }
    }

    pub fn to_channels(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(BOX_CHANNELS + self.class_logits.len());
        v.extend_from_slice(&[self.tx, self.ty, self.tw, self.th, self.t_obj]);
        v.extend_from_slice(&self.class_logits);
        v
    }
}

/// `s x s x num_anchors` slots stored row-major as `(cell_y, cell_x, anchor, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGridTensor {
    pub spec: GridSpec,
    pub anchors: Vec<Anchor>,
    data: Vec<f64>,
}

impl RawGridTensor {
    pub fn new(spec: GridSpec, anchors: Vec<Anchor>, data: Vec<f64>) -> Result<Self> {
        let t = Self { spec, anchors, data };
        t.validate()?;
        Ok(t)
    }

    pub fn zeros(spec: GridSpec, anchors: Vec<Anchor>) -> Result<Self> {
        let data = vec![0.0; spec.num_values()];
        Self::new(spec, anchors, data)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.anchors.len() != self.spec.num_anchors {
            return Err(Error::ShapeMismatch(format!(
                "{} anchors supplied for {} slots per cell",
                self.anchors.len(),
                self.spec.num_anchors
            )));
        }
        if self.data.len() != self.spec.num_values() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, found {}",
                self.spec.num_values(),
                self.data.len()
            )));
        }
        if let Some(a) = self.anchors.iter().find(|a| !(a.pw > 0.0 && a.ph > 0.0)) {
            return Err(Error::ShapeMismatch(format!("anchor {a:?} is not positive")));
        }
        Ok(())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn slot(&self, cell_y: usize, cell_x: usize, anchor: usize) -> &[f64] {
        let off = self.spec.offset(cell_y, cell_x, anchor);
        &self.data[off..off + self.spec.channels()]
    }

    pub fn slot_mut(&mut self, cell_y: usize, cell_x: usize, anchor: usize) -> &mut [f64] {
        let off = self.spec.offset(cell_y, cell_x, anchor);
        let n = self.spec.channels();
        &mut self.data[off..off + n]
    }

    pub fn cell(&self, cell_y: usize, cell_x: usize, anchor: usize) -> RawCellPrediction {
        RawCellPrediction::from_channels(self.slot(cell_y, cell_x, anchor))
    }

    pub fn set_cell(&mut self, cell_y: usize, cell_x: usize, anchor: usize, raw: &RawCellPrediction) -> Result<()> {
        if raw.class_logits.len() != self.spec.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} class logits for {} classes",
                raw.class_logits.len(),
                self.spec.num_classes
            )));
        }
        self.slot_mut(cell_y, cell_x, anchor).copy_from_slice(&raw.to_channels());
        Ok(())
    }

    /// Reads the little-endian `YGT1` format.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: String| Error::ShapeMismatch(m);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| bad(format!("truncated header: {e}")))?;
        if &magic != TENSOR_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let mut header = [0u32; 5];
        for h in header.iter_mut() {
            *h = read_u32(&mut r).map_err(|e| bad(format!("truncated header: {e}")))?;
        }
        let spec = GridSpec {
            s: header[0] as usize,
            num_anchors: header[1] as usize,
            num_classes: header[2] as usize,
            frame_width: header[3],
            frame_height: header[4],
        };
        spec.validate()?;
        let mut anchors = Vec::with_capacity(spec.num_anchors);
        for _ in 0..spec.num_anchors {
            let pw = read_f32(&mut r).map_err(|e| bad(format!("truncated anchors: {e}")))?;
            let ph = read_f32(&mut r).map_err(|e| bad(format!("truncated anchors: {e}")))?;
            anchors.push(Anchor::new(f64::from(pw), f64::from(ph)));
        }
        let n = spec.num_values();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| bad(format!("expected {n} channel values")))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| bad(e.to_string()))? != 0 {
            return Err(bad("trailing bytes after channel data".into()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Self::new(spec, anchors, data)
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        let s = &self.spec;
        for v in [
            s.s as u32,
            s.num_anchors as u32,
            s.num_classes as u32,
            s.frame_width,
            s.frame_height,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for a in &self.anchors {
            w.write_all(&(a.pw as f32).to_le_bytes())?;
            w.write_all(&(a.ph as f32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] on `(0, 1)`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyVector);
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// A decoded slot in grid units.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedCell {
    pub bbox: BoundingBox,
    pub objectness: f64,
    pub class_probs: Vec<f64>,
}

fn check_cell(spec: &GridSpec, cell_x: usize, cell_y: usize) -> Result<()> {
    if cell_x >= spec.s || cell_y >= spec.s {
        return Err(Error::IndexOutOfGrid {
            cell_x,
            cell_y,
            s: spec.s,
        });
    }
    Ok(())
}

pub fn decode_cell(
    raw: &RawCellPrediction,
    spec: &GridSpec,
    anchor: Anchor,
    cell_x: usize,
    cell_y: usize,
) -> Result<DecodedCell> {
    check_cell(spec, cell_x, cell_y)?;
    Ok(DecodedCell {
        bbox: BoundingBox::new(
            sigmoid(raw.tx) + cell_x as f64,
            sigmoid(raw.ty) + cell_y as f64,
            anchor.pw * raw.tw.exp(),
            anchor.ph * raw.th.exp(),
        ),
        objectness: sigmoid(raw.t_obj),
        class_probs: softmax(&raw.class_logits)?,
    })
}

/// Analytic inverse of [`decode_cell`]. Class logits are `ln(p)`, which
/// softmax maps back to `p` exactly up to rounding.
pub fn encode_cell(
    bbox: &BoundingBox,
    objectness: f64,
    class_probs: &[f64],
    spec: &GridSpec,
    anchor: Anchor,
    cell_x: usize,
    cell_y: usize,
) -> Result<RawCellPrediction> {
    check_cell(spec, cell_x, cell_y)?;
    let fx = bbox.cx - cell_x as f64;
    let fy = bbox.cy - cell_y as f64;
    if !(fx > 0.0 && fx < 1.0 && fy > 0.0 && fy < 1.0) {
        return Err(Error::CenterOutsideCell {
            bx: bbox.cx,
            by: bbox.cy,
            cell_x,
            cell_y,
        });
    }
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::ShapeMismatch(format!("box size {}x{} is not positive", bbox.w, bbox.h)));
    }
    if !(objectness > 0.0 && objectness < 1.0) {
        return Err(Error::DegenerateProbability(format!("objectness {objectness}")));
    }
    if class_probs.is_empty() {
        return Err(Error::EmptyVector);
    }
    if class_probs.len() != spec.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "{} class probabilities for {} classes",
            class_probs.len(),
            spec.num_classes
        )));
    }
    if let Some(p) = class_probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::DegenerateProbability(format!("class probability {p}")));
    }
    Ok(RawCellPrediction {
        tx: logit(fx),
        ty: logit(fy),
        tw: (bbox.w / anchor.pw).ln(),
        th: (bbox.h / anchor.ph).ln(),
        t_obj: logit(objectness),
        class_logits: class_probs.iter().map(|p| p.ln()).collect(),
    })
}

/// Objectness times class-conditional probability.
pub fn class_confidence(objectness: f64, class_prob: f64) -> f64 {
    objectness * class_prob
}

/// Decodes every slot, keeps the argmax class, drops scores under
/// `conf_floor` and rescales to pixels.
///
/// Output is ordered by descending score; equal scores keep row-major
/// `(cell_y, cell_x, anchor)` order.
pub fn decode_grid(tensor: &RawGridTensor, conf_floor: f64, vocab: &Vocabulary) -> Result<Vec<Detection>> {
    tensor.validate()?;
    let spec = tensor.spec;
    if vocab.len() != spec.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "{} vocabulary has {} classes but tensor carries {}",
            vocab.stage(),
            vocab.len(),
            spec.num_classes
        )));
    }
    let (sx, sy) = spec.pixel_scale();
    let mut probs = vec![0.0; spec.num_classes];
    let mut out = Vec::new();
    for cy in 0..spec.s {
        for cx in 0..spec.s {
            for (a, anchor) in tensor.anchors.iter().enumerate() {
                let ch = tensor.slot(cy, cx, a);
                let objectness = sigmoid(ch[4]);
                softmax_into(&ch[BOX_CHANNELS..], &mut probs);
                let (best, best_p) = probs
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p > acc.1 { (i, p) } else { acc });
                let score = class_confidence(objectness, best_p);
                if score < conf_floor {
                    continue;
                }
                let bbox = BoundingBox::new(
                    sigmoid(ch[0]) + cx as f64,
                    sigmoid(ch[1]) + cy as f64,
                    anchor.pw * ch[2].exp(),
                    anchor.ph * ch[3].exp(),
                )
                .scale(sx, sy);
                out.push(Detection {
                    bbox,
                    label: vocab.label(best).expect("argmax within vocabulary"),
                    score,
                    class_probs: Some(probs.clone()),
                });
            }
        }
    }
    sort_by_score(&mut out);
    Ok(out)
}

/// Stable sort by descending score.
pub fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// Greedy per-class non-maximum suppression.
///
/// Detections are visited in descending score order (input order breaks
/// ties). A detection is dropped when a kept detection of the same class
/// overlaps it with IOU strictly above `iou_thresh`.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|&k| dets[k].label.id == d.label.id && iou(&dets[k].bbox, &d.bbox) > iou_thresh);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}
