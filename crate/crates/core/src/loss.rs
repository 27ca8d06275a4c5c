//! Composite detection loss over a raw grid tensor and its analytic gradient.
//!
//! Three weighted sums:
//!
//! * coordinates, responsible slots only: squared error of the decoded
//!   `(bx, by, sqrt(bw), sqrt(bh))` against the target box;
//! * objectness, every slot: binary cross-entropy of `sigmoid(t_obj)`
//!   against 1 for responsible slots and 0 elsewhere;
//! * class, responsible slots only: cross-entropy of the softmax over the
//!   class logits against the target class.
//!
//! The gradient is taken with respect to the raw channels, so it flows
//! through the sigmoid, exponential and softmax of the decoder.

use serde::{Deserialize, Serialize};

use crate::decode::{sigmoid, softmax_into, Anchor, GridSpec, RawGridTensor, BOX_CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_coord: f64,
    pub lambda_obj: f64,
    pub lambda_class: f64,
}

impl LossWeights {
    pub const fn new(lambda_coord: f64, lambda_obj: f64, lambda_class: f64) -> Self {
        Self {
            lambda_coord,
            lambda_obj,
            lambda_class,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_coord", self.lambda_coord),
            ("lambda_obj", self.lambda_obj),
            ("lambda_class", self.lambda_class),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvariantViolation(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0)
    }
}

/// A responsible slot and the object it must predict (grid units).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTarget {
    pub cell_x: usize,
    pub cell_y: usize,
    pub anchor: usize,
    pub bbox: BoundingBox,
    pub class_id: usize,
}

/// Responsible slots of one grid. Every slot not listed has objectness target 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    spec: GridSpec,
    targets: Vec<SlotTarget>,
    // slot index -> position in `targets`
    by_slot: Vec<Option<usize>>,
}

impl TargetAssignment {
    pub fn new(spec: GridSpec, targets: Vec<SlotTarget>) -> Result<Self> {
        spec.validate()?;
        let mut by_slot = vec![None; spec.num_slots()];
        for (i, t) in targets.iter().enumerate() {
            if t.cell_x >= spec.s || t.cell_y >= spec.s {
                return Err(Error::IndexOutOfGrid {
                    cell_x: t.cell_x,
                    cell_y: t.cell_y,
                    s: spec.s,
                });
            }
            if t.anchor >= spec.num_anchors || t.class_id >= spec.num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "target anchor {} / class {} out of range",
                    t.anchor, t.class_id
                )));
            }
            let fx = t.bbox.cx - t.cell_x as f64;
            let fy = t.bbox.cy - t.cell_y as f64;
            if !(fx > 0.0 && fx < 1.0 && fy > 0.0 && fy < 1.0) {
                return Err(Error::CenterOutsideCell {
                    bx: t.bbox.cx,
                    by: t.bbox.cy,
                    cell_x: t.cell_x,
                    cell_y: t.cell_y,
                });
            }
            if !t.bbox.is_valid() {
                return Err(Error::ShapeMismatch(format!("target box {:?} is degenerate", t.bbox)));
            }
            let slot = slot_index(&spec, t.cell_y, t.cell_x, t.anchor);
            if by_slot[slot].replace(i).is_some() {
                return Err(Error::ShapeMismatch(format!(
                    "slot ({}, {}, {}) assigned twice",
                    t.cell_y, t.cell_x, t.anchor
                )));
            }
        }
        Ok(Self { spec, targets, by_slot })
    }

    pub fn empty(spec: GridSpec) -> Result<Self> {
        Self::new(spec, Vec::new())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn targets(&self) -> &[SlotTarget] {
        &self.targets
    }

    fn target_at(&self, slot: usize) -> Option<&SlotTarget> {
        self.by_slot[slot].map(|i| &self.targets[i])
    }
}

fn slot_index(spec: &GridSpec, cell_y: usize, cell_x: usize, anchor: usize) -> usize {
    (cell_y * spec.s + cell_x) * spec.num_anchors + anchor
}

/// Unweighted per-term sums.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub coord: f64,
    pub obj: f64,
    pub class: f64,
}

impl LossTerms {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.lambda_coord * self.coord + w.lambda_obj * self.obj + w.lambda_class * self.class
    }
}

fn check_shapes(tensor: &RawGridTensor, targets: &TargetAssignment) -> Result<()> {
    tensor.validate()?;
    let (a, b) = (tensor.spec, targets.spec);
    if (a.s, a.num_anchors, a.num_classes) != (b.s, b.num_anchors, b.num_classes) {
        return Err(Error::ShapeMismatch(format!(
            "tensor grid {}x{}x{} (+{} classes) vs targets {}x{}x{} (+{} classes)",
            a.s, a.s, a.num_anchors, a.num_classes, b.s, b.s, b.num_anchors, b.num_classes
        )));
    }
    Ok(())
}

/// `softplus(t) - y*t`, the cross-entropy of `sigmoid(t)` against `y`.
fn bce_with_logit(t: f64, y: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p() - y * t
}

struct Slot<'a> {
    cell_x: usize,
    cell_y: usize,
    anchor: Anchor,
    channels: &'a [f64],
}

fn for_each_slot<'a>(tensor: &'a RawGridTensor, mut f: impl FnMut(usize, Slot<'a>)) {
    let spec = tensor.spec;
    let mut slot = 0;
    for cy in 0..spec.s {
        for cx in 0..spec.s {
            for (a, anchor) in tensor.anchors.iter().enumerate() {
                f(
                    slot,
                    Slot {
                        cell_x: cx,
                        cell_y: cy,
                        anchor: *anchor,
                        channels: tensor.slot(cy, cx, a),
                    },
                );
                slot += 1;
            }
        }
    }
}

pub fn loss_terms(tensor: &RawGridTensor, targets: &TargetAssignment) -> Result<LossTerms> {
    check_shapes(tensor, targets)?;
    let mut terms = LossTerms::default();
    for_each_slot(tensor, |i, s| {
        let ch = s.channels;
        let target = targets.target_at(i);
        terms.obj += bce_with_logit(ch[4], if target.is_some() { 1.0 } else { 0.0 });
        let Some(t) = target else { return };

        let bx = sigmoid(ch[0]) + s.cell_x as f64;
        let by = sigmoid(ch[1]) + s.cell_y as f64;
        let sw = (s.anchor.pw * ch[2].exp()).sqrt();
        let sh = (s.anchor.ph * ch[3].exp()).sqrt();
        terms.coord += (bx - t.bbox.cx).powi(2)
            + (by - t.bbox.cy).powi(2)
            + (sw - t.bbox.w.sqrt()).powi(2)
            + (sh - t.bbox.h.sqrt()).powi(2);

        terms.class -= log_softmax(&ch[BOX_CHANNELS..], t.class_id);
    });
    Ok(terms)
}

// Stays finite when the softmax probability underflows to zero.
fn log_softmax(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}

/// Weighted total loss.
pub fn yolo_loss(tensor: &RawGridTensor, targets: &TargetAssignment, w: &LossWeights) -> Result<f64> {
    Ok(loss_terms(tensor, targets)?.weighted(w))
}

/// Gradient of [`yolo_loss`] with respect to every raw channel, laid out
/// like [`RawGridTensor::data`].
pub fn yolo_loss_grad(tensor: &RawGridTensor, targets: &TargetAssignment, w: &LossWeights) -> Result<Vec<f64>> {
    check_shapes(tensor, targets)?;
    let spec = tensor.spec;
    let nch = spec.channels();
    let mut grad = vec![0.0; spec.num_values()];
    let mut probs = vec![0.0; spec.num_classes];
    for_each_slot(tensor, |i, s| {
        let ch = s.channels;
        let g = &mut grad[i * nch..(i + 1) * nch];
        let target = targets.target_at(i);
        let y = if target.is_some() { 1.0 } else { 0.0 };
        g[4] = w.lambda_obj * (sigmoid(ch[4]) - y);
        let Some(t) = target else { return };

        let sx = sigmoid(ch[0]);
        let sy = sigmoid(ch[1]);
        let sw = (s.anchor.pw * ch[2].exp()).sqrt();
        let sh = (s.anchor.ph * ch[3].exp()).sqrt();
        g[0] = w.lambda_coord * 2.0 * (sx + s.cell_x as f64 - t.bbox.cx) * sx * (1.0 - sx);
        g[1] = w.lambda_coord * 2.0 * (sy + s.cell_y as f64 - t.bbox.cy) * sy * (1.0 - sy);
        // d sqrt(p e^t) / dt = sqrt(p e^t) / 2
        g[2] = w.lambda_coord * (sw - t.bbox.w.sqrt()) * sw;
        g[3] = w.lambda_coord * (sh - t.bbox.h.sqrt()) * sh;

        softmax_into(&ch[BOX_CHANNELS..], &mut probs);
        for (k, (gk, p)) in g[BOX_CHANNELS..].iter_mut().zip(&probs).enumerate() {
            let onehot = if k == t.class_id { 1.0 } else { 0.0 };
            *gk = w.lambda_class * (p - onehot);
        }
    });
    Ok(grad)
}

/// Largest `|analytic - numeric| / max(1, |numeric|)` over all channels,
/// using central differences of [`yolo_loss`].
pub fn finite_diff_check(
    tensor: &RawGridTensor,
    targets: &TargetAssignment,
    w: &LossWeights,
    step: f64,
) -> Result<f64> {
    let analytic = yolo_loss_grad(tensor, targets, w)?;
    compare_with_finite_differences(&analytic, tensor, targets, w, step)
}

/// Same metric as [`finite_diff_check`] for an externally supplied gradient.
pub fn compare_with_finite_differences(
    analytic: &[f64],
    tensor: &RawGridTensor,
    targets: &TargetAssignment,
    w: &LossWeights,
    step: f64,
) -> Result<f64> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvariantViolation(format!("finite-difference step {step} must be > 0")));
    }
    if analytic.len() != tensor.data().len() {
        return Err(Error::LengthMismatch {
            expected: tensor.data().len(),
            actual: analytic.len(),
        });
    }
    let mut probe = tensor.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = yolo_loss(&probe, targets, w)?;
        probe.data_mut()[i] = orig - step;
        let down = yolo_loss(&probe, targets, w)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}
