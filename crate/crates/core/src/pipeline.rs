//! Two-stage cascade: people first, then attire inside each person crop.
//!
//! Stage backends read detector output from files. A tensor backend decodes
//! `YGT1` grids; a scripted backend replays annotation lines. Either way the
//! attire stage only ever sees one person window at a time and reports
//! boxes relative to that window; [`run_frame`] maps them back.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::{decode_grid, nms, RawGridTensor};
use crate::error::{Error, Result};
use crate::geometry::{clip_to_frame, BoundingBox, Detection, FrameRef, Vocabulary};
use crate::image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeParams {
    #[serde(default = "default_conf_floor")]
    pub conf_floor: f64,
    #[serde(default = "default_nms_iou")]
    pub nms_iou: f64,
}

fn default_conf_floor() -> f64 {
    0.25
}

fn default_nms_iou() -> f64 {
    0.45
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            conf_floor: default_conf_floor(),
            nms_iou: default_nms_iou(),
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("conf_floor", self.conf_floor), ("nms_iou", self.nms_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvariantViolation(format!("decode.{name} = {v} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Integer pixel window, top-left `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl CropWindow {
    pub fn full(frame: &FrameRef) -> Self {
        Self {
            x: 0,
            y: 0,
            w: frame.width,
            h: frame.height,
        }
    }

    pub fn offset(&self) -> (f64, f64) {
        (f64::from(self.x), f64::from(self.y))
    }

    /// Window-local frame of reference used to clip local boxes.
    fn local_frame(&self, parent: &FrameRef) -> FrameRef {
        FrameRef::new(parent.frame_id, self.w, self.h, parent.zone_id.clone())
    }
}

/// Rounds a box's extent to whole pixels (half away from zero).
pub fn crop_window(b: &BoundingBox) -> Result<CropWindow> {
    let (x1, y1, x2, y2) = b.corners();
    let (x1, y1, x2, y2) = (x1.round(), y1.round(), x2.round(), y2.round());
    if x2 - x1 < 1.0 || y2 - y1 < 1.0 || x1 < 0.0 || y1 < 0.0 {
        return Err(Error::DegenerateCrop);
    }
    Ok(CropWindow {
        x: x1 as u32,
        y: y1 as u32,
        w: (x2 - x1) as u32,
        h: (y2 - y1) as u32,
    })
}

/// Cuts the rounded extent of `b` out of `img`. `b` must already be clipped
/// to the image.
pub fn crop(img: &RgbImage, b: &BoundingBox) -> Result<(RgbImage, (u32, u32))> {
    let win = crop_window(b)?;
    let w = win.w.min(img.width().saturating_sub(win.x));
    let h = win.h.min(img.height().saturating_sub(win.y));
    if w == 0 || h == 0 {
        return Err(Error::DegenerateCrop);
    }
    Ok((img.sub_image(win.x, win.y, w, h)?, (win.x, win.y)))
}

/// What a stage is asked to look at.
pub struct DetectRequest<'a> {
    pub frame: &'a FrameRef,
    pub window: CropWindow,
    /// Set for the attire stage.
    pub person_index: Option<usize>,
    pub image: Option<&'a RgbImage>,
}

/// A detector stage. Returned boxes are relative to `req.window`.
pub trait DetectorBackend {
    fn vocabulary(&self) -> &Vocabulary;
    fn detect(&mut self, req: &DetectRequest<'_>) -> Result<Vec<Detection>>;
}

impl<T: DetectorBackend + ?Sized> DetectorBackend for Box<T> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn detect(&mut self, req: &DetectRequest<'_>) -> Result<Vec<Detection>> {
        (**self).detect(req)
    }
}

/// Reads `<frame_id>.ygt` (whole-frame stage) or `<frame_id>_<person>.ygt`
/// (per-person stage) from a directory, then decodes and suppresses.
#[derive(Debug, Clone)]
pub struct TensorFileBackend {
    dir: PathBuf,
    vocab: Vocabulary,
    params: DecodeParams,
}

impl TensorFileBackend {
    pub fn new(dir: impl Into<PathBuf>, vocab: Vocabulary, params: DecodeParams) -> Self {
        Self {
            dir: dir.into(),
            vocab,
            params,
        }
    }

    pub fn tensor_path(&self, frame_id: u64, person_index: Option<usize>) -> PathBuf {
        match person_index {
            None => self.dir.join(format!("{frame_id}.ygt")),
            Some(p) => self.dir.join(format!("{frame_id}_{p}.ygt")),
        }
    }
}

impl DetectorBackend for TensorFileBackend {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn detect(&mut self, req: &DetectRequest<'_>) -> Result<Vec<Detection>> {
        let path = self.tensor_path(req.frame.frame_id, req.person_index);
        if !path.is_file() {
            return Err(Error::MissingFrameData {
                frame_id: req.frame.frame_id,
                detail: format!("{} not found", path.display()),
            });
        }
        let tensor = RawGridTensor::load(&path)?;
        let dets = decode_grid(&tensor, self.params.conf_floor, &self.vocab)?;
        let mut dets = nms(&dets, self.params.nms_iou);
        // The grid may have been computed at a different input resolution.
        let sx = f64::from(req.window.w) / f64::from(tensor.spec.frame_width);
        let sy = f64::from(req.window.h) / f64::from(tensor.spec.frame_height);
        let local = req.window.local_frame(req.frame);
        dets.retain_mut(|d| match clip_to_frame(&d.bbox.scale(sx, sy), &local) {
            Ok(b) => {
                d.bbox = b;
                true
            }
            Err(_) => false,
        });
        Ok(dets)
    }
}

/// One line of an annotation or scripted-detection file.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub frame_id: u64,
    pub class_name: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Parses `frame_id,class_name,cx,cy,w,h,score` lines. Blank lines and
/// `#` comments are skipped.
pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(Error::parse(source, line_no, format!("expected 7 fields, found {}", fields.len())));
        }
        let frame_id = fields[0]
            .parse()
            .map_err(|_| Error::parse(source, line_no, format!("bad frame_id {:?}", fields[0])))?;
        let mut nums = [0.0; 5];
        for (n, (f, name)) in nums.iter_mut().zip(fields[2..].iter().zip(["cx", "cy", "w", "h", "score"])) {
            *n = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(source, line_no, format!("bad {name} {f:?}")))?;
        }
        let bbox = BoundingBox::new(nums[0], nums[1], nums[2], nums[3]);
        if !bbox.is_valid() {
            return Err(Error::parse(source, line_no, "box width and height must be positive"));
        }
        if !(0.0..=1.0).contains(&nums[4]) {
            return Err(Error::parse(source, line_no, format!("score {} outside [0, 1]", nums[4])));
        }
        if fields[1].is_empty() {
            return Err(Error::parse(source, line_no, "empty class name"));
        }
        out.push(AnnotationRecord {
            frame_id,
            class_name: fields[1].to_string(),
            bbox,
            score: nums[4],
        });
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let b = r.bbox;
        let _ = writeln!(s, "{},{},{},{},{},{},{}", r.frame_id, r.class_name, b.cx, b.cy, b.w, b.h, r.score);
    }
    s
}

/// Replays scripted detections (frame pixel coordinates).
///
/// For a window request it returns the records whose centers fall inside
/// the window, translated into window coordinates and clipped to it.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    vocab: Vocabulary,
    by_frame: BTreeMap<u64, Vec<AnnotationRecord>>,
}

impl ScriptedBackend {
    pub fn new(records: impl IntoIterator<Item = AnnotationRecord>, vocab: Vocabulary) -> Self {
        let mut by_frame: BTreeMap<u64, Vec<AnnotationRecord>> = BTreeMap::new();
        for r in records {
            by_frame.entry(r.frame_id).or_default().push(r);
        }
        Self { vocab, by_frame }
    }

    /// Splits one combined script into person-stage and attire-stage
    /// backends by vocabulary. A label known to neither is an error.
    pub fn split_combined(records: Vec<AnnotationRecord>) -> Result<(Self, Self)> {
        let (person, attire) = (Vocabulary::person(), Vocabulary::attire());
        let mut p = Vec::new();
        let mut a = Vec::new();
        for r in records {
            if person.lookup(&r.class_name).is_some() {
                p.push(r);
            } else if attire.lookup(&r.class_name).is_some() {
                a.push(r);
            } else {
                return Err(Error::VocabularyViolation {
                    label: r.class_name,
                    stage: "person or attire".into(),
                });
            }
        }
        Ok((Self::new(p, person), Self::new(a, attire)))
    }
}

impl DetectorBackend for ScriptedBackend {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn detect(&mut self, req: &DetectRequest<'_>) -> Result<Vec<Detection>> {
        let Some(records) = self.by_frame.get(&req.frame.frame_id) else {
            return Ok(Vec::new());
        };
        let (ox, oy) = req.window.offset();
        let local = req.window.local_frame(req.frame);
        let mut out = Vec::new();
        for r in records {
            let label = self.vocab.lookup(&r.class_name).ok_or_else(|| Error::VocabularyViolation {
                label: r.class_name.clone(),
                stage: self.vocab.stage().to_string(),
            })?;
            let b = r.bbox.translate(-ox, -oy);
            let inside = b.cx >= 0.0 && b.cy >= 0.0 && b.cx <= f64::from(local.width) && b.cy <= f64::from(local.height);
            if !inside {
                continue;
            }
            if let Ok(clipped) = clip_to_frame(&b, &local) {
                out.push(Detection::new(clipped, label, r.score));
            }
        }
        Ok(out)
    }
}

/// One attire detection in frame coordinates and the person it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttireDetection {
    pub person: usize,
    pub detection: Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameResult {
    pub frame: FrameRef,
    pub persons: Vec<Detection>,
    pub attire: Vec<AttireDetection>,
    /// Set when stage one found nobody; the attire stage was not run.
    pub no_person_detected: bool,
}

/// Runs the cascade on one frame.
///
/// Person boxes are clipped to the frame (those entirely outside are
/// dropped). Each remaining person's box is rounded to a pixel window and
/// handed to the attire stage; persons whose window rounds to nothing keep
/// their detection but get no attire.
pub fn run_frame(
    frame: &FrameRef,
    image: Option<&RgbImage>,
    person_stage: &mut dyn DetectorBackend,
    attire_stage: &mut dyn DetectorBackend,
) -> Result<FrameResult> {
    let full = DetectRequest {
        frame,
        window: CropWindow::full(frame),
        person_index: None,
        image,
    };
    let persons: Vec<Detection> = person_stage
        .detect(&full)?
        .into_iter()
        .filter_map(|mut d| {
            d.bbox = clip_to_frame(&d.bbox, frame).ok()?;
            Some(d)
        })
        .collect();

    let mut attire = Vec::new();
    for (idx, person) in persons.iter().enumerate() {
        let Ok(window) = crop_window(&person.bbox) else {
            continue;
        };
        let window = CropWindow {
            w: window.w.min(frame.width - window.x.min(frame.width)),
            h: window.h.min(frame.height - window.y.min(frame.height)),
            ..window
        };
        if window.w == 0 || window.h == 0 {
            continue;
        }
        let crop_img = match image {
            Some(img) => Some(img.sub_image(window.x, window.y, window.w, window.h)?),
            None => None,
        };
        let req = DetectRequest {
            frame,
            window,
            person_index: Some(idx),
            image: crop_img.as_ref(),
        };
        let (ox, oy) = window.offset();
        for mut d in attire_stage.detect(&req)? {
            d.bbox = d.bbox.translate(ox, oy);
            attire.push(AttireDetection { person: idx, detection: d });
        }
    }
    Ok(FrameResult {
        frame: frame.clone(),
        no_person_detected: persons.is_empty(),
        persons,
        attire,
    })
}
