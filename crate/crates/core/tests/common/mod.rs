#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use attire_sentinel::config::EngineConfig;
use attire_sentinel::decode::{encode_cell, Anchor, GridSpec, RawGridTensor};
use attire_sentinel::geometry::BoundingBox;

pub const WIDTH: u32 = 320;
pub const HEIGHT: u32 = 240;

/// A scripted stream on disk: manifest, combined detections and a policy
/// that authorizes only Jackets in zone `lab`.
pub struct Stream {
    pub frames: PathBuf,
    pub annotations: PathBuf,
    pub policy: PathBuf,
    pub out: PathBuf,
}

impl Stream {
    pub fn config(&self) -> EngineConfig {
        let mut cfg = EngineConfig::default();
        cfg.paths.frames = Some(self.frames.clone());
        cfg.paths.annotations = Some(self.annotations.clone());
        cfg.paths.policy = Some(self.policy.clone());
        cfg.paths.out = Some(self.out.clone());
        cfg
    }

    pub fn with_out(&self, out: &Path) -> EngineConfig {
        let mut cfg = self.config();
        cfg.paths.out = Some(out.to_path_buf());
        cfg
    }
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

/// `frames` frames of one person; in every frame listed in `shirt_at` the
/// person wears an unauthorized T-Shirt, otherwise an authorized Jacket.
pub fn scripted_stream(root: &Path, frames: u64, shirt_at: &[u64]) -> Stream {
    let frames_dir = root.join("frames");
    fs::create_dir_all(&frames_dir).unwrap();
    let mut manifest = String::from("# frame_id,zone_id,width,height,illumination\n");
    let mut script = String::new();
    for f in 1..=frames {
        manifest.push_str(&format!("{f},lab,{WIDTH},{HEIGHT},0.5\n"));
        script.push_str(&format!("{f},Person,160,120,60,160,0.95\n"));
        let class = if shirt_at.contains(&f) { "T-Shirt" } else { "Jacket" };
        script.push_str(&format!("{f},{class},160,100,40,50,0.9\n"));
    }
    write(&frames_dir.join("manifest.csv"), &manifest);
    let annotations = root.join("detections.txt");
    write(&annotations, &script);
    let policy = root.join("zones.txt");
    write(&policy, "lab: Jacket\n");
    Stream {
        frames: frames_dir,
        annotations,
        policy,
        out: root.join("out"),
    }
}

/// Grid whose every slot is confidently empty.
pub fn background_grid(spec: GridSpec, anchors: Vec<Anchor>) -> RawGridTensor {
    let mut t = RawGridTensor::zeros(spec, anchors).unwrap();
    for cy in 0..spec.s {
        for cx in 0..spec.s {
            for a in 0..spec.num_anchors {
                t.slot_mut(cy, cx, a)[4] = -12.0;
            }
        }
    }
    t
}

/// Places one object, given in pixels, into the slot that owns its center.
pub fn place(t: &mut RawGridTensor, pixel_box: BoundingBox, objectness: f64, class_probs: &[f64]) {
    let (sx, sy) = t.spec.pixel_scale();
    let grid_box = pixel_box.scale(1.0 / sx, 1.0 / sy);
    let (cx, cy) = (grid_box.cx.floor() as usize, grid_box.cy.floor() as usize);
    let anchor = t.anchors[0];
    let raw = encode_cell(&grid_box, objectness, class_probs, &t.spec, anchor, cx, cy).unwrap();
    t.set_cell(cy, cx, 0, &raw).unwrap();
}

pub fn person_spec() -> GridSpec {
    GridSpec {
        s: 8,
        num_anchors: 1,
        num_classes: 1,
        frame_width: WIDTH,
        frame_height: HEIGHT,
    }
}

pub fn attire_spec(w: u32, h: u32) -> GridSpec {
    GridSpec {
        s: 4,
        num_anchors: 1,
        num_classes: 5,
        frame_width: w,
        frame_height: h,
    }
}

/// Probabilities that put almost all mass on `class` out of five.
pub fn attire_probs(class: usize) -> Vec<f64> {
    (0..5).map(|i| if i == class { 0.96 } else { 0.01 }).collect()
}
