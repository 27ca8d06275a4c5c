//! The work behind each CLI subcommand, as library calls.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::anomaly::{AlertLogLine, AlertRecord, AnomalyEngine, FrameContext, FrameOutcome};
use crate::augment::{jitter, sample_factors_with, JitterFactors};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::eval::{false_alarm_rate, render_table, EvalReport};
use crate::geometry::{BoundingBox, FrameRef, Vocabulary};
use crate::image::RgbImage;
use crate::pipeline::{load_annotations, run_frame, DetectorBackend, FrameResult, ScriptedBackend, TensorFileBackend};
use crate::train::{train_toy_head, LossCurve, ToyFixture};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const ALERT_LOG_FILE: &str = "alerts.jsonl";
pub const FRAME_LOG_FILE: &str = "frames.jsonl";
pub const ANNOTATED_DIR: &str = "annotated";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const AUGMENT_LOG_FILE: &str = "augment_log.jsonl";

pub const AUTHORIZED_RGB: [u8; 3] = [0, 255, 0];
pub const ANOMALOUS_RGB: [u8; 3] = [255, 0, 0];
pub const BORDER_PX: i64 = 2;

/// One row of a frame manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub frame: FrameRef,
    pub context: FrameContext,
}

/// Parses `frame_id,zone_id,width,height,illumination[,conditions[,familiarity]]`
/// rows, where `conditions` is `name=value;name=value` (possibly empty).
/// Rows come back sorted by frame id; a repeated id is an error.
pub fn parse_manifest(text: &str, source: &str) -> Result<Vec<FrameEntry>> {
    let mut out: Vec<(usize, FrameEntry)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(5..=7).contains(&f.len()) {
            return Err(Error::parse(source, line_no, format!("expected 5 to 7 fields, found {}", f.len())));
        }
        let bad = |what: &str, v: &str| Error::parse(source, line_no, format!("bad {what} {v:?}"));
        let frame_id: u64 = f[0].parse().map_err(|_| bad("frame_id", f[0]))?;
        let width: u32 = f[2].parse().ok().filter(|w| *w > 0).ok_or_else(|| bad("width", f[2]))?;
        let height: u32 = f[3].parse().ok().filter(|h| *h > 0).ok_or_else(|| bad("height", f[3]))?;
        let unit = |what: &str, v: &str| -> Result<f64> {
            v.parse::<f64>()
                .ok()
                .filter(|x| (0.0..=1.0).contains(x))
                .ok_or_else(|| Error::parse(source, line_no, format!("{what} {v:?} must be a number in [0, 1]")))
        };
        if f[1].is_empty() {
            return Err(Error::parse(source, line_no, "empty zone id"));
        }
        let mut context = FrameContext::new(f[1], unit("illumination", f[4])?);
        if let Some(conds) = f.get(5) {
            for pair in conds.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                let (name, value) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::parse(source, line_no, format!("condition {pair:?} is not name=value")))?;
                context.conditions.insert(name.trim().to_string(), unit(name.trim(), value.trim())?);
            }
        }
        if let Some(fam) = f.get(6) {
            context.familiarity = unit("familiarity", fam)?;
        }
        let frame = FrameRef::new(frame_id, width, height, f[1]);
        out.push((line_no, FrameEntry { frame, context }));
    }
    out.sort_by_key(|(_, e)| e.frame.frame_id);
    for w in out.windows(2) {
        if w[0].1.frame.frame_id == w[1].1.frame.frame_id {
            return Err(Error::parse(
                source,
                w[1].0.max(w[0].0),
                format!("frame {} listed twice", w[1].1.frame.frame_id),
            ));
        }
    }
    Ok(out.into_iter().map(|(_, e)| e).collect())
}

pub fn load_manifest(frames_dir: &Path) -> Result<Vec<FrameEntry>> {
    let path = frames_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvariantViolation(format!("no {what} directory or file given")))
}

type Stages = (Box<dyn DetectorBackend>, Box<dyn DetectorBackend>);

fn stages(cfg: &EngineConfig) -> Result<Stages> {
    match (&cfg.paths.annotations, &cfg.paths.tensors) {
        (Some(_), Some(_)) => Err(Error::InvariantViolation(
            "give either tensors or annotations as the detector source, not both".into(),
        )),
        (Some(ann), None) => {
            let (p, a) = ScriptedBackend::split_combined(load_annotations(ann)?)?;
            Ok((Box::new(p), Box::new(a)))
        }
        (None, Some(dir)) => Ok((
            Box::new(TensorFileBackend::new(dir, Vocabulary::person(), cfg.decode)),
            Box::new(TensorFileBackend::new(dir, Vocabulary::attire(), cfg.decode)),
        )),
        (None, None) => Err(Error::InvariantViolation(
            "no detector source: give a tensors directory or an annotations file".into(),
        )),
    }
}

#[derive(Serialize)]
struct AttireRecord<'a> {
    person: usize,
    class: &'a str,
    score: f64,
    bbox: BoundingBox,
    authorized: bool,
}

#[derive(Serialize)]
struct AnomalyRecord<'a> {
    class: &'a str,
    bbox: BoundingBox,
    original_conf: f64,
    adjusted_conf: f64,
    track_id: u64,
    persistence: usize,
    persistent: bool,
}

#[derive(Serialize)]
struct FrameRecord<'a> {
    frame_id: u64,
    zone_id: &'a str,
    no_person_detected: bool,
    persons: usize,
    attire: Vec<AttireRecord<'a>>,
    illumination: f64,
    threshold: f64,
    anomalies: Vec<AnomalyRecord<'a>>,
    alerts: usize,
    normal_peak: f64,
}

fn frame_record<'a>(result: &'a FrameResult, outcome: &'a FrameOutcome) -> FrameRecord<'a> {
    let anomalous = anomalous_attire(result, outcome);
    FrameRecord {
        frame_id: result.frame.frame_id,
        zone_id: &result.frame.zone_id,
        no_person_detected: result.no_person_detected,
        persons: result.persons.len(),
        attire: result
            .attire
            .iter()
            .enumerate()
            .map(|(i, a)| AttireRecord {
                person: a.person,
                class: &a.detection.label.name,
                score: a.detection.score,
                bbox: a.detection.bbox,
                authorized: !anomalous.contains(&i),
            })
            .collect(),
        illumination: outcome.features.illumination,
        threshold: outcome.threshold,
        anomalies: outcome
            .anomalies
            .iter()
            .map(|t| AnomalyRecord {
                class: &t.anomaly.detection.label.name,
                bbox: t.anomaly.detection.bbox,
                original_conf: t.anomaly.original_conf,
                adjusted_conf: t.anomaly.adjusted_conf,
                track_id: t.track_id,
                persistence: t.persistence,
                persistent: t.persistent,
            })
            .collect(),
        alerts: outcome.alerts.len(),
        normal_peak: outcome.normal_peak,
    }
}

/// Indices of the attire detections the engine flagged. Anomalies keep the
/// attire order, so a single forward scan pairs them up.
fn anomalous_attire(result: &FrameResult, outcome: &FrameOutcome) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut next = outcome.anomalies.iter().peekable();
    for (i, a) in result.attire.iter().enumerate() {
        if next.peek().is_some_and(|t| t.anomaly.detection == a.detection) {
            next.next();
            out.insert(i);
        }
    }
    out
}

fn annotate(img: &RgbImage, result: &FrameResult, outcome: &FrameOutcome) -> RgbImage {
    let anomalous = anomalous_attire(result, outcome);
    let mut out = img.clone();
    for (i, a) in result.attire.iter().enumerate() {
        let (x1, y1, x2, y2) = a.detection.bbox.corners();
        let rgb = if anomalous.contains(&i) {
            ANOMALOUS_RGB
        } else {
            AUTHORIZED_RGB
        };
        let r = |v: f64| v.round() as i64;
        out.draw_rect(r(x1), r(y1), r(x2), r(y2), BORDER_PX, rgb);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub frames: usize,
    pub alerts: usize,
    pub annotated: usize,
}

struct Sink {
    path: PathBuf,
    w: BufWriter<File>,
}

impl Sink {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            w: BufWriter::new(f),
            path,
        })
    }

    fn line(&mut self, value: &impl Serialize) -> Result<()> {
        let json = serde_json::to_string(value).expect("record serializes");
        writeln!(self.w, "{json}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Streams every manifest frame through the cascade and the anomaly
/// engine, writing the alert log, per-frame records and, for frames with a
/// PPM image, annotated copies. Both logs are flushed after every frame.
pub fn cmd_run(cfg: &EngineConfig) -> Result<RunSummary> {
    let frames_dir = required(&cfg.paths.frames, "frames")?;
    let out_dir = required(&cfg.paths.out, "output")?;
    let entries = load_manifest(frames_dir)?;
    let (mut person_stage, mut attire_stage) = stages(cfg)?;
    let mut engine = AnomalyEngine::new(cfg.engine_params()?)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let annotated_dir = out_dir.join(ANNOTATED_DIR);
    if cfg.output.annotate_frames {
        fs::create_dir_all(&annotated_dir).map_err(|e| Error::io(&annotated_dir, e))?;
    }
    let mut alerts_out = Sink::create(out_dir.join(ALERT_LOG_FILE))?;
    let mut frames_out = Sink::create(out_dir.join(FRAME_LOG_FILE))?;

    let mut summary = RunSummary::default();
    for entry in &entries {
        let img_path = frames_dir.join(format!("{}.ppm", entry.frame.frame_id));
        let image = if img_path.is_file() {
            let img = RgbImage::load(&img_path)?;
            if (img.width(), img.height()) != (entry.frame.width, entry.frame.height) {
                return Err(Error::MissingFrameData {
                    frame_id: entry.frame.frame_id,
                    detail: format!(
                        "{} is {}x{} but the manifest says {}x{}",
                        img_path.display(),
                        img.width(),
                        img.height(),
                        entry.frame.width,
                        entry.frame.height
                    ),
                });
            }
            Some(img)
        } else {
            None
        };

        let result = run_frame(&entry.frame, image.as_ref(), &mut *person_stage, &mut *attire_stage)?;
        let outcome = engine.process_frame(&entry.frame, &entry.context, &result.attire)?;

        for alert in &outcome.alerts {
            alerts_out.line(&AlertLogLine {
                timestamp: cfg.output.timestamp(alert.frame_id)?,
                record: alert.clone(),
            })?;
        }
        frames_out.line(&frame_record(&result, &outcome))?;
        alerts_out.flush()?;
        frames_out.flush()?;

        if let (Some(img), true) = (&image, cfg.output.annotate_frames) {
            let path = annotated_dir.join(format!("{}.ppm", entry.frame.frame_id));
            annotate(img, &result, &outcome).save(&path)?;
            summary.annotated += 1;
        }
        summary.frames += 1;
        summary.alerts += outcome.alerts.len();
    }
    Ok(summary)
}

/// Reads an alert log back into records.
pub fn load_alert_log(path: &Path) -> Result<Vec<AlertRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AlertLogLine = serde_json::from_str(line)
            .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        out.push(rec.record);
    }
    Ok(out)
}

/// Reads frame ids, one per line (`#` comments allowed).
pub fn load_frame_ids(path: &Path) -> Result<BTreeSet<u64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let id = line
            .parse()
            .map_err(|_| Error::parse(path.display().to_string(), i + 1, format!("bad frame id {line:?}")))?;
        out.insert(id);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub predictions: PathBuf,
    pub ground_truth: PathBuf,
    /// Extra named prediction files reported as additional table rows.
    pub baselines: Vec<(String, PathBuf)>,
    /// Alert log and ground-truth anomaly frame ids, for the false alarm rate.
    pub alerts: Option<PathBuf>,
    pub anomaly_frames: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub reports: Vec<EvalReport>,
    pub table: String,
    pub json_lines: String,
}

pub fn cmd_eval(cfg: &EngineConfig, inputs: &EvalInputs) -> Result<EvalOutput> {
    let gts = load_annotations(&inputs.ground_truth)?;
    let iou = cfg.eval.match_iou;
    let preds = load_annotations(&inputs.predictions)?;
    let mut main = EvalReport::evaluate("attire-sentinel", &preds, &gts, iou);
    match (&inputs.alerts, &inputs.anomaly_frames) {
        (Some(alerts), Some(truth)) => {
            let alert_frames: BTreeSet<u64> = load_alert_log(alerts)?.iter().map(|a| a.frame_id).collect();
            main = main.with_false_alarm_rate(false_alarm_rate(&alert_frames, &load_frame_ids(truth)?));
        }
        (None, None) => {}
        _ => {
            return Err(Error::InvariantViolation(
                "the false alarm rate needs both an alert log and the ground-truth anomaly frames".into(),
            ))
        }
    }
    let mut reports = vec![main];
    for (name, path) in &inputs.baselines {
        reports.push(EvalReport::evaluate(name, &load_annotations(path)?, &gts, iou));
    }
    let table = render_table(&reports);
    let json_lines = reports.iter().map(EvalReport::to_json_lines).collect();
    if let Some(out) = &cfg.paths.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("eval.txt");
        fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
        let path = out.join("eval.jsonl");
        fs::write(&path, &json_lines).map_err(|e| Error::io(&path, e))?;
    }
    Ok(EvalOutput {
        reports,
        table,
        json_lines,
    })
}

/// Trains the toy head on the seeded separable fixture and writes the loss
/// curve (`epoch,loss` lines) when an output directory is configured.
pub fn cmd_train_toy(cfg: &EngineConfig) -> Result<LossCurve> {
    let fixture = ToyFixture::separable(cfg.train.fixture, cfg.seed)?;
    let (_, curve) = train_toy_head(&fixture, &cfg.train.loss, &cfg.train.sgd(), cfg.train.epochs, cfg.seed)?;
    if let Some(out) = &cfg.paths.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(LOSS_CURVE_FILE);
        fs::write(&path, curve.to_text()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentLogLine {
    pub output: String,
    pub source: String,
    #[serde(flatten)]
    pub factors: JitterFactors,
}

/// Writes `count` jittered copies of every `.ppm` in `input_dir` (in file
/// name order) as `<stem>_aug<k>.ppm`, logging each copy's factors. One
/// seeded generator supplies all factors.
pub fn cmd_augment(input_dir: &Path, out_dir: &Path, count: usize, seed: u64) -> Result<Vec<AugmentLogLine>> {
    let mut inputs: Vec<PathBuf> = fs::read_dir(input_dir)
        .map_err(|e| Error::io(input_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    inputs.sort();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::new();
    let mut sink = Sink::create(out_dir.join(AUGMENT_LOG_FILE))?;
    for path in &inputs {
        let img = RgbImage::load(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for k in 0..count {
            let factors = sample_factors_with(&mut rng);
            let name = format!("{stem}_aug{k}.ppm");
            jitter(&img, &factors).save(&out_dir.join(&name))?;
            let line = AugmentLogLine {
                output: name,
                source: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                factors,
            };
            sink.line(&line)?;
            log.push(line);
        }
    }
    sink.flush()?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_rows() {
        let text = "# id,zone,w,h,light\n2,lab,64,48,0.5\n1,lab,64,48,0.3,fog=0.2;glare=0.4,0.8\n";
        let rows = parse_manifest(text, "m").unwrap();
        assert_eq!(rows.iter().map(|r| r.frame.frame_id).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(rows[0].context.conditions.len(), 2);
        assert_eq!(rows[0].context.familiarity, 0.8);
        assert_eq!(rows[1].context.familiarity, 1.0);

        assert!(matches!(parse_manifest("1,lab,64,48", "m"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_manifest("1,lab,64,48,1.5", "m").is_err());
        assert!(parse_manifest("1,lab,0,48,0.5", "m").is_err());
        assert!(parse_manifest("1,lab,64,48,0.5,fog", "m").is_err());
        assert!(matches!(
            parse_manifest("1,lab,64,48,0.5\n1,lab,64,48,0.5\n", "m"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
