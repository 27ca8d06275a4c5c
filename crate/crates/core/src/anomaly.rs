//! Attire anomalies: zone-policy filtering, fuzzy confidence adjustment,
//! adaptive alert threshold, m-of-n temporal persistence and alert records.
//!
//! Per frame the [`AnomalyEngine`] runs, in order:
//!
//! 1. keep attire detections whose class the zone does not authorize;
//! 2. rescale each anomaly's confidence by the fuzzy multiplier for the
//!    frame's illumination;
//! 3. compute the frame threshold
//!    `clamp(base + alpha * (mean_adjusted - base) + beta * (0.5 - illumination), floor, ceiling)`;
//! 4. associate anomalies with tracks and mark the ones seen in at least
//!    `required` of the last `window` frames;
//! 5. alert on persistent anomalies whose adjusted confidence is strictly
//!    above the threshold;
//! 6. fold the frame's illumination into a running average and nudge the
//!    fuzzy "normal" illumination term toward it.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzzy::FuzzyRuleBase;
use crate::geometry::{iou, Detection, FrameRef, Vocabulary, ZonePolicy};
use crate::pipeline::AttireDetection;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Anomaly {
    pub detection: Detection,
    pub zone_id: String,
    pub original_conf: f64,
    pub adjusted_conf: f64,
}

/// Zone policies keyed by zone id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ZonePolicies(BTreeMap<String, ZonePolicy>);

impl ZonePolicies {
    pub fn new(policies: impl IntoIterator<Item = ZonePolicy>) -> Self {
        Self(policies.into_iter().map(|p| (p.zone_id.clone(), p)).collect())
    }

    pub fn get(&self, zone_id: &str) -> Result<&ZonePolicy> {
        self.0.get(zone_id).ok_or_else(|| Error::UnknownZone(zone_id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ZonePolicy> {
        self.0.values()
    }

    /// Parses `zone_id: class,class,...` lines; `#` starts a comment and an
    /// empty class list authorizes nothing.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let vocab = Vocabulary::attire();
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (zone, classes) = line
                .split_once(':')
                .ok_or_else(|| Error::parse(source, line_no, "expected `zone_id: class,class,...`"))?;
            let zone = zone.trim();
            if zone.is_empty() {
                return Err(Error::parse(source, line_no, "empty zone id"));
            }
            let mut authorized = Vec::new();
            for name in classes.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let label = vocab.lookup(name).ok_or_else(|| {
                    Error::parse(source, line_no, format!("{name:?} is not an attire class"))
                })?;
                authorized.push(label);
            }
            if map.insert(zone.to_string(), ZonePolicy::new(zone, authorized)).is_some() {
                return Err(Error::parse(source, line_no, format!("zone {zone:?} defined twice")));
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        self.0
            .values()
            .map(|p| {
                let names: Vec<&str> = p.authorized.iter().map(|l| l.name.as_str()).collect();
                format!("{}: {}\n", p.zone_id, names.join(","))
            })
            .collect()
    }
}

/// Detections whose class the zone does not authorize. Both confidences
/// start at the detection score.
pub fn identify_anomalies(dets: &[Detection], policy: &ZonePolicy) -> Vec<Anomaly> {
    dets.iter()
        .filter(|d| !policy.authorizes(&d.label))
        .map(|d| Anomaly {
            detection: d.clone(),
            zone_id: policy.zone_id.clone(),
            original_conf: d.score,
            adjusted_conf: d.score,
        })
        .collect()
}

/// Environmental readings for one frame. Every value lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameContext {
    pub zone_id: String,
    pub illumination: f64,
    #[serde(default)]
    pub conditions: BTreeMap<String, f64>,
    #[serde(default = "one")]
    pub familiarity: f64,
}

fn one() -> f64 {
    1.0
}

impl FrameContext {
    pub fn new(zone_id: impl Into<String>, illumination: f64) -> Self {
        Self {
            zone_id: zone_id.into(),
            illumination,
            conditions: BTreeMap::new(),
            familiarity: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.illumination) || !unit(self.familiarity) {
            return Err(Error::InvariantViolation(format!(
                "illumination {} and familiarity {} must lie in [0, 1]",
                self.illumination, self.familiarity
            )));
        }
        if let Some((k, v)) = self.conditions.iter().find(|(_, v)| !unit(**v)) {
            return Err(Error::InvariantViolation(format!("condition {k} = {v} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContextFeatures {
    pub illumination: f64,
    /// Mean of the named conditions, 0.5 when there are none.
    pub condition_mean: f64,
    pub familiarity: f64,
}

pub fn context_features(ctx: &FrameContext) -> ContextFeatures {
    let condition_mean = if ctx.conditions.is_empty() {
        0.5
    } else {
        ctx.conditions.values().sum::<f64>() / ctx.conditions.len() as f64
    };
    ContextFeatures {
        illumination: ctx.illumination.clamp(0.0, 1.0),
        condition_mean: condition_mean.clamp(0.0, 1.0),
        familiarity: ctx.familiarity.clamp(0.0, 1.0),
    }
}

/// `clamp(original * multiplier, 0, 1)`.
pub fn fuzzy_adjust(a: &Anomaly, f: &ContextFeatures, rb: &FuzzyRuleBase) -> Result<f64> {
    let m = rb.infer(f.illumination, a.original_conf)?;
    Ok((a.original_conf * m).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdParams {
    #[serde(default = "defaults::base")]
    pub base: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::floor")]
    pub floor: f64,
    #[serde(default = "defaults::ceiling")]
    pub ceiling: f64,
}

mod defaults {
    pub fn base() -> f64 {
        0.5
    }
    pub fn alpha() -> f64 {
        0.5
    }
    pub fn beta() -> f64 {
        0.2
    }
    pub fn floor() -> f64 {
        0.05
    }
    pub fn ceiling() -> f64 {
        0.95
    }
    pub fn window() -> usize {
        5
    }
    pub fn required() -> usize {
        3
    }
    pub fn match_iou() -> f64 {
        0.3
    }
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            base: defaults::base(),
            alpha: defaults::alpha(),
            beta: defaults::beta(),
            floor: defaults::floor(),
            ceiling: defaults::ceiling(),
        }
    }
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.floor && self.floor < self.ceiling && self.ceiling < 1.0) {
            return Err(Error::InvariantViolation(format!(
                "threshold bounds need 0 < floor < ceiling < 1 (got {}, {})",
                self.floor, self.ceiling
            )));
        }
        if !(self.base > 0.0 && self.base < 1.0) {
            return Err(Error::InvariantViolation(format!("threshold base {} outside (0, 1)", self.base)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::InvariantViolation("threshold alpha and beta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Frame threshold from the mean adjusted confidence and the illumination.
/// With no anomalies the mean term drops out.
pub fn adaptive_threshold(anoms: &[Anomaly], f: &ContextFeatures, tp: &ThresholdParams) -> f64 {
    let mean_shift = if anoms.is_empty() {
        0.0
    } else {
        let mean = anoms.iter().map(|a| a.adjusted_conf).sum::<f64>() / anoms.len() as f64;
        tp.alpha * (mean - tp.base)
    };
    let light_shift = if anoms.is_empty() { 0.0 } else { tp.beta * (0.5 - f.illumination) };
    (tp.base + mean_shift + light_shift).clamp(tp.floor, tp.ceiling)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalParams {
    /// `n`: frames of history considered.
    #[serde(default = "defaults::window")]
    pub window: usize,
    /// `m`: frames within the window an anomaly must appear in.
    #[serde(default = "defaults::required")]
    pub required: usize,
    #[serde(default = "defaults::match_iou")]
    pub match_iou: f64,
}

impl Default for TemporalParams {
    fn default() -> Self {
        Self {
            window: defaults::window(),
            required: defaults::required(),
            match_iou: defaults::match_iou(),
        }
    }
}

impl TemporalParams {
    pub fn validate(&self) -> Result<()> {
        if self.required == 0 || self.required > self.window {
            return Err(Error::InvariantViolation(format!(
                "temporal persistence needs 1 <= required <= window (got {} of {})",
                self.required, self.window
            )));
        }
        if !(0.0..=1.0).contains(&self.match_iou) {
            return Err(Error::InvariantViolation(format!("match_iou {} outside [0, 1]", self.match_iou)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Track {
    id: u64,
    class_id: usize,
    bbox: crate::geometry::BoundingBox,
    /// Oldest first; at most `window` entries.
    history: VecDeque<bool>,
    misses: usize,
}

/// Open tracks of one camera stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackState {
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl TrackState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn active_tracks(&self) -> usize {
        self.tracks.len()
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.last_frame
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackedAnomaly {
    pub anomaly: Anomaly,
    pub track_id: u64,
    /// Frames among the last `window` in which the track was seen.
    pub persistence: usize,
    pub persistent: bool,
}

/// Greedy one-to-one association by descending IOU between same-class
/// pairs with IOU at least `match_iou`; ties go to the lower anomaly index,
/// then the lower track index. Returns the track index per anomaly.
fn associate(anoms: &[Anomaly], tracks: &[Track], match_iou: f64) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (i, a) in anoms.iter().enumerate() {
        for (t, tr) in tracks.iter().enumerate() {
            if tr.class_id != a.detection.label.id {
                continue;
            }
            let v = iou(&a.detection.bbox, &tr.bbox);
            if v >= match_iou && v > 0.0 {
                pairs.push((v, i, t));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut by_anom = vec![None; anoms.len()];
    let mut taken = vec![false; tracks.len()];
    for (_, i, t) in pairs {
        if by_anom[i].is_none() && !taken[t] {
            by_anom[i] = Some(t);
            taken[t] = true;
        }
    }
    by_anom
}

/// Associates this frame's anomalies with open tracks and reports, for each
/// anomaly, whether its track has been seen in at least `required` of the
/// last `window` frames (this one included). Tracks unmatched for `window`
/// consecutive frames are dropped.
pub fn temporal_integrate(
    anoms: Vec<Anomaly>,
    state: &mut TrackState,
    params: &TemporalParams,
    frame_id: u64,
) -> Result<Vec<TrackedAnomaly>> {
    if let Some(last) = state.last_frame {
        if frame_id <= last {
            return Err(Error::NonMonotoneFrameId { frame_id, last });
        }
    }
    state.last_frame = Some(frame_id);
    let assignment = associate(&anoms, &state.tracks, params.match_iou);

    let mut matched = vec![false; state.tracks.len()];
    for (i, slot) in assignment.iter().enumerate() {
        if let Some(t) = *slot {
            matched[t] = true;
            state.tracks[t].bbox = anoms[i].detection.bbox;
        }
    }
    for (track, hit) in state.tracks.iter_mut().zip(&matched) {
        track.history.push_back(*hit);
        if track.history.len() > params.window {
            track.history.pop_front();
        }
        track.misses = if *hit { 0 } else { track.misses + 1 };
    }

    let mut track_of = Vec::with_capacity(anoms.len());
    for (i, slot) in assignment.iter().enumerate() {
        let id = match *slot {
            Some(t) => state.tracks[t].id,
            None => {
                let id = state.next_id;
                state.next_id += 1;
                state.tracks.push(Track {
                    id,
                    class_id: anoms[i].detection.label.id,
                    bbox: anoms[i].detection.bbox,
                    history: VecDeque::from([true]),
                    misses: 0,
                });
                id
            }
        };
        track_of.push(id);
    }
    state.tracks.retain(|t| t.misses < params.window);

    Ok(anoms
        .into_iter()
        .zip(track_of)
        .map(|(anomaly, track_id)| {
            let track = state.tracks.iter().find(|t| t.id == track_id).expect("matched track is live");
            let persistence = track.history.iter().filter(|h| **h).count();
            TrackedAnomaly {
                anomaly,
                track_id,
                persistence,
                persistent: persistence >= params.required,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub frame_id: u64,
    pub zone_id: String,
    pub class: String,
    pub original_conf: f64,
    pub adjusted_conf: f64,
    pub threshold: f64,
    pub persistence: usize,
}

/// One alert per persistent anomaly with `adjusted_conf > threshold`,
/// ordered by descending adjusted confidence, then class id.
pub fn raise_alerts(tracked: &[TrackedAnomaly], threshold: f64, frame_id: u64) -> Vec<AlertRecord> {
    let mut hits: Vec<&TrackedAnomaly> = tracked
        .iter()
        .filter(|t| t.persistent && t.anomaly.adjusted_conf > threshold)
        .collect();
    hits.sort_by(|a, b| {
        b.anomaly
            .adjusted_conf
            .total_cmp(&a.anomaly.adjusted_conf)
            .then(a.anomaly.detection.label.id.cmp(&b.anomaly.detection.label.id))
    });
    hits.into_iter()
        .map(|t| AlertRecord {
            frame_id,
            zone_id: t.anomaly.zone_id.clone(),
            class: t.anomaly.detection.label.name.clone(),
            original_conf: t.anomaly.original_conf,
            adjusted_conf: t.anomaly.adjusted_conf,
            threshold,
            persistence: t.persistence,
        })
        .collect()
}

/// One line of the alert log: the record plus its wall-clock time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertLogLine {
    pub timestamp: String,
    #[serde(flatten)]
    pub record: AlertRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationParams {
    /// How far the "normal" illumination peak moves toward the running
    /// average per frame.
    #[serde(default = "default_rate")]
    pub rate: f64,
    /// Weight of the newest frame in the running illumination average.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

fn default_rate() -> f64 {
    0.05
}

fn default_smoothing() -> f64 {
    0.1
}

impl Default for AdaptationParams {
    fn default() -> Self {
        Self {
            rate: default_rate(),
            smoothing: default_smoothing(),
        }
    }
}

impl AdaptationParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) || !(0.0..=1.0).contains(&self.smoothing) {
            return Err(Error::InvariantViolation(format!(
                "adaptation rate {} and smoothing {} must lie in [0, 1]",
                self.rate, self.smoothing
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineParams {
    pub rule_base: FuzzyRuleBase,
    pub threshold: ThresholdParams,
    pub temporal: TemporalParams,
    pub adaptation: AdaptationParams,
    pub policies: ZonePolicies,
}

impl EngineParams {
    pub fn validate(&self) -> Result<()> {
        self.rule_base.validate()?;
        self.threshold.validate()?;
        self.temporal.validate()?;
        self.adaptation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameOutcome {
    pub frame_id: u64,
    pub zone_id: String,
    pub features: ContextFeatures,
    pub threshold: f64,
    pub anomalies: Vec<TrackedAnomaly>,
    pub alerts: Vec<AlertRecord>,
    /// Peak of the "normal" illumination term used for this frame.
    pub normal_peak: f64,
    /// False when this frame's rule-base adaptation was rejected.
    pub adaptation_applied: bool,
}

/// Per-stream anomaly state. Frames must arrive in increasing id order.
#[derive(Debug, Clone)]
pub struct AnomalyEngine {
    params: EngineParams,
    rule_base: FuzzyRuleBase,
    tracks: TrackState,
    illumination_ema: Option<f64>,
}

impl AnomalyEngine {
    pub fn new(params: EngineParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            rule_base: params.rule_base.clone(),
            params,
            tracks: TrackState::new(),
            illumination_ema: None,
        })
    }

    pub fn rule_base(&self) -> &FuzzyRuleBase {
        &self.rule_base
    }

    pub fn tracks(&self) -> &TrackState {
        &self.tracks
    }

    pub fn process_frame(
        &mut self,
        frame: &FrameRef,
        ctx: &FrameContext,
        attire: &[AttireDetection],
    ) -> Result<FrameOutcome> {
        ctx.validate()?;
        let policy = self.params.policies.get(&frame.zone_id)?;
        let dets: Vec<Detection> = attire.iter().map(|a| a.detection.clone()).collect();
        let features = context_features(ctx);

        let mut anomalies = identify_anomalies(&dets, policy);
        for a in &mut anomalies {
            a.adjusted_conf = fuzzy_adjust(a, &features, &self.rule_base)?;
        }
        let threshold = adaptive_threshold(&anomalies, &features, &self.params.threshold);
        let tracked = temporal_integrate(anomalies, &mut self.tracks, &self.params.temporal, frame.frame_id)?;
        let alerts = raise_alerts(&tracked, threshold, frame.frame_id);

        let normal_peak = self.rule_base.illumination.normal.peak;
        let s = self.params.adaptation.smoothing;
        let ema = match self.illumination_ema {
            None => features.illumination,
            Some(prev) => (1.0 - s) * prev + s * features.illumination,
        };
        self.illumination_ema = Some(ema);
        let adaptation_applied = match self.rule_base.adapted(ema, self.params.adaptation.rate) {
            Ok(next) => {
                self.rule_base = next;
                true
            }
            Err(Error::InvariantViolation(_)) => false,
            Err(e) => return Err(e),
        };

        Ok(FrameOutcome {
            frame_id: frame.frame_id,
            zone_id: frame.zone_id.clone(),
            features,
            threshold,
            anomalies: tracked,
            alerts,
            normal_peak,
            adaptation_applied,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingBox, ClassLabel};

    fn attire(name: &str) -> ClassLabel {
        Vocabulary::attire().lookup(name).unwrap()
    }

    fn det(name: &str, cx: f64, score: f64) -> Detection {
        Detection::new(BoundingBox::new(cx, 50.0, 20.0, 30.0), attire(name), score)
    }

    fn anomaly(name: &str, cx: f64, conf: f64) -> Anomaly {
        Anomaly {
            detection: det(name, cx, conf),
            zone_id: "lab".into(),
            original_conf: conf,
            adjusted_conf: conf,
        }
    }

    #[test]
    fn policy_filtering() {
        let policy = ZonePolicy::new("lab", [attire("Jacket")]);
        assert!(identify_anomalies(&[det("Jacket", 10.0, 0.9)], &policy).is_empty());
        let a = identify_anomalies(&[det("T-Shirt", 10.0, 0.8)], &policy);
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].original_conf, a[0].adjusted_conf), (0.8, 0.8));
        assert!(identify_anomalies(&[], &policy).is_empty());
        let open = ZonePolicy::new("yard", []);
        assert_eq!(identify_anomalies(&[det("Jacket", 10.0, 0.9)], &open).len(), 1);
    }

    #[test]
    fn policy_file() {
        let text = "# zones\nlab: Jacket, Top\nyard:\n";
        let p = ZonePolicies::parse(text, "zones.txt").unwrap();
        assert_eq!(p.get("lab").unwrap().authorized.len(), 2);
        assert!(p.get("yard").unwrap().authorized.is_empty());
        assert!(matches!(p.get("roof"), Err(Error::UnknownZone(_))));
        assert_eq!(ZonePolicies::parse(&p.to_text(), "x").unwrap(), p);
        assert!(ZonePolicies::parse("lab Jacket", "x").is_err());
        assert!(ZonePolicies::parse("lab: Hat", "x").is_err());
        assert!(ZonePolicies::parse("lab: Top\nlab: Skirt", "x").is_err());
    }

    #[test]
    fn features() {
        let f = context_features(&FrameContext::new("lab", 0.5));
        assert_eq!((f.illumination, f.condition_mean, f.familiarity), (0.5, 0.5, 1.0));
        let mut ctx = FrameContext::new("lab", 0.2);
        ctx.conditions.insert("fog".into(), 0.2);
        ctx.conditions.insert("glare".into(), 0.4);
        assert!((context_features(&ctx).condition_mean - 0.3).abs() < 1e-15);
        ctx.conditions.insert("smoke".into(), 1.5);
        assert!(ctx.validate().is_err());
    }

    #[test]
    fn fuzzy_adjust_cases() {
        let rb = FuzzyRuleBase::default();
        let a = anomaly("Top", 0.0, 0.5);
        let neutral = fuzzy_adjust(&a, &context_features(&FrameContext::new("lab", 0.5)), &rb).unwrap();
        assert!((neutral - 0.5).abs() < 1e-9);
        let a = anomaly("Top", 0.0, 0.8);
        let dark = fuzzy_adjust(&a, &context_features(&FrameContext::new("lab", 0.0)), &rb).unwrap();
        assert!((dark - 0.48).abs() < 1e-9);
        let a = anomaly("Top", 0.0, 0.95);
        let bright = fuzzy_adjust(&a, &context_features(&FrameContext::new("lab", 1.0)), &rb).unwrap();
        assert_eq!(bright, 1.0);
    }

    #[test]
    fn threshold_cases() {
        let tp = ThresholdParams::default();
        let f = context_features(&FrameContext::new("lab", 0.5));
        assert_eq!(adaptive_threshold(&[anomaly("Top", 0.0, 0.5)], &f, &tp), 0.5);
        assert_eq!(adaptive_threshold(&[], &f, &tp), 0.5);
        let tp0 = ThresholdParams { beta: 0.0, ..tp };
        let t = adaptive_threshold(&[anomaly("Top", 0.0, 0.9)], &f, &tp0);
        assert!((t - 0.7).abs() < 1e-15);
        let wild = ThresholdParams {
            alpha: 50.0,
            beta: 50.0,
            ..tp
        };
        let dark = context_features(&FrameContext::new("lab", 0.0));
        let bright = context_features(&FrameContext::new("lab", 1.0));
        assert_eq!(adaptive_threshold(&[anomaly("Top", 0.0, 1.0)], &dark, &wild), 0.95);
        assert_eq!(adaptive_threshold(&[anomaly("Top", 0.0, 0.0)], &bright, &wild), 0.05);
    }

    #[test]
    fn threshold_grows_with_mean_confidence() {
        let tp = ThresholdParams::default();
        let f = context_features(&FrameContext::new("lab", 0.3));
        let mut prev = 0.0;
        for k in 0..=100 {
            let t = adaptive_threshold(&[anomaly("Top", 0.0, k as f64 / 100.0)], &f, &tp);
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn persistence_cases() {
        let params = TemporalParams::default();
        let mut st = TrackState::new();
        let mut persistent_at = Vec::new();
        for f in 1..=5u64 {
            let anoms = if f == 2 { vec![anomaly("Top", 30.0, 0.9)] } else { vec![] };
            for t in temporal_integrate(anoms, &mut st, &params, f).unwrap() {
                if t.persistent {
                    persistent_at.push(f);
                }
            }
        }
        assert!(persistent_at.is_empty());

        let mut st = TrackState::new();
        let mut flags = Vec::new();
        for f in 1..=3u64 {
            let out = temporal_integrate(vec![anomaly("Top", 30.0, 0.9)], &mut st, &params, f).unwrap();
            flags.push((out[0].persistent, out[0].track_id));
        }
        assert_eq!(flags, vec![(false, 0), (false, 0), (true, 0)]);
    }

    #[test]
    fn disjoint_anomalies_get_separate_tracks() {
        let params = TemporalParams::default();
        let mut st = TrackState::new();
        for f in 1..=4u64 {
            let out = temporal_integrate(
                vec![anomaly("Top", 20.0, 0.9), anomaly("Top", 200.0, 0.9)],
                &mut st,
                &params,
                f,
            )
            .unwrap();
            assert_eq!((out[0].track_id, out[1].track_id), (0, 1));
        }
        assert_eq!(st.active_tracks(), 2);
    }

    #[test]
    fn different_classes_never_share_a_track() {
        let params = TemporalParams::default();
        let mut st = TrackState::new();
        temporal_integrate(vec![anomaly("Top", 20.0, 0.9)], &mut st, &params, 1).unwrap();
        let out = temporal_integrate(vec![anomaly("Skirt", 20.0, 0.9)], &mut st, &params, 2).unwrap();
        assert_eq!(out[0].track_id, 1);
    }

    #[test]
    fn stale_tracks_are_evicted() {
        let params = TemporalParams::default();
        let mut st = TrackState::new();
        temporal_integrate(vec![anomaly("Top", 20.0, 0.9)], &mut st, &params, 1).unwrap();
        for f in 2..=5 {
            temporal_integrate(vec![], &mut st, &params, f).unwrap();
            assert_eq!(st.active_tracks(), 1);
        }
        temporal_integrate(vec![], &mut st, &params, 6).unwrap();
        assert_eq!(st.active_tracks(), 0);
    }

    #[test]
    fn frame_ids_must_increase() {
        let params = TemporalParams::default();
        let mut st = TrackState::new();
        temporal_integrate(vec![], &mut st, &params, 4).unwrap();
        assert!(matches!(
            temporal_integrate(vec![], &mut st, &params, 4),
            Err(Error::NonMonotoneFrameId { frame_id: 4, last: 4 })
        ));
    }

    fn tracked(name: &str, adjusted: f64, persistent: bool) -> TrackedAnomaly {
        let mut a = anomaly(name, 0.0, 0.9);
        a.adjusted_conf = adjusted;
        TrackedAnomaly {
            anomaly: a,
            track_id: 0,
            persistence: 3,
            persistent,
        }
    }

    #[test]
    fn alert_rule_is_strict() {
        assert_eq!(raise_alerts(&[tracked("Top", 0.8, true)], 0.6, 9).len(), 1);
        assert!(raise_alerts(&[tracked("Top", 0.6, true)], 0.6, 9).is_empty());
        assert!(raise_alerts(&[tracked("Top", 0.9, false)], 0.6, 9).is_empty());
        assert!(raise_alerts(&[], 0.6, 9).is_empty());
        let alerts = raise_alerts(
            &[tracked("Top", 0.7, true), tracked("Jacket", 0.9, true), tracked("Shorts", 0.7, true)],
            0.5,
            9,
        );
        let order: Vec<&str> = alerts.iter().map(|a| a.class.as_str()).collect();
        assert_eq!(order, ["Jacket", "Shorts", "Top"]);
    }

    #[test]
    fn alert_log_line_shape() {
        let line = AlertLogLine {
            timestamp: "2026-01-01T00:00:00.000Z".into(),
            record: raise_alerts(&[tracked("Top", 0.8, true)], 0.6, 9).remove(0),
        };
        let json = serde_json::to_string(&line).unwrap();
        assert!(json.starts_with(r#"{"timestamp":"2026-01-01T00:00:00.000Z","frame_id":9,"zone_id":"lab","class":"Top""#));
        let back: AlertLogLine = serde_json::from_str(&json).unwrap();
        assert_eq!(back, line);
    }

    #[test]
    fn engine_end_to_end() {
        let params = EngineParams {
            rule_base: FuzzyRuleBase::default(),
            threshold: ThresholdParams::default(),
            temporal: TemporalParams::default(),
            adaptation: AdaptationParams::default(),
            policies: ZonePolicies::new([ZonePolicy::new("lab", [attire("Jacket")])]),
        };
        let mut engine = AnomalyEngine::new(params).unwrap();
        let ctx = FrameContext::new("lab", 0.5);
        let mut alert_frames = Vec::new();
        for f in 1..=5 {
            let frame = FrameRef::new(f, 320, 240, "lab");
            let dets = [
                AttireDetection {
                    person: 0,
                    detection: det("T-Shirt", 100.0, 0.9),
                },
                AttireDetection {
                    person: 1,
                    detection: det("Jacket", 200.0, 0.9),
                },
            ];
            let out = engine.process_frame(&frame, &ctx, &dets).unwrap();
            assert_eq!(out.anomalies.len(), 1);
            if !out.alerts.is_empty() {
                alert_frames.push(f);
            }
        }
        assert_eq!(alert_frames, vec![3, 4, 5]);

        let bad = FrameRef::new(9, 320, 240, "roof");
        assert!(matches!(engine.process_frame(&bad, &ctx, &[]), Err(Error::UnknownZone(_))));
    }

    #[test]
    fn engine_adapts_toward_observed_light() {
        let params = EngineParams {
            rule_base: FuzzyRuleBase::default(),
            threshold: ThresholdParams::default(),
            temporal: TemporalParams::default(),
            adaptation: AdaptationParams { rate: 0.2, smoothing: 1.0 },
            policies: ZonePolicies::new([ZonePolicy::new("lab", [])]),
        };
        let mut engine = AnomalyEngine::new(params).unwrap();
        for f in 1..=100 {
            engine
                .process_frame(&FrameRef::new(f, 10, 10, "lab"), &FrameContext::new("lab", 0.6), &[])
                .unwrap();
        }
        assert!((engine.rule_base().illumination.normal.peak - 0.6).abs() < 1e-6);
    }

    /// Recomputes persistence from every frame seen so far: tracks are never
    /// dropped from storage, only marked dead once their last `window`
    /// entries are all misses.
    fn full_history_oracle(frames: &[Vec<Anomaly>], p: &TemporalParams) -> Vec<Vec<bool>> {
        struct T {
            class_id: usize,
            bbox: BoundingBox,
            hits: Vec<bool>,
        }
        let alive = |t: &T| t.hits.len() < p.window || t.hits.iter().rev().take(p.window).any(|h| *h);
        let mut tracks: Vec<T> = Vec::new();
        let mut out = Vec::new();
        for anoms in frames {
            let live: Vec<usize> = (0..tracks.len()).filter(|&i| alive(&tracks[i])).collect();
            let mut pairs = Vec::new();
            for (i, a) in anoms.iter().enumerate() {
                for (k, &t) in live.iter().enumerate() {
                    let v = iou(&a.detection.bbox, &tracks[t].bbox);
                    if tracks[t].class_id == a.detection.label.id && v >= p.match_iou && v > 0.0 {
                        pairs.push((v, i, k));
                    }
                }
            }
            pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut owner = vec![None; anoms.len()];
            let mut used = vec![false; live.len()];
            for (_, i, k) in pairs {
                if owner[i].is_none() && !used[k] {
                    owner[i] = Some(live[k]);
                    used[k] = true;
                }
            }
            for (k, &t) in live.iter().enumerate() {
                tracks[t].hits.push(used[k]);
            }
            let mut flags = Vec::new();
            for (i, a) in anoms.iter().enumerate() {
                let t = match owner[i] {
                    Some(t) => {
                        tracks[t].bbox = a.detection.bbox;
                        t
                    }
                    None => {
                        tracks.push(T {
                            class_id: a.detection.label.id,
                            bbox: a.detection.bbox,
                            hits: vec![true],
                        });
                        tracks.len() - 1
                    }
                };
                let recent = tracks[t].hits.iter().rev().take(p.window).filter(|h| **h).count();
                flags.push(recent >= p.required);
            }
            out.push(flags);
        }
        out
    }

    fn random_stream(seed: u64, len: usize) -> Vec<Vec<Anomaly>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let classes = ["Top", "Skirt"];
        (0..len)
            .map(|_| {
                let mut frame = Vec::new();
                for slot in 0..4 {
                    if rng.gen_bool(0.55) {
                        let jitter = rng.gen_range(-6.0..6.0);
                        let name = classes[rng.gen_range(0..2)];
                        frame.push(anomaly(name, 40.0 * slot as f64 + jitter, 0.9));
                    }
                }
                frame
            })
            .collect()
    }

    #[test]
    fn persistence_matches_full_history_oracle() {
        for seed in 0..100 {
            let window = 2 + (seed as usize % 9);
            let params = TemporalParams {
                window,
                required: 1 + (seed as usize % window),
                match_iou: 0.3,
            };
            let frames = random_stream(seed, 40);
            let expected = full_history_oracle(&frames, &params);
            let mut st = TrackState::new();
            for (f, anoms) in frames.into_iter().enumerate() {
                let got: Vec<bool> = temporal_integrate(anoms, &mut st, &params, f as u64)
                    .unwrap()
                    .iter()
                    .map(|t| t.persistent)
                    .collect();
                assert_eq!(got, expected[f], "seed {seed} frame {f}");
            }
        }
    }

    #[test]
    fn anomalies_equal_set_difference() {
        use rand::{Rng, SeedableRng};
        let vocab = Vocabulary::attire();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let authorized: Vec<ClassLabel> =
                (0..vocab.len()).filter(|_| rng.gen_bool(0.4)).map(|i| vocab.label(i).unwrap()).collect();
            let policy = ZonePolicy::new("z", authorized.clone());
            let dets: Vec<Detection> = (0..rng.gen_range(0..8))
                .map(|_| {
                    let label = vocab.label(rng.gen_range(0..vocab.len())).unwrap();
                    Detection::new(BoundingBox::new(10.0, 10.0, 4.0, 4.0), label, rng.gen())
                })
                .collect();
            let expected: Vec<&Detection> = dets.iter().filter(|d| !authorized.contains(&d.label)).collect();
            let got = identify_anomalies(&dets, &policy);
            assert_eq!(got.len(), expected.len());
            for (g, e) in got.iter().zip(expected) {
                assert_eq!(&g.detection, e);
            }
        }
    }
}
