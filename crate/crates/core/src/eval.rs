//! Detection metrics: IOU matching, precision/recall/F1, average precision,
//! false alarm rate, and dataset splits.
//!
//! Predictions and ground truth are both [`AnnotationRecord`]s; a prediction
//! can only match a ground truth box in the same frame with the same class
//! name. Ground-truth scores are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::pipeline::AnnotationRecord;

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub per_class: BTreeMap<String, Counts>,
    /// Matched ground-truth index for each prediction, in input order.
    pub pred_matches: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn total(&self) -> Counts {
        let mut c = Counts::default();
        for v in self.per_class.values() {
            c.add(*v);
        }
        c
    }
}

/// Prediction indices by descending score; equal scores keep input order.
fn score_order(preds: &[AnnotationRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// Greedy matching in score order. Each prediction takes the unmatched
/// same-frame, same-class ground truth with the highest IOU, provided that
/// IOU is at least `iou_thresh`.
pub fn match_detections(preds: &[AnnotationRecord], gts: &[AnnotationRecord], iou_thresh: f64) -> MatchResult {
    let mut per_class: BTreeMap<String, Counts> = BTreeMap::new();
    let mut gt_taken = vec![false; gts.len()];
    let mut pred_matches = vec![None; preds.len()];

    for i in score_order(preds) {
        let p = &preds[i];
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_taken[j] || g.frame_id != p.frame_id || g.class_name != p.class_name {
                continue;
            }
            let v = iou(&p.bbox, &g.bbox);
            if v >= iou_thresh && best.is_none_or(|(b, _)| v > b) {
                best = Some((v, j));
            }
        }
        let counts = per_class.entry(p.class_name.clone()).or_default();
        match best {
            Some((_, j)) => {
                gt_taken[j] = true;
                pred_matches[i] = Some(j);
                counts.tp += 1;
            }
            None => counts.fp += 1,
        }
    }
    for (g, taken) in gts.iter().zip(&gt_taken) {
        if !taken {
            per_class.entry(g.class_name.clone()).or_default().fn_ += 1;
        }
    }
    MatchResult { per_class, pred_matches }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(precision, recall, f1)`; any 0/0 is 0.
pub fn precision_recall_f1(c: Counts) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// All-points AP for a ranked list of hit/miss flags against `num_gt`
/// ground truths: the area under the precision envelope, summed exactly
/// over the recall steps.
pub fn average_precision_ranked(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0;
    for (k, hit) in hits.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// AP of one class over all frames.
pub fn average_precision(
    preds: &[AnnotationRecord],
    gts: &[AnnotationRecord],
    class: &str,
    iou_thresh: f64,
) -> Result<f64> {
    let preds: Vec<AnnotationRecord> = preds.iter().filter(|p| p.class_name == class).cloned().collect();
    let gts: Vec<AnnotationRecord> = gts.iter().filter(|g| g.class_name == class).cloned().collect();
    if gts.is_empty() {
        return Err(Error::NoGroundTruth(class.to_string()));
    }
    let m = match_detections(&preds, &gts, iou_thresh);
    let hits: Vec<bool> = score_order(&preds).into_iter().map(|i| m.pred_matches[i].is_some()).collect();
    Ok(average_precision_ranked(&hits, gts.len()))
}

/// Mean AP over the classes that have ground truth; 0 when none do.
pub fn mean_average_precision(preds: &[AnnotationRecord], gts: &[AnnotationRecord], iou_thresh: f64) -> f64 {
    let classes: BTreeSet<&str> = gts.iter().map(|g| g.class_name.as_str()).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let sum: f64 = classes
        .iter()
        .map(|c| average_precision(preds, gts, c, iou_thresh).expect("class has ground truth"))
        .sum();
    sum / classes.len() as f64
}

/// Share of alerting frames that contain no ground-truth anomaly; 0 when
/// nothing alerted.
pub fn false_alarm_rate(alert_frames: &BTreeSet<u64>, gt_anomaly_frames: &BTreeSet<u64>) -> f64 {
    let spurious = alert_frames.difference(gt_anomaly_frames).count();
    ratio(spurious, alert_frames.len())
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded shuffle of `0..n` into `(train, test)` with
/// `round(n * test_fraction)` test items.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvariantViolation(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut idx = shuffled(n, seed);
    let n_test = (n as f64 * test_fraction).round() as usize;
    let train = idx.split_off(n_test);
    Ok((train, idx))
}

/// Seeded shuffle of `0..n` into `k` folds; the first `n % k` folds get one
/// extra item.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k > n {
        return Err(Error::KTooLarge { n, k });
    }
    if k < 2 {
        return Err(Error::InvariantViolation(format!("k-fold needs k >= 2, got {k}")));
    }
    let idx = shuffled(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub name: String,
    pub per_class: Vec<ClassMetrics>,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map: f64,
    /// Only present when alert frames and ground-truth anomaly frames were
    /// supplied.
    pub false_alarm_rate: Option<f64>,
}

impl EvalReport {
    pub fn evaluate(name: &str, preds: &[AnnotationRecord], gts: &[AnnotationRecord], iou_thresh: f64) -> Self {
        let m = match_detections(preds, gts, iou_thresh);
        let per_class = m
            .per_class
            .iter()
            .map(|(class, c)| {
                let (precision, recall, f1) = precision_recall_f1(*c);
                ClassMetrics {
                    class: class.clone(),
                    counts: *c,
                    precision,
                    recall,
                    f1,
                    ap: average_precision(preds, gts, class, iou_thresh).ok(),
                }
            })
            .collect();
        Self::from_parts(name, per_class, m.total(), mean_average_precision(preds, gts, iou_thresh))
    }

    /// Report for pooled counts with no per-class breakdown.
    pub fn from_counts(name: &str, counts: Counts) -> Self {
        Self::from_parts(name, Vec::new(), counts, 0.0)
    }

    fn from_parts(name: &str, per_class: Vec<ClassMetrics>, counts: Counts, map: f64) -> Self {
        let (precision, recall, f1) = precision_recall_f1(counts);
        Self {
            name: name.to_string(),
            per_class,
            counts,
            precision,
            recall,
            f1,
            map,
            false_alarm_rate: None,
        }
    }

    pub fn with_false_alarm_rate(mut self, rate: f64) -> Self {
        self.false_alarm_rate = Some(rate);
        self
    }

    /// One JSON object per class (`"kind": "class"`) followed by the
    /// summary (`"kind": "summary"`).
    pub fn to_json_lines(&self) -> String {
        #[derive(Serialize)]
        struct Tagged<'a, T: Serialize> {
            kind: &'static str,
            model: &'a str,
            #[serde(flatten)]
            body: &'a T,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            #[serde(flatten)]
            counts: &'a Counts,
            precision: f64,
            recall: f64,
            f1: f64,
            map: f64,
            false_alarm_rate: Option<f64>,
        }
        let mut out = String::new();
        for c in &self.per_class {
            let line = Tagged {
                kind: "class",
                model: &self.name,
                body: c,
            };
            out.push_str(&serde_json::to_string(&line).expect("metrics serialize"));
            out.push('\n');
        }
        let summary = Summary {
            counts: &self.counts,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            map: self.map,
            false_alarm_rate: self.false_alarm_rate,
        };
        let line = Tagged {
            kind: "summary",
            model: &self.name,
            body: &summary,
        };
        out.push_str(&serde_json::to_string(&line).expect("metrics serialize"));
        out.push('\n');
        out
    }
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.decimals$}"))
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in rows {
        line(&mut out, &mut r.iter().map(String::as_str));
    }
    out
}

/// Summary table with one row per report, then each report's per-class
/// breakdown.
pub fn render_table(reports: &[EvalReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                cell(Some(r.precision), 2),
                cell(Some(r.recall), 2),
                cell(Some(r.f1), 2),
                cell(r.false_alarm_rate, 2),
                cell(Some(r.map), 2),
            ]
        })
        .collect();
    let mut out = render(&["Model", "Precision", "Recall", "F1 Score", "False Alarm Rate", "mAP"], &rows);
    for r in reports.iter().filter(|r| !r.per_class.is_empty()) {
        let rows: Vec<Vec<String>> = r
            .per_class
            .iter()
            .map(|c| {
                vec![
                    c.class.clone(),
                    c.counts.tp.to_string(),
                    c.counts.fp.to_string(),
                    c.counts.fn_.to_string(),
                    cell(Some(c.precision), 4),
                    cell(Some(c.recall), 4),
                    cell(Some(c.f1), 4),
                    cell(c.ap, 4),
                ]
            })
            .collect();
        let _ = write!(out, "\n{}\n", r.name);
        out.push_str(&render(&["Class", "TP", "FP", "FN", "Precision", "Recall", "F1 Score", "AP"], &rows));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(frame_id: u64, class: &str, cx: f64, cy: f64, w: f64, h: f64, score: f64) -> AnnotationRecord {
        AnnotationRecord {
            frame_id,
            class_name: class.into(),
            bbox: BoundingBox::new(cx, cy, w, h),
            score,
        }
    }

    /// Largest number of (prediction, ground truth) pairs with IOU at least
    /// `thresh` that can be matched one-to-one, by trying every assignment.
    fn max_matching(preds: &[AnnotationRecord], gts: &[AnnotationRecord], thresh: f64) -> usize {
        fn go(i: usize, preds: &[AnnotationRecord], gts: &[AnnotationRecord], used: &mut [bool], t: f64) -> usize {
            if i == preds.len() {
                return 0;
            }
            let mut best = go(i + 1, preds, gts, used, t);
            for j in 0..gts.len() {
                let ok = !used[j]
                    && preds[i].frame_id == gts[j].frame_id
                    && preds[i].class_name == gts[j].class_name
                    && iou(&preds[i].bbox, &gts[j].bbox) >= t;
                if ok {
                    used[j] = true;
                    best = best.max(1 + go(i + 1, preds, gts, used, t));
                    used[j] = false;
                }
            }
            best
        }
        go(0, preds, gts, &mut vec![false; gts.len()], thresh)
    }

    #[test]
    fn perfect_and_spurious() {
        let gts = vec![rec(1, "Top", 10.0, 10.0, 4.0, 4.0, 1.0), rec(1, "Skirt", 30.0, 10.0, 4.0, 4.0, 1.0)];
        let m = match_detections(&gts, &gts, 0.5);
        assert_eq!(m.total(), Counts { tp: 2, fp: 0, fn_: 0 });
        let m = match_detections(&gts[..1], &[], 0.5);
        assert_eq!(m.total(), Counts { tp: 0, fp: 1, fn_: 0 });
    }

    #[test]
    fn higher_score_wins_the_ground_truth() {
        let gt = rec(1, "Top", 10.0, 10.0, 10.0, 10.0, 1.0);
        let a = rec(1, "Top", 10.5, 10.0, 10.0, 10.0, 0.6);
        let b = rec(1, "Top", 10.0, 10.0, 10.0, 10.0, 0.9);
        let m = match_detections(&[a, b], &[gt], 0.5);
        assert_eq!(m.pred_matches, vec![None, Some(0)]);
        assert_eq!(m.total(), Counts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn frame_and_class_must_agree() {
        let gt = rec(1, "Top", 10.0, 10.0, 10.0, 10.0, 1.0);
        let m = match_detections(&[rec(2, "Top", 10.0, 10.0, 10.0, 10.0, 0.9)], std::slice::from_ref(&gt), 0.5);
        assert_eq!(m.total(), Counts { tp: 0, fp: 1, fn_: 1 });
        let m = match_detections(&[rec(1, "Skirt", 10.0, 10.0, 10.0, 10.0, 0.9)], &[gt], 0.5);
        assert_eq!(m.per_class["Skirt"], Counts { tp: 0, fp: 1, fn_: 0 });
        assert_eq!(m.per_class["Top"], Counts { tp: 0, fp: 0, fn_: 1 });
    }

    #[test]
    fn greedy_can_fall_short_of_the_optimum() {
        // The top-scoring prediction grabs the ground truth it overlaps best,
        // leaving the second prediction with nothing above the threshold.
        let g1 = rec(1, "Top", 10.0, 10.0, 10.0, 10.0, 1.0);
        let g2 = rec(1, "Top", 13.0, 10.0, 10.0, 10.0, 1.0);
        let p1 = rec(1, "Top", 11.0, 10.0, 10.0, 10.0, 0.9);
        let p2 = rec(1, "Top", 8.0, 10.0, 10.0, 10.0, 0.8);
        let preds = [p1, p2];
        let gts = [g1, g2];
        let greedy = match_detections(&preds, &gts, 0.5).total().tp;
        assert_eq!(greedy, 1);
        assert_eq!(max_matching(&preds, &gts, 0.5), 2);
    }

    /// Same-class ground truths in a frame never overlap, so each prediction
    /// clears the threshold against at most one of them and greedy matching
    /// is optimal.
    fn random_case(rng: &mut impl Rng) -> (Vec<AnnotationRecord>, Vec<AnnotationRecord>) {
        let classes = ["Top", "Skirt"];
        let n_gt = rng.gen_range(0..=6);
        let gts: Vec<AnnotationRecord> = (0..n_gt)
            .map(|k| {
                let w = rng.gen_range(6.0..14.0);
                let h = rng.gen_range(6.0..14.0);
                rec(1, classes[rng.gen_range(0..2)], 20.0 * k as f64, 0.0, w, h, 1.0)
            })
            .collect();
        let n_pred = rng.gen_range(0..=6);
        let preds = (0..n_pred)
            .map(|_| {
                let slot = rng.gen_range(0..6) as f64;
                let cx = 20.0 * slot + rng.gen_range(-4.0..4.0);
                let cy = rng.gen_range(-4.0..4.0);
                let w = rng.gen_range(6.0..14.0);
                let h = rng.gen_range(6.0..14.0);
                rec(1, classes[rng.gen_range(0..2)], cx, cy, w, h, rng.gen())
            })
            .collect();
        (preds, gts)
    }

    #[test]
    fn greedy_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..300 {
            let (preds, gts) = random_case(&mut rng);
            let m = match_detections(&preds, &gts, 0.5);
            let t = m.total();
            assert_eq!(t.tp, max_matching(&preds, &gts, 0.5), "case {case}");
            assert_eq!(t.tp + t.fn_, gts.len());
            assert_eq!(t.tp + t.fp, preds.len());
            let mut seen = BTreeSet::new();
            assert!(m.pred_matches.iter().flatten().all(|j| seen.insert(*j)));
        }
    }

    #[test]
    fn prf_examples() {
        assert_eq!(precision_recall_f1(Counts::default()), (0.0, 0.0, 0.0));
        let (p, r, f) = precision_recall_f1(Counts { tp: 9, fp: 1, fn_: 3 });
        assert!((p - 0.9).abs() < 1e-15 && (r - 0.75).abs() < 1e-15);
        assert!((f - 0.818181818181818).abs() < 1e-12);
    }

    #[test]
    fn headline_counts_round_to_table_values() {
        let (p, r, f) = precision_recall_f1(Counts { tp: 506, fp: 44, fn_: 69 });
        assert!((p - 0.92).abs() < 1e-12 && (r - 0.88).abs() < 1e-12);
        assert!((f - 0.90).abs() <= 0.005);
        let hand = 2.0 * 0.92 * 0.88 / (0.92 + 0.88);
        assert!((f - hand).abs() < 1e-12);
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision_ranked(&[true, false, true], 2);
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(average_precision_ranked(&[true, true, true], 3), 1.0);
        assert_eq!(average_precision_ranked(&[], 3), 0.0);
        assert_eq!(average_precision_ranked(&[false, true], 2), 0.25);

        let gts = vec![rec(1, "Top", 10.0, 10.0, 4.0, 4.0, 1.0), rec(2, "Top", 10.0, 10.0, 4.0, 4.0, 1.0)];
        let preds = vec![
            rec(1, "Top", 10.0, 10.0, 4.0, 4.0, 0.9),
            rec(3, "Top", 10.0, 10.0, 4.0, 4.0, 0.8),
            rec(2, "Top", 10.0, 10.0, 4.0, 4.0, 0.7),
        ];
        let ap = average_precision(&preds, &gts, "Top", 0.5).unwrap();
        assert!((ap - 0.8333333333333333).abs() < 1e-12);
        assert!(matches!(average_precision(&preds, &gts, "Skirt", 0.5), Err(Error::NoGroundTruth(_))));
    }

    #[test]
    fn map_averages_classes_with_ground_truth() {
        let gts = vec![
            rec(1, "Top", 10.0, 10.0, 4.0, 4.0, 1.0),
            rec(1, "Skirt", 40.0, 10.0, 4.0, 4.0, 1.0),
            rec(2, "Skirt", 40.0, 10.0, 4.0, 4.0, 1.0),
        ];
        let preds = vec![
            rec(1, "Top", 10.0, 10.0, 4.0, 4.0, 0.9),
            rec(1, "Skirt", 40.0, 10.0, 4.0, 4.0, 0.9),
            rec(5, "Jacket", 40.0, 10.0, 4.0, 4.0, 0.9),
        ];
        assert_eq!(mean_average_precision(&preds, &gts, 0.5), 0.75);
        assert_eq!(mean_average_precision(&preds, &[], 0.5), 0.0);
    }

    #[test]
    fn false_alarm_examples() {
        let none = BTreeSet::new();
        assert_eq!(false_alarm_rate(&none, &none), 0.0);
        let alerts: BTreeSet<u64> = (0..20).collect();
        let truth: BTreeSet<u64> = (1..20).collect();
        assert_eq!(false_alarm_rate(&alerts, &truth), 0.05);
        assert_eq!(false_alarm_rate(&alerts, &none), 1.0);
    }

    #[test]
    fn split_examples() {
        let (train, test) = train_test_split(10, 0.3, 1).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        assert_eq!(train_test_split(10, 0.3, 1).unwrap(), (train, test));
        assert!(train_test_split(10, 1.0, 1).is_err());

        let sizes = |n, k| kfold_split(n, k, 0).unwrap().iter().map(Vec::len).collect::<Vec<_>>();
        assert_eq!(sizes(10, 5), [2, 2, 2, 2, 2]);
        assert_eq!(sizes(11, 5), [3, 2, 2, 2, 2]);
        assert!(matches!(kfold_split(3, 4, 0), Err(Error::KTooLarge { n: 3, k: 4 })));
        assert!(kfold_split(3, 1, 0).is_err());
    }

    #[test]
    fn report_rendering() {
        let headline = EvalReport::from_counts("sentinel", Counts { tp: 506, fp: 44, fn_: 69 }).with_false_alarm_rate(0.05);
        let text = render_table(std::slice::from_ref(&headline));
        let row = text.lines().nth(2).unwrap();
        let cells: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cells, ["sentinel", "0.92", "0.88", "0.90", "0.05", "0.00"]);

        let json = headline.to_json_lines();
        let v: serde_json::Value = serde_json::from_str(json.trim()).unwrap();
        assert_eq!(v["kind"], "summary");
        assert_eq!(v["tp"], 506);
        assert_eq!(v["false_alarm_rate"], 0.05);

        let gts = vec![rec(1, "Top", 10.0, 10.0, 4.0, 4.0, 1.0)];
        let perfect = EvalReport::evaluate("perfect", &gts, &gts, 0.5);
        assert_eq!((perfect.precision, perfect.recall, perfect.f1, perfect.map), (1.0, 1.0, 1.0, 1.0));
        assert!(render_table(std::slice::from_ref(&perfect)).contains("Top"));
        assert_eq!(perfect.to_json_lines().lines().count(), 2);

        let empty = EvalReport::evaluate("empty", &[], &gts, 0.5);
        assert_eq!((empty.precision, empty.recall, empty.f1, empty.map), (0.0, 0.0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn prf_bounds(tp in 0usize..200, fp in 0usize..200, fn_ in 0usize..200) {
            let (p, r, f) = precision_recall_f1(Counts { tp, fp, fn_ });
            for v in [p, r, f] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if p > 0.0 && r > 0.0 {
                prop_assert!(f <= p.max(r) + 1e-12 && f >= p.min(r) - 1e-12);
            }
        }

        #[test]
        fn ap_depends_only_on_rank(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (preds, gts) = random_case(&mut rng);
            let squashed: Vec<AnnotationRecord> = preds
                .iter()
                .map(|p| AnnotationRecord { score: (p.score * 3.0).exp() / 30.0, ..p.clone() })
                .collect();
            prop_assert_eq!(
                mean_average_precision(&preds, &gts, 0.5),
                mean_average_precision(&squashed, &gts, 0.5)
            );
        }

        #[test]
        fn splits_partition(n in 2usize..60, k_raw in 2usize..60, seed: u64, frac in 0.01f64..0.99) {
            let k = k_raw.min(n);
            let folds = kfold_split(n, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

            let (train, test) = train_test_split(n, frac, seed).unwrap();
            prop_assert_eq!(test.len(), (n as f64 * frac).round() as usize);
            let mut all: Vec<usize> = train.into_iter().chain(test).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
