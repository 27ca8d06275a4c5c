//! Mamdani confidence adjustment.
//!
//! Two inputs (illumination and the detector's own confidence), each with
//! three triangular terms, drive a multiplier through a small rule table.
//! Rule strength is the `min` of its antecedent memberships; each output term
//! is clipped at the strongest rule that names it and the clipped terms are
//! combined with `max`. The crisp multiplier is the centroid of that
//! aggregate, integrated exactly: every membership here is piecewise linear,
//! so the integrals reduce to closed-form sums over the breakpoints.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Triangular membership `(left, peak, right)`. `left == peak` or
/// `peak == right` gives a shoulder that stays at 1 up to the edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Triangle {
    pub left: f64,
    pub peak: f64,
    pub right: f64,
}

impl From<[f64; 3]> for Triangle {
    fn from([left, peak, right]: [f64; 3]) -> Self {
        Self { left, peak, right }
    }
}

impl From<Triangle> for [f64; 3] {
    fn from(t: Triangle) -> Self {
        [t.left, t.peak, t.right]
    }
}

impl Triangle {
    pub const fn new(left: f64, peak: f64, right: f64) -> Self {
        Self { left, peak, right }
    }

    pub fn membership(&self, x: f64) -> f64 {
        if x < self.left || x > self.right {
            0.0
        } else if x <= self.peak {
            if self.peak == self.left {
                1.0
            } else {
                (x - self.left) / (self.peak - self.left)
            }
        } else if self.right == self.peak {
            1.0
        } else {
            (self.right - x) / (self.right - self.peak)
        }
    }

    pub fn is_ordered(&self) -> bool {
        [self.left, self.peak, self.right].iter().all(|v| v.is_finite())
            && self.left <= self.peak
            && self.peak <= self.right
    }

    pub fn shifted(&self, delta: f64) -> Self {
        Self::new(self.left + delta, self.peak + delta, self.right + delta)
    }

    fn vertices(&self) -> [f64; 3] {
        [self.left, self.peak, self.right]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Illumination {
    Dark,
    Normal,
    Bright,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplier {
    Attenuate,
    Keep,
    Boost,
}

impl Illumination {
    pub const ALL: [Self; 3] = [Self::Dark, Self::Normal, Self::Bright];
}

impl Confidence {
    pub const ALL: [Self; 3] = [Self::Low, Self::Medium, Self::High];
}

impl Multiplier {
    pub const ALL: [Self; 3] = [Self::Attenuate, Self::Keep, Self::Boost];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlluminationSets {
    pub dark: Triangle,
    pub normal: Triangle,
    pub bright: Triangle,
}

impl IlluminationSets {
    pub fn get(&self, term: Illumination) -> &Triangle {
        match term {
            Illumination::Dark => &self.dark,
            Illumination::Normal => &self.normal,
            Illumination::Bright => &self.bright,
        }
    }

    fn all(&self) -> [&Triangle; 3] {
        [&self.dark, &self.normal, &self.bright]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceSets {
    pub low: Triangle,
    pub medium: Triangle,
    pub high: Triangle,
}

impl ConfidenceSets {
    pub fn get(&self, term: Confidence) -> &Triangle {
        match term {
            Confidence::Low => &self.low,
            Confidence::Medium => &self.medium,
            Confidence::High => &self.high,
        }
    }

    fn all(&self) -> [&Triangle; 3] {
        [&self.low, &self.medium, &self.high]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSets {
    pub attenuate: Triangle,
    pub keep: Triangle,
    pub boost: Triangle,
}

impl OutputSets {
    pub fn get(&self, term: Multiplier) -> &Triangle {
        match term {
            Multiplier::Attenuate => &self.attenuate,
            Multiplier::Keep => &self.keep,
            Multiplier::Boost => &self.boost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub illumination: Illumination,
    pub confidence: Confidence,
    pub output: Multiplier,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, {:?}) -> {:?}", self.illumination, self.confidence, self.output)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzyRuleBase {
    pub illumination: IlluminationSets,
    pub confidence: ConfidenceSets,
    pub output: OutputSets,
    /// Output multiplier universe `[lo, hi]`.
    pub universe: [f64; 2],
    pub rules: Vec<Rule>,
}

impl Default for FuzzyRuleBase {
    /// Dark scenes attenuate, bright scenes boost, everything else keeps.
    /// Boosting bright scenes at every confidence level keeps the multiplier
    /// non-decreasing in illumination; boosting only confident detections
    /// lets "keep" outgrow "boost" on the way up for mid-high confidences.
    fn default() -> Self {
        let mut rules = Vec::with_capacity(9);
        for illumination in Illumination::ALL {
            for confidence in Confidence::ALL {
                let output = match (illumination, confidence) {
                    (Illumination::Dark, _) => Multiplier::Attenuate,
                    (Illumination::Bright, _) => Multiplier::Boost,
                    _ => Multiplier::Keep,
                };
                rules.push(Rule {
                    illumination,
                    confidence,
                    output,
                });
            }
        }
        Self {
            illumination: IlluminationSets {
                dark: Triangle::new(0.0, 0.0, 0.4),
                normal: Triangle::new(0.2, 0.5, 0.8),
                bright: Triangle::new(0.6, 1.0, 1.0),
            },
            confidence: ConfidenceSets {
                low: Triangle::new(0.0, 0.0, 0.4),
                medium: Triangle::new(0.2, 0.5, 0.8),
                high: Triangle::new(0.6, 1.0, 1.0),
            },
            output: OutputSets {
                attenuate: Triangle::new(0.5, 0.6, 0.7),
                keep: Triangle::new(0.9, 1.0, 1.1),
                boost: Triangle::new(1.15, 1.2, 1.25),
            },
            universe: [0.5, 1.25],
            rules,
        }
    }
}

/// Checks that the memberships of one input variable sum to a positive value
/// everywhere on `[0, 1]`.
///
/// Each membership is linear between consecutive vertices, so a zero of the
/// sum inside a gap would also show up at that gap's midpoint.
/// Memberships this small count as zero, so that rounding in a shifted
/// triangle cannot paper over a gap between neighbouring terms.
const COVERAGE_EPS: f64 = 1e-9;

fn check_coverage(name: &str, sets: &[&Triangle]) -> Result<()> {
    let mut points: Vec<f64> = vec![0.0, 1.0];
    points.extend(sets.iter().flat_map(|t| t.vertices()).filter(|v| (0.0..=1.0).contains(v)));
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mids: Vec<f64> = points.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    for x in points.iter().chain(&mids) {
        let total: f64 = sets.iter().map(|t| t.membership(*x)).sum();
        if total <= COVERAGE_EPS {
            return Err(Error::InvariantViolation(format!("{name} terms leave {x} uncovered")));
        }
    }
    Ok(())
}

impl FuzzyRuleBase {
    pub fn validate(&self) -> Result<()> {
        for (var, sets) in [("illumination", self.illumination.all()), ("confidence", self.confidence.all())] {
            for t in sets {
                if !t.is_ordered() || t.left < 0.0 || t.right > 1.0 {
                    return Err(Error::InvariantViolation(format!(
                        "{var} term ({}, {}, {}) must satisfy 0 <= left <= peak <= right <= 1",
                        t.left, t.peak, t.right
                    )));
                }
            }
            check_coverage(var, &sets)?;
        }
        let [lo, hi] = self.universe;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvariantViolation(format!("output universe [{lo}, {hi}] is empty")));
        }
        for term in Multiplier::ALL {
            let t = self.output.get(term);
            if !(t.is_ordered() && t.left < t.peak && t.peak < t.right && t.left >= lo && t.right <= hi) {
                return Err(Error::InvariantViolation(format!(
                    "output term {term:?} ({}, {}, {}) must satisfy {lo} <= left < peak < right <= {hi}",
                    t.left, t.peak, t.right
                )));
            }
        }
        for i in Illumination::ALL {
            for c in Confidence::ALL {
                if !self.rules.iter().any(|r| r.illumination == i && r.confidence == c) {
                    return Err(Error::InvariantViolation(format!("no rule for ({i:?}, {c:?})")));
                }
            }
        }
        Ok(())
    }

    /// Firing strength of every output term, in [`Multiplier::ALL`] order.
    pub fn activations(&self, illumination: f64, confidence: f64) -> [f64; 3] {
        let mut act = [0.0f64; 3];
        for r in &self.rules {
            let a = self
                .illumination
                .get(r.illumination)
                .membership(illumination)
                .min(self.confidence.get(r.confidence).membership(confidence));
            let slot = &mut act[r.output as usize];
            *slot = slot.max(a);
        }
        act
    }

    /// Aggregated output membership at `y`.
    pub fn aggregate(&self, act: &[f64; 3], y: f64) -> f64 {
        Multiplier::ALL
            .iter()
            .map(|&m| act[m as usize].min(self.output.get(m).membership(y)))
            .fold(0.0, f64::max)
    }

    /// Crisp multiplier for the given inputs.
    pub fn infer(&self, illumination: f64, confidence: f64) -> Result<f64> {
        let act = self.activations(illumination, confidence);
        centroid(self, &act).ok_or(Error::EmptyRuleActivation {
            illumination,
            confidence,
        })
    }

    /// Moves the "normal" illumination term toward `ema`:
    /// `peak' = (1 - rate) * peak + rate * ema`, edges shifted by the same
    /// amount. The result is validated as a whole; on failure nothing changes.
    pub fn adapted(&self, ema: f64, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvariantViolation(format!("adaptation rate {rate} outside [0, 1]")));
        }
        if !ema.is_finite() {
            return Err(Error::InvariantViolation(format!("illumination average {ema} is not finite")));
        }
        let normal = self.illumination.normal;
        let delta = rate * (ema - normal.peak);
        let mut next = self.clone();
        next.illumination.normal = normal.shifted(delta);
        // keep the peak exactly on the blended value
        next.illumination.normal.peak = (1.0 - rate) * normal.peak + rate * ema;
        next.validate()?;
        Ok(next)
    }
}

/// Exact centroid of the aggregated output, or `None` when nothing fired.
fn centroid(rb: &FuzzyRuleBase, act: &[f64; 3]) -> Option<f64> {
    let [lo, hi] = rb.universe;
    let mut cuts = vec![lo, hi];
    for m in Multiplier::ALL {
        let a = act[m as usize];
        if a <= 0.0 {
            continue;
        }
        let t = rb.output.get(m);
        cuts.extend(t.vertices());
        // where the rising and falling edges cross the clip level
        cuts.push(t.left + a * (t.peak - t.left));
        cuts.push(t.right - a * (t.right - t.peak));
    }
    cuts.retain(|c| (lo..=hi).contains(c));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    // Between cuts every clipped term is linear; the max of them changes
    // slope only where two of them cross.
    let clipped = |m: Multiplier, y: f64| act[m as usize].min(rb.output.get(m).membership(y));
    let mut points = Vec::with_capacity(cuts.len() * 2);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        points.push(a);
        for (i, &mi) in Multiplier::ALL.iter().enumerate() {
            for &mj in &Multiplier::ALL[i + 1..] {
                let da = clipped(mi, a) - clipped(mj, a);
                let db = clipped(mi, b) - clipped(mj, b);
                if da * db < 0.0 {
                    points.push(a + (b - a) * da / (da - db));
                }
            }
        }
    }
    points.push(hi);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut area = 0.0;
    let mut moment = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (rb.aggregate(act, a), rb.aggregate(act, b));
        let len = b - a;
        area += 0.5 * len * (fa + fb);
        moment += len / 6.0 * (fa * (2.0 * a + b) + fb * (a + 2.0 * b));
    }
    (area > 0.0).then(|| moment / area)
}
