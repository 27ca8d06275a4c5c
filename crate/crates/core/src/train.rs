//! SGD with momentum and L2 weight decay, and a linear detection head that
//! exercises it against the grid loss.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decode::{sigmoid, Anchor, GridSpec, RawGridTensor, BOX_CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::loss::{yolo_loss, yolo_loss_grad, LossWeights, SlotTarget, TargetAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    0.0005
}

impl SgdConfig {
    /// Momentum 0.9 and weight decay 0.0005 at the given learning rate.
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        // A zero rate is allowed so the optimizer can be switched off.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvariantViolation(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvariantViolation(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvariantViolation(format!("weight_decay {} must be >= 0", self.weight_decay)));
        }
        Ok(())
    }
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self::with_learning_rate(0.01)
    }
}

/// One in-place update:
///
/// ```text
/// v <- momentum * v - lr * (g + weight_decay * p)
/// p <- p + v
/// ```
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], cfg: &SgdConfig) -> Result<()> {
    for len in [grads.len(), velocity.len()] {
        if len != params.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                actual: len,
            });
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = cfg.momentum * *v - cfg.learning_rate * (g + cfg.weight_decay * *p);
        *p += *v;
    }
    Ok(())
}

/// Linear map from a per-cell feature vector to every raw channel of that
/// cell. Weights are row-major `[anchor * channels + channel][feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyHead {
    pub spec: GridSpec,
    pub anchors: Vec<Anchor>,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
}

impl ToyHead {
    fn outputs_per_cell(&self) -> usize {
        self.spec.num_anchors * self.spec.channels()
    }

    /// Raw grid produced for `features` (one vector per cell, row-major).
    pub fn forward(&self, features: &[Vec<f64>]) -> Result<RawGridTensor> {
        let rows = self.outputs_per_cell();
        let mut data = Vec::with_capacity(rows * features.len());
        for f in features {
            for r in 0..rows {
                let w = &self.weights[r * self.feature_dim..(r + 1) * self.feature_dim];
                data.push(w.iter().zip(f).map(|(a, b)| a * b).sum());
            }
        }
        RawGridTensor::new(self.spec, self.anchors.clone(), data)
    }

    /// Chain rule through the linear map.
    fn weight_grad(&self, features: &[Vec<f64>], raw_grad: &[f64]) -> Vec<f64> {
        let rows = self.outputs_per_cell();
        let mut g = vec![0.0; self.weights.len()];
        for (cell, f) in features.iter().enumerate() {
            for r in 0..rows {
                let gr = raw_grad[cell * rows + r];
                if gr == 0.0 {
                    continue;
                }
                for (gw, x) in g[r * self.feature_dim..(r + 1) * self.feature_dim].iter_mut().zip(f) {
                    *gw += gr * x;
                }
            }
        }
        g
    }
}

/// Per-epoch loss values, epoch 0 being the untrained head.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve(pub Vec<f64>);

impl LossCurve {
    pub fn initial(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        *self.0.last().expect("curve has at least one point")
    }

    /// Final over initial loss.
    pub fn ratio(&self) -> f64 {
        self.last() / self.initial()
    }

    /// `epoch,loss` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (e, l) in self.0.iter().enumerate() {
            let _ = writeln!(s, "{e},{l:.12e}");
        }
        s
    }
}

/// Synthetic grid-training problem with an exact linear solution.
#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub spec: GridSpec,
    pub anchors: Vec<Anchor>,
    /// One vector per cell in row-major order; the last entry is a constant 1.
    pub features: Vec<Vec<f64>>,
    pub targets: TargetAssignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyFixtureParams {
    pub grid: usize,
    pub anchors: usize,
    pub classes: usize,
    pub feature_dim: usize,
}

impl Default for ToyFixtureParams {
    fn default() -> Self {
        Self {
            grid: 6,
            anchors: 2,
            classes: 5,
            feature_dim: 8,
        }
    }
}

impl ToyFixture {
    /// Draws a teacher head and labels every slot with the teacher's own
    /// decoded output, so some linear head fits the targets exactly.
    pub fn separable(params: ToyFixtureParams, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec {
            s: params.grid,
            num_anchors: params.anchors,
            num_classes: params.classes,
            frame_width: (params.grid * 32) as u32,
            frame_height: (params.grid * 32) as u32,
        };
        spec.validate()?;
        if params.feature_dim < 2 {
            return Err(Error::InvariantViolation("feature_dim must be at least 2".into()));
        }
        let anchors: Vec<Anchor> = (0..params.anchors)
            .map(|_| Anchor::new(rng.gen_range(0.8..2.5), rng.gen_range(0.8..2.5)))
            .collect();
        let features: Vec<Vec<f64>> = (0..spec.s * spec.s)
            .map(|_| {
                let mut f: Vec<f64> = (0..params.feature_dim - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
                f.push(1.0);
                f
            })
            .collect();
        let teacher = ToyHead {
            spec,
            anchors: anchors.clone(),
            feature_dim: params.feature_dim,
            weights: (0..params.anchors * spec.channels() * params.feature_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        };
        let raw = teacher.forward(&features)?;
        let mut targets = Vec::new();
        for cy in 0..spec.s {
            for cx in 0..spec.s {
                for (a, anchor) in anchors.iter().enumerate() {
                    let ch = raw.slot(cy, cx, a);
                    if ch[4] <= 0.0 {
                        continue;
                    }
                    let class_id = ch[BOX_CHANNELS..]
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                        .0;
                    targets.push(SlotTarget {
                        cell_x: cx,
                        cell_y: cy,
                        anchor: a,
                        bbox: BoundingBox::new(
                            sigmoid(ch[0]) + cx as f64,
                            sigmoid(ch[1]) + cy as f64,
                            anchor.pw * ch[2].exp(),
                            anchor.ph * ch[3].exp(),
                        ),
                        class_id,
                    });
                }
            }
        }
        Ok(Self {
            spec,
            anchors,
            targets: TargetAssignment::new(spec, targets)?,
            features,
        })
    }
}

/// Full-batch training of a [`ToyHead`] by [`sgd_step`].
///
/// Weights start at small seeded noise. The returned curve has
/// `epochs + 1` points: the loss before training and after every epoch.
pub fn train_toy_head(
    fixture: &ToyFixture,
    weights: &LossWeights,
    cfg: &SgdConfig,
    epochs: usize,
    seed: u64,
) -> Result<(ToyHead, LossCurve)> {
    if epochs == 0 {
        return Err(Error::InvariantViolation("epochs must be at least 1".into()));
    }
    cfg.validate()?;
    weights.validate()?;
    let feature_dim = fixture.features.first().map_or(0, Vec::len);
    if fixture.features.len() != fixture.spec.s * fixture.spec.s {
        return Err(Error::LengthMismatch {
            expected: fixture.spec.s * fixture.spec.s,
            actual: fixture.features.len(),
        });
    }
    if let Some(f) = fixture.features.iter().find(|f| f.len() != feature_dim) {
        return Err(Error::LengthMismatch {
            expected: feature_dim,
            actual: f.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = fixture.spec.num_anchors * fixture.spec.channels() * feature_dim;
    let mut head = ToyHead {
        spec: fixture.spec,
        anchors: fixture.anchors.clone(),
        feature_dim,
        weights: (0..n).map(|_| rng.gen_range(-0.01..0.01)).collect(),
    };
    let mut velocity = vec![0.0; n];
    let mut curve = Vec::with_capacity(epochs + 1);
    for epoch in 0..=epochs {
        let raw = head.forward(&fixture.features)?;
        let loss = yolo_loss(&raw, &fixture.targets, weights)?;
        if !loss.is_finite() {
            return Err(Error::DivergenceDetected { epoch, loss });
        }
        curve.push(loss);
        if epoch == epochs {
            break;
        }
        let raw_grad = yolo_loss_grad(&raw, &fixture.targets, weights)?;
        let grad = head.weight_grad(&fixture.features, &raw_grad);
        sgd_step(&mut head.weights, &grad, &mut velocity, cfg)?;
    }
    Ok((head, LossCurve(curve)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_step() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        sgd_step(&mut p, &[0.5, -1.0], &mut v, &cfg).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15 && (p[1] + 1.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates_over_two_steps() {
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let g = [2.0];
        let mut p = vec![0.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &g, &mut v, &cfg).unwrap();
        sgd_step(&mut p, &g, &mut v, &cfg).unwrap();
        // v2 = 0.9 * (-0.2) - 0.2
        assert!((v[0] - (-0.1 * 2.0 * 1.9)).abs() < 1e-15);
        assert!((p[0] - (-0.2 - 0.38)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_couples_into_gradient() {
        let cfg = SgdConfig {
            learning_rate: 0.5,
            momentum: 0.0,
            weight_decay: 0.1,
        };
        let mut p = vec![2.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[0.0], &mut v, &cfg).unwrap();
        assert!((p[0] - (2.0 - 0.5 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn defaults_are_momentum_point_nine_and_decay_five_e_minus_four() {
        let cfg = SgdConfig::default();
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 0.0005);
        cfg.validate().unwrap();
        let parsed: SgdConfig = toml::from_str("learning_rate = 0.02").unwrap();
        assert_eq!((parsed.momentum, parsed.weight_decay), (0.9, 0.0005));
    }

    #[test]
    fn length_mismatch() {
        let mut p = vec![0.0; 3];
        let mut v = vec![0.0; 2];
        assert!(matches!(
            sgd_step(&mut p, &[0.0; 3], &mut v, &SgdConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn plain_descent_on_quadratic_bowl_is_monotone() {
        // f(p) = sum_i c_i p_i^2
        let c = [1.0, 3.0, 0.5];
        let cfg = SgdConfig {
            learning_rate: 0.05,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let f = |p: &[f64]| p.iter().zip(&c).map(|(x, k)| k * x * x).sum::<f64>();
        let mut p = vec![1.0, -2.0, 4.0];
        let mut v = vec![0.0; 3];
        let mut prev = f(&p);
        for _ in 0..100 {
            let g: Vec<f64> = p.iter().zip(&c).map(|(x, k)| 2.0 * k * x).collect();
            sgd_step(&mut p, &g, &mut v, &cfg).unwrap();
            let now = f(&p);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn zero_learning_rate_keeps_loss_flat() {
        let fx = ToyFixture::separable(ToyFixtureParams::default(), 1).unwrap();
        let cfg = SgdConfig::with_learning_rate(0.0);
        let (_, curve) = train_toy_head(&fx, &LossWeights::default(), &cfg, 5, 3).unwrap();
        assert!(curve.0.iter().all(|l| *l == curve.initial()));
        assert_eq!(curve.ratio(), 1.0);
    }

    #[test]
    fn curve_text_format() {
        let c = LossCurve(vec![2.0, 1.5]);
        assert_eq!(c.to_text(), "0,2.000000000000e0\n1,1.500000000000e0\n");
    }
}
