//! Discrete angle distribution codec and Distribution Focal Loss.
//!
//! The angle head predicts logits over 91 bins `i = 0..=90` of width `pi/180`;
//! the decoded angle is the expectation `sum_i p_i * i * width`. Training
//! targets spread unit mass over the two bins bracketing the true angle.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::gaussian::{probiou_loss, LossValueAndGrad};
use crate::geometry::RotatedBox;

pub const NUM_BINS: usize = 91;
pub const BIN_WIDTH: f64 = PI / 180.0;

/// Probability mass may deviate from 1 by this much.
const NORM_TOL: f64 = 1e-6;
/// Angles within this many bins of a bin centre are encoded as exact hits.
const EXACT_HIT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct AngleDistribution {
    probs: Vec<f64>,
}

impl AngleDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() != NUM_BINS {
            return Err(Error::Shape(format!(
                "angle distribution needs {NUM_BINS} bins, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Validation("angle probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::Validation(format!(
                "angle probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() != NUM_BINS {
            return Err(Error::Shape(format!(
                "angle head needs {NUM_BINS} logits, got {}",
                logits.len()
            )));
        }
        Self::new(softmax(logits))
    }

    pub fn one_hot(bin: usize) -> Result<Self> {
        if bin >= NUM_BINS {
            return Err(Error::Validation(format!("bin {bin} out of range")));
        }
        let mut probs = vec![0.0; NUM_BINS];
        probs[bin] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform() -> Self {
        Self {
            probs: vec![1.0 / NUM_BINS as f64; NUM_BINS],
        }
    }

    /// The two-bin distribution a target encodes.
    pub fn from_target(t: &AngleTarget) -> Self {
        let mut probs = vec![0.0; NUM_BINS];
        probs[t.left_bin] += t.left_weight;
        probs[t.right_bin] += t.right_weight;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Expected angle of the distribution, in `[0, pi/2]`.
pub fn decode_angle(dist: &AngleDistribution) -> f64 {
    let expectation: f64 = dist
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| p * i as f64)
        .sum();
    (expectation * BIN_WIDTH).clamp(0.0, FRAC_PI_2)
}

/// Two-adjacent-bin soft label for one angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleTarget {
    pub left_bin: usize,
    pub right_bin: usize,
    pub left_weight: f64,
    pub right_weight: f64,
}

pub fn encode_angle(theta: f64) -> Result<AngleTarget> {
    if !theta.is_finite() || !(0.0..=FRAC_PI_2 + 1e-12).contains(&theta) {
        return Err(Error::Validation(format!(
            "angle {theta} outside [0, pi/2]; canonicalize the box first"
        )));
    }
    let x = (theta / BIN_WIDTH).min((NUM_BINS - 1) as f64);
    let nearest = x.round();
    if (x - nearest).abs() <= EXACT_HIT_TOL {
        let bin = nearest as usize;
        return Ok(AngleTarget {
            left_bin: bin,
            right_bin: bin,
            left_weight: 1.0,
            right_weight: 0.0,
        });
    }
    let left = x.floor();
    let right = left + 1.0;
    Ok(AngleTarget {
        left_bin: left as usize,
        right_bin: right as usize,
        left_weight: right - x,
        right_weight: x - left,
    })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Loss value with its gradient over the angle logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitLossAndGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// `-(w_l ln p_l + w_r ln p_r)` over the softmax of `logits`.
///
/// Because the target weights sum to one, the gradient is `softmax - target`.
pub fn dfl_loss(logits: &[f64], target: &AngleTarget) -> Result<LogitLossAndGrad> {
    if logits.len() != NUM_BINS {
        return Err(Error::Shape(format!(
            "angle head needs {NUM_BINS} logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Validation("non-finite logit".into()));
    }
    validate_target(target)?;

    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    let log_p = |i: usize| logits[i] - log_sum;

    let mut value = 0.0;
    if target.left_weight > 0.0 {
        value -= target.left_weight * log_p(target.left_bin);
    }
    if target.right_weight > 0.0 {
        value -= target.right_weight * log_p(target.right_bin);
    }
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - log_sum).exp()).collect();
    grad[target.left_bin] -= target.left_weight;
    grad[target.right_bin] -= target.right_weight;
    Ok(LogitLossAndGrad {
        value: value.max(0.0),
        grad,
    })
}

fn validate_target(t: &AngleTarget) -> Result<()> {
    let adjacent = t.right_bin == t.left_bin || t.right_bin == t.left_bin + 1;
    let weights_ok = t.left_weight >= 0.0
        && t.right_weight >= 0.0
        && (t.left_weight + t.right_weight - 1.0).abs() <= NORM_TOL;
    if t.right_bin >= NUM_BINS || !adjacent || !weights_ok {
        return Err(Error::Validation(format!("malformed angle target {t:?}")));
    }
    Ok(())
}

/// Mean DFL over the positive samples of a batch; zero for an empty batch.
pub fn dfl_loss_mean(samples: &[(Vec<f64>, AngleTarget)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (logits, target) in samples {
        total += dfl_loss(logits, target)?.value;
    }
    Ok(total / samples.len() as f64)
}

/// Weights of the two regression terms when they are optimised jointly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionLossWeights {
    pub probiou: f64,
    pub dfl: f64,
}

impl Default for RegressionLossWeights {
    fn default() -> Self {
        Self { probiou: 1.0, dfl: 1.0 }
    }
}

/// Joint box regression loss for one positive sample: weighted ProbIoU on the
/// full box plus weighted DFL on the angle logits against the ground-truth
/// angle. `gt` is canonicalized before its angle is encoded.
pub fn joint_regression_loss(
    pred: &RotatedBox,
    angle_logits: &[f64],
    gt: &RotatedBox,
    weights: &RegressionLossWeights,
) -> Result<(LossValueAndGrad, LogitLossAndGrad)> {
    let box_term = probiou_loss(pred, gt)?;
    let target = encode_angle(gt.canonicalize()?.theta)?;
    let angle_term = dfl_loss(angle_logits, &target)?;
    Ok((
        LossValueAndGrad {
            value: weights.probiou * box_term.value,
            grad: box_term.grad.map(|g| weights.probiou * g),
        },
        LogitLossAndGrad {
            value: weights.dfl * angle_term.value,
            grad: angle_term.grad.iter().map(|g| weights.dfl * g).collect(),
        },
    ))
}
