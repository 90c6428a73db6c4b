//! Class-imbalance losses over per-pixel crack probabilities.
//!
//! Every loss takes the prediction as a graph value (any shape) and the
//! binary target as a flat slice of the same length, and returns a scalar.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Probabilities are clipped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Dice,
    Focal,
    WeightedDice,
    CombinedWeightedDice,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Dice,
        LossKind::Focal,
        LossKind::WeightedDice,
        LossKind::CombinedWeightedDice,
    ];

    /// Short label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            LossKind::Dice => "DL",
            LossKind::Focal => "FL",
            LossKind::WeightedDice => "WDL",
            LossKind::CombinedWeightedDice => "CWDL",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Dice => "dice",
            LossKind::Focal => "focal",
            LossKind::WeightedDice => "wdl",
            LossKind::CombinedWeightedDice => "cwdl",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dice" | "dl" => Ok(LossKind::Dice),
            "focal" | "fl" => Ok(LossKind::Focal),
            "wdl" | "weighted_dice" => Ok(LossKind::WeightedDice),
            "cwdl" | "combined_weighted_dice" => Ok(LossKind::CombinedWeightedDice),
            _ => Err(Error::invalid(format!("unknown loss `{s}` (dice, focal, wdl, cwdl)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// `(w_background, w_crack)`.
    pub class_weights: (f64, f64),
    pub cwdl_alpha: f64,
    pub smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::new(LossKind::CombinedWeightedDice)
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            class_weights: (0.05, 0.95),
            cwdl_alpha: 0.5,
            smooth: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cwdl_alpha) {
            return Err(Error::invalid(format!("cwdl_alpha {} outside [0, 1]", self.cwdl_alpha)));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::invalid(format!("focal_gamma {} must be non-negative", self.focal_gamma)));
        }
        if !(self.focal_alpha > 0.0) {
            return Err(Error::invalid(format!("focal_alpha {} must be positive", self.focal_alpha)));
        }
        let (wb, wc) = self.class_weights;
        if !(wb > 0.0 && wc > 0.0) {
            return Err(Error::invalid(format!("class weights ({wb}, {wc}) must be positive")));
        }
        if !(self.smooth >= 0.0) {
            return Err(Error::invalid(format!("smooth {} must be non-negative", self.smooth)));
        }
        Ok(())
    }

    pub fn loss<'g>(&self, pred: Var<'g>, target: &[f64]) -> Result<Var<'g>> {
        match self.kind {
            LossKind::Dice => dice_loss(pred, target, self.smooth),
            LossKind::Focal => focal_loss(pred, target, self.focal_alpha, self.focal_gamma),
            LossKind::WeightedDice => weighted_dice_loss(pred, target, self.class_weights, self.smooth),
            LossKind::CombinedWeightedDice => combined_weighted_dice_loss(pred, target, self),
        }
    }
}

fn check(op: &'static str, pred: &Var<'_>, target: &[f64]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::invalid(format!("{op}: empty input")));
    }
    if pred.numel() != target.len() {
        return Err(Error::shape(op, format!("{} predictions, {} targets", pred.numel(), target.len())));
    }
    Ok(())
}

/// `1 - (2Σpy + s) / (Σp + Σy + s)`.
pub fn dice_loss<'g>(pred: Var<'g>, target: &[f64], smooth: f64) -> Result<Var<'g>> {
    check("dice_loss", &pred, target)?;
    let sum_y: f64 = target.iter().sum();
    let inter = pred.mul_const(target)?.sum();
    let denom = pred.sum().add_scalar(sum_y + smooth);
    Ok(inter.scale(2.0).add_scalar(smooth).div(denom)?.neg().add_scalar(1.0))
}

/// `p_t`: the clipped probability assigned to the true class.
fn true_class_prob<'g>(pred: Var<'g>, target: &[f64]) -> Result<Var<'g>> {
    let sign: Vec<f64> = target.iter().map(|y| 2.0 * y - 1.0).collect();
    let offset: Vec<f64> = target.iter().map(|y| 1.0 - y).collect();
    pred.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).mul_const(&sign)?.add_const(&offset)
}

/// `mean(-α (1 - p_t)^γ log p_t)`.
pub fn focal_loss<'g>(pred: Var<'g>, target: &[f64], alpha: f64, gamma: f64) -> Result<Var<'g>> {
    check("focal_loss", &pred, target)?;
    let pt = true_class_prob(pred, target)?;
    let log_pt = pt.ln();
    let term = if gamma == 0.0 {
        log_pt
    } else {
        pt.neg().add_scalar(1.0).powf(gamma).mul(log_pt)?
    };
    Ok(term.mean().scale(-alpha))
}

/// Pixelwise binary cross-entropy, `mean(-log p_t)`.
pub fn binary_cross_entropy<'g>(pred: Var<'g>, target: &[f64]) -> Result<Var<'g>> {
    check("binary_cross_entropy", &pred, target)?;
    Ok(true_class_prob(pred, target)?.ln().mean().neg())
}

/// `1 - (2Σwpy + s) / (Σwp² + Σwy² + s)` with `w = w_crack` on crack pixels
/// and `w_background` elsewhere.
pub fn weighted_dice_loss<'g>(pred: Var<'g>, target: &[f64], weights: (f64, f64), smooth: f64) -> Result<Var<'g>> {
    check("weighted_dice_loss", &pred, target)?;
    let (wb, wc) = weights;
    let w: Vec<f64> = target.iter().map(|&y| if y > 0.5 { wc } else { wb }).collect();
    let wy: Vec<f64> = w.iter().zip(target).map(|(w, y)| w * y).collect();
    let sum_wyy: f64 = wy.iter().zip(target).map(|(a, y)| a * y).sum();
    let inter = pred.mul_const(&wy)?.sum();
    let denom = pred.powf(2.0).mul_const(&w)?.sum().add_scalar(sum_wyy + smooth);
    Ok(inter.scale(2.0).add_scalar(smooth).div(denom)?.neg().add_scalar(1.0))
}

/// `α·WDL + (1 - α)·BCE`.
pub fn combined_weighted_dice_loss<'g>(pred: Var<'g>, target: &[f64], cfg: &LossConfig) -> Result<Var<'g>> {
    let wdl = weighted_dice_loss(pred, target, cfg.class_weights, cfg.smooth)?;
    let bce = binary_cross_entropy(pred, target)?;
    wdl.scale(cfg.cwdl_alpha).add(bce.scale(1.0 - cfg.cwdl_alpha))
}
