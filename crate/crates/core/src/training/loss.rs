//! Stage objectives: text cross-entropy, presence-gated mask loss and the
//! presence classification term.

use crate::config::RunConfig;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Graph, Var, BCE_DELTA, DICE_EPS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub text: f64,
    pub mask: f64,
    pub bce: f64,
    pub dice: f64,
    pub cls: f64,
}

impl LossWeights {
    pub fn new(text: f64, mask: f64, bce: f64, dice: f64, cls: f64) -> Result<Self> {
        let w = LossWeights { text, mask, bce, dice, cls };
        if [text, mask, bce, dice, cls].iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {w:?}")));
        }
        Ok(w)
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Self::new(cfg.lambda_text, cfg.lambda_mask, cfg.lambda_bce, cfg.lambda_dice, cfg.lambda_cls)
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            text: 1.0,
            mask: 1.0,
            bce: 2.0,
            dice: 0.5,
            cls: 0.5,
        }
    }
}

/// Weighted total plus the unweighted value of every term (for logging).
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub text: f64,
    pub bce: f64,
    pub dice: f64,
    pub cls: f64,
}

/// Next-token logits and `(row, target)` supervision pairs.
pub type TextTarget<'a> = (Var, &'a [(usize, usize)]);

/// Mask prediction (probabilities) and its ground truth.
pub type MaskTarget<'a> = (Var, &'a [f64]);

fn text_term(g: &mut Graph, text: Option<TextTarget>) -> Result<Option<Var>> {
    text.map(|(logits, pairs)| g.cross_entropy(logits, pairs)).transpose()
}

/// Mean BCE and Dice over the given frames, unweighted.
fn mask_terms(g: &mut Graph, masks: &[MaskTarget]) -> Result<Option<(Var, Var)>> {
    if masks.is_empty() {
        return Ok(None);
    }
    let mut bces = Vec::with_capacity(masks.len());
    let mut dices = Vec::with_capacity(masks.len());
    for &(pred, gt) in masks {
        bces.push(g.bce(pred, gt, BCE_DELTA)?);
        dices.push(g.dice(pred, gt, DICE_EPS)?);
    }
    let inv = 1.0 / masks.len() as f64;
    let b = g.sum_all(&bces)?;
    let d = g.sum_all(&dices)?;
    Ok(Some((g.scale(b, inv), g.scale(d, inv))))
}

fn assemble(g: &mut Graph, parts: &[(f64, Option<Var>)]) -> Result<Var> {
    let mut terms = Vec::new();
    for &(w, v) in parts {
        if let Some(v) = v {
            terms.push(g.scale(v, w));
        }
    }
    if terms.is_empty() {
        let zero = g.constant(crate::numerics::Tensor::scalar(0.0));
        return Ok(zero);
    }
    g.sum_all(&terms)
}

fn value(g: &Graph, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| g.scalar(v))
}

/// `λ_text·CE + λ_mask·(λ_bce·BCE + λ_dice·DICE)`.
pub fn stage1_loss(g: &mut Graph, text: Option<TextTarget>, masks: &[MaskTarget], w: &LossWeights) -> Result<LossTerms> {
    let ce = text_term(g, text)?;
    let m = mask_terms(g, masks)?;
    let (b, d) = (m.map(|m| m.0), m.map(|m| m.1));
    let total = assemble(g, &[(w.text, ce), (w.mask * w.bce, b), (w.mask * w.dice, d)])?;
    Ok(LossTerms {
        total,
        text: value(g, ce),
        bce: value(g, b),
        dice: value(g, d),
        cls: 0.0,
    })
}

/// Stage-1 terms with the mask loss restricted to frames where the target
/// is present, plus `λ_cls·BCE(p̂, p)` over all frames. `masks[t]` and
/// `presence_pred[t]` belong to the same frame `t`.
pub fn stage2_loss(
    g: &mut Graph,
    text: Option<TextTarget>,
    presence_pred: &[Var],
    presence_gt: &[bool],
    masks: &[MaskTarget],
    w: &LossWeights,
) -> Result<LossTerms> {
    if presence_pred.len() != presence_gt.len() || masks.len() != presence_gt.len() {
        return Err(shape_err!(
            "{} presence scores, {} presence labels, {} masks",
            presence_pred.len(),
            presence_gt.len(),
            masks.len()
        ));
    }
    let present: Vec<MaskTarget> = masks
        .iter()
        .zip(presence_gt)
        .filter(|(_, &p)| p)
        .map(|(&m, _)| m)
        .collect();
    let ce = text_term(g, text)?;
    let m = mask_terms(g, &present)?;
    let (b, d) = (m.map(|m| m.0), m.map(|m| m.1));
    let cls = if presence_pred.is_empty() {
        None
    } else {
        let p = g.concat_rows(presence_pred)?;
        let labels: Vec<f64> = presence_gt.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
        Some(g.bce(p, &labels, BCE_DELTA)?)
    };
    let total = assemble(
        g,
        &[(w.text, ce), (w.mask * w.bce, b), (w.mask * w.dice, d), (w.cls, cls)],
    )?;
    Ok(LossTerms {
        total,
        text: value(g, ce),
        bce: value(g, b),
        dice: value(g, d),
        cls: value(g, cls),
    })
}
