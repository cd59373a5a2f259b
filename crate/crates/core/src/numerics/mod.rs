//! Differentiable tensor primitives, loss kernels and gradient checking.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod resample;
pub mod tensor;

use std::rc::Rc;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use resample::{NormBox, ResamplePlan};
pub use tensor::Tensor;

use crate::error::{shape_err, Result};

/// Additive smoothing of the Dice ratio, in pixel-count units.
pub const DICE_EPS: f64 = 1.0;
/// Probability clamp applied before the BCE logarithm.
pub const BCE_DELTA: f64 = 1e-7;

/// `softmax(q kᵀ / sqrt(d)) v` with the softmax taken over the key axis.
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let (tq, tk, tv) = (g.value(q), g.value(k), g.value(v));
    if tq.cols() != tk.cols() {
        return Err(shape_err!(
            "attention: query width {} vs key width {}",
            tq.cols(),
            tk.cols()
        ));
    }
    if tk.rows() != tv.rows() {
        return Err(shape_err!(
            "attention: {} keys vs {} values",
            tk.rows(),
            tv.rows()
        ));
    }
    let d = tq.cols() as f64;
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / d.sqrt());
    let probs = g.softmax(scores);
    g.matmul(probs, v)
}

/// ROI-align of a `h × w × c` feature map (stored as `(h·w) × c`) to
/// `out × out × c`, sampling each bin once at its centre.
pub fn roi_align(
    g: &mut Graph,
    feature: Var,
    h: usize,
    w: usize,
    bx: &NormBox,
    out: usize,
) -> Result<Var> {
    let plan = ResamplePlan::roi_align(h, w, bx, out)?;
    g.resample(feature, Rc::new(plan))
}

pub fn dice_loss(g: &mut Graph, pred: Var, gt: &[f64]) -> Result<Var> {
    g.dice(pred, gt, DICE_EPS)
}

pub fn bce_loss(g: &mut Graph, pred: Var, gt: &[f64]) -> Result<Var> {
    g.bce(pred, gt, BCE_DELTA)
}

/// Eager attention on plain tensors.
pub fn attention_eval(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (q, k, v) = (
        g.constant(q.clone()),
        g.constant(k.clone()),
        g.constant(v.clone()),
    );
    let o = scaled_dot_attention(&mut g, q, k, v)?;
    Ok(g.value(o).clone())
}

/// Eager ROI-align on a plain `(h·w) × c` tensor.
pub fn roi_align_eval(feature: &Tensor, h: usize, w: usize, bx: &NormBox, out: usize) -> Result<Tensor> {
    if feature.rows() != h * w {
        return Err(shape_err!("feature has {} rows, expected {}", feature.rows(), h * w));
    }
    let plan = ResamplePlan::roi_align(h, w, bx, out)?;
    let data = plan.apply(feature.data(), feature.cols());
    Tensor::matrix(out * out, feature.cols(), data)
}

pub fn dice_loss_eval(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(shape_err!("dice: {} vs {}", pred.len(), gt.len()));
    }
    Ok(graph::dice_value(pred, gt, DICE_EPS))
}

pub fn bce_loss_eval(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(shape_err!("bce: {} vs {}", pred.len(), gt.len()));
    }
    Ok(graph::bce_value(pred, gt, BCE_DELTA))
}
