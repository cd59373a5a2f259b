//! Frame-level content integration: adapts the trajectory token to each
//! key frame with one residual cross-attention.

use rand::Rng;

use crate::config::RunConfig;
use crate::error::{shape_err, Result};
use crate::nn::{ParamStore, Session};
use crate::numerics::{scaled_dot_attention, Tensor, Var};

pub fn init(store: &mut ParamStore, cfg: &RunConfig, rng: &mut impl Rng) {
    let (c, d) = (cfg.channels, cfg.attn_dim);
    let std = (1.0 / c as f64).sqrt();
    for m in ["q", "k", "v"] {
        store.insert(format!("fci.{m}"), Tensor::randn(&[c, d], std, rng));
    }
    if d != c {
        // small output map so the residual starts close to x_traj
        let std = 0.1 * (1.0 / d as f64).sqrt();
        store.insert("fci.o", Tensor::randn(&[d, c], std, rng));
    }
}

/// `x_traj + out(softmax(q kᵀ/√d) v)` for every key-frame feature map.
/// Without an `fci.o` parameter the output map is the identity.
pub fn fci_expand(s: &mut Session, x_traj: Var, key_frame_features: &[Var]) -> Result<Vec<Var>> {
    let wq = s.p("fci.q")?;
    let wk = s.p("fci.k")?;
    let wv = s.p("fci.v")?;
    let d = s.g.value(wq).cols();
    for (name, w) in [("fci.k", wk), ("fci.v", wv)] {
        if s.g.value(w).cols() != d {
            return Err(shape_err!(
                "{name} has width {} but fci.q has width {d}",
                s.g.value(w).cols()
            ));
        }
    }
    let c = s.g.value(x_traj).cols();
    let out_map = if s.has("fci.o") {
        Some(s.p("fci.o")?)
    } else if d != c {
        return Err(shape_err!("value width {d} differs from token width {c} and no fci.o is given"));
    } else {
        None
    };
    let q = s.g.matmul(x_traj, wq)?;
    key_frame_features
        .iter()
        .map(|&f| {
            let k = s.g.matmul(f, wk)?;
            let v = s.g.matmul(f, wv)?;
            let a = scaled_dot_attention(&mut s.g, q, k, v)?;
            let a = match out_map {
                Some(o) => s.g.matmul(a, o)?,
                None => a,
            };
            s.g.add(x_traj, a)
        })
        .collect()
}

/// Frame tokens for the given key frames; with FCI disabled every key frame
/// receives the trajectory token itself.
pub fn frame_tokens(s: &mut Session, cfg: &RunConfig, x_traj: Var, key_frame_features: &[Var]) -> Result<Vec<Var>> {
    if cfg.use_fci {
        fci_expand(s, x_traj, key_frame_features)
    } else {
        Ok(vec![x_traj; key_frame_features.len()])
    }
}

#[cfg(test)]
mod tests;
