//! Per-frame visual encoder: patch embedding, learned positions and one
//! residual MLP block, producing `(H/p · W/p) × C` feature maps.

use rand::Rng;

use crate::config::RunConfig;
use crate::error::{shape_err, Result};
use crate::nn::{self, ParamStore, Session};
use crate::numerics::{Tensor, Var};

pub fn init(store: &mut ParamStore, cfg: &RunConfig, rng: &mut impl Rng) {
    let (gh, gw) = cfg.grid();
    let c = cfg.channels;
    nn::init_linear(store, "enc.patch", cfg.patch * cfg.patch * 3, c, rng);
    store.insert("enc.pos", Tensor::randn(&[gh * gw, c], 0.1, rng));
    nn::init_layer_norm(store, "enc.ln", c);
    nn::init_mlp(store, "enc.mlp", c, 2 * c, rng);
    nn::init_layer_norm(store, "enc.out", c);
}

/// Rearrange an `H × W × 3` image into one row per `p × p` patch.
pub fn patchify(pixels: &[f64], h: usize, w: usize, p: usize) -> Result<Tensor> {
    if pixels.len() != h * w * 3 || h % p != 0 || w % p != 0 {
        return Err(shape_err!(
            "cannot patchify {} values as {h}×{w}×3 with patch {p}",
            pixels.len()
        ));
    }
    let (gh, gw) = (h / p, w / p);
    let mut out = Vec::with_capacity(pixels.len());
    for gy in 0..gh {
        for gx in 0..gw {
            for dy in 0..p {
                let row = (gy * p + dy) * w + gx * p;
                out.extend_from_slice(&pixels[row * 3..(row + p) * 3]);
            }
        }
    }
    Tensor::matrix(gh * gw, p * p * 3, out)
}

/// Encode one frame given as an `(H·W) × 3` tensor of values in `[0, 1]`.
pub fn encode_frame(s: &mut Session, cfg: &RunConfig, pixels: &Tensor) -> Result<Var> {
    let patches = patchify(pixels.data(), cfg.height, cfg.width, cfg.patch)?;
    let x = s.constant(patches);
    let h = nn::linear(s, "enc.patch", x)?;
    let pos = s.p("enc.pos")?;
    let h = s.g.add(h, pos)?;
    let n = nn::layer_norm(s, "enc.ln", h)?;
    let m = nn::mlp(s, "enc.mlp", n)?;
    let h = s.g.add(h, m)?;
    nn::layer_norm(s, "enc.out", h)
}
