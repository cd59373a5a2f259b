//! Unified mask generator: one prompt encoder and mask decoder shared by
//! key frames (token prompts) and non-key frames (memory prompts).

mod memory;

use std::rc::Rc;

use rand::Rng;

pub use memory::{MemoryBank, MemoryEntry};

use crate::config::RunConfig;
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, ParamStore, Session};
use crate::numerics::kernels::sigmoid;
use crate::numerics::{scaled_dot_attention, ResamplePlan, Tensor, Var};

pub fn init(store: &mut ParamStore, cfg: &RunConfig, rng: &mut impl Rng) {
    let (c, d) = (cfg.channels, cfg.attn_dim);
    let n = cfg.grid().0 * cfg.grid().1;
    store.insert("mg.query", Tensor::randn(&[1, c], 0.3, rng));
    init_attention(store, "mg.mem", c, d, rng);
    store.insert("mg.menc.fg", Tensor::randn(&[1, c], 0.3, rng));
    store.insert("mg.menc.bg", Tensor::randn(&[1, c], 0.3, rng));
    if cfg.pos_enc {
        store.insert("mg.mem.pe", Tensor::randn(&[n, c], 0.1, rng));
        store.insert("mg.dec.pe", Tensor::randn(&[n, c], 0.1, rng));
    }
    init_attention(store, "mg.dec.t2i", c, d, rng);
    init_attention(store, "mg.dec.i2t", c, d, rng);
    for ln in ["ln1", "ln2", "ln3"] {
        nn::init_layer_norm(store, &format!("mg.dec.{ln}"), c);
    }
    nn::init_mlp(store, "mg.dec.mlp", c, 2 * c, rng);
    nn::init_mlp(store, "mg.hyper", c, c, rng);
    store.insert("mg.head.b", Tensor::zeros(&[1, 1]));
    if cfg.refine_width > 0 {
        let r = cfg.refine_width;
        nn::init_linear(store, "mg.ref.feat", c, r, rng);
        store.insert("mg.ref.rgb", Tensor::randn(&[3, r], 1.0, rng));
        nn::init_linear(store, "mg.ref.hyper.fc1", c, c, rng);
        nn::init_linear(store, "mg.ref.hyper.fc2", c, r, rng);
    }
    nn::init_linear(store, "mg.pres", c, 1, rng);
}

fn init_attention(store: &mut ParamStore, pre: &str, c: usize, d: usize, rng: &mut impl Rng) {
    let std = (1.0 / c as f64).sqrt();
    for m in ["q", "k", "v"] {
        store.insert(format!("{pre}.{m}"), Tensor::randn(&[c, d], std, rng));
    }
    let std = 0.5 * (1.0 / d as f64).sqrt();
    store.insert(format!("{pre}.o"), Tensor::randn(&[d, c], std, rng));
}

/// What a frame is prompted with.
pub enum Prompt<'a> {
    /// Frame-level target token (`1 × C`).
    Token(Var),
    Memory(&'a MemoryBank<MemoryItem>),
}

/// A memory entry with its attention key and value projections, computed
/// once when the entry is written.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryItem {
    pub features: Var,
    pub key: Var,
    pub value: Var,
}

/// Project memory features for attention.
pub fn memory_item(s: &mut Session, features: Var) -> Result<MemoryItem> {
    let k_in = with_pe(s, "mg.mem.pe", features)?;
    let key = nn::project(s, "mg.mem.k", k_in)?;
    let value = nn::project(s, "mg.mem.v", features)?;
    Ok(MemoryItem { features, key, value })
}

pub struct MaskPrediction {
    /// `HW × 1` mask logits.
    pub logits: Var,
    /// `N × 1` logits on the patch grid before upsampling.
    pub patch_logits: Var,
    /// `1 × 1` presence probability.
    pub presence: Var,
}

/// Learned positional encoding, or `x` unchanged when disabled.
fn with_pe(s: &mut Session, name: &str, x: Var) -> Result<Var> {
    if s.has(name) {
        let pe = s.p(name)?;
        s.g.add(x, pe)
    } else {
        Ok(x)
    }
}

/// Cross-attention `out(softmax(q kᵀ/√d) v)` with separate query/key inputs
/// for positional encodings.
fn cross_attention(s: &mut Session, pre: &str, q_in: Var, k_in: Var, v_in: Var) -> Result<Var> {
    let q = nn::project(s, &format!("{pre}.q"), q_in)?;
    let k = nn::project(s, &format!("{pre}.k"), k_in)?;
    let v = nn::project(s, &format!("{pre}.v"), v_in)?;
    let a = scaled_dot_attention(&mut s.g, q, k, v)?;
    nn::project(s, &format!("{pre}.o"), a)
}

/// Prompt tokens (`k × C`) and the (possibly memory-conditioned) features.
pub fn encode_prompt(s: &mut Session, prompt: &Prompt, f: Var) -> Result<(Var, Var)> {
    match prompt {
        Prompt::Token(x) => {
            let c = s.g.value(f).cols();
            if s.g.value(*x).shape() != [1, c] {
                return Err(shape_err!(
                    "prompt token {:?} for {c}-channel features",
                    s.g.value(*x).shape()
                ));
            }
            Ok((*x, f))
        }
        Prompt::Memory(bank) => {
            if bank.is_empty() {
                return Err(Error::State("memory prompt with an empty memory bank".into()));
            }
            let q_in = with_pe(s, "mg.mem.pe", f)?;
            let q = nn::project(s, "mg.mem.q", q_in)?;
            let keys: Vec<Var> = bank.entries().iter().map(|e| e.features.key).collect();
            let values: Vec<Var> = bank.entries().iter().map(|e| e.features.value).collect();
            let k = s.g.concat_rows(&keys)?;
            let v = s.g.concat_rows(&values)?;
            let a = scaled_dot_attention(&mut s.g, q, k, v)?;
            let a = nn::project(s, "mg.mem.o", a)?;
            let conditioned = s.g.add(f, a)?;
            let query = s.p("mg.query")?;
            Ok((query, conditioned))
        }
    }
}

/// Two-way attention block, hypernetwork head, upsampling and presence.
/// `pixels` is the `HW × 3` frame used by the high-resolution branch.
pub fn decode_mask(s: &mut Session, cfg: &RunConfig, f: Var, tokens: Var, pixels: Var) -> Result<MaskPrediction> {
    let (gh, gw) = cfg.grid();
    let (n, c) = (gh * gw, cfg.channels);
    if s.g.value(f).shape() != [n, c] {
        return Err(shape_err!("features {:?}, expected [{n}, {c}]", s.g.value(f).shape()));
    }
    if s.g.value(tokens).cols() != c {
        return Err(shape_err!("prompt tokens {:?} for {c} channels", s.g.value(tokens).shape()));
    }
    let hw = cfg.height * cfg.width;
    if s.g.value(pixels).shape() != [hw, 3] {
        return Err(shape_err!("pixels {:?}, expected [{hw}, 3]", s.g.value(pixels).shape()));
    }

    // tokens attend to the image
    let f_pe = with_pe(s, "mg.dec.pe", f)?;
    let a = cross_attention(s, "mg.dec.t2i", tokens, f_pe, f)?;
    let t = s.g.add(tokens, a)?;
    let t = nn::layer_norm(s, "mg.dec.ln1", t)?;
    let m = nn::mlp(s, "mg.dec.mlp", t)?;
    let t = s.g.add(t, m)?;
    let t = nn::layer_norm(s, "mg.dec.ln2", t)?;
    // image attends back to the tokens
    let a = cross_attention(s, "mg.dec.i2t", f_pe, t, t)?;
    let img = s.g.add(f, a)?;
    let img = nn::layer_norm(s, "mg.dec.ln3", img)?;

    let target = s.g.row(t, 0)?;
    let h = nn::mlp(s, "mg.hyper", target)?;
    let patch = s.g.matmul_nt(img, h)?;
    let b = s.p("mg.head.b")?;
    let patch = s.g.add_row(patch, b)?;
    let up = Rc::new(ResamplePlan::upsample(gh, gw, cfg.patch));
    let mut logits = s.g.resample(patch, up.clone())?;

    if cfg.refine_width > 0 {
        let rf = nn::linear(s, "mg.ref.feat", img)?;
        let rf = s.g.resample(rf, up)?;
        let rc = nn::project(s, "mg.ref.rgb", pixels)?;
        let r = s.g.add(rf, rc)?;
        let r = s.g.gelu(r);
        let h2 = nn::mlp(s, "mg.ref.hyper", target)?;
        let fine = s.g.matmul_nt(r, h2)?;
        logits = s.g.add(logits, fine)?;
    }

    let pres = nn::linear(s, "mg.pres", target)?;
    let presence = s.g.sigmoid(pres);
    Ok(MaskPrediction {
        logits,
        patch_logits: patch,
        presence,
    })
}

/// Memory encoder: mixes a `HW × 1` soft mask into frame features,
/// `f + m·w_fg + (1 − m)·w_bg` with `m` pooled to the patch grid.
pub fn encode_memory(s: &mut Session, cfg: &RunConfig, f: Var, mask: Var) -> Result<Var> {
    let (gh, gw) = cfg.grid();
    let pool = Rc::new(ResamplePlan::avg_pool(cfg.height, cfg.width, cfg.patch)?);
    let m = s.g.resample(mask, pool)?;
    let ones = s.constant(Tensor::full(&[gh * gw, 1], 1.0));
    let inv = s.g.sub(ones, m)?;
    let fg = s.p("mg.menc.fg")?;
    let bg = s.p("mg.menc.bg")?;
    let fg = s.g.matmul(m, fg)?;
    let bg = s.g.matmul(inv, bg)?;
    let e = s.g.add(f, fg)?;
    s.g.add(e, bg)
}

/// Encode `mask` with `f` and append it to `bank`.
pub fn memory_write(
    s: &mut Session,
    cfg: &RunConfig,
    bank: &mut MemoryBank<MemoryItem>,
    frame: usize,
    f: Var,
    mask: Var,
    is_key: bool,
) -> Result<MemoryItem> {
    let e = encode_memory(s, cfg, f, mask)?;
    let item = memory_item(s, e)?;
    bank.write(frame, is_key, item)?;
    Ok(item)
}

/// Soft mask written to memory: per-pixel probability scaled by presence.
fn memory_mask(s: &mut Session, pred: &MaskPrediction) -> Result<Var> {
    let p = s.g.sigmoid(pred.logits);
    s.g.mul_row(p, pred.presence)
}

fn segment_frame(
    s: &mut Session,
    cfg: &RunConfig,
    prompt: &Prompt,
    f: Var,
    pixels: Var,
) -> Result<MaskPrediction> {
    let (tokens, feats) = encode_prompt(s, prompt, f)?;
    decode_mask(s, cfg, feats, tokens, pixels)
}

/// Segment every frame of a video. `key_tokens` pairs key-frame indices
/// with their frame tokens. Frames from the first key frame onward are
/// processed forward in time; earlier frames are processed backward with a
/// fresh bank seeded by the first key frame's prediction.
pub fn segment_video(
    s: &mut Session,
    cfg: &RunConfig,
    features: &[Var],
    pixels: &[Var],
    key_tokens: &[(usize, Var)],
) -> Result<Vec<MaskPrediction>> {
    let t_len = features.len();
    if pixels.len() != t_len {
        return Err(shape_err!("{t_len} feature maps but {} frames", pixels.len()));
    }
    if key_tokens.is_empty() {
        return Err(Error::Input("segment_video needs at least one key frame".into()));
    }
    let mut tokens: Vec<Option<Var>> = vec![None; t_len];
    for &(k, x) in key_tokens {
        if k >= t_len {
            return Err(Error::Input(format!("key frame {k} outside a {t_len}-frame video")));
        }
        if tokens[k].replace(x).is_some() {
            return Err(Error::Input(format!("key frame {k} given twice")));
        }
    }
    let first = tokens.iter().position(Option::is_some).expect("nonempty");

    let mut preds: Vec<Option<MaskPrediction>> = (0..t_len).map(|_| None).collect();
    let mut bank = MemoryBank::new(cfg.mem_capacity);
    let mut first_entry = None;
    for t in first..t_len {
        let pred = match tokens[t] {
            Some(x) => segment_frame(s, cfg, &Prompt::Token(x), features[t], pixels[t])?,
            None => segment_frame(s, cfg, &Prompt::Memory(&bank), features[t], pixels[t])?,
        };
        let m = memory_mask(s, &pred)?;
        let e = memory_write(s, cfg, &mut bank, t, features[t], m, tokens[t].is_some())?;
        if t == first {
            first_entry = Some(e);
        }
        preds[t] = Some(pred);
    }
    if first > 0 {
        let mut back = MemoryBank::new(cfg.mem_capacity);
        back.write(first, true, first_entry.expect("first frame processed"))?;
        for t in (0..first).rev() {
            let pred = segment_frame(s, cfg, &Prompt::Memory(&back), features[t], pixels[t])?;
            let m = memory_mask(s, &pred)?;
            memory_write(s, cfg, &mut back, t, features[t], m, false)?;
            preds[t] = Some(pred);
        }
    }
    Ok(preds.into_iter().map(|p| p.expect("every frame visited")).collect())
}

/// Tracking: memory is seeded with a given frame-0 mask (`HW` values) and
/// frames `1..T` are predicted from memory alone.
pub fn track_video(
    s: &mut Session,
    cfg: &RunConfig,
    features: &[Var],
    pixels: &[Var],
    first_mask: &[f64],
) -> Result<Vec<MaskPrediction>> {
    if features.is_empty() || pixels.len() != features.len() {
        return Err(shape_err!("{} feature maps, {} frames", features.len(), pixels.len()));
    }
    let m0 = s.constant(Tensor::matrix(first_mask.len(), 1, first_mask.to_vec())?);
    let mut bank = MemoryBank::new(cfg.mem_capacity);
    memory_write(s, cfg, &mut bank, 0, features[0], m0, true)?;
    let mut out = Vec::with_capacity(features.len() - 1);
    for t in 1..features.len() {
        let pred = segment_frame(s, cfg, &Prompt::Memory(&bank), features[t], pixels[t])?;
        let m = memory_mask(s, &pred)?;
        memory_write(s, cfg, &mut bank, t, features[t], m, false)?;
        out.push(pred);
    }
    Ok(out)
}

/// Final per-pixel probabilities: `sigmoid(logits)`, all zero when the
/// presence score is below `threshold`.
pub fn final_probabilities(logits: &Tensor, presence: f64, threshold: f64) -> Vec<f64> {
    if presence < threshold {
        vec![0.0; logits.len()]
    } else {
        logits.data().iter().map(|&x| sigmoid(x)).collect()
    }
}

/// Binary mask at probability 0.5.
pub fn binarize(probs: &[f64]) -> Vec<bool> {
    probs.iter().map(|&p| p > 0.5).collect()
}

#[cfg(test)]
mod tests;
