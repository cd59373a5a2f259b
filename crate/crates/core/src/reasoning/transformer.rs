//! Pre-norm causal transformer over `[visual tokens ; text embeddings]`.

use rand::Rng;

use super::vocab::Vocabulary;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{self, ParamStore, Session};
use crate::numerics::{Tensor, Var};
use crate::trajectory_encoder::insert_placeholder;

/// Large negative score for masked attention entries; `exp` underflows to
/// exactly zero.
const MASKED: f64 = -1e30;

pub fn init(store: &mut ParamStore, cfg: &RunConfig, vocab_len: usize, rng: &mut impl Rng) {
    let c = cfg.channels;
    let hd = c / cfg.reasoner_heads;
    store.insert("lm.tok", Tensor::randn(&[vocab_len, c], 0.3, rng));
    store.insert("lm.pos", Tensor::randn(&[cfg.max_len, c], 0.1, rng));
    nn::init_linear(store, "lm.vis", c, c, rng);
    for l in 0..cfg.reasoner_layers {
        let pre = format!("lm.l{l}");
        nn::init_layer_norm(store, &format!("{pre}.ln1"), c);
        nn::init_layer_norm(store, &format!("{pre}.ln2"), c);
        for h in 0..cfg.reasoner_heads {
            for m in ["q", "k", "v"] {
                let std = (1.0 / c as f64).sqrt();
                store.insert(format!("{pre}.attn.h{h}.{m}"), Tensor::randn(&[c, hd], std, rng));
            }
            let std = (1.0 / c as f64).sqrt();
            store.insert(format!("{pre}.attn.h{h}.o"), Tensor::randn(&[hd, c], std, rng));
        }
        nn::init_mlp(store, &format!("{pre}.mlp"), c, 4 * c, rng);
    }
    nn::init_layer_norm(store, "lm.ln_f", c);
    nn::init_linear(store, "lm.head", c, vocab_len, rng);
    nn::init_linear(store, "lm.trj_out", c, c, rng);
}

pub struct ReasonerOutput {
    /// `text_len × vocab` next-token logits, one row per text position.
    pub logits: Var,
    /// `text_len × C` final hidden states (after the last norm).
    pub hidden: Var,
}

fn causal_mask(len: usize) -> Tensor {
    let mut m = vec![0.0; len * len];
    for i in 0..len {
        for j in i + 1..len {
            m[i * len + j] = MASKED;
        }
    }
    Tensor::matrix(len, len, m).expect("square mask")
}

fn self_attention(s: &mut Session, cfg: &RunConfig, pre: &str, x: Var, mask: Var) -> Result<Var> {
    let hd = cfg.channels / cfg.reasoner_heads;
    let mut heads = Vec::with_capacity(cfg.reasoner_heads);
    for h in 0..cfg.reasoner_heads {
        let q = nn::project(s, &format!("{pre}.h{h}.q"), x)?;
        let k = nn::project(s, &format!("{pre}.h{h}.k"), x)?;
        let v = nn::project(s, &format!("{pre}.h{h}.v"), x)?;
        let sc = s.g.matmul_nt(q, k)?;
        let sc = s.g.scale(sc, 1.0 / (hd as f64).sqrt());
        let sc = s.g.add(sc, mask)?;
        let a = s.g.softmax(sc);
        let o = s.g.matmul(a, v)?;
        heads.push(nn::project(s, &format!("{pre}.h{h}.o"), o)?);
    }
    s.g.sum_all(&heads)
}

/// Run the reasoner. `visual` are `1 × C` pooled key-frame features; when
/// `trajectory` is given, the placeholder token in `ids` is replaced by the
/// projected trajectory feature.
pub fn reasoner_forward(
    s: &mut Session,
    cfg: &RunConfig,
    vocab: &Vocabulary,
    visual: &[Var],
    ids: &[usize],
    trajectory: Option<Var>,
) -> Result<ReasonerOutput> {
    let len = visual.len() + ids.len();
    if len > cfg.max_len {
        return Err(Error::Capacity(format!(
            "sequence of {len} tokens exceeds max length {}",
            cfg.max_len
        )));
    }
    if ids.is_empty() {
        return Err(Error::Input("reasoner needs at least one text token".into()));
    }
    let table = s.p("lm.tok")?;
    let text = match trajectory {
        Some(f) => insert_placeholder(s, table, ids, vocab.placeholder(), f)?,
        None => s.g.gather_rows(table, ids)?,
    };
    let x = if visual.is_empty() {
        text
    } else {
        let v = s.g.concat_rows(visual)?;
        let v = nn::linear(s, "lm.vis", v)?;
        s.g.concat_rows(&[v, text])?
    };
    let pos = s.p("lm.pos")?;
    let pos = s.g.slice_rows(pos, 0, len)?;
    let mut x = s.g.add(x, pos)?;
    let mask = s.constant(causal_mask(len));
    for l in 0..cfg.reasoner_layers {
        let pre = format!("lm.l{l}");
        let n = nn::layer_norm(s, &format!("{pre}.ln1"), x)?;
        let a = self_attention(s, cfg, &format!("{pre}.attn"), n, mask)?;
        x = s.g.add(x, a)?;
        let n = nn::layer_norm(s, &format!("{pre}.ln2"), x)?;
        let m = nn::mlp(s, &format!("{pre}.mlp"), n)?;
        x = s.g.add(x, m)?;
    }
    let x = nn::layer_norm(s, "lm.ln_f", x)?;
    let hidden = s.g.slice_rows(x, visual.len(), ids.len())?;
    let logits = nn::linear(s, "lm.head", hidden)?;
    Ok(ReasonerOutput { logits, hidden })
}

/// Hidden state at the single `<TRJ>` position of `ids`, projected to C.
pub fn extract_trj_token(
    s: &mut Session,
    output: &ReasonerOutput,
    ids: &[usize],
    trj: usize,
) -> Result<Var> {
    let pos: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == trj)
        .map(|(i, _)| i)
        .collect();
    match pos.as_slice() {
        [p] => {
            let h = s.g.row(output.hidden, *p)?;
            nn::linear(s, "lm.trj_out", h)
        }
        [] => Err(Error::Input("target stream has no <TRJ> token".into())),
        _ => Err(Error::Input(format!(
            "target stream has {} <TRJ> tokens",
            pos.len()
        ))),
    }
}

/// Teacher-forced text stream `[<bos>] input target [<eos>]` and the
/// `(row, next-token)` pairs the response is supervised on.
pub fn teacher_forcing(vocab: &Vocabulary, input: &[usize], target: &[usize]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut ids = Vec::with_capacity(input.len() + target.len() + 2);
    ids.push(vocab.bos());
    ids.extend_from_slice(input);
    let start = ids.len();
    ids.extend_from_slice(target);
    ids.push(vocab.eos());
    let pairs = (start..ids.len()).map(|j| (j - 1, ids[j])).collect();
    (ids, pairs)
}

/// Greedy decoding of the response. If `<TRJ>` is never emitted it is
/// appended so a target token always exists. Returns the full text stream
/// and the generated response ids.
pub fn generate(
    params: &ParamStore,
    cfg: &RunConfig,
    vocab: &Vocabulary,
    visual: &[Tensor],
    input: &[usize],
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut ids = vec![vocab.bos()];
    ids.extend_from_slice(input);
    let prompt_len = ids.len();
    for _ in 0..cfg.max_new_tokens {
        if visual.len() + ids.len() >= cfg.max_len {
            break;
        }
        let mut s = Session::inference(params);
        let vis: Vec<Var> = visual.iter().map(|t| s.constant(t.clone())).collect();
        let out = reasoner_forward(&mut s, cfg, vocab, &vis, &ids, None)?;
        let logits = s.g.value(out.logits);
        let last = logits.row_slice(ids.len() - 1);
        let next = argmax(last);
        if next == vocab.eos() || (next == vocab.trj() && ids[prompt_len..].contains(&next)) {
            break;
        }
        ids.push(next);
    }
    if !ids[prompt_len..].contains(&vocab.trj()) {
        ids.push(vocab.trj());
    }
    let response = ids[prompt_len..].to_vec();
    Ok((ids, response))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
