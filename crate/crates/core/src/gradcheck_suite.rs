//! Finite-difference checks of every differentiable component, grouped by
//! module, at small random sizes. Used by the `gradcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fci::{self, fci_expand};
use crate::mask_generator::{self, decode_mask, segment_video};
use crate::nn::{on_graph, ParamStore};
use crate::numerics::gradcheck::check_against;
use crate::numerics::{bce_loss, dice_loss, roi_align, scaled_dot_attention, GradCheckConfig, GradCheckReport, Graph, NormBox, Tensor, Var};
use crate::reasoning::{self, reasoner_forward, Vocabulary};
use crate::trajectory_encoder::{self, encode_trajectory, ObjectTrajectory};
use crate::training::loss::{stage1_loss, stage2_loss, LossWeights, MaskTarget};

pub const MODULES: &[&str] = &["numerics", "losses", "trajectory_encoder", "fci", "reasoning", "mask_generator"];

/// Random points per check.
pub const POINTS: u64 = 5;

#[derive(Clone, Debug, Default)]
pub struct SuiteOptions {
    /// Scale every analytic gradient by 1.5 before comparing; a negative
    /// control that must make every non-trivial check fail.
    pub corrupt: bool,
}

/// Like [`crate::numerics::grad_check`], with the optional corruption.
fn check<F>(op: &str, inputs: &[(&str, Tensor)], f: F, cfg: &GradCheckConfig, opts: &SuiteOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<(Graph, Var, Vec<Var>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g, out, vars))
    };
    let point: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let (g, out, vars) = eval(&point)?;
    let grads = g.backward(out)?;
    let scale = if opts.corrupt { 1.5 } else { 1.0 };
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| grads.get_or_zeros(&g, v).into_iter().map(|x| x * scale).collect())
        .collect();
    check_against(op, inputs, |vals| eval(vals).map(|(g, o, _)| g.scalar(o)), &analytic, cfg)
}

fn gc(seed: u64, max_coords: usize) -> GradCheckConfig {
    GradCheckConfig {
        seed,
        max_coords,
        ..GradCheckConfig::default()
    }
}

/// Random weighted sum, so every output coordinate matters.
fn project_out(g: &mut Graph, out: Var, w: &Tensor) -> Result<Var> {
    let w = g.constant(w.clone());
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn random_box(rng: &mut ChaCha8Rng) -> NormBox {
    loop {
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        let (c, d): (f64, f64) = (rng.gen(), rng.gen());
        if (a - b).abs() > 0.05 && (c - d).abs() > 0.05 {
            if let Ok(bx) = NormBox::new(a.min(b), c.min(d), a.max(b), c.max(d)) {
                return bx;
            }
        }
    }
}

/// Initial weights with non-zero biases, so bias gradients are exercised.
fn perturbed(mut st: ParamStore, rng: &mut ChaCha8Rng) -> ParamStore {
    for (name, t) in st.iter_mut() {
        if name.ends_with(".b") || name.ends_with(".bias") || name.ends_with(".gain") {
            let r = Tensor::randn(t.shape(), 0.2, rng);
            t.data_mut().iter_mut().zip(r.data()).for_each(|(x, r)| *x += r);
        }
    }
    st
}

fn with_params<'a, S: AsRef<str>>(inputs: &mut Vec<(&'a str, Tensor)>, st: &ParamStore, names: &'a [S]) -> Result<()> {
    for n in names {
        let n = n.as_ref();
        let t = st.get(n).ok_or_else(|| Error::Input(format!("missing parameter {n}")))?;
        inputs.push((n, t.clone()));
    }
    Ok(())
}

fn numerics(opts: &SuiteOptions) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let q = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let k = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let v = Tensor::randn(&[5, 2], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2], 1.0, &mut rng);
        out.push(check(
            "scaled_dot_attention",
            &[("q", q), ("k", k), ("v", v)],
            |g, x| {
                let o = scaled_dot_attention(g, x[0], x[1], x[2])?;
                project_out(g, o, &w)
            },
            &gc(seed, 0),
            opts,
        )?);

        let f = Tensor::randn(&[16, 3], 1.0, &mut rng);
        let bx = random_box(&mut rng);
        let w = Tensor::randn(&[4, 3], 1.0, &mut rng);
        out.push(check(
            "roi_align",
            &[("feature", f)],
            |g, x| {
                let o = roi_align(g, x[0], 4, 4, &bx, 2)?;
                project_out(g, o, &w)
            },
            &gc(seed, 0),
            opts,
        )?);
    }
    Ok(out)
}

fn losses(opts: &SuiteOptions) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    let weights = LossWeights::default();
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let p = Tensor::uniform(&[9, 1], 0.1, 0.9, &mut rng);
        let gt: Vec<f64> = (0..9).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
        out.push(check("dice", &[("pred", p.clone())], |g, x| dice_loss(g, x[0], &gt), &gc(seed, 0), opts)?);
        out.push(check("bce", &[("pred", p)], |g, x| bce_loss(g, x[0], &gt), &gc(seed, 0), opts)?);

        let logits = Tensor::randn(&[3, 6], 1.0, &mut rng);
        let pairs = [(0, 1), (1, 5), (2, 0)];
        let preds: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[6, 1], 0.1, 0.9, &mut rng)).collect();
        let gts: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..6).map(|_| rng.gen_bool(0.5) as u8 as f64).collect())
            .collect();
        let pres = Tensor::uniform(&[3, 1], 0.1, 0.9, &mut rng);
        let inputs = [
            ("logits", logits),
            ("m0", preds[0].clone()),
            ("m1", preds[1].clone()),
            ("m2", preds[2].clone()),
            ("presence", pres),
        ];
        out.push(check(
            "stage1_loss",
            &inputs[..4],
            |g, x| {
                let masks: Vec<MaskTarget> = (0..3).map(|i| (x[1 + i], gts[i].as_slice())).collect();
                Ok(stage1_loss(g, Some((x[0], &pairs)), &masks, &weights)?.total)
            },
            &gc(seed, 0),
            opts,
        )?);
        out.push(check(
            "stage2_loss",
            &inputs,
            |g, x| {
                let masks: Vec<MaskTarget> = (0..3).map(|i| (x[1 + i], gts[i].as_slice())).collect();
                let p: Vec<Var> = (0..3).map(|i| g.slice_rows(x[4], i, 1)).collect::<Result<_>>()?;
                Ok(stage2_loss(g, Some((x[0], &pairs)), &p, &[true, false, true], &masks, &weights)?.total)
            },
            &gc(seed, 0),
            opts,
        )?);
    }
    Ok(out)
}

fn trajectory(opts: &SuiteOptions) -> Result<Vec<GradCheckReport>> {
    let cfg = RunConfig {
        height: 16,
        width: 16,
        patch: 4,
        channels: 3,
        n_slots: 4,
        roi_size: 2,
        ..RunConfig::default()
    };
    let mut out = Vec::new();
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let mut st = ParamStore::new();
        trajectory_encoder::init(&mut st, &cfg, &mut rng);
        let st = perturbed(st, &mut rng);
        let traj = ObjectTrajectory::new(vec![Some(random_box(&mut rng)), Some(random_box(&mut rng)), None])?;
        let mut inputs: Vec<(&str, Tensor)> = (0..3)
            .map(|i| (["f0", "f1", "f2"][i], Tensor::randn(&[16, 3], 1.0, &mut rng)))
            .collect();
        let names: Vec<String> = st.iter().map(|(n, _)| n.clone()).collect();
        with_params(&mut inputs, &st, &names)?;
        let w = Tensor::randn(&[1, 3], 1.0, &mut rng);
        out.push(check(
            "encode_trajectory",
            &inputs,
            |g, x| {
                on_graph(g, &st, |s| {
                    for (i, n) in names.iter().enumerate() {
                        s.bind(n, x[3 + i]);
                    }
                    let o = encode_trajectory(s, &cfg, &x[..3], &traj)?;
                    project_out(&mut s.g, o, &w)
                })
            },
            &gc(seed, 0),
            opts,
        )?);
    }
    Ok(out)
}

fn fci_checks(opts: &SuiteOptions) -> Result<Vec<GradCheckReport>> {
    let cfg = RunConfig {
        channels: 4,
        attn_dim: 3,
        ..RunConfig::default()
    };
    let mut out = Vec::new();
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let mut st = ParamStore::new();
        fci::init(&mut st, &cfg, &mut rng);
        if let Some(o) = st.get_mut("fci.o") {
            *o = Tensor::randn(o.shape(), 1.0, &mut rng);
        }
        let mut inputs = vec![
            ("x_traj", Tensor::randn(&[1, 4], 1.0, &mut rng)),
            ("f0", Tensor::randn(&[5, 4], 1.0, &mut rng)),
            ("f1", Tensor::randn(&[5, 4], 1.0, &mut rng)),
        ];
        let names = ["fci.q", "fci.k", "fci.v", "fci.o"];
        with_params(&mut inputs, &st, &names)?;
        let w = Tensor::randn(&[1, 4], 1.0, &mut rng);
        out.push(check(
            "fci_expand",
            &inputs,
            |g, x| {
                on_graph(g, &st, |s| {
                    for (i, n) in names.iter().enumerate() {
                        s.bind(n, x[3 + i]);
                    }
                    let o = fci_expand(s, x[0], &x[1..3])?;
                    let both = s.g.sum_all(&o)?;
                    project_out(&mut s.g, both, &w)
                })
            },
            &gc(seed, 0),
            opts,
        )?);
    }
    Ok(out)
}

fn reasoning_checks(opts: &SuiteOptions) -> Result<Vec<GradCheckReport>> {
    let cfg = RunConfig {
        channels: 8,
        reasoner_heads: 2,
        reasoner_layers: 1,
        max_len: 32,
        ..RunConfig::default()
    };
    let vocab = Vocabulary::synthetic();
    let ids = vocab.tokenize(&reasoning::response("large red circle"))?;
    let mut out = Vec::new();
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let mut st = ParamStore::new();
        reasoning::transformer::init(&mut st, &cfg, vocab.len(), &mut rng);
        let st = perturbed(st, &mut rng);
        let mut inputs = vec![
            ("visual", Tensor::randn(&[1, 8], 1.0, &mut rng)),
            ("trajectory", Tensor::randn(&[1, 8], 1.0, &mut rng)),
        ];
        let names = ["lm.vis.w", "lm.l0.attn.h1.k", "lm.l0.mlp.fc1.w", "lm.l0.ln1.gain", "lm.head.w"];
        with_params(&mut inputs, &st, &names)?;
        let targets: Vec<(usize, usize)> = (0..ids.len() - 1).map(|i| (i + 1, ids[i + 1])).collect();
        out.push(check(
            "reasoner_forward",
            &inputs,
            |g, x| {
                on_graph(g, &st, |s| {
                    for (i, n) in names.iter().enumerate() {
                        s.bind(n, x[2 + i]);
                    }
                    let o = reasoner_forward(s, &cfg, &vocab, &[x[0]], &ids, None)?;
                    s.g.cross_entropy(o.logits, &targets)
                })
            },
            &gc(seed, 12),
            opts,
        )?);
    }
    Ok(out)
}

fn mask_checks(opts: &SuiteOptions) -> Result<Vec<GradCheckReport>> {
    let cfg = RunConfig {
        height: 8,
        width: 8,
        patch: 2,
        channels: 8,
        attn_dim: 4,
        refine_width: 2,
        mem_capacity: 2,
        ..RunConfig::default()
    };
    let n = cfg.grid().0 * cfg.grid().1;
    let hw = cfg.height * cfg.width;
    let names = [
        "mg.dec.t2i.q",
        "mg.dec.i2t.v",
        "mg.dec.mlp.fc1.w",
        "mg.hyper.fc2.w",
        "mg.head.b",
        "mg.ref.rgb",
        "mg.pres.w",
    ];
    let e2e_names = ["mg.mem.q", "mg.mem.o", "mg.menc.fg", "mg.menc.bg", "mg.query", "mg.dec.t2i.k", "mg.ref.hyper.fc2.w"];
    let mut out = Vec::new();
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + seed);
        let mut st = ParamStore::new();
        mask_generator::init(&mut st, &cfg, &mut rng);
        let mut st = perturbed(st, &mut rng);
        // the learned query starts small; finite differences need unit scale
        st.insert("mg.query", Tensor::randn(&[1, 8], 1.0, &mut rng));
        let pixels: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[hw, 3], 0.0, 1.0, &mut rng)).collect();
        let wout: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[hw, 1], 0.1, &mut rng)).collect();

        let mut inputs = vec![
            ("features", Tensor::randn(&[n, 8], 0.5, &mut rng)),
            ("token", Tensor::randn(&[1, 8], 1.0, &mut rng)),
        ];
        with_params(&mut inputs, &st, &names)?;
        out.push(check(
            "decode_mask",
            &inputs,
            |g, x| {
                on_graph(g, &st, |s| {
                    for (i, nm) in names.iter().enumerate() {
                        s.bind(nm, x[2 + i]);
                    }
                    let px = s.constant(pixels[0].clone());
                    let p = decode_mask(s, &cfg, x[0], x[1], px)?;
                    let l = project_out(&mut s.g, p.logits, &wout[0])?;
                    let pr = s.g.sum(p.presence);
                    s.g.add(l, pr)
                })
            },
            &gc(seed, 12),
            opts,
        )?);

        let mut inputs = vec![
            ("token", Tensor::randn(&[1, 8], 1.0, &mut rng)),
            ("f0", Tensor::randn(&[n, 8], 0.5, &mut rng)),
            ("f1", Tensor::randn(&[n, 8], 0.5, &mut rng)),
            ("f2", Tensor::randn(&[n, 8], 0.5, &mut rng)),
        ];
        with_params(&mut inputs, &st, &e2e_names)?;
        out.push(check(
            "segment_video_3_frames",
            &inputs,
            |g, x| {
                on_graph(g, &st, |s| {
                    for (i, nm) in e2e_names.iter().enumerate() {
                        s.bind(nm, x[4 + i]);
                    }
                    let px: Vec<Var> = pixels.iter().map(|p| s.constant(p.clone())).collect();
                    let preds = segment_video(s, &cfg, &x[1..4], &px, &[(1, x[0])])?;
                    let mut terms = Vec::new();
                    for (p, w) in preds.iter().zip(&wout) {
                        terms.push(project_out(&mut s.g, p.logits, w)?);
                        terms.push(s.g.sum(p.presence));
                    }
                    let total = s.g.sum_all(&terms)?;
                    Ok(s.g.sum(total))
                })
            },
            &gc(seed, 12),
            opts,
        )?);
    }
    Ok(out)
}

/// Run the checks for one module (or `"all"`).
pub fn run_module(module: &str, opts: &SuiteOptions) -> Result<Vec<GradCheckReport>> {
    match module {
        "numerics" => numerics(opts),
        "losses" => losses(opts),
        "trajectory_encoder" => trajectory(opts),
        "fci" => fci_checks(opts),
        "reasoning" => reasoning_checks(opts),
        "mask_generator" => mask_checks(opts),
        "all" => {
            let mut out = Vec::new();
            for m in MODULES {
                out.extend(run_module(m, opts)?);
            }
            Ok(out)
        }
        other => Err(Error::Input(format!(
            "unknown module {other:?}; expected one of {} or all",
            MODULES.join(", ")
        ))),
    }
}

/// Aligned table: one row per check.
pub fn report_table(reports: &[GradCheckReport]) -> String {
    let mut out = format!("{:<24} {:>14} {:>10} {:>6}\n", "op", "max_rel_err", "tolerance", "pass");
    for r in reports {
        out.push_str(&format!(
            "{:<24} {:>14.3e} {:>10.1e} {:>6}\n",
            r.op,
            r.max_rel_error(),
            r.tolerance,
            if r.pass { "yes" } else { "NO" }
        ));
    }
    out
}
