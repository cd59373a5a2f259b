use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{attention_eval, grad_check, GradCheckConfig, Graph};

fn tiny(pos_enc: bool, refine: usize) -> RunConfig {
    RunConfig {
        height: 8,
        width: 8,
        patch: 2,
        channels: 4,
        attn_dim: 3,
        pos_enc,
        refine_width: refine,
        mem_capacity: 2,
        ..RunConfig::default()
    }
}

fn store(cfg: &RunConfig, seed: u64) -> ParamStore {
    let mut st = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init(&mut st, cfg, &mut rng);
    for (name, t) in st.iter_mut() {
        if name.ends_with(".b") || name.ends_with(".bias") || name.ends_with(".gain") {
            let r = Tensor::randn(t.shape(), 0.2, &mut rng);
            t.data_mut().iter_mut().zip(r.data()).for_each(|(x, r)| *x += r);
        }
    }
    st
}

struct Video {
    feats: Vec<Tensor>,
    pixels: Vec<Tensor>,
    tokens: Vec<Tensor>,
}

fn video(cfg: &RunConfig, t: usize, seed: u64) -> Video {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.grid().0 * cfg.grid().1;
    Video {
        feats: (0..t).map(|_| Tensor::randn(&[n, cfg.channels], 1.0, &mut rng)).collect(),
        pixels: (0..t)
            .map(|_| Tensor::uniform(&[cfg.height * cfg.width, 3], 0.0, 1.0, &mut rng))
            .collect(),
        tokens: (0..t).map(|_| Tensor::randn(&[1, cfg.channels], 1.0, &mut rng)).collect(),
    }
}

/// Logits and presence per frame, evaluated eagerly.
fn run_segment(st: &ParamStore, cfg: &RunConfig, v: &Video, keys: &[usize]) -> Vec<(Tensor, f64)> {
    let mut s = Session::inference(st);
    let f: Vec<Var> = v.feats.iter().map(|x| s.constant(x.clone())).collect();
    let px: Vec<Var> = v.pixels.iter().map(|x| s.constant(x.clone())).collect();
    let kt: Vec<(usize, Var)> = keys.iter().map(|&k| (k, s.constant(v.tokens[k].clone()))).collect();
    let preds = segment_video(&mut s, cfg, &f, &px, &kt).unwrap();
    preds
        .iter()
        .map(|p| (s.g.value(p.logits).clone(), s.g.value(p.presence).data()[0]))
        .collect()
}

fn decode_token(st: &ParamStore, cfg: &RunConfig, f: &Tensor, px: &Tensor, tok: &Tensor) -> (Tensor, Tensor, f64) {
    let mut s = Session::inference(st);
    let (f, px, tok) = (s.constant(f.clone()), s.constant(px.clone()), s.constant(tok.clone()));
    let p = decode_mask(&mut s, cfg, f, tok, px).unwrap();
    (
        s.g.value(p.logits).clone(),
        s.g.value(p.patch_logits).clone(),
        s.g.value(p.presence).data()[0],
    )
}

// ---- memory bank -----------------------------------------------------------

#[test]
fn fifo_keeps_most_recent_non_key_entries() {
    let mut b = MemoryBank::new(2);
    assert_eq!(b.write(1, false, ()).unwrap(), None);
    assert_eq!(b.write(2, false, ()).unwrap(), None);
    assert_eq!(b.write(3, false, ()).unwrap(), Some(1));
    let frames: Vec<usize> = b.entries().iter().map(|e| e.frame).collect();
    assert_eq!(frames, vec![2, 3]);
}

#[test]
fn key_entries_are_never_evicted() {
    let mut b = MemoryBank::new(2);
    for t in 0..10 {
        assert_eq!(b.write(t, true, ()).unwrap(), None);
    }
    assert_eq!(b.len(), 10);
    b.write(10, false, ()).unwrap();
    b.write(11, false, ()).unwrap();
    assert_eq!(b.write(12, false, ()).unwrap(), Some(10));
    assert_eq!(b.len(), 12);
}

#[test]
fn duplicate_frame_is_a_state_error() {
    let mut b = MemoryBank::new(2);
    b.write(4, true, ()).unwrap();
    assert!(matches!(b.write(4, false, ()), Err(Error::State(_))));
}

/// Replay random schedules against a plain reference model.
#[test]
fn random_schedules_respect_memory_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let cap = rng.gen_range(0..5);
        let len = rng.gen_range(1..40);
        let mut bank = MemoryBank::new(cap);
        let mut keys = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        for frame in 0..len {
            let is_key = rng.gen_bool(0.3);
            let evicted = bank.write(frame, is_key, frame).unwrap();
            if is_key {
                keys.push(frame);
                assert_eq!(evicted, None);
            } else {
                queue.push_back(frame);
                let want = if queue.len() > cap { queue.pop_front() } else { None };
                assert_eq!(evicted, want);
            }
            assert!(bank.non_key_count() <= cap);
            for k in &keys {
                assert!(bank.contains(*k));
            }
            let non_key: Vec<usize> = bank.entries().iter().filter(|e| !e.is_key).map(|e| e.frame).collect();
            assert_eq!(non_key, queue.iter().copied().collect::<Vec<_>>());
        }
    }
}

// ---- prompt encoder --------------------------------------------------------

#[test]
fn token_prompt_passes_through() {
    let cfg = tiny(true, 2);
    let st = store(&cfg, 1);
    let v = video(&cfg, 1, 1);
    let mut s = Session::new(&st);
    let f = s.constant(v.feats[0].clone());
    let x = s.constant(v.tokens[0].clone());
    let (t, g) = encode_prompt(&mut s, &Prompt::Token(x), f).unwrap();
    assert_eq!((t, g), (x, f));
}

#[test]
fn memory_prompt_matches_attention_oracle() {
    let cfg = tiny(true, 2);
    let st = store(&cfg, 2);
    let v = video(&cfg, 1, 2);
    let f = &v.feats[0];
    let mut s = Session::inference(&st);
    let fv = s.constant(f.clone());
    let mut bank = MemoryBank::new(2);
    let item = memory_item(&mut s, fv).unwrap();
    bank.write(0, true, item).unwrap();
    let (tok, cond) = encode_prompt(&mut s, &Prompt::Memory(&bank), fv).unwrap();
    assert_eq!(s.g.value(tok).data(), st.get("mg.query").unwrap().data());

    let mm = |a: &Tensor, b: &Tensor| -> Tensor {
        let (r, k, c) = (a.rows(), a.cols(), b.cols());
        let d = (0..r * c).map(|i| (0..k).map(|j| a.get2(i / c, j) * b.get2(j, i % c)).sum()).collect();
        Tensor::matrix(r, c, d).unwrap()
    };
    let pe = st.get("mg.mem.pe").unwrap();
    let fp = Tensor::matrix(f.rows(), f.cols(), f.data().iter().zip(pe.data()).map(|(a, b)| a + b).collect()).unwrap();
    let q = mm(&fp, st.get("mg.mem.q").unwrap());
    let k = mm(&fp, st.get("mg.mem.k").unwrap());
    let vv = mm(f, st.get("mg.mem.v").unwrap());
    let a = mm(&attention_eval(&q, &k, &vv).unwrap(), st.get("mg.mem.o").unwrap());
    let want: Vec<f64> = f.data().iter().zip(a.data()).map(|(x, y)| x + y).collect();
    for (g, w) in s.g.value(cond).data().iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn memory_prompt_with_empty_bank_is_a_state_error() {
    let cfg = tiny(true, 2);
    let st = store(&cfg, 3);
    let mut s = Session::new(&st);
    let f = s.constant(Tensor::zeros(&[16, 4]));
    let bank = MemoryBank::new(2);
    assert!(matches!(encode_prompt(&mut s, &Prompt::Memory(&bank), f), Err(Error::State(_))));
}

// ---- decoder ---------------------------------------------------------------

#[test]
fn zero_weights_give_zero_logits_and_half_presence() {
    let cfg = tiny(true, 2);
    let mut st = store(&cfg, 4);
    st.zero_all();
    let v = video(&cfg, 1, 4);
    let (logits, _, p) = decode_token(&st, &cfg, &v.feats[0], &v.pixels[0], &v.tokens[0]);
    assert!(logits.data().iter().all(|&x| x == 0.0));
    assert_eq!(logits.shape(), &[64, 1]);
    assert_eq!(p, 0.5);
}

/// Half-pixel bilinear weight of source cell 0 along an axis of 2 cells.
fn hat(i: usize, p: usize) -> f64 {
    let y = ((i as f64 + 0.5) / p as f64 - 0.5).clamp(0.0, 1.0);
    1.0 - y
}

#[test]
fn single_hot_patch_upsamples_bilinearly() {
    let plan = ResamplePlan::upsample(2, 2, 2);
    let out = plan.apply(&[1.0, 0.0, 0.0, 0.0], 1);
    for i in 0..4 {
        for j in 0..4 {
            assert!((out[i * 4 + j] - hat(i, 2) * hat(j, 2)).abs() < 1e-15);
        }
    }
    assert_eq!(&out[..4], &[1.0, 0.75, 0.25, 0.0]);
}

#[test]
fn logits_are_upsampled_patch_logits_without_refinement() {
    let cfg = RunConfig { height: 4, width: 4, ..tiny(true, 0) };
    let st = store(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = Tensor::randn(&[4, 4], 1.0, &mut rng);
    let px = Tensor::uniform(&[16, 3], 0.0, 1.0, &mut rng);
    let tok = Tensor::randn(&[1, 4], 1.0, &mut rng);
    let (logits, patch, _) = decode_token(&st, &cfg, &f, &px, &tok);
    let pd = patch.data();
    for i in 0..4 {
        for j in 0..4 {
            let mut want = 0.0;
            for (c, &v) in pd.iter().enumerate() {
                let wy = if c / 2 == 0 { hat(i, 2) } else { 1.0 - hat(i, 2) };
                let wx = if c % 2 == 0 { hat(j, 2) } else { 1.0 - hat(j, 2) };
                want += wy * wx * v;
            }
            assert!((logits.data()[i * 4 + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn patch_head_is_permutation_equivariant_without_positional_encoding() {
    let cfg = tiny(false, 0);
    let st = store(&cfg, 6);
    let v = video(&cfg, 1, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut perm: Vec<usize> = (0..16).collect();
    for i in (1..16).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let f = &v.feats[0];
    let mut pf = Vec::new();
    for &r in &perm {
        pf.extend_from_slice(f.row_slice(r));
    }
    let pf = Tensor::matrix(16, 4, pf).unwrap();
    let (_, a, pa) = decode_token(&st, &cfg, f, &v.pixels[0], &v.tokens[0]);
    let (_, b, pb) = decode_token(&st, &cfg, &pf, &v.pixels[0], &v.tokens[0]);
    for (i, &r) in perm.iter().enumerate() {
        assert!((b.data()[i] - a.data()[r]).abs() < 1e-12);
    }
    assert!((pa - pb).abs() < 1e-12);
}

#[test]
fn decoder_rejects_wrong_shapes() {
    let cfg = tiny(true, 2);
    let st = store(&cfg, 7);
    let mut s = Session::new(&st);
    let f = s.constant(Tensor::zeros(&[15, 4]));
    let t = s.constant(Tensor::zeros(&[1, 4]));
    let px = s.constant(Tensor::zeros(&[64, 3]));
    assert!(matches!(decode_mask(&mut s, &cfg, f, t, px), Err(Error::Shape(_))));
}

// ---- memory encoder --------------------------------------------------------

#[test]
fn zero_mask_and_zero_mask_weights_leave_features() {
    let cfg = tiny(true, 2);
    let mut st = store(&cfg, 8);
    st.get_mut("mg.menc.fg").unwrap().data_mut().fill(0.0);
    st.get_mut("mg.menc.bg").unwrap().data_mut().fill(0.0);
    let v = video(&cfg, 1, 8);
    let mut s = Session::new(&st);
    let f = s.constant(v.feats[0].clone());
    let m = s.constant(Tensor::zeros(&[64, 1]));
    let e = encode_memory(&mut s, &cfg, f, m).unwrap();
    assert_eq!(s.g.value(e).data(), v.feats[0].data());
}

#[test]
fn memory_entry_mixes_pooled_mask() {
    let cfg = tiny(true, 2);
    let st = store(&cfg, 9);
    let v = video(&cfg, 1, 9);
    // top-left 2×2 pixels on: exactly patch 0 is foreground
    let mut mask = vec![0.0; 64];
    for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        mask[y * 8 + x] = 1.0;
    }
    let mut s = Session::new(&st);
    let f = s.constant(v.feats[0].clone());
    let m = s.constant(Tensor::matrix(64, 1, mask).unwrap());
    let e = encode_memory(&mut s, &cfg, f, m).unwrap();
    let e = s.g.value(e);
    let (fg, bg) = (st.get("mg.menc.fg").unwrap(), st.get("mg.menc.bg").unwrap());
    for r in 0..16 {
        let add = if r == 0 { fg } else { bg };
        for c in 0..4 {
            assert!((e.get2(r, c) - v.feats[0].get2(r, c) - add.data()[c]).abs() < 1e-12);
        }
    }
}

// ---- segment_video ---------------------------------------------------------

#[test]
fn single_frame_video_equals_decode() {
    let cfg = tiny(true, 2);
    let st = store(&cfg, 10);
    let v = video(&cfg, 1, 10);
    let seg = run_segment(&st, &cfg, &v, &[0]);
    let (logits, _, p) = decode_token(&st, &cfg, &v.feats[0], &v.pixels[0], &v.tokens[0]);
    assert_eq!(seg[0].0.data(), logits.data());
    assert_eq!(seg[0].1, p);
}

#[test]
fn all_key_frames_decode_independently_of_capacity() {
    let cfg = tiny(true, 2);
    let st = store(&cfg, 11);
    let v = video(&cfg, 5, 11);
    let keys: Vec<usize> = (0..5).collect();
    let a = run_segment(&st, &cfg, &v, &keys);
    let b = run_segment(&st, &RunConfig { mem_capacity: 0, ..cfg.clone() }, &v, &keys);
    for t in 0..5 {
        let (logits, _, p) = decode_token(&st, &cfg, &v.feats[t], &v.pixels[t], &v.tokens[t]);
        assert_eq!(a[t].0.data(), logits.data());
        assert_eq!(b[t].0.data(), logits.data());
        assert_eq!(a[t].1, p);
    }
}

#[test]
fn rerun_is_bit_identical_and_covers_every_frame() {
    let cfg = tiny(true, 2);
    let st = store(&cfg, 12);
    let v = video(&cfg, 10, 12);
    let a = run_segment(&st, &cfg, &v, &[2, 7]);
    let b = run_segment(&st, &cfg, &v, &[2, 7]);
    assert_eq!(a.len(), 10);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.0.data(), y.0.data());
        assert_eq!(x.1, y.1);
        assert!(x.0.is_finite() && (0.0..=1.0).contains(&x.1));
    }
    // frames 0 and 1 come from the backward pass, which differs from forward
    // memory decoding of the same frames
    assert_ne!(a[0].0.data(), a[1].0.data());
}

#[test]
fn key_frame_validation() {
    let cfg = tiny(true, 2);
    let st = store(&cfg, 13);
    let mut s = Session::new(&st);
    let f = vec![s.constant(Tensor::zeros(&[16, 4])); 2];
    let px = vec![s.constant(Tensor::zeros(&[64, 3])); 2];
    let x = s.constant(Tensor::zeros(&[1, 4]));
    assert!(matches!(segment_video(&mut s, &cfg, &f, &px, &[]), Err(Error::Input(_))));
    assert!(matches!(segment_video(&mut s, &cfg, &f, &px, &[(2, x)]), Err(Error::Input(_))));
    assert!(matches!(segment_video(&mut s, &cfg, &f, &px, &[(1, x), (1, x)]), Err(Error::Input(_))));
}

#[test]
fn presence_gating_zeroes_the_mask() {
    let logits = Tensor::matrix(3, 1, vec![5.0, -1.0, 0.0]).unwrap();
    assert_eq!(final_probabilities(&logits, 0.49, 0.5), vec![0.0; 3]);
    let p = final_probabilities(&logits, 0.5, 0.5);
    assert_eq!(p[2], 0.5);
    assert_eq!(binarize(&p), vec![true, false, false]);
}

#[test]
fn tracking_predicts_every_later_frame() {
    let cfg = tiny(true, 2);
    let st = store(&cfg, 14);
    let v = video(&cfg, 4, 14);
    let mut s = Session::new(&st);
    let f: Vec<Var> = v.feats.iter().map(|x| s.constant(x.clone())).collect();
    let px: Vec<Var> = v.pixels.iter().map(|x| s.constant(x.clone())).collect();
    let preds = track_video(&mut s, &cfg, &f, &px, &[1.0; 64]).unwrap();
    assert_eq!(preds.len(), 3);
}

#[test]
fn segment_video_gradients_match_finite_differences() {
    let cfg = tiny(true, 2);
    let names = [
        "mg.mem.q",
        "mg.menc.fg",
        "mg.menc.bg",
        "mg.hyper.fc1.w",
        "mg.ref.rgb",
        "mg.dec.t2i.k",
        "mg.pres.w",
    ];
    for seed in 0..5 {
        let st = store(&cfg, 20 + seed);
        let v = video(&cfg, 3, 20 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(30 + seed);
        let wout: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[64, 1], 0.1, &mut rng)).collect();
        let mut inputs: Vec<(&str, Tensor)> = vec![
            ("token", v.tokens[1].clone()),
            ("f0", v.feats[0].clone()),
            ("f1", v.feats[1].clone()),
            ("f2", v.feats[2].clone()),
        ];
        for n in names {
            inputs.push((n, st.get(n).unwrap().clone()));
        }
        let report = grad_check(
            "segment_video",
            &inputs,
            |g: &mut Graph, x| {
                crate::nn::on_graph(g, &st, |s| {
                    for (i, n) in names.iter().enumerate() {
                        s.bind(n, x[4 + i]);
                    }
                    let px: Vec<Var> = v.pixels.iter().map(|p| s.constant(p.clone())).collect();
                    let preds = segment_video(s, &cfg, &x[1..4], &px, &[(1, x[0])])?;
                    let mut terms = Vec::new();
                    for (p, w) in preds.iter().zip(&wout) {
                        let w = s.constant(w.clone());
                        let l = s.g.mul(p.logits, w)?;
                        terms.push(s.g.sum(l));
                        terms.push(s.g.sum(p.presence));
                    }
                    let total = s.g.sum_all(&terms)?;
                    Ok(s.g.sum(total))
                })
            },
            &GradCheckConfig { seed, max_coords: 12, ..GradCheckConfig::default() },
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }
}
