use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{grad_check, GradCheckConfig, Graph};
use crate::Error;

fn cfg(c: usize, d: usize) -> RunConfig {
    RunConfig {
        channels: c,
        attn_dim: d,
        ..RunConfig::default()
    }
}

fn store(c: usize, d: usize, seed: u64) -> ParamStore {
    let mut st = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init(&mut st, &cfg(c, d), &mut rng);
    // the default output map is deliberately small; use unit scale here
    if let Some(o) = st.get_mut("fci.o") {
        *o = Tensor::randn(o.shape(), 1.0, &mut rng);
    }
    st
}

fn expand(st: &ParamStore, x: &Tensor, frames: &[Tensor]) -> Vec<Tensor> {
    let mut s = Session::new(st);
    let xv = s.constant(x.clone());
    let fv: Vec<Var> = frames.iter().map(|f| s.constant(f.clone())).collect();
    let out = fci_expand(&mut s, xv, &fv).unwrap();
    out.iter().map(|&v| s.g.value(v).clone()).collect()
}

#[test]
fn zero_values_return_trajectory_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut st = store(6, 4, 1);
    st.get_mut("fci.v").unwrap().data_mut().fill(0.0);
    let x = Tensor::randn(&[1, 6], 1.0, &mut rng);
    let frames: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[5, 6], 1.0, &mut rng)).collect();
    for t in expand(&st, &x, &frames) {
        assert_eq!(t.data(), x.data());
    }
}

#[test]
fn single_location_ignores_query_and_key() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = store(6, 4, 2);
    let mut b = a.clone();
    for m in ["fci.q", "fci.k"] {
        *b.get_mut(m).unwrap() = Tensor::randn(&[6, 4], 3.0, &mut rng);
    }
    let x = Tensor::randn(&[1, 6], 1.0, &mut rng);
    let f = Tensor::randn(&[1, 6], 1.0, &mut rng);
    let got = expand(&a, &x, &[f.clone()]);
    let other = expand(&b, &x, &[f.clone()]);
    // x + (f W_V) W_O computed by hand
    let (wv, wo) = (a.get("fci.v").unwrap(), a.get("fci.o").unwrap());
    let fv: Vec<f64> = (0..4).map(|j| (0..6).map(|k| f.data()[k] * wv.get2(k, j)).sum()).collect();
    for j in 0..6 {
        let want = x.data()[j] + (0..4).map(|k| fv[k] * wo.get2(k, j)).sum::<f64>();
        assert!((got[0].data()[j] - want).abs() < 1e-12);
        assert!((other[0].data()[j] - want).abs() < 1e-12);
    }
}

#[test]
fn two_location_matches_scalar_oracle() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let st = store(2, 2, seed);
        assert!(st.get("fci.o").is_none());
        let x = Tensor::randn(&[1, 2], 1.0, &mut rng);
        let f = Tensor::randn(&[2, 2], 1.0, &mut rng);
        let got = expand(&st, &x, &[f.clone()]);
        let w = |n: &str, i: usize, j: usize| st.get(n).unwrap().get2(i, j);
        let q: Vec<f64> = (0..2).map(|j| x.data()[0] * w("fci.q", 0, j) + x.data()[1] * w("fci.q", 1, j)).collect();
        let proj = |m: &str, r: usize| -> Vec<f64> {
            (0..2).map(|j| f.get2(r, 0) * w(m, 0, j) + f.get2(r, 1) * w(m, 1, j)).collect()
        };
        let (k0, k1, v0, v1) = (proj("fci.k", 0), proj("fci.k", 1), proj("fci.v", 0), proj("fci.v", 1));
        let s0 = (q[0] * k0[0] + q[1] * k0[1]) / 2f64.sqrt();
        let s1 = (q[0] * k1[0] + q[1] * k1[1]) / 2f64.sqrt();
        let a0 = 1.0 / (1.0 + (s1 - s0).exp());
        for j in 0..2 {
            let want = x.data()[j] + a0 * v0[j] + (1.0 - a0) * v1[j];
            assert!((got[0].data()[j] - want).abs() < 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn spatial_permutation_leaves_tokens_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let st = store(8, 4, 3);
    let x = Tensor::randn(&[1, 8], 1.0, &mut rng);
    let f = Tensor::randn(&[7, 8], 1.0, &mut rng);
    let perm = [3usize, 6, 0, 2, 5, 1, 4];
    let mut pf = Vec::new();
    for &r in &perm {
        pf.extend_from_slice(f.row_slice(r));
    }
    let pf = Tensor::matrix(7, 8, pf).unwrap();
    let a = expand(&st, &x, &[f]);
    let b = expand(&st, &x, &[pf]);
    assert!(a[0].max_abs_diff(&b[0]) < 1e-12);
}

#[test]
fn identical_frames_give_identical_tokens_and_distinct_frames_differ() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let st = store(8, 4, 4);
    let x = Tensor::randn(&[1, 8], 1.0, &mut rng);
    let f = Tensor::randn(&[5, 8], 1.0, &mut rng);
    let g = Tensor::randn(&[5, 8], 1.0, &mut rng);
    let out = expand(&st, &x, &[f.clone(), g, f]);
    assert_eq!(out.len(), 3);
    assert_eq!(out[0].data(), out[2].data());
    assert!(out[0].max_abs_diff(&out[1]) > 1e-6);
}

#[test]
fn mismatched_widths_are_rejected() {
    let mut st = store(6, 4, 5);
    st.insert("fci.k", Tensor::zeros(&[6, 3]));
    let mut s = Session::new(&st);
    let x = s.constant(Tensor::zeros(&[1, 6]));
    let f = s.constant(Tensor::zeros(&[4, 6]));
    assert!(matches!(fci_expand(&mut s, x, &[f]), Err(Error::Shape(_))));
}

#[test]
fn disabled_fci_repeats_trajectory_token() {
    let st = store(6, 4, 6);
    let c = RunConfig { use_fci: false, ..cfg(6, 4) };
    let mut s = Session::new(&st);
    let x = s.constant(Tensor::full(&[1, 6], 0.5));
    let f = s.constant(Tensor::zeros(&[4, 6]));
    let out = frame_tokens(&mut s, &c, x, &[f, f]).unwrap();
    assert_eq!(out, vec![x, x]);
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let st = store(4, 3, seed);
        let inputs = [
            ("x_traj", Tensor::randn(&[1, 4], 1.0, &mut rng)),
            ("f0", Tensor::randn(&[5, 4], 1.0, &mut rng)),
            ("f1", Tensor::randn(&[5, 4], 1.0, &mut rng)),
            ("fci.q", st.get("fci.q").unwrap().clone()),
            ("fci.k", st.get("fci.k").unwrap().clone()),
            ("fci.v", st.get("fci.v").unwrap().clone()),
            ("fci.o", st.get("fci.o").unwrap().clone()),
        ];
        let wout = Tensor::randn(&[1, 4], 1.0, &mut rng);
        let report = grad_check(
            "fci_expand",
            &inputs,
            |g: &mut Graph, v| {
                crate::nn::on_graph(g, &st, |s| {
                    for (i, n) in ["fci.q", "fci.k", "fci.v", "fci.o"].iter().enumerate() {
                        s.bind(n, v[3 + i]);
                    }
                    let out = fci_expand(s, v[0], &v[1..3])?;
                    let w = s.constant(wout.clone());
                    let both = s.g.sum_all(&out)?;
                    let p = s.g.mul(both, w)?;
                    Ok(s.g.sum(p))
                })
            },
            &GradCheckConfig { seed, ..GradCheckConfig::default() },
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }
}
