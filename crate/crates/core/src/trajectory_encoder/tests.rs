use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{grad_check, GradCheckConfig, Graph};

fn small_cfg() -> RunConfig {
    RunConfig {
        height: 16,
        width: 16,
        patch: 4,
        channels: 3,
        n_slots: 4,
        roi_size: 2,
        ..RunConfig::default()
    }
}

fn store(cfg: &RunConfig, seed: u64) -> ParamStore {
    let mut st = ParamStore::new();
    init(&mut st, cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    // non-zero biases so the oracle checks them too
    for (name, t) in st.iter_mut() {
        if name.ends_with(".b") {
            t.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = 0.1 * i as f64 - 0.05);
        }
    }
    st
}

fn encode(st: &ParamStore, cfg: &RunConfig, feats: &[Tensor], traj: &ObjectTrajectory) -> Vec<f64> {
    let mut s = Session::new(st);
    let vars: Vec<Var> = feats.iter().map(|f| s.constant(f.clone())).collect();
    let out = encode_trajectory(&mut s, cfg, &vars, traj).unwrap();
    s.g.value(out).data().to_vec()
}

/// Scalar oracle: bilinear bin-centre ROI samples, spatial mean, slots,
/// matrix–vector product.
fn oracle(st: &ParamStore, cfg: &RunConfig, feats: &[Tensor], traj: &ObjectTrajectory) -> Vec<f64> {
    let (gh, gw) = cfg.grid();
    let c = cfg.channels;
    let p = cfg.roi_size;
    let sample = |f: &Tensor, py: f64, px: f64, ch: usize| {
        let fy = (py - 0.5).clamp(0.0, (gh - 1) as f64);
        let fx = (px - 0.5).clamp(0.0, (gw - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(gh - 1), (x0 + 1).min(gw - 1));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let at = |y: usize, x: usize| f.get2(y * gw + x, ch);
        (at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx) * (1.0 - ty)
            + (at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx) * ty
    };
    let mut pooled: Vec<Vec<f64>> = Vec::new();
    for (t, b) in traj.present() {
        let mut v = vec![0.0; c];
        for i in 0..p {
            for j in 0..p {
                let py = b.y0 * gh as f64 + (i as f64 + 0.5) * (b.y1 - b.y0) * gh as f64 / p as f64;
                let px = b.x0 * gw as f64 + (j as f64 + 0.5) * (b.x1 - b.x0) * gw as f64 / p as f64;
                for (ch, vc) in v.iter_mut().enumerate() {
                    *vc += sample(&feats[t], py, px, ch) / (p * p) as f64;
                }
            }
        }
        pooled.push(v);
    }
    let n = pooled.len();
    let mut flat = Vec::new();
    for i in 0..cfg.n_slots {
        let src = if n >= cfg.n_slots { Some(i * n / cfg.n_slots) } else if i < n { Some(i) } else { None };
        match src {
            Some(k) => flat.extend_from_slice(&pooled[k]),
            None => flat.extend(std::iter::repeat(0.0).take(c)),
        }
    }
    let w = st.get("traj.proj.w").unwrap();
    let b = st.get("traj.proj.b").unwrap();
    (0..c)
        .map(|j| b.data()[j] + flat.iter().enumerate().map(|(k, x)| x * w.get2(k, j)).sum::<f64>())
        .collect()
}

fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> Option<NormBox> {
    Some(NormBox::new(x0, y0, x1, y1).unwrap())
}

#[test]
fn zero_features_and_bias_give_zero() {
    let cfg = small_cfg();
    let mut st = store(&cfg, 1);
    st.get_mut("traj.proj.b").unwrap().data_mut().fill(0.0);
    let feats = vec![Tensor::zeros(&[16, 3]); 3];
    let traj = ObjectTrajectory::new(vec![bx(0.1, 0.1, 0.5, 0.5), None, bx(0.2, 0.3, 0.9, 0.8)]).unwrap();
    assert!(encode(&st, &cfg, &feats, &traj).iter().all(|&x| x == 0.0));
}

#[test]
fn single_constant_frame_matches_linear_oracle() {
    let cfg = small_cfg();
    let st = store(&cfg, 2);
    let c = 0.7;
    let feats = vec![Tensor::zeros(&[16, 3]), Tensor::full(&[16, 3], c)];
    let traj = ObjectTrajectory::new(vec![None, bx(0.25, 0.25, 0.75, 0.5)]).unwrap();
    let got = encode(&st, &cfg, &feats, &traj);
    // W applied to [c, c, c, 0, ...] plus bias
    let w = st.get("traj.proj.w").unwrap();
    let b = st.get("traj.proj.b").unwrap();
    for j in 0..3 {
        let expect = b.data()[j] + (0..3).map(|k| c * w.get2(k, j)).sum::<f64>();
        assert!((got[j] - expect).abs() < 1e-12);
    }
}

#[test]
fn random_trajectories_match_oracle() {
    let cfg = small_cfg();
    let st = store(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let frames = rng.gen_range(1..7);
        let feats: Vec<Tensor> = (0..frames).map(|_| Tensor::randn(&[16, 3], 1.0, &mut rng)).collect();
        let boxes: Vec<Option<NormBox>> = (0..frames)
            .map(|_| {
                rng.gen_bool(0.7).then(|| {
                    let x0 = rng.gen_range(0.0..0.5);
                    let y0 = rng.gen_range(0.0..0.5);
                    NormBox::new(x0, y0, x0 + rng.gen_range(0.05..0.5), y0 + rng.gen_range(0.05..0.5)).unwrap()
                })
            })
            .collect();
        let Ok(traj) = ObjectTrajectory::new(boxes) else { continue };
        let got = encode(&st, &cfg, &feats, &traj);
        let want = oracle(&st, &cfg, &feats, &traj);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn duplicated_frame_agrees_with_oracle() {
    let cfg = small_cfg();
    let st = store(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = Tensor::randn(&[16, 3], 1.0, &mut rng);
    let b = bx(0.2, 0.1, 0.6, 0.7);
    let traj = ObjectTrajectory::new(vec![b, b]).unwrap();
    let feats = vec![f.clone(), f];
    let got = encode(&st, &cfg, &feats, &traj);
    let want = oracle(&st, &cfg, &feats, &traj);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn many_frames_are_subsampled_into_slots() {
    assert_eq!(slot_assignment(2, 4), vec![Some(0), Some(1), None, None]);
    assert_eq!(slot_assignment(4, 4), vec![Some(0), Some(1), Some(2), Some(3)]);
    assert_eq!(slot_assignment(10, 4), vec![Some(0), Some(2), Some(5), Some(7)]);
}

#[test]
fn exterior_features_do_not_matter() {
    // Bin-centre bilinear samples read at most one cell past the box edge,
    // so "exterior" is the complement of the box widened by that halo.
    let cfg = small_cfg();
    let st = store(&cfg, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (gh, gw) = cfg.grid();
    for _ in 0..20 {
        let x0 = rng.gen_range(0.0..0.6);
        let y0 = rng.gen_range(0.0..0.6);
        let b = NormBox::new(x0, y0, x0 + rng.gen_range(0.1..0.4), y0 + rng.gen_range(0.1..0.4)).unwrap();
        let traj = ObjectTrajectory::new(vec![Some(b)]).unwrap();
        let f = Tensor::randn(&[16, 3], 1.0, &mut rng);
        let base = encode(&st, &cfg, &[f.clone()], &traj);
        let lo_x = (b.x0 * gw as f64 - 0.5).floor();
        let hi_x = (b.x1 * gw as f64 - 0.5).ceil();
        let lo_y = (b.y0 * gh as f64 - 0.5).floor();
        let hi_y = (b.y1 * gh as f64 - 0.5).ceil();
        let mut g = f.clone();
        for y in 0..gh {
            for x in 0..gw {
                let inside = (x as f64) >= lo_x && (x as f64) <= hi_x && (y as f64) >= lo_y && (y as f64) <= hi_y;
                if !inside {
                    for ch in 0..3 {
                        g.data_mut()[(y * gw + x) * 3 + ch] = rng.gen_range(-50.0..50.0);
                    }
                }
            }
        }
        let other = encode(&st, &cfg, &[g], &traj);
        for (a, b) in base.iter().zip(&other) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn permuting_absent_frames_is_invisible() {
    let cfg = small_cfg();
    let st = store(&cfg, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let feats: Vec<Tensor> = (0..5).map(|_| Tensor::randn(&[16, 3], 1.0, &mut rng)).collect();
    let traj = ObjectTrajectory::new(vec![None, bx(0.1, 0.1, 0.4, 0.6), None, None, bx(0.3, 0.2, 0.9, 0.9)]).unwrap();
    let base = encode(&st, &cfg, &feats, &traj);
    // swap absent frames 0 and 3, and 2 and 3
    let mut f2 = feats.clone();
    f2.swap(0, 3);
    f2.swap(2, 3);
    assert_eq!(base, encode(&st, &cfg, &f2, &traj));
}

#[test]
fn encoder_errors() {
    assert!(matches!(ObjectTrajectory::new(vec![None, None]), Err(Error::Input(_))));
    let cfg = small_cfg();
    let st = store(&cfg, 11);
    let traj = ObjectTrajectory::new(vec![bx(0.1, 0.1, 0.4, 0.6), None]).unwrap();
    let mut s = Session::new(&st);
    let v = s.constant(Tensor::zeros(&[16, 3]));
    assert!(matches!(encode_trajectory(&mut s, &cfg, &[v], &traj), Err(Error::Shape(_))));
}

#[test]
fn tight_boxes_from_masks() {
    let mut m = vec![false; 16];
    m[5] = true; // (1,1)
    m[10] = true; // (2,2)
    let b = tight_box(&m, 4, 4).unwrap().unwrap();
    assert_eq!(b.as_array(), [0.25, 0.25, 0.75, 0.75]);
    assert!(tight_box(&[false; 16], 4, 4).unwrap().is_none());
}

#[test]
fn encoder_gradients_check() {
    let cfg = small_cfg();
    let st = store(&cfg, 12);
    let traj = ObjectTrajectory::new(vec![bx(0.1, 0.2, 0.6, 0.7), bx(0.3, 0.1, 0.9, 0.5), None]).unwrap();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
        let feats: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[16, 3], 1.0, &mut rng)).collect();
        let wout = Tensor::randn(&[1, 3], 1.0, &mut rng);
        let inputs = [
            ("f0", feats[0].clone()),
            ("f1", feats[1].clone()),
            ("f2", feats[2].clone()),
            ("traj.proj.w", st.get("traj.proj.w").unwrap().clone()),
        ];
        let report = grad_check(
            "encode_trajectory",
            &inputs,
            |g: &mut Graph, v| {
                crate::nn::on_graph(g, &st, |s| {
                    s.bind("traj.proj.w", v[3]);
                    let out = encode_trajectory(s, &cfg, &v[..3], &traj)?;
                    let w = s.constant(wout.clone());
                    let p = s.g.mul(out, w)?;
                    Ok(s.g.sum(p))
                })
            },
            &GradCheckConfig { seed, ..GradCheckConfig::default() },
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }
}

// ---- insert_placeholder ----------------------------------------------------

#[test]
fn placeholder_only_changes_its_slot() {
    let cfg = small_cfg();
    let st = store(&cfg, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let table = Tensor::randn(&[10, 3], 1.0, &mut rng);
    let ids = [1, 2, 3, 4, 5, 6, 7];
    let f = Tensor::randn(&[1, 3], 1.0, &mut rng);
    let mut s = Session::new(&st);
    let tv = s.constant(table.clone());
    let fv = s.constant(f.clone());
    let out = insert_placeholder(&mut s, tv, &ids, 4, fv).unwrap();
    let o = s.g.value(out);
    assert_eq!(o.shape(), &[7, 3]);
    for (pos, &id) in ids.iter().enumerate() {
        if pos != 3 {
            assert_eq!(o.row_slice(pos), table.row_slice(id));
        }
    }
    let w = st.get("traj.embed.w").unwrap();
    let b = st.get("traj.embed.b").unwrap();
    for j in 0..3 {
        let expect = b.data()[j] + (0..3).map(|k| f.data()[k] * w.get2(k, j)).sum::<f64>();
        assert!((o.get2(3, j) - expect).abs() < 1e-12);
    }
}

#[test]
fn zero_trajectory_gives_zero_slot() {
    let cfg = small_cfg();
    let mut st = store(&cfg, 15);
    st.get_mut("traj.embed.b").unwrap().data_mut().fill(0.0);
    let mut s = Session::new(&st);
    let tv = s.constant(Tensor::full(&[6, 3], 1.0));
    let fv = s.constant(Tensor::zeros(&[1, 3]));
    let out = insert_placeholder(&mut s, tv, &[0, 5, 1], 5, fv).unwrap();
    assert_eq!(s.g.value(out).row_slice(1), &[0.0, 0.0, 0.0]);
}

#[test]
fn placeholder_count_must_be_one() {
    let cfg = small_cfg();
    let st = store(&cfg, 16);
    let mut s = Session::new(&st);
    let tv = s.constant(Tensor::full(&[6, 3], 1.0));
    let fv = s.constant(Tensor::zeros(&[1, 3]));
    assert!(matches!(insert_placeholder(&mut s, tv, &[0, 1, 2], 5, fv), Err(Error::Input(_))));
    assert!(matches!(insert_placeholder(&mut s, tv, &[5, 1, 5], 5, fv), Err(Error::Input(_))));
}
