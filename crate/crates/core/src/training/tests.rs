use super::*;
use crate::model::init_params;
use crate::numerics::{Graph, Tensor, Var};
use crate::training::loss::MaskTarget;
use crate::synthetic_data::{generate_split, Split};

fn tiny_cfg() -> RunConfig {
    let mut c = RunConfig::default();
    c.height = 32;
    c.width = 32;
    c.frames = 4;
    c.channels = 16;
    c.attn_dim = 8;
    c.refine_width = 4;
    c.max_len = 64;
    c.train_videos = 3;
    c.val_videos = 2;
    c.max_objects = 2;
    c.batch_size = 2;
    c.train_key_frames = vec![1, 2];
    c.t_key = 2;
    c
}

fn videos(cfg: &RunConfig) -> Vec<VideoExample> {
    generate_split(cfg, Split::Train)
        .unwrap()
        .iter()
        .map(|r| VideoExample::from_rendered(r).unwrap())
        .collect()
}

// ---- mixing ----------------------------------------------------------------

fn kind_counts(s: &[Scheduled]) -> (usize, usize, usize) {
    let c = |k| s.iter().filter(|e| e.kind == k).count();
    (c(SampleKind::Tracking), c(SampleKind::Grounding), c(SampleKind::Captioning))
}

#[test]
fn default_mix_splits_ten_videos_two_four_four() {
    let mix = DataMix::new(0.2, 0.4, 0.4).unwrap();
    assert_eq!(kind_counts(&mix_epoch(10, &mix, 3).unwrap()), (2, 4, 4));
}

#[test]
fn five_videos_round_by_largest_remainder() {
    let mix = DataMix::new(0.2, 0.4, 0.4).unwrap();
    assert_eq!(kind_counts(&mix_epoch(5, &mix, 0).unwrap()), (1, 2, 2));
    // 7 × (0.2, 0.4, 0.4) = (1.4, 2.8, 2.8): the two 0.8 remainders win
    assert_eq!(kind_counts(&mix_epoch(7, &mix, 0).unwrap()), (1, 3, 3));
}

#[test]
fn epoch_covers_every_video_once() {
    let mix = DataMix::new(0.2, 0.4, 0.4).unwrap();
    let s = mix_epoch(37, &mix, 11).unwrap();
    let mut v: Vec<usize> = s.iter().map(|e| e.video).collect();
    v.sort_unstable();
    assert_eq!(v, (0..37).collect::<Vec<_>>());
}

#[test]
fn realised_counts_stay_within_one_of_quota() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let a: f64 = rng.gen_range(0.0..1.0);
        let b: f64 = rng.gen_range(0.0..1.0 - a);
        let mix = DataMix::new(a, b, 1.0 - a - b).unwrap();
        let n = rng.gen_range(1..200);
        let (t, g, c) = kind_counts(&mix_epoch(n, &mix, rng.gen()).unwrap());
        assert_eq!(t + g + c, n);
        for (got, f) in [(t, mix.tracking), (g, mix.grounding), (c, mix.captioning)] {
            assert!((got as f64 - f * n as f64).abs() < 1.0 + 1e-9, "{got} vs {f}·{n}");
        }
    }
}

#[test]
fn mixing_is_seeded() {
    let mix = DataMix::new(0.2, 0.4, 0.4).unwrap();
    assert_eq!(mix_epoch(50, &mix, 9).unwrap(), mix_epoch(50, &mix, 9).unwrap());
    assert_ne!(mix_epoch(50, &mix, 9).unwrap(), mix_epoch(50, &mix, 10).unwrap());
}

#[test]
fn empty_dataset_is_rejected() {
    let mix = DataMix::new(0.2, 0.4, 0.4).unwrap();
    assert!(matches!(mix_epoch(0, &mix, 0), Err(Error::Input(_))));
    assert!(DataMix::new(0.5, 0.5, 0.5).is_err());
    assert!(DataMix::new(-0.1, 0.6, 0.5).is_err());
}

// ---- optimiser ---------------------------------------------------------------

#[test]
fn adamw_matches_hand_computed_updates() {
    let mut p = ParamStore::new();
    p.insert("w", Tensor::row(vec![1.0, -2.0]));
    let mut opt = AdamW::new(0.1, 0.01, 0.9, 0.999, 1e-8);
    let g1 = vec![0.5, -4.0];
    let g2 = vec![-1.0, 2.0];
    opt.step(&mut p, &BTreeMap::from([("w".to_string(), g1.clone())])).unwrap();
    opt.step(&mut p, &BTreeMap::from([("w".to_string(), g2.clone())])).unwrap();

    let mut w = [1.0f64, -2.0];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    for (t, g) in [(1, &g1), (2, &g2)] {
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            w[i] -= 0.1 * (mh / (vh.sqrt() + 1e-8) + 0.01 * w[i]);
        }
    }
    let got = p.get("w").unwrap().data();
    assert!((got[0] - w[0]).abs() < 1e-15 && (got[1] - w[1]).abs() < 1e-15, "{got:?} vs {w:?}");
}

#[test]
fn adamw_rejects_unknown_or_misshapen_gradients() {
    let mut p = ParamStore::new();
    p.insert("w", Tensor::row(vec![1.0, 2.0]));
    let mut opt = AdamW::new(0.1, 0.0, 0.9, 0.999, 1e-8);
    assert!(opt.step(&mut p, &BTreeMap::from([("x".to_string(), vec![1.0])])).is_err());
    assert!(opt.step(&mut p, &BTreeMap::from([("w".to_string(), vec![1.0])])).is_err());
}

// ---- checkpoints -------------------------------------------------------------

#[test]
fn checkpoint_round_trips_at_f32_precision() {
    let cfg = tiny_cfg();
    let mut params = init_params(&cfg, &Vocabulary::synthetic(), 4);
    let back = decode_checkpoint(&encode_checkpoint(&params)).unwrap();
    checkpoint::round_to_f32(&mut params);
    assert_eq!(back, params);
    assert_eq!(encode_checkpoint(&back), encode_checkpoint(&params));
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let mut p = ParamStore::new();
    p.insert("a.w", Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
    let bytes = encode_checkpoint(&p);
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_checkpoint(&extra), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
    let mut ver = bytes;
    ver[8] = 9;
    assert!(matches!(decode_checkpoint(&ver), Err(Error::Format(_))));
}

#[test]
fn loss_csv_has_fixed_header_and_one_row_per_step() {
    let r = LossRecord {
        step: 3,
        total: 1.5,
        text: 1.0,
        bce: 0.25,
        dice: 0.5,
        cls: 0.0,
    };
    assert_eq!(loss_curve_csv(&[r]), "step,total,text,bce,dice,cls\n3,1.5,1.0,0.25,0.5,0.0\n");
}

// ---- loss contracts ----------------------------------------------------------

#[test]
fn closed_form_value_with_default_weights() {
    // uniform logits over V tokens, p = 0.5 everywhere, half the pixels set
    let v = 12;
    let n = 16;
    let mut g = Graph::new();
    let logits = g.leaf(Tensor::matrix(3, v, vec![0.7; 3 * v]).unwrap());
    let pred = g.leaf(Tensor::matrix(n, 1, vec![0.5; n]).unwrap());
    let gt: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let pairs = [(0, 1), (1, 4), (2, 7)];
    let terms = stage1_loss(&mut g, Some((logits, &pairs)), &[(pred, &gt)], &LossWeights::default()).unwrap();
    let ce = (v as f64).ln();
    let bce = std::f64::consts::LN_2;
    let dice = 1.0 - (2.0 * 4.0 + 1.0) / (8.0 + 8.0 + 1.0);
    let want = 1.0 * ce + 1.0 * (2.0 * bce + 0.5 * dice);
    assert!((g.scalar(terms.total) - want).abs() < 1e-12, "{} vs {want}", g.scalar(terms.total));
}

#[test]
fn absent_frames_get_exactly_zero_mask_gradient() {
    let mut g = Graph::new();
    let preds: Vec<Var> = (0..3)
        .map(|i| g.leaf(Tensor::matrix(4, 1, vec![0.2 + 0.1 * i as f64; 4]).unwrap()))
        .collect();
    let pres: Vec<Var> = (0..3).map(|_| g.leaf(Tensor::matrix(1, 1, vec![0.6]).unwrap())).collect();
    let gts = [vec![1.0, 0.0, 1.0, 0.0], vec![1.0; 4], vec![0.0, 1.0, 1.0, 1.0]];
    let masks: Vec<MaskTarget> = preds.iter().zip(&gts).map(|(&p, gt)| (p, gt.as_slice())).collect();
    let terms = stage2_loss(&mut g, None, &pres, &[true, false, true], &masks, &LossWeights::default()).unwrap();
    let grads = g.backward(terms.total).unwrap();
    assert!(grads.get(preds[1]).map_or(true, |d| d.iter().all(|&x| x == 0.0)));
    assert!(grads.get(preds[0]).unwrap().iter().any(|&x| x != 0.0));

    // the mask term averages over frames 0 and 2 only
    let bce = |p: f64, gt: &[f64]| -gt.iter().map(|&y| y * p.ln() + (1.0 - y) * (1.0 - p).ln()).sum::<f64>() / 4.0;
    let want = (bce(0.2, &gts[0]) + bce(0.4, &gts[2])) / 2.0;
    assert!((terms.bce - want).abs() < 1e-12);
}

// ---- the loop ----------------------------------------------------------------

#[test]
fn zero_learning_rate_keeps_the_initial_weights() {
    let mut cfg = tiny_cfg();
    cfg.lr = 0.0;
    let vocab = Vocabulary::synthetic();
    let vids = videos(&cfg);
    let init = init_params(&cfg, &vocab, 1);
    let (after, curve) = train(&cfg, Stage::Two, &vocab, &vids, init.clone(), 3).unwrap();
    assert_eq!(after, init);
    assert_eq!(curve.len(), 3);
    assert_eq!(curve.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn runs_are_reproducible_and_thread_count_independent() {
    let cfg = tiny_cfg();
    let vocab = Vocabulary::synthetic();
    let vids = videos(&cfg);
    let init = init_params(&cfg, &vocab, 2);
    let (p1, c1) = train(&cfg, Stage::Two, &vocab, &vids, init.clone(), 4).unwrap();
    let (p2, c2) = train(&cfg, Stage::Two, &vocab, &vids, init.clone(), 4).unwrap();
    assert_eq!(loss_curve_csv(&c1), loss_curve_csv(&c2));
    assert_eq!(encode_checkpoint(&p1), encode_checkpoint(&p2));
    let mut threaded = cfg.clone();
    threaded.threads = 3;
    let (p3, c3) = train(&threaded, Stage::Two, &vocab, &vids, init, 4).unwrap();
    assert_eq!(c1, c3);
    assert_eq!(p1, p3);
}

#[test]
fn stage_one_trains_on_stills() {
    let mut cfg = tiny_cfg();
    cfg.stills = 3;
    let vocab = Vocabulary::synthetic();
    let stills: Vec<VideoExample> = generate_split(&cfg, Split::Stills)
        .unwrap()
        .iter()
        .map(|r| VideoExample::from_rendered(r).unwrap())
        .collect();
    assert!(stills.iter().all(|v| v.len() == 1));
    let (_, curve) = train(&cfg, Stage::One, &vocab, &stills, init_params(&cfg, &vocab, 0), 2).unwrap();
    assert!(curve.iter().all(|r| r.cls == 0.0 && r.total.is_finite() && r.text > 0.0));
}

#[test]
fn non_finite_loss_names_the_step() {
    let cfg = tiny_cfg();
    let vocab = Vocabulary::synthetic();
    let vids = videos(&cfg);
    let mut init = init_params(&cfg, &vocab, 0);
    init.get_mut("mg.pres.b").unwrap().data_mut()[0] = f64::NAN;
    let e = train(&cfg, Stage::Two, &vocab, &vids, init, 2).unwrap_err();
    assert!(matches!(e, Error::Numeric(_)) && e.to_string().contains("step 1"), "{e}");
}

#[test]
fn tracking_samples_carry_no_text_loss() {
    let mut cfg = tiny_cfg();
    (cfg.mix_tracking, cfg.mix_grounding, cfg.mix_captioning) = (1.0, 0.0, 0.0);
    let vocab = Vocabulary::synthetic();
    let vids = videos(&cfg);
    let (_, curve) = train(&cfg, Stage::Two, &vocab, &vids, init_params(&cfg, &vocab, 0), 2).unwrap();
    assert!(curve.iter().all(|r| r.text == 0.0 && r.cls > 0.0));
}

#[test]
fn overfits_a_single_grounding_sample() {
    let mut cfg = tiny_cfg();
    cfg.train_videos = 1;
    cfg.batch_size = 1;
    (cfg.mix_tracking, cfg.mix_grounding, cfg.mix_captioning) = (0.0, 1.0, 0.0);
    cfg.lr = 3e-3;
    let vocab = Vocabulary::synthetic();
    let vids = videos(&cfg);
    let mut t = Trainer::new(&cfg, Stage::Two, &vocab, &vids, init_params(&cfg, &vocab, 0)).unwrap();
    let mut last = f64::INFINITY;
    while t.steps_done() < 1000 && last >= 0.1 {
        last = t.step().unwrap().total;
    }
    assert!(last < 0.1, "loss {last} after {} steps", t.steps_done());
}
