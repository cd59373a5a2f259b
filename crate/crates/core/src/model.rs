//! The full pipeline: frame encoder, reasoner, trajectory encoder, FCI and
//! mask generator wired together for training and inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{self, encode_frame};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fci::{self, frame_tokens};
use crate::formats::Mask;
use crate::mask_generator::{self, binarize, final_probabilities, segment_video, track_video};
use crate::nn::{ParamStore, Session};
use crate::numerics::{Tensor, Var};
use crate::reasoning::{self, extract_trj_token, generate, reasoner_forward, teacher_forcing, Sample, SampleKind, Vocabulary};
use crate::synthetic_data::{RenderedSample, StoredSample};
use crate::trajectory_encoder::{self, encode_trajectory, ObjectTrajectory};
use crate::training::loss::{stage1_loss, stage2_loss, LossTerms, LossWeights, MaskTarget};

/// Fresh parameters for every component, deterministic per seed.
pub fn init_params(cfg: &RunConfig, vocab: &Vocabulary, seed: u64) -> ParamStore {
    let mut st = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    backbone::init(&mut st, cfg, &mut rng);
    trajectory_encoder::init(&mut st, cfg, &mut rng);
    reasoning::transformer::init(&mut st, cfg, vocab.len(), &mut rng);
    fci::init(&mut st, cfg, &mut rng);
    mask_generator::init(&mut st, cfg, &mut rng);
    st
}

/// A video held in memory as model inputs plus ground truth.
#[derive(Clone, Debug)]
pub struct VideoExample {
    /// Per frame, `HW × 3` values in `[0, 1]`.
    pub pixels: Vec<Tensor>,
    pub masks: Vec<Mask>,
    pub presence: Vec<bool>,
    pub description: String,
    /// Target boxes from the ground-truth masks.
    pub trajectory: ObjectTrajectory,
}

impl VideoExample {
    fn build(frames: Vec<Vec<f64>>, masks: Vec<Mask>, description: String) -> Result<Self> {
        let (h, w) = masks
            .first()
            .map(|m| (m.height, m.width))
            .ok_or_else(|| Error::Input("video without frames".into()))?;
        let pixels = frames
            .into_iter()
            .map(|f| Tensor::matrix(h * w, 3, f))
            .collect::<Result<Vec<_>>>()?;
        let data: Vec<Vec<bool>> = masks.iter().map(|m| m.data.clone()).collect();
        let trajectory = ObjectTrajectory::from_masks(&data, h, w)?;
        let presence = masks.iter().map(|m| !m.is_empty()).collect();
        Ok(VideoExample {
            pixels,
            masks,
            presence,
            description,
            trajectory,
        })
    }

    pub fn from_rendered(r: &RenderedSample) -> Result<Self> {
        Self::build(
            r.frames.iter().map(|f| f.to_unit()).collect(),
            r.masks.clone(),
            r.description.clone(),
        )
    }

    pub fn from_stored(s: &StoredSample) -> Result<Self> {
        Self::build(
            s.frames.iter().map(|f| f.to_unit()).collect(),
            s.masks.clone(),
            s.manifest.description.clone(),
        )
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Stills, no presence term.
    One,
    /// Videos, presence-gated mask loss and presence classification.
    Two,
}

/// Forward one training sample and assemble its loss.
pub fn sample_loss(
    s: &mut Session,
    cfg: &RunConfig,
    vocab: &Vocabulary,
    ex: &VideoExample,
    sample: &Sample,
    stage: Stage,
    weights: &LossWeights,
) -> Result<LossTerms> {
    let feats = ex
        .pixels
        .iter()
        .map(|p| encode_frame(s, cfg, p))
        .collect::<Result<Vec<_>>>()?;
    let px: Vec<Var> = ex.pixels.iter().map(|p| s.constant(p.clone())).collect();
    let gts: Vec<Vec<f64>> = ex.masks.iter().map(Mask::as_f64).collect();

    if sample.kind == SampleKind::Tracking {
        let preds = track_video(s, cfg, &feats, &px, &gts[0])?;
        let probs: Vec<Var> = preds.iter().map(|p| s.g.sigmoid(p.logits)).collect();
        let masks: Vec<MaskTarget> = probs.iter().zip(&gts[1..]).map(|(&p, g)| (p, g.as_slice())).collect();
        let pres: Vec<Var> = preds.iter().map(|p| p.presence).collect();
        return stage2_loss(&mut s.g, None, &pres, &ex.presence[1..], &masks, weights);
    }

    let keys = &sample.key_frames;
    if keys.is_empty() || keys.iter().any(|&k| k >= ex.len()) {
        return Err(Error::Input(format!("key frames {keys:?} for a {}-frame video", ex.len())));
    }
    let visual: Vec<Var> = keys.iter().map(|&k| s.g.mean_rows(feats[k])).collect();
    let traj = match (sample.kind, &sample.trajectory) {
        (SampleKind::Captioning, Some(t)) => Some(encode_trajectory(s, cfg, &feats, t)?),
        (SampleKind::Captioning, None) => {
            return Err(Error::Input("captioning sample without trajectory".into()))
        }
        _ => None,
    };
    let (ids, pairs) = teacher_forcing(vocab, &sample.input_ids, &sample.target_ids);
    let out = reasoner_forward(s, cfg, vocab, &visual, &ids, traj)?;
    let x_traj = extract_trj_token(s, &out, &ids, vocab.trj())?;
    let key_feats: Vec<Var> = keys.iter().map(|&k| feats[k]).collect();
    let tokens = frame_tokens(s, cfg, x_traj, &key_feats)?;
    let key_tokens: Vec<(usize, Var)> = keys.iter().copied().zip(tokens).collect();
    let preds = segment_video(s, cfg, &feats, &px, &key_tokens)?;
    let probs: Vec<Var> = preds.iter().map(|p| s.g.sigmoid(p.logits)).collect();
    let masks: Vec<MaskTarget> = probs.iter().zip(&gts).map(|(&p, g)| (p, g.as_slice())).collect();
    let text = Some((out.logits, pairs.as_slice()));
    match stage {
        Stage::One => stage1_loss(&mut s.g, text, &masks, weights),
        Stage::Two => {
            let pres: Vec<Var> = preds.iter().map(|p| p.presence).collect();
            stage2_loss(&mut s.g, text, &pres, &ex.presence, &masks, weights)
        }
    }
}

/// Result of grounding-style inference on one video.
#[derive(Clone, Debug)]
pub struct Inference {
    pub response: Vec<usize>,
    pub presence: Vec<f64>,
    /// Presence-gated per-pixel probabilities.
    pub probabilities: Vec<Vec<f64>>,
    pub masks: Vec<Mask>,
}

/// Generate the response to `instruction`, then segment every frame.
pub fn infer(
    params: &ParamStore,
    cfg: &RunConfig,
    vocab: &Vocabulary,
    pixels: &[Tensor],
    instruction: &[usize],
    key_frames: &[usize],
) -> Result<Inference> {
    if key_frames.is_empty() || key_frames.iter().any(|&k| k >= pixels.len()) {
        return Err(Error::Input(format!("key frames {key_frames:?} for a {}-frame video", pixels.len())));
    }
    let mut s = Session::inference(params);
    let feats = pixels
        .iter()
        .map(|p| encode_frame(&mut s, cfg, p))
        .collect::<Result<Vec<_>>>()?;
    let visual: Vec<Var> = key_frames.iter().map(|&k| s.g.mean_rows(feats[k])).collect();
    let visual_t: Vec<Tensor> = visual.iter().map(|&v| s.g.value(v).clone()).collect();
    let (ids, response) = generate(params, cfg, vocab, &visual_t, instruction)?;
    let out = reasoner_forward(&mut s, cfg, vocab, &visual, &ids, None)?;
    let x_traj = extract_trj_token(&mut s, &out, &ids, vocab.trj())?;
    let key_feats: Vec<Var> = key_frames.iter().map(|&k| feats[k]).collect();
    let tokens = frame_tokens(&mut s, cfg, x_traj, &key_feats)?;
    let key_tokens: Vec<(usize, Var)> = key_frames.iter().copied().zip(tokens).collect();
    let px: Vec<Var> = pixels.iter().map(|p| s.constant(p.clone())).collect();
    let preds = segment_video(&mut s, cfg, &feats, &px, &key_tokens)?;
    let mut presence = Vec::with_capacity(preds.len());
    let mut probabilities = Vec::with_capacity(preds.len());
    let mut masks = Vec::with_capacity(preds.len());
    for p in &preds {
        let pr = s.g.value(p.presence).data()[0];
        let probs = final_probabilities(s.g.value(p.logits), pr, cfg.presence_threshold);
        masks.push(Mask::new(cfg.height, cfg.width, binarize(&probs))?);
        presence.push(pr);
        probabilities.push(probs);
    }
    Ok(Inference {
        response,
        presence,
        probabilities,
        masks,
    })
}
