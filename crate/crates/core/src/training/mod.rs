//! Objectives, data mixing, optimisation and checkpoints.

pub mod checkpoint;
pub mod loss;
pub mod mix;
pub mod optim;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_video, MetricReport};
use crate::model::{infer, sample_loss, Stage, VideoExample};
use crate::nn::{ParamStore, Session};
use crate::reasoning::{build_sample, grounding_instruction, Sample, SampleKind, Vocabulary};
use crate::synthetic_data::{sample_seed, uniform_key_frames};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use loss::{stage1_loss, stage2_loss, LossTerms, LossWeights};
pub use mix::{mix_epoch, DataMix, Scheduled};
pub use optim::AdamW;

/// Batch-mean loss terms after one optimiser step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub text: f64,
    pub bce: f64,
    pub dice: f64,
    pub cls: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,total,text,bce,dice,cls";

pub fn loss_curve_csv(records: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{},{:?},{:?},{:?},{:?},{:?}", r.step, r.total, r.text, r.bce, r.dice, r.cls).unwrap();
    }
    out
}

struct SampleResult {
    total: f64,
    text: f64,
    bce: f64,
    dice: f64,
    cls: f64,
    grads: BTreeMap<String, Vec<f64>>,
}

/// Turn a scheduled entry into a concrete sample. Captioning falls back to
/// grounding when text-trajectory alignment is disabled.
fn make_sample(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    ex: &VideoExample,
    entry: Scheduled,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let kind = match entry.kind {
        SampleKind::Captioning if !cfg.bi_align => SampleKind::Grounding,
        SampleKind::Tracking if ex.len() < 2 => SampleKind::Grounding,
        k => k,
    };
    let n_key = cfg.train_key_frames.choose(rng).copied().unwrap_or(cfg.t_key);
    let keys = match kind {
        SampleKind::Tracking => vec![0],
        _ => uniform_key_frames(ex.len(), n_key),
    };
    let traj = (kind == SampleKind::Captioning).then(|| ex.trajectory.clone());
    build_sample(vocab, kind, &ex.description, entry.video, traj, keys)
}

fn run_sample(
    params: &ParamStore,
    cfg: &RunConfig,
    vocab: &Vocabulary,
    ex: &VideoExample,
    sample: &Sample,
    stage: Stage,
    weights: &LossWeights,
) -> Result<SampleResult> {
    let mut s = Session::new(params);
    let terms = sample_loss(&mut s, cfg, vocab, ex, sample, stage, weights)?;
    let grads = s.g.backward(terms.total)?;
    Ok(SampleResult {
        total: s.g.scalar(terms.total),
        text: terms.text,
        bce: terms.bce,
        dice: terms.dice,
        cls: terms.cls,
        grads: s.param_grads(&grads),
    })
}

/// Stateful optimisation loop over an in-memory dataset.
///
/// Per-sample passes may run on several threads; their results are reduced
/// in batch order, so the trajectory does not depend on the thread count.
pub struct Trainer<'a> {
    cfg: RunConfig,
    stage: Stage,
    vocab: &'a Vocabulary,
    videos: &'a [VideoExample],
    params: ParamStore,
    opt: AdamW,
    weights: LossWeights,
    mix: DataMix,
    schedule: Vec<Scheduled>,
    cursor: usize,
    epoch: u64,
    step: usize,
    pool: rayon::ThreadPool,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: &RunConfig,
        stage: Stage,
        vocab: &'a Vocabulary,
        videos: &'a [VideoExample],
        params: ParamStore,
    ) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::Input("no training samples".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let mix = match stage {
            Stage::One => DataMix::stills(),
            Stage::Two => DataMix::from_config(cfg)?,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Trainer {
            cfg: cfg.clone(),
            stage,
            vocab,
            videos,
            params,
            opt: AdamW::from_config(cfg),
            weights: LossWeights::from_config(cfg)?,
            mix,
            schedule: Vec::new(),
            cursor: 0,
            epoch: 0,
            step: 0,
            pool,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self) -> Result<Vec<Scheduled>> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        while batch.len() < self.cfg.batch_size {
            if self.cursor == self.schedule.len() {
                let seed = sample_seed(self.cfg.seed, 0x5EED_0000 + self.stage as u64, self.epoch);
                self.schedule = mix_epoch(self.videos.len(), &self.mix, seed)?;
                self.cursor = 0;
                self.epoch += 1;
            }
            batch.push(self.schedule[self.cursor]);
            self.cursor += 1;
        }
        Ok(batch)
    }

    pub fn step(&mut self) -> Result<LossRecord> {
        let step = self.step + 1;
        let batch = self.next_batch()?;
        let samples = batch
            .iter()
            .enumerate()
            .map(|(slot, &entry)| {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(self.cfg.seed, step as u64, slot as u64));
                make_sample(&self.cfg, self.vocab, &self.videos[entry.video], entry, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let (params, cfg, vocab, videos, stage, weights) =
            (&self.params, &self.cfg, self.vocab, self.videos, self.stage, &self.weights);
        let results: Vec<Result<SampleResult>> = self.pool.install(|| {
            samples
                .par_iter()
                .map(|s| run_sample(params, cfg, vocab, &videos[s.video], s, stage, weights))
                .collect()
        });

        let inv = 1.0 / samples.len() as f64;
        let mut rec = LossRecord {
            step,
            total: 0.0,
            text: 0.0,
            bce: 0.0,
            dice: 0.0,
            cls: 0.0,
        };
        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in results {
            let r = r.map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
                other => other,
            })?;
            rec.total += r.total * inv;
            rec.text += r.text * inv;
            rec.bce += r.bce * inv;
            rec.dice += r.dice * inv;
            rec.cls += r.cls * inv;
            for (name, g) in r.grads {
                let acc = grads.entry(name).or_insert_with(|| vec![0.0; g.len()]);
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += v * inv;
                }
            }
        }
        if !rec.total.is_finite() {
            return Err(Error::Numeric(format!("step {step}: non-finite loss {}", rec.total)));
        }
        if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!("step {step}: non-finite gradient for {name}")));
        }
        self.opt.step(&mut self.params, &grads)?;
        self.step = step;
        Ok(rec)
    }
}

/// Run `steps` optimiser steps and return the weights plus the loss curve.
pub fn train(
    cfg: &RunConfig,
    stage: Stage,
    vocab: &Vocabulary,
    videos: &[VideoExample],
    init: ParamStore,
    steps: usize,
) -> Result<(ParamStore, Vec<LossRecord>)> {
    let mut t = Trainer::new(cfg, stage, vocab, videos, init)?;
    let mut curve = Vec::with_capacity(steps);
    for _ in 0..steps {
        curve.push(t.step()?);
    }
    Ok((t.into_params(), curve))
}

/// Grounding-style inference on every video with `n_key` uniform key frames,
/// scored against the ground truth.
pub fn evaluate_model(
    params: &ParamStore,
    cfg: &RunConfig,
    vocab: &Vocabulary,
    videos: &[VideoExample],
    n_key: usize,
) -> Result<MetricReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let reports = pool.install(|| {
        videos
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let instr = vocab.tokenize(&grounding_instruction(&ex.description))?;
                let keys = uniform_key_frames(ex.len(), n_key);
                let out = infer(params, cfg, vocab, &ex.pixels, &instr, &keys)?;
                evaluate_video(&format!("video_{i:04}"), &out.masks, &ex.masks)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    MetricReport::new(reports)
}

#[cfg(test)]
mod tests;
