//! Trajectory encoder: ROI features of an object's present frames are
//! pooled, arranged into a fixed number of slots, concatenated and projected
//! to a single C-vector. [`insert_placeholder`] splices that vector into a
//! captioning instruction.

use std::rc::Rc;

use rand::Rng;

use crate::config::{RunConfig, TrajMode};
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, ParamStore, Session};
use crate::numerics::{NormBox, ResamplePlan, Tensor, Var};

/// Per-frame boxes of one object; `None` where it is absent.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTrajectory {
    boxes: Vec<Option<NormBox>>,
}

impl ObjectTrajectory {
    pub fn new(boxes: Vec<Option<NormBox>>) -> Result<Self> {
        if boxes.iter().all(Option::is_none) {
            return Err(Error::Input("trajectory has no present frame".into()));
        }
        Ok(ObjectTrajectory { boxes })
    }

    /// Tight normalised bounding boxes of per-frame binary masks.
    pub fn from_masks(masks: &[Vec<bool>], h: usize, w: usize) -> Result<Self> {
        let boxes = masks
            .iter()
            .map(|m| tight_box(m, h, w))
            .collect::<Result<Vec<_>>>()?;
        Self::new(boxes)
    }

    pub fn boxes(&self) -> &[Option<NormBox>] {
        &self.boxes
    }

    pub fn frames(&self) -> usize {
        self.boxes.len()
    }

    pub fn presence(&self) -> Vec<bool> {
        self.boxes.iter().map(Option::is_some).collect()
    }

    /// Number of frames in which the object is present.
    pub fn n_present(&self) -> usize {
        self.boxes.iter().filter(|b| b.is_some()).count()
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, &NormBox)> {
        self.boxes
            .iter()
            .enumerate()
            .filter_map(|(t, b)| b.as_ref().map(|b| (t, b)))
    }
}

/// Smallest box covering every set pixel, in normalised coordinates.
pub fn tight_box(mask: &[bool], h: usize, w: usize) -> Result<Option<NormBox>> {
    if mask.len() != h * w {
        return Err(shape_err!("mask has {} pixels, expected {}", mask.len(), h * w));
    }
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (y, x) = (i / w, i % w);
        bounds = Some(match bounds {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }
    bounds
        .map(|(x0, y0, x1, y1)| {
            NormBox::new(
                x0 as f64 / w as f64,
                y0 as f64 / h as f64,
                (x1 + 1) as f64 / w as f64,
                (y1 + 1) as f64 / h as f64,
            )
        })
        .transpose()
}

/// Which present frame fills each slot: uniform subsampling when there are
/// more present frames than slots, trailing zero padding (`None`) otherwise.
pub fn slot_assignment(n_present: usize, n_slots: usize) -> Vec<Option<usize>> {
    if n_present >= n_slots {
        (0..n_slots).map(|i| Some(i * n_present / n_slots)).collect()
    } else {
        (0..n_slots)
            .map(|i| (i < n_present).then_some(i))
            .collect()
    }
}

pub fn slot_width(cfg: &RunConfig) -> usize {
    match cfg.traj_mode {
        TrajMode::Pooled => cfg.channels,
        TrajMode::Flatten => cfg.roi_size * cfg.roi_size * cfg.channels,
    }
}

pub fn init(store: &mut ParamStore, cfg: &RunConfig, rng: &mut impl Rng) {
    nn::init_linear(store, "traj.proj", cfg.n_slots * slot_width(cfg), cfg.channels, rng);
    nn::init_linear(store, "traj.embed", cfg.channels, cfg.channels, rng);
}

/// `f_traj = Linear(concat(slot features))`, returned as a `1 × C` row.
pub fn encode_trajectory(
    s: &mut Session,
    cfg: &RunConfig,
    frame_features: &[Var],
    traj: &ObjectTrajectory,
) -> Result<Var> {
    if frame_features.len() != traj.frames() {
        return Err(shape_err!(
            "{} feature maps for a {}-frame trajectory",
            frame_features.len(),
            traj.frames()
        ));
    }
    let (gh, gw) = cfg.grid();
    let c = cfg.channels;
    let p = cfg.roi_size;
    let width = slot_width(cfg);
    let mut per_frame = Vec::with_capacity(traj.n_present());
    for (t, b) in traj.present() {
        let plan = Rc::new(ResamplePlan::roi_align(gh, gw, b, p)?);
        let roi = s.g.resample(frame_features[t], plan)?;
        let v = match cfg.traj_mode {
            TrajMode::Pooled => s.g.mean_rows(roi),
            TrajMode::Flatten => s.g.reshape(roi, &[1, p * p * c])?,
        };
        per_frame.push(v);
    }
    let zero = s.constant(Tensor::zeros(&[1, width]));
    let slots: Vec<Var> = slot_assignment(per_frame.len(), cfg.n_slots)
        .into_iter()
        .map(|a| a.map_or(zero, |i| per_frame[i]))
        .collect();
    let stacked = s.g.concat_rows(&slots)?;
    let flat = s.g.reshape(stacked, &[1, cfg.n_slots * width])?;
    nn::linear(s, "traj.proj", flat)
}

/// Embed `ids` through `table`, replacing the single placeholder position
/// with the projected trajectory feature.
pub fn insert_placeholder(
    s: &mut Session,
    table: Var,
    ids: &[usize],
    placeholder: usize,
    f_traj: Var,
) -> Result<Var> {
    let slots: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| id == placeholder)
        .map(|(i, _)| i)
        .collect();
    let pos = match slots.as_slice() {
        [p] => *p,
        [] => return Err(Error::Input("instruction has no placeholder".into())),
        _ => {
            return Err(Error::Input(format!(
                "instruction has {} placeholders",
                slots.len()
            )))
        }
    };
    let slot = nn::linear(s, "traj.embed", f_traj)?;
    let mut parts = Vec::with_capacity(3);
    if pos > 0 {
        parts.push(s.g.gather_rows(table, &ids[..pos])?);
    }
    parts.push(slot);
    if pos + 1 < ids.len() {
        parts.push(s.g.gather_rows(table, &ids[pos + 1..])?);
    }
    s.g.concat_rows(&parts)
}

#[cfg(test)]
mod tests;
