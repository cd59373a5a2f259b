//! Procedural videos of moving shapes with ground-truth masks and
//! templated descriptions.

mod dataset;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use dataset::{frame_name, load_sample, mask_name, save_sample, uniform_key_frames, Manifest, SampleKindTag, StoredSample};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{Frame, Mask};
use crate::reasoning::vocab::{COLORS, SHAPES, SIZES};

/// Palette matching [`COLORS`].
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 40, 40],
    [40, 200, 60],
    [50, 80, 235],
    [235, 220, 40],
    [40, 220, 225],
    [220, 50, 220],
    [245, 140, 30],
    [245, 245, 245],
];

pub const BACKGROUND: [u8; 3] = [24, 24, 28];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        SHAPES[self as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    Still,
    /// Constant velocity in pixels per frame.
    Linear { vx: f64, vy: f64 },
    /// `offset = amp · sin(omega · t + phase)` along one axis.
    Bounce { horizontal: bool, amp: f64, omega: f64, phase: f64 },
}

impl Motion {
    pub fn offset(&self, t: usize) -> (f64, f64) {
        let t = t as f64;
        match *self {
            Motion::Still => (0.0, 0.0),
            Motion::Linear { vx, vy } => (vx * t, vy * t),
            Motion::Bounce { horizontal, amp, omega, phase } => {
                let d = amp * (omega * t + phase).sin();
                if horizontal {
                    (d, 0.0)
                } else {
                    (0.0, d)
                }
            }
        }
    }

    pub fn phrase(&self) -> &'static str {
        match *self {
            Motion::Still => "staying still",
            Motion::Linear { vx, vy } if vx.abs() >= vy.abs() => {
                if vx < 0.0 {
                    "moving left"
                } else {
                    "moving right"
                }
            }
            Motion::Linear { vy, .. } => {
                if vy < 0.0 {
                    "moving up"
                } else {
                    "moving down"
                }
            }
            Motion::Bounce { horizontal: true, .. } => "bouncing sideways",
            Motion::Bounce { horizontal: false, .. } => "bouncing vertically",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: usize,
    /// Index into [`SIZES`].
    pub size: usize,
    /// Half-extent in pixels.
    pub radius: f64,
    /// Centre at frame 0, pixel units.
    pub start: (f64, f64),
    pub motion: Motion,
    /// First frame the object is visible.
    pub enter: usize,
    /// First frame the object is gone, if it leaves.
    pub exit: Option<usize>,
}

impl ObjectSpec {
    pub fn centre(&self, t: usize) -> (f64, f64) {
        let (dx, dy) = self.motion.offset(t);
        (self.start.0 + dx, self.start.1 + dy)
    }

    pub fn visible(&self, t: usize) -> bool {
        t >= self.enter && self.exit.is_none_or(|e| t < e)
    }

    /// Whether the pixel centre `(x + 0.5, y + 0.5)` lies inside the shape
    /// at frame `t` (ignoring visibility).
    pub fn covers(&self, t: usize, x: usize, y: usize) -> bool {
        let (cx, cy) = self.centre(t);
        let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        let r = self.radius;
        match self.shape {
            Shape::Circle => px * px + py * py <= r * r,
            Shape::Square => px.abs() <= r && py.abs() <= r,
            // apex up, base at +r
            Shape::Triangle => py <= r && py >= -r && px.abs() <= (py + r) / 2.0,
        }
    }

    pub fn description(&self, with_motion: bool) -> String {
        let base = format!("{} {} {}", SIZES[self.size], COLORS[self.color], self.shape.word());
        if with_motion {
            format!("{base} {}", self.motion.phrase())
        } else {
            base
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub seed: u64,
    /// Drawn in order; the target is always last so it is never occluded.
    pub objects: Vec<ObjectSpec>,
    pub target: usize,
}

impl SceneSpec {
    /// Stable fingerprint over every field, for collision checks.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (self.height, self.width, self.frames, self.seed, self.target).hash(&mut h);
        for o in &self.objects {
            (o.shape, o.color, o.size, o.enter, o.exit).hash(&mut h);
            for v in [o.radius, o.start.0, o.start.1] {
                v.to_bits().hash(&mut h);
            }
            let m = match o.motion {
                Motion::Still => [0.0; 4],
                Motion::Linear { vx, vy } => [1.0, vx, vy, 0.0],
                Motion::Bounce { horizontal, amp, omega, phase } => {
                    [2.0 + horizontal as u8 as f64, amp, omega, phase]
                }
            };
            for v in m {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    fn motion_key(o: &ObjectSpec) -> (Shape, usize, &'static str) {
        (o.shape, o.color, o.motion.phrase())
    }

    /// No other object shares the target's shape, colour and motion.
    pub fn target_is_unique(&self) -> bool {
        let key = Self::motion_key(&self.objects[self.target]);
        self.objects
            .iter()
            .enumerate()
            .all(|(i, o)| i == self.target || Self::motion_key(o) != key)
    }
}

/// A rendered video with the target's ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSample {
    pub spec: SceneSpec,
    pub frames: Vec<Frame>,
    pub masks: Vec<Mask>,
    pub presence: Vec<bool>,
    pub description: String,
    pub distractors: Vec<String>,
}

impl RenderedSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub max_objects: usize,
    /// Describe motion in the text (videos) or only appearance (stills).
    pub with_motion: bool,
    /// Probability that the target leaves before the end of the video.
    pub exit_prob: f64,
}

impl SceneConfig {
    pub fn video(height: usize, width: usize, frames: usize, max_objects: usize) -> Self {
        SceneConfig {
            height,
            width,
            frames,
            max_objects,
            with_motion: true,
            exit_prob: 0.15,
        }
    }

    pub fn still(height: usize, width: usize, max_objects: usize) -> Self {
        SceneConfig {
            height,
            width,
            frames: 1,
            max_objects,
            with_motion: false,
            exit_prob: 0.0,
        }
    }
}

const MAX_ATTEMPTS: usize = 64;

fn random_motion(rng: &mut ChaCha8Rng, scale: f64) -> Motion {
    match rng.gen_range(0..4) {
        0 => Motion::Still,
        1 | 2 => {
            let speed = rng.gen_range(1.0..2.5) * scale;
            let across = rng.gen_range(-0.3..0.3) * speed;
            match rng.gen_range(0..4) {
                0 => Motion::Linear { vx: -speed, vy: across },
                1 => Motion::Linear { vx: speed, vy: across },
                2 => Motion::Linear { vx: across, vy: -speed },
                _ => Motion::Linear { vx: across, vy: speed },
            }
        }
        _ => Motion::Bounce {
            horizontal: rng.gen_bool(0.5),
            amp: rng.gen_range(4.0..10.0) * scale,
            omega: rng.gen_range(0.5..1.2),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        },
    }
}

fn random_scene(cfg: &SceneConfig, seed: u64, rng: &mut ChaCha8Rng) -> SceneSpec {
    let scale = cfg.height.min(cfg.width) as f64 / 64.0;
    let n = rng.gen_range(1..=cfg.max_objects.max(1));
    let mut colors: Vec<usize> = (0..COLORS.len()).collect();
    colors.shuffle(rng);
    let objects = (0..n)
        .map(|i| {
            let size = rng.gen_range(0..SIZES.len());
            let radius = if size == 0 { rng.gen_range(4.0..6.0) } else { rng.gen_range(8.0..11.0) } * scale;
            let margin = radius + 1.0;
            let start = (
                rng.gen_range(margin..cfg.width as f64 - margin),
                rng.gen_range(margin..cfg.height as f64 - margin),
            );
            let motion = random_motion(rng, scale);
            let exit = (cfg.frames > 2 && rng.gen_bool(cfg.exit_prob))
                .then(|| rng.gen_range(cfg.frames / 2..cfg.frames));
            ObjectSpec {
                shape: *Shape::ALL.choose(rng).expect("nonempty"),
                color: colors[i % colors.len()],
                size,
                radius,
                start,
                motion,
                enter: 0,
                exit,
            }
        })
        .collect::<Vec<_>>();
    SceneSpec {
        height: cfg.height,
        width: cfg.width,
        frames: cfg.frames,
        seed,
        target: objects.len() - 1,
        objects,
    }
}

pub fn render(spec: &SceneSpec, with_motion: bool) -> RenderedSample {
    let (h, w) = (spec.height, spec.width);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut rgb = BACKGROUND.repeat(h * w);
        let mut mask = vec![false; h * w];
        for (i, o) in spec.objects.iter().enumerate() {
            if !o.visible(t) {
                continue;
            }
            for y in 0..h {
                for x in 0..w {
                    if o.covers(t, x, y) {
                        let p = y * w + x;
                        rgb[3 * p..3 * p + 3].copy_from_slice(&PALETTE[o.color]);
                        mask[p] = i == spec.target;
                    }
                }
            }
        }
        frames.push(Frame { height: h, width: w, rgb });
        masks.push(Mask { height: h, width: w, data: mask });
    }
    let presence = masks.iter().map(|m| !m.is_empty()).collect();
    let distractors = spec
        .objects
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != spec.target)
        .map(|(_, o)| o.description(with_motion))
        .collect();
    RenderedSample {
        spec: spec.clone(),
        frames,
        masks,
        presence,
        description: spec.objects[spec.target].description(with_motion),
        distractors,
    }
}

/// Generate one scene. Deterministic per `(cfg, seed)`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<RenderedSample> {
    if cfg.height < 16 || cfg.width < 16 || cfg.frames == 0 {
        return Err(Error::Generation(format!(
            "canvas {}×{} with {} frames is too small",
            cfg.height, cfg.width, cfg.frames
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let spec = random_scene(cfg, seed, &mut rng);
        if !spec.target_is_unique() {
            continue;
        }
        let sample = render(&spec, cfg.with_motion);
        // the target must be visible in the first frame
        if sample.presence[0] {
            return Ok(sample);
        }
    }
    Err(Error::Generation(format!(
        "no valid scene for seed {seed} after {MAX_ATTEMPTS} attempts"
    )))
}

fn shift<T: Copy>(data: &[T], h: usize, w: usize, ch: usize, dx: i64, dy: i64, fill: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (sx, sy) = (x - dx, y - dy);
            if sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 {
                let p = (sy as usize * w + sx as usize) * ch;
                out.extend_from_slice(&data[p..p + ch]);
            } else {
                out.extend_from_slice(fill);
            }
        }
    }
    out
}

/// Replicate a still `frames` times, translating frame `t` by `t·step`
/// pixels plus a seeded jitter of up to `jitter` pixels per axis.
pub fn image_to_pseudo_video(
    still: &RenderedSample,
    frames: usize,
    step: (i64, i64),
    jitter: i64,
    seed: u64,
) -> Result<RenderedSample> {
    if still.frames.len() != 1 {
        return Err(Error::Input(format!(
            "pseudo-video source must have one frame, found {}",
            still.frames.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f0, m0) = (&still.frames[0], &still.masks[0]);
    let (h, w) = (f0.height, f0.width);
    let mut out_frames = Vec::with_capacity(frames);
    let mut out_masks = Vec::with_capacity(frames);
    for t in 0..frames as i64 {
        let (jx, jy) = if jitter > 0 {
            (rng.gen_range(-jitter..=jitter), rng.gen_range(-jitter..=jitter))
        } else {
            (0, 0)
        };
        let (dx, dy) = (step.0 * t + jx, step.1 * t + jy);
        out_frames.push(Frame {
            height: h,
            width: w,
            rgb: shift(&f0.rgb, h, w, 3, dx, dy, &BACKGROUND),
        });
        out_masks.push(Mask {
            height: h,
            width: w,
            data: shift(&m0.data, h, w, 1, dx, dy, &[false]),
        });
    }
    let presence = out_masks.iter().map(|m| !m.is_empty()).collect();
    Ok(RenderedSample {
        spec: SceneSpec { frames, ..still.spec.clone() },
        frames: out_frames,
        masks: out_masks,
        presence,
        description: still.description.clone(),
        distractors: still.distractors.clone(),
    })
}

/// Per-sample seed derived from a base seed, a split tag and an index.
pub fn sample_seed(base: u64, split: u64, index: u64) -> u64 {
    let mut x = base ^ split.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    // splitmix64 finaliser
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// The generated dataset splits. Each draws its seeds from its own stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Stills,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Stills];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Stills => "stills",
        }
    }

    fn stream(&self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Stills => 3,
        }
    }

    pub fn count(&self, cfg: &RunConfig) -> usize {
        match self {
            Split::Train => cfg.train_videos,
            Split::Val => cfg.val_videos,
            Split::Stills => cfg.stills,
        }
    }

    pub fn scene_config(&self, cfg: &RunConfig) -> SceneConfig {
        match self {
            Split::Stills => SceneConfig::still(cfg.height, cfg.width, cfg.max_objects),
            _ => SceneConfig::video(cfg.height, cfg.width, cfg.frames, cfg.max_objects),
        }
    }
}

/// Sample `index` of a split, deterministic in `cfg.seed`. The first
/// `cfg.pseudo_videos` stills are expanded into drifting pseudo-videos.
pub fn generate_split_sample(cfg: &RunConfig, split: Split, index: usize) -> Result<RenderedSample> {
    let seed = sample_seed(cfg.seed, split.stream(), index as u64);
    let sample = generate_scene(&split.scene_config(cfg), seed)?;
    if split == Split::Stills && index < cfg.pseudo_videos {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9D5E);
        let step = (rng.gen_range(-1..=1), rng.gen_range(-1..=1));
        return image_to_pseudo_video(&sample, cfg.frames, step, 1, seed);
    }
    Ok(sample)
}

pub fn generate_split(cfg: &RunConfig, split: Split) -> Result<Vec<RenderedSample>> {
    (0..split.count(cfg)).map(|i| generate_split_sample(cfg, split, i)).collect()
}
