//! Run configuration and its `key = value` file format.
//!
//! Lines are `key = value`; blank lines and lines whose first non-blank
//! character is `#` are ignored. Unknown keys are rejected. Every field has a
//! default, so an empty file is a valid configuration.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// How per-frame ROI features enter the trajectory projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajMode {
    /// Spatially mean-pool each ROI to one C-vector per slot.
    Pooled,
    /// Keep the full `P × P × C` ROI per slot.
    Flatten,
}

pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
from_str_value!(usize, u64, bool);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("value must be finite".into())
        }
    }
    fn format_value(&self) -> String {
        // `{:?}` is the shortest representation that parses back exactly.
        format!("{self:?}")
    }
}

impl ConfigValue for String {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(s.to_string())
    }
    fn format_value(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for Vec<usize> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
            .collect()
    }
    fn format_value(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for TrajMode {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pooled" => Ok(TrajMode::Pooled),
            "flatten" => Ok(TrajMode::Flatten),
            other => Err(format!("expected pooled|flatten, got {other:?}")),
        }
    }
    fn format_value(&self) -> String {
        match self {
            TrajMode::Pooled => "pooled".into(),
            TrajMode::Flatten => "flatten".into(),
        }
    }
}

macro_rules! run_config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::Config(format!("{key}: {e}")))?;
                    } )*
                    other => return Err(Error::Config(format!("unknown key {other:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($field) => Some(self.$field.format_value()), )*
                    _ => None,
                }
            }

            pub fn to_config_string(&self) -> String {
                let mut out = String::new();
                $( writeln!(out, "{} = {}", stringify!($field), self.$field.format_value()).unwrap(); )*
                out
            }
        }
    };
}

run_config! {
    seed: u64 = 0,
    /// Worker threads for per-sample parallelism; results are independent of it.
    threads: usize = 1,
    data_dir: String = "data".to_string(),
    run_dir: String = "runs".to_string(),
    height: usize = 64,
    width: usize = 64,
    frames: usize = 10,
    /// Key frames sampled uniformly at inference.
    t_key: usize = 5,
    /// Key-frame counts drawn per training video.
    train_key_frames: Vec<usize> = vec![1, 5, 10],
    patch: usize = 8,
    channels: usize = 64,
    attn_dim: usize = 32,
    roi_size: usize = 4,
    n_slots: usize = 8,
    traj_mode: TrajMode = TrajMode::Pooled,
    reasoner_layers: usize = 2,
    reasoner_heads: usize = 2,
    max_len: usize = 128,
    max_new_tokens: usize = 16,
    mem_capacity: usize = 6,
    presence_threshold: f64 = 0.5,
    pos_enc: bool = true,
    refine_width: usize = 16,
    use_fci: bool = true,
    bi_align: bool = true,
    train_videos: usize = 512,
    val_videos: usize = 64,
    stills: usize = 256,
    pseudo_videos: usize = 0,
    max_objects: usize = 3,
    lambda_text: f64 = 1.0,
    lambda_mask: f64 = 1.0,
    lambda_bce: f64 = 2.0,
    lambda_dice: f64 = 0.5,
    lambda_cls: f64 = 0.5,
    lr: f64 = 3e-4,
    weight_decay: f64 = 0.0,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,
    batch_size: usize = 8,
    stage1_steps: usize = 300,
    stage2_steps: usize = 2000,
    mix_tracking: f64 = 0.2,
    mix_grounding: f64 = 0.4,
    mix_captioning: f64 = 0.4,
    log_every: usize = 50,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config_string()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return bad("height and width must be multiples of patch");
        }
        if self.channels == 0 || self.attn_dim == 0 || self.roi_size == 0 || self.n_slots == 0 {
            return bad("channels, attn_dim, roi_size and n_slots must be positive");
        }
        if self.reasoner_heads == 0 || self.channels % self.reasoner_heads != 0 {
            return bad("channels must be divisible by reasoner_heads");
        }
        if self.frames == 0 || self.t_key == 0 || self.t_key > self.frames {
            return bad("need 1 <= t_key <= frames");
        }
        if self.train_key_frames.iter().any(|&k| k == 0 || k > self.frames) {
            return bad("train_key_frames entries must lie in 1..=frames");
        }
        let lambdas = [
            self.lambda_text,
            self.lambda_mask,
            self.lambda_bce,
            self.lambda_dice,
            self.lambda_cls,
        ];
        if lambdas.iter().any(|&l| l < 0.0) {
            return bad("loss weights must be non-negative");
        }
        let mix = self.mix_tracking + self.mix_grounding + self.mix_captioning;
        if (mix - 1.0).abs() > 1e-9 || [self.mix_tracking, self.mix_grounding, self.mix_captioning].iter().any(|&f| f < 0.0) {
            return bad("mix fractions must be non-negative and sum to 1");
        }
        if !(0.0..=1.0).contains(&self.presence_threshold) {
            return bad("presence_threshold must lie in [0, 1]");
        }
        if self.max_objects == 0 {
            return bad("max_objects must be at least 1");
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }
}
