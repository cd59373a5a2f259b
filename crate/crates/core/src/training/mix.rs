use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::reasoning::SampleKind;

/// Per-epoch share of each sample style.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataMix {
    pub tracking: f64,
    pub grounding: f64,
    pub captioning: f64,
}

impl DataMix {
    pub fn new(tracking: f64, grounding: f64, captioning: f64) -> Result<Self> {
        let m = DataMix {
            tracking,
            grounding,
            captioning,
        };
        let parts = [tracking, grounding, captioning];
        if parts.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("mix fractions must be non-negative and sum to 1: {m:?}")));
        }
        Ok(m)
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Self::new(cfg.mix_tracking, cfg.mix_grounding, cfg.mix_captioning)
    }

    /// Stills cannot be tracked; they are split between the two text styles.
    pub fn stills() -> Self {
        DataMix {
            tracking: 0.0,
            grounding: 0.5,
            captioning: 0.5,
        }
    }

    fn fractions(&self) -> [(SampleKind, f64); 3] {
        [
            (SampleKind::Tracking, self.tracking),
            (SampleKind::Grounding, self.grounding),
            (SampleKind::Captioning, self.captioning),
        ]
    }

    /// Largest-remainder apportionment of `n` samples; ties go to the kind
    /// listed first (tracking, grounding, captioning).
    pub fn counts(&self, n: usize) -> [(SampleKind, usize); 3] {
        let fr = self.fractions();
        let quotas: Vec<f64> = fr.iter().map(|&(_, f)| f * n as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut left = n - counts.iter().sum::<usize>().min(n);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        [(fr[0].0, counts[0]), (fr[1].0, counts[1]), (fr[2].0, counts[2])]
    }
}

/// One scheduled sample: which video and in which style.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scheduled {
    pub video: usize,
    pub kind: SampleKind,
}

/// Every video once per epoch, styles apportioned by `mix`, order shuffled.
pub fn mix_epoch(n_videos: usize, mix: &DataMix, seed: u64) -> Result<Vec<Scheduled>> {
    if n_videos == 0 {
        return Err(Error::Input("cannot schedule an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut videos: Vec<usize> = (0..n_videos).collect();
    videos.shuffle(&mut rng);
    let mut kinds = Vec::with_capacity(n_videos);
    for (kind, count) in mix.counts(n_videos) {
        kinds.extend(std::iter::repeat(kind).take(count));
    }
    kinds.shuffle(&mut rng);
    Ok(videos
        .into_iter()
        .zip(kinds)
        .map(|(video, kind)| Scheduled { video, kind })
        .collect())
}
