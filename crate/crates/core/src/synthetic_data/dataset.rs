//! One directory per sample: `frame_NNN.ppm`, `mask_NNN.rle`, `manifest.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::RenderedSample;
use crate::error::{Error, Result};
use crate::formats::{read_ppm, read_rle, write_ppm, write_rle, Frame, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKindTag {
    Video,
    Still,
}

impl SampleKindTag {
    fn as_str(self) -> &'static str {
        match self {
            SampleKindTag::Video => "video",
            SampleKindTag::Still => "still",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub kind: SampleKindTag,
    pub description: String,
    pub presence: Vec<bool>,
    pub key_frames: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub distractors: Vec<String>,
}

impl Manifest {
    pub fn frames(&self) -> usize {
        self.presence.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let presence: String = self.presence.iter().map(|&p| if p { '1' } else { '0' }).collect();
        let keys: Vec<String> = self.key_frames.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "kind={}", self.kind.as_str());
        let _ = writeln!(s, "description={}", self.description);
        let _ = writeln!(s, "presence={presence}");
        let _ = writeln!(s, "key_frames={}", keys.join(","));
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "distractors={}", self.distractors.join(";"));
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line without '=': {line:?}")))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("manifest is missing {k}")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("manifest {k} is not a number")))
        };
        let kind = match get("kind")? {
            "video" => SampleKindTag::Video,
            "still" => SampleKindTag::Still,
            other => return Err(Error::Format(format!("unknown sample kind {other:?}"))),
        };
        let presence = get("presence")?
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Format(format!("bad presence flag {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let key_frames = get("key_frames")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Format(format!("bad key frame {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let distractors = get("distractors")?
            .split(';')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        Ok(Manifest {
            kind,
            description: get("description")?.to_string(),
            presence,
            key_frames,
            height: num("height")? as usize,
            width: num("width")? as usize,
            seed: num("seed")?,
            distractors,
        })
    }
}

/// `n` key frames spread uniformly over `t` frames, taking the centre of
/// each of `n` equal segments.
pub fn uniform_key_frames(t: usize, n: usize) -> Vec<usize> {
    let n = n.clamp(1, t.max(1));
    (0..n).map(|i| ((2 * i + 1) * t) / (2 * n)).collect()
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:03}.ppm")
}

pub fn mask_name(t: usize) -> String {
    format!("mask_{t:03}.rle")
}

pub fn save_sample(dir: &Path, sample: &RenderedSample, kind: SampleKindTag, key_frames: Vec<usize>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, (f, m)) in sample.frames.iter().zip(&sample.masks).enumerate() {
        write_ppm(&dir.join(frame_name(t)), f)?;
        write_rle(&dir.join(mask_name(t)), m)?;
    }
    let manifest = Manifest {
        kind,
        description: sample.description.clone(),
        presence: sample.presence.clone(),
        key_frames,
        height: sample.spec.height,
        width: sample.spec.width,
        seed: sample.spec.seed,
        distractors: sample.distractors.clone(),
    };
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))
}

/// A sample read back from disk.
#[derive(Clone, Debug)]
pub struct StoredSample {
    pub manifest: Manifest,
    pub frames: Vec<Frame>,
    pub masks: Vec<Mask>,
}

pub fn load_sample(dir: &Path) -> Result<StoredSample> {
    let path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = Manifest::parse(&text)?;
    let mut frames = Vec::with_capacity(manifest.frames());
    let mut masks = Vec::with_capacity(manifest.frames());
    for t in 0..manifest.frames() {
        let f = read_ppm(&dir.join(frame_name(t)))?;
        let m = read_rle(&dir.join(mask_name(t)))?;
        if (f.height, f.width) != (manifest.height, manifest.width) || (m.height, m.width) != (f.height, f.width) {
            return Err(Error::Format(format!(
                "frame {t} of {} does not match the manifest size",
                dir.display()
            )));
        }
        masks.push(m);
        frames.push(f);
    }
    Ok(StoredSample {
        manifest,
        frames,
        masks,
    })
}
