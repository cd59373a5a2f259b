use super::vocab::{Vocabulary, PLH, TRJ};
use crate::error::{Error, Result};
use crate::trajectory_encoder::ObjectTrajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleKind {
    Grounding,
    Captioning,
    Tracking,
}

impl SampleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleKind::Grounding => "grounding",
            SampleKind::Captioning => "captioning",
            SampleKind::Tracking => "tracking",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grounding" => Ok(SampleKind::Grounding),
            "captioning" => Ok(SampleKind::Captioning),
            "tracking" => Ok(SampleKind::Tracking),
            other => Err(Error::Input(format!("unknown sample kind {other:?}"))),
        }
    }
}

/// One training example: token streams plus what the mask side needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub kind: SampleKind,
    pub input_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    /// Index of the video this sample is drawn from.
    pub video: usize,
    pub trajectory: Option<ObjectTrajectory>,
    pub key_frames: Vec<usize>,
}

pub fn grounding_instruction(description: &str) -> String {
    format!("Can you segment the {description} in this video?")
}

pub fn captioning_instruction() -> String {
    format!("Can you describe {PLH} in this video?")
}

pub fn response(description: &str) -> String {
    format!("Sure, {description} {TRJ}.")
}

pub fn build_sample(
    vocab: &Vocabulary,
    kind: SampleKind,
    description: &str,
    video: usize,
    trajectory: Option<ObjectTrajectory>,
    key_frames: Vec<usize>,
) -> Result<Sample> {
    let (input_ids, target_ids) = match kind {
        SampleKind::Grounding => (
            vocab.tokenize(&grounding_instruction(description))?,
            vocab.tokenize(&response(description))?,
        ),
        SampleKind::Captioning => {
            if trajectory.is_none() {
                return Err(Error::Input("captioning sample needs a trajectory".into()));
            }
            (
                vocab.tokenize(&captioning_instruction())?,
                vocab.tokenize(&response(description))?,
            )
        }
        SampleKind::Tracking => (Vec::new(), Vec::new()),
    };
    let trajectory = if kind == SampleKind::Captioning {
        trajectory
    } else {
        None
    };
    Ok(Sample {
        kind,
        input_ids,
        target_ids,
        video,
        trajectory,
        key_frames,
    })
}
