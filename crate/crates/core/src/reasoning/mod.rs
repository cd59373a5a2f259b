//! Stand-in for the multimodal language model: a closed vocabulary, the
//! three sample templates, and a small causal transformer whose hidden
//! state at `<TRJ>` becomes the trajectory-level target token.

pub mod sample;
pub mod transformer;
pub mod vocab;

pub use sample::{grounding_instruction, response, build_sample, Sample, SampleKind};
pub use transformer::{
    extract_trj_token, generate, reasoner_forward, teacher_forcing, ReasonerOutput,
};
pub use vocab::Vocabulary;
