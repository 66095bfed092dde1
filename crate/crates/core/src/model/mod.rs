//! The concept-flow response generator.
//!
//! [`ConceptFlow`] owns every trainable tensor. Forward passes are recorded
//! on a caller-supplied [`Tape`](crate::diffmath::Tape) so the same code
//! serves training, gradient checks and generation.

mod decoder;
mod encoders;
mod params;

pub use decoder::{
    prepare, DecodeMode, DecoderContext, DecoderStep, GenerationResult, GenerationStep, Prepared,
    Source, StepTrace, Target, Token,
};
pub use encoders::{
    pagerank_schedule, AttentionDump, CentralEncoding, CentralStructure, Encoded, OuterEncoding,
    UtteranceEncoding, PAGERANK_LAMBDA,
};
pub use params::{ConceptFlow, ModelConfig};
