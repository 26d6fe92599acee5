//! Detect-then-rewrite construction of preference data.
//!
//! A [`Detector`] turns a response into per-sentence feedback, a
//! [`Rewriter`] turns the annotated response into a corrected one, and
//! [`build`] stitches them into preference pairs, quarantining any record
//! whose stage fails. Both stages have a deterministic in-process reference
//! implementation ([`reference`]) and an HTTP client ([`remote`]).

pub mod balance;
pub mod build;
pub mod reference;
pub mod remote;
pub mod stub;
pub mod world;

use thiserror::Error;

use crate::types::{AnnotatedResponse, PromptRecord, ResponseRecord, SentenceFeedback, TypesError};

pub use balance::{balance_detection_training_set, balanced_counts, BalanceError, BalanceRatio, DetectionExample};
pub use build::{
    annotate_dataset, annotate_record, build_preference_dataset, ordered_map, AnnotateOutput, BuildInput,
    BuildOptions, BuildOutput, BuildReport, QuarantineRecord, RecordOutcome,
};
pub use reference::{generate_synthetic_corpus, reference_detect, reference_rewrite, SyntheticCorpus};
pub use remote::{remote_detect, remote_rewrite, RemoteClient, RemoteError, RetryEvent, RetryPolicy};
pub use world::{SyntheticWorld, Template};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("hallucination rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("corpus size must be at least 1")]
    EmptyCorpus,
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("sentence {index} is not derivable from the world templates: `{sentence}`")]
    UnrecognizedSentence { index: usize, sentence: String },
    #[error("sentence {index} cannot be rewritten: {reason}")]
    UnrewritableSentence { index: usize, reason: String },
    #[error("rewrite of `{0}` removed every sentence")]
    EmptyRewrite(String),
    #[error("annotation for `{0}` violates feedback invariants")]
    InvalidAnnotation(String),
    #[error("rewritten response belongs to `{found}`, expected `{expected}`")]
    PromptMismatch { expected: String, found: String },
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error(transparent)]
    Types(#[from] TypesError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorRequest {
    pub prompt: PromptRecord,
    pub response: ResponseRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorReply {
    pub feedback: Vec<SentenceFeedback>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriterRequest {
    pub prompt: PromptRecord,
    pub annotated: AnnotatedResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriterReply {
    pub rewritten: ResponseRecord,
}

/// Sentence-level hallucination detector.
pub trait Detector: Sync {
    fn detect(&self, req: &DetectorRequest) -> Result<DetectorReply, PipelineError>;
}

/// Rewrites a hallucinatory response into a clean one.
pub trait Rewriter: Sync {
    fn rewrite(&self, req: &RewriterRequest) -> Result<RewriterReply, PipelineError>;
}

/// [`reference_detect`] bound to a world.
#[derive(Debug, Clone)]
pub struct ReferenceDetector {
    pub world: SyntheticWorld,
}

impl Detector for ReferenceDetector {
    fn detect(&self, req: &DetectorRequest) -> Result<DetectorReply, PipelineError> {
        reference_detect(&self.world, req)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceRewriter;

impl Rewriter for ReferenceRewriter {
    fn rewrite(&self, req: &RewriterRequest) -> Result<RewriterReply, PipelineError> {
        reference_rewrite(req)
    }
}

impl<T: Detector + ?Sized> Detector for &T {
    fn detect(&self, req: &DetectorRequest) -> Result<DetectorReply, PipelineError> {
        (**self).detect(req)
    }
}

impl<T: Rewriter + ?Sized> Rewriter for &T {
    fn rewrite(&self, req: &RewriterRequest) -> Result<RewriterReply, PipelineError> {
        (**self).rewrite(req)
    }
}

impl<T: Detector + ?Sized + Send> Detector for Box<T> {
    fn detect(&self, req: &DetectorRequest) -> Result<DetectorReply, PipelineError> {
        (**self).detect(req)
    }
}

impl<T: Rewriter + ?Sized + Send> Rewriter for Box<T> {
    fn rewrite(&self, req: &RewriterRequest) -> Result<RewriterReply, PipelineError> {
        (**self).rewrite(req)
    }
}
