//! Preference-dataset construction with quarantine-and-continue.
//!
//! Records are processed by up to `max_in_flight` workers and committed in
//! input order, so the output is independent of scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Detector, DetectorRequest, PipelineError, RemoteError, Rewriter, RewriterRequest};
use crate::types::{
    validate_annotated, AnnotatedResponse, DatasetMeta, FeedbackDataset, FeedbackRecord, PreferenceDataset,
    PreferencePair, PromptRecord, ResponseRecord,
};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildInput {
    /// Needs detection first.
    Raw { prompt: PromptRecord, response: ResponseRecord },
    /// Already carries feedback; detection is skipped.
    Annotated(FeedbackRecord),
}

impl BuildInput {
    pub fn prompt(&self) -> &PromptRecord {
        match self {
            Self::Raw { prompt, .. } => prompt,
            Self::Annotated(r) => &r.prompt,
        }
    }
}

impl From<FeedbackRecord> for BuildInput {
    fn from(r: FeedbackRecord) -> Self {
        Self::Annotated(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub max_in_flight: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

/// A record that failed a stage, with the offending payload when there is one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub prompt_id: String,
    /// `detect`, `rewrite` or `assemble`.
    pub stage: String,
    pub reason: String,
    pub raw: Option<String>,
}

impl QuarantineRecord {
    fn new(prompt_id: &str, stage: &str, err: &PipelineError) -> Self {
        let raw = match err {
            PipelineError::Remote(RemoteError::MalformedReply { raw, .. }) => Some(raw.clone()),
            PipelineError::Remote(RemoteError::HttpStatus { body, .. }) => Some(body.clone()),
            _ => None,
        };
        Self {
            prompt_id: prompt_id.to_string(),
            stage: stage.to_string(),
            reason: err.to_string(),
            raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordOutcome {
    Emitted(Box<PreferencePair>),
    SkippedClean,
    Quarantined(QuarantineRecord),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub input: usize,
    pub emitted: usize,
    pub skipped_clean: usize,
    pub quarantined: usize,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub dataset: PreferenceDataset,
    pub quarantine: Vec<QuarantineRecord>,
    pub report: BuildReport,
}

#[derive(Debug, Clone)]
pub struct AnnotateOutput {
    pub dataset: FeedbackDataset,
    pub quarantine: Vec<QuarantineRecord>,
    pub report: BuildReport,
}

/// Maps `f` over `items` with at most `cap` concurrent calls, preserving order.
pub fn ordered_map<T: Sync, R: Send>(items: &[T], cap: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = cap.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Runs the detector on one response and validates the reply in full.
pub fn annotate_record<D: Detector + ?Sized>(
    detector: &D,
    prompt: &PromptRecord,
    response: &ResponseRecord,
) -> Result<AnnotatedResponse, PipelineError> {
    let reply = detector.detect(&DetectorRequest {
        prompt: prompt.clone(),
        response: response.clone(),
    })?;
    let annotated = AnnotatedResponse {
        response: response.clone(),
        feedback: reply.feedback,
    };
    if !validate_annotated(&annotated).is_empty() {
        return Err(PipelineError::InvalidAnnotation(prompt.prompt_id.clone()));
    }
    Ok(annotated)
}

fn process<D: Detector + ?Sized, W: Rewriter + ?Sized>(input: &BuildInput, detector: &D, rewriter: &W) -> RecordOutcome {
    let prompt = input.prompt();
    let id = prompt.prompt_id.as_str();
    let annotated = match input {
        BuildInput::Raw { response, .. } => match annotate_record(detector, prompt, response) {
            Ok(a) => a,
            Err(e) => return RecordOutcome::Quarantined(QuarantineRecord::new(id, "detect", &e)),
        },
        BuildInput::Annotated(r) => {
            if !validate_annotated(&r.annotated).is_empty() {
                let e = PipelineError::InvalidAnnotation(id.to_string());
                return RecordOutcome::Quarantined(QuarantineRecord::new(id, "detect", &e));
            }
            r.annotated.clone()
        }
    };
    if annotated.is_all_clean() {
        return RecordOutcome::SkippedClean;
    }
    let reply = match rewriter.rewrite(&RewriterRequest {
        prompt: prompt.clone(),
        annotated: annotated.clone(),
    }) {
        Ok(r) => r,
        Err(e) => return RecordOutcome::Quarantined(QuarantineRecord::new(id, "rewrite", &e)),
    };
    if reply.rewritten.prompt_id() != id {
        let e = PipelineError::PromptMismatch {
            expected: id.to_string(),
            found: reply.rewritten.prompt_id().to_string(),
        };
        return RecordOutcome::Quarantined(QuarantineRecord::new(id, "rewrite", &e));
    }
    match PreferencePair::new(prompt.clone(), annotated, reply.rewritten) {
        Ok(pair) => RecordOutcome::Emitted(Box::new(pair)),
        Err(e) => RecordOutcome::Quarantined(QuarantineRecord::new(id, "assemble", &e.into())),
    }
}

/// Detect, rewrite and pair every input. All-clean responses are counted
/// but not emitted; failures are quarantined and the build continues.
pub fn build_preference_dataset<D: Detector + ?Sized, W: Rewriter + ?Sized>(
    inputs: &[BuildInput],
    detector: &D,
    rewriter: &W,
    meta: DatasetMeta,
    opts: BuildOptions,
) -> BuildOutput {
    let outcomes = ordered_map(inputs, opts.max_in_flight, |input| process(input, detector, rewriter));
    let mut dataset = PreferenceDataset::new(meta);
    let mut quarantine = Vec::new();
    let mut report = BuildReport {
        input: inputs.len(),
        ..BuildReport::default()
    };
    for outcome in outcomes {
        match outcome {
            RecordOutcome::Emitted(pair) => {
                let id = pair.prompt.prompt_id.clone();
                match dataset.push(*pair) {
                    Ok(()) => report.emitted += 1,
                    Err(e) => quarantine.push(QuarantineRecord::new(&id, "assemble", &e.into())),
                }
            }
            RecordOutcome::SkippedClean => report.skipped_clean += 1,
            RecordOutcome::Quarantined(q) => quarantine.push(q),
        }
    }
    report.quarantined = quarantine.len();
    BuildOutput {
        dataset,
        quarantine,
        report,
    }
}

/// Detection stage only. Every successfully annotated record is kept,
/// clean or not, so `skipped_clean` stays zero.
pub fn annotate_dataset<D: Detector + ?Sized>(
    inputs: &[(PromptRecord, ResponseRecord)],
    detector: &D,
    meta: DatasetMeta,
    opts: BuildOptions,
) -> AnnotateOutput {
    let results = ordered_map(inputs, opts.max_in_flight, |(p, r)| annotate_record(detector, p, r));
    let mut dataset = FeedbackDataset::new(meta);
    let mut quarantine = Vec::new();
    for ((prompt, _), result) in inputs.iter().zip(results) {
        let id = prompt.prompt_id.clone();
        let pushed = result.and_then(|annotated| {
            dataset
                .push(FeedbackRecord {
                    prompt: prompt.clone(),
                    annotated,
                })
                .map_err(PipelineError::from)
        });
        if let Err(e) = pushed {
            quarantine.push(QuarantineRecord::new(&id, "detect", &e));
        }
    }
    let report = BuildReport {
        input: inputs.len(),
        emitted: dataset.len(),
        skipped_clean: 0,
        quarantined: quarantine.len(),
    };
    AnnotateOutput {
        dataset,
        quarantine,
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{DetectorReply, ReferenceRewriter, RewriterReply, RewriterRequest};
    use crate::types::{AggregatedSeverity, HallucinationType, SentenceFeedback, SeverityScore, Task};

    fn prompt(id: &str) -> PromptRecord {
        PromptRecord::new(id, Task::Vcr, "why?", "kitchen", None).unwrap()
    }

    struct Fixed(Vec<SentenceFeedback>);

    impl Detector for Fixed {
        fn detect(&self, _req: &DetectorRequest) -> Result<DetectorReply, PipelineError> {
            Ok(DetectorReply { feedback: self.0.clone() })
        }
    }

    struct Failing;

    impl Rewriter for Failing {
        fn rewrite(&self, _req: &RewriterRequest) -> Result<RewriterReply, PipelineError> {
            Err(RemoteError::Timeout { attempts: 4 }.into())
        }
    }

    fn raw(id: &str, sentences: &[&str]) -> BuildInput {
        BuildInput::Raw {
            prompt: prompt(id),
            response: ResponseRecord::from_sentences(id, sentences.iter().map(|s| s.to_string()).collect()).unwrap(),
        }
    }

    #[test]
    fn all_clean_corpus_builds_nothing() {
        let sentences = ["There is a cup in the image.", "The cup is white."];
        let inputs: Vec<_> = (0..3).map(|i| raw(&format!("p{i}"), &sentences)).collect();
        let det = Fixed(vec![
            SentenceFeedback::clean(0, sentences[0]),
            SentenceFeedback::clean(1, sentences[1]),
        ]);
        let out = build_preference_dataset(&inputs, &det, &ReferenceRewriter, DatasetMeta::new("t", 0), BuildOptions::default());
        assert!(out.dataset.is_empty());
        assert_eq!(
            out.report,
            BuildReport {
                input: 3,
                emitted: 0,
                skipped_clean: 3,
                quarantined: 0
            }
        );
    }

    #[test]
    fn severities_two_and_zero_give_one() {
        let sentences = ["There is a unicorn in the image.", "The cup is white."];
        let det = Fixed(vec![
            SentenceFeedback::hallucinated(
                0,
                sentences[0],
                HallucinationType::Object,
                "no unicorn | unicorn→",
                SeverityScore::MODERATE,
                Some("moderate".into()),
            ),
            SentenceFeedback::clean(1, sentences[1]),
        ]);
        let out = build_preference_dataset(
            &[raw("p", &sentences)],
            &det,
            &ReferenceRewriter,
            DatasetMeta::new("t", 0),
            BuildOptions::default(),
        );
        assert_eq!(out.report.emitted, 1);
        let pair = &out.dataset.pairs()[0];
        assert_eq!(pair.aggregated_severity, AggregatedSeverity::ONE);
        assert_eq!(pair.chosen.sentences(), &["The cup is white.".to_string()]);
    }

    #[test]
    fn rewrite_failures_are_quarantined_and_build_continues() {
        let sentences = ["There is a unicorn in the image.", "The cup is white."];
        let det = Fixed(vec![
            SentenceFeedback::hallucinated(
                0,
                sentences[0],
                HallucinationType::Object,
                "x | unicorn→",
                SeverityScore::MAJOR,
                Some("major".into()),
            ),
            SentenceFeedback::clean(1, sentences[1]),
        ]);
        let inputs: Vec<_> = (0..5).map(|i| raw(&format!("p{i}"), &sentences)).collect();
        let out = build_preference_dataset(&inputs, &det, &Failing, DatasetMeta::new("t", 0), BuildOptions { max_in_flight: 3 });
        assert_eq!(out.report.quarantined, 5);
        assert!(out.dataset.is_empty());
        let ids: Vec<_> = out.quarantine.iter().map(|q| q.prompt_id.as_str()).collect();
        assert_eq!(ids, ["p0", "p1", "p2", "p3", "p4"]);
        assert!(out.quarantine.iter().all(|q| q.stage == "rewrite"));
    }

    #[test]
    fn ordered_map_preserves_order() {
        let items: Vec<u64> = (0..100).collect();
        let out = ordered_map(&items, 8, |x| {
            std::thread::sleep(std::time::Duration::from_micros((100 - x) * 10));
            x * 2
        });
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
