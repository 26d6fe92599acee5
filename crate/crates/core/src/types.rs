//! Domain model shared by every stage: sentence-level feedback tuples,
//! prompts, responses, preference pairs and the dataset containers.
//!
//! Every value here is immutable once constructed. Constructors enforce the
//! structural invariants that can be checked locally; [`validate_annotated`]
//! reports the cross-field ones as data so callers can quarantine instead of
//! aborting.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Version stamped into dataset metadata. Bump when a JSONL schema changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TypesError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("response for prompt `{0}` has no sentences")]
    EmptySentences(String),
    #[error("severity {0} is outside 0..=3")]
    SeverityOutOfRange(i64),
    #[error("malformed aggregated severity `{0}`")]
    MalformedSeverity(String),
    #[error("aggregated severity {0} is outside [0, 3]")]
    AggregatedOutOfRange(String),
    #[error("duplicate prompt_id `{0}` in dataset")]
    DuplicatePromptId(String),
    #[error("region annotations are only allowed for DDG prompts (prompt `{0}`)")]
    RegionsOnVcr(String),
    #[error("prompt_id mismatch: expected `{expected}`, found `{found}`")]
    PromptMismatch { expected: String, found: String },
    #[error("aggregated severity {stored} does not match recomputed {recomputed}")]
    SeverityMismatch { stored: String, recomputed: String },
    #[error("annotated response is invalid: {0:?}")]
    InvalidAnnotation(Vec<Violation>),
}

/// Hallucination category of a single sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HallucinationType {
    Object,
    Attribute,
    Relationship,
    /// The one clean variant.
    #[serde(rename = "none")]
    NoHallucination,
}

impl HallucinationType {
    pub const ALL: [HallucinationType; 4] = [
        HallucinationType::Object,
        HallucinationType::Attribute,
        HallucinationType::Relationship,
        HallucinationType::NoHallucination,
    ];

    pub fn is_hallucination(self) -> bool {
        self != HallucinationType::NoHallucination
    }

    /// Wire name used in JSON and in rendered detection targets.
    pub fn as_str(self) -> &'static str {
        match self {
            HallucinationType::Object => "object",
            HallucinationType::Attribute => "attribute",
            HallucinationType::Relationship => "relationship",
            HallucinationType::NoHallucination => "none",
        }
    }
}

impl fmt::Display for HallucinationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Likert severity of one sentence: 0 clean, 1 minor, 2 moderate, 3 major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct SeverityScore(u8);

impl SeverityScore {
    pub const CLEAN: SeverityScore = SeverityScore(0);
    pub const MINOR: SeverityScore = SeverityScore(1);
    pub const MODERATE: SeverityScore = SeverityScore(2);
    pub const MAJOR: SeverityScore = SeverityScore(3);

    pub fn new(value: u8) -> Result<Self, TypesError> {
        Self::try_from(i64::from(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn label(self) -> &'static str {
        match self.0 {
            0 => "clean",
            1 => "minor",
            2 => "moderate",
            _ => "major",
        }
    }
}

impl TryFrom<i64> for SeverityScore {
    type Error = TypesError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        if (0..=3).contains(&value) {
            Ok(SeverityScore(value as u8))
        } else {
            Err(TypesError::SeverityOutOfRange(value))
        }
    }
}

impl From<SeverityScore> for u8 {
    fn from(s: SeverityScore) -> u8 {
        s.0
    }
}

impl fmt::Display for SeverityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Sentence-level feedback tuple. The prompt half of the tuple lives on the
/// owning record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceFeedback {
    pub sentence_index: usize,
    pub sentence_text: String,
    pub h_type: HallucinationType,
    pub h_reason: Option<String>,
    pub severity: SeverityScore,
    pub severity_reason: Option<String>,
}

impl SentenceFeedback {
    /// The canonical `<none, None, 0, None>` tuple.
    pub fn clean(sentence_index: usize, sentence_text: impl Into<String>) -> Self {
        Self {
            sentence_index,
            sentence_text: sentence_text.into(),
            h_type: HallucinationType::NoHallucination,
            h_reason: None,
            severity: SeverityScore::CLEAN,
            severity_reason: None,
        }
    }

    pub fn hallucinated(
        sentence_index: usize,
        sentence_text: impl Into<String>,
        h_type: HallucinationType,
        h_reason: impl Into<String>,
        severity: SeverityScore,
        severity_reason: Option<String>,
    ) -> Self {
        Self {
            sentence_index,
            sentence_text: sentence_text.into(),
            h_type,
            h_reason: Some(h_reason.into()),
            severity,
            severity_reason,
        }
    }

    pub fn is_hallucinated(&self) -> bool {
        self.h_type.is_hallucination()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Detailed description generation.
    #[serde(rename = "DDG")]
    Ddg,
    /// Visual complex reasoning.
    #[serde(rename = "VCR")]
    Vcr,
}

/// Labelled bounding box in integer pixels, `[x, y, w, h]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionAnnotation {
    pub object_label: String,
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub task: Task,
    pub instruction: String,
    pub image_ref: String,
    #[serde(default)]
    pub region_annotations: Option<Vec<RegionAnnotation>>,
}

impl PromptRecord {
    pub fn new(
        prompt_id: impl Into<String>,
        task: Task,
        instruction: impl Into<String>,
        image_ref: impl Into<String>,
        region_annotations: Option<Vec<RegionAnnotation>>,
    ) -> Result<Self, TypesError> {
        let p = Self {
            prompt_id: prompt_id.into(),
            task,
            instruction: instruction.into(),
            image_ref: image_ref.into(),
            region_annotations,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), TypesError> {
        if self.task == Task::Vcr && self.region_annotations.is_some() {
            return Err(TypesError::RegionsOnVcr(self.prompt_id.clone()));
        }
        Ok(())
    }
}

/// A model response split into sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseRecord {
    prompt_id: String,
    sentences: Vec<String>,
    raw_text: String,
}

impl ResponseRecord {
    pub fn from_sentences(
        prompt_id: impl Into<String>,
        sentences: Vec<String>,
    ) -> Result<Self, TypesError> {
        let prompt_id = prompt_id.into();
        let sentences: Vec<String> = sentences
            .into_iter()
            .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
            .collect();
        if sentences.is_empty() || sentences.iter().any(|s| s.is_empty()) {
            return Err(TypesError::EmptySentences(prompt_id));
        }
        let raw_text = sentences.join(" ");
        Ok(Self {
            prompt_id,
            sentences,
            raw_text,
        })
    }

    /// Segments `text` into sentences.
    pub fn from_text(prompt_id: impl Into<String>, text: &str) -> Result<Self, TypesError> {
        let sentences = crate::segment::segment_sentences(text)?;
        Self::from_sentences(prompt_id, sentences)
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    LengthMismatch { feedback: usize, sentences: usize },
    IndexMisaligned { found: usize },
    TextMismatch,
    CleanWithReason,
    CleanWithSeverity,
    CleanWithSeverityReason,
    HallucinatedWithZeroSeverity,
    HallucinatedWithoutReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// `None` for whole-record problems such as a length mismatch.
    pub sentence_index: Option<usize>,
    pub kind: ViolationKind,
}

/// A response with one feedback tuple per sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedResponse {
    pub response: ResponseRecord,
    pub feedback: Vec<SentenceFeedback>,
}

impl AnnotatedResponse {
    /// Builds and validates.
    pub fn new(
        response: ResponseRecord,
        feedback: Vec<SentenceFeedback>,
    ) -> Result<Self, TypesError> {
        let a = Self { response, feedback };
        let report = validate_annotated(&a);
        if report.is_empty() {
            Ok(a)
        } else {
            Err(TypesError::InvalidAnnotation(report))
        }
    }

    /// Pairs a response with the clean tuple on every sentence.
    pub fn all_clean(response: ResponseRecord) -> Self {
        let feedback = response
            .sentences()
            .iter()
            .enumerate()
            .map(|(i, s)| SentenceFeedback::clean(i, s.clone()))
            .collect();
        Self { response, feedback }
    }

    pub fn is_all_clean(&self) -> bool {
        self.feedback.iter().all(|f| !f.is_hallucinated())
    }

    pub fn severities(&self) -> impl Iterator<Item = SeverityScore> + '_ {
        self.feedback.iter().map(|f| f.severity)
    }
}

/// Lists every feedback invariant violated by `a`; empty means valid.
pub fn validate_annotated(a: &AnnotatedResponse) -> Vec<Violation> {
    let mut out = Vec::new();
    let sentences = a.response.sentences();
    if a.feedback.len() != sentences.len() {
        out.push(Violation {
            sentence_index: None,
            kind: ViolationKind::LengthMismatch {
                feedback: a.feedback.len(),
                sentences: sentences.len(),
            },
        });
    }
    for (j, fb) in a.feedback.iter().enumerate() {
        let at = |kind| Violation {
            sentence_index: Some(j),
            kind,
        };
        if fb.sentence_index != j {
            out.push(at(ViolationKind::IndexMisaligned {
                found: fb.sentence_index,
            }));
        }
        if let Some(s) = sentences.get(j) {
            if *s != fb.sentence_text {
                out.push(at(ViolationKind::TextMismatch));
            }
        }
        if fb.h_type.is_hallucination() {
            if fb.severity == SeverityScore::CLEAN {
                out.push(at(ViolationKind::HallucinatedWithZeroSeverity));
            }
            if fb.h_reason.is_none() {
                out.push(at(ViolationKind::HallucinatedWithoutReason));
            }
        } else {
            if fb.h_reason.is_some() {
                out.push(at(ViolationKind::CleanWithReason));
            }
            if fb.severity != SeverityScore::CLEAN {
                out.push(at(ViolationKind::CleanWithSeverity));
            }
            if fb.severity_reason.is_some() {
                out.push(at(ViolationKind::CleanWithSeverityReason));
            }
        }
    }
    out
}

/// Response-level severity, an exact rational in `[0, 3]`.
///
/// Serialized as a string: `"2"` for integers, `"5/3"` otherwise. Finite
/// decimals such as `"1.5"` are accepted on input and parsed exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AggregatedSeverity(Ratio<u64>);

impl AggregatedSeverity {
    pub const ZERO: AggregatedSeverity = AggregatedSeverity(Ratio::new_raw(0, 1));
    pub const ONE: AggregatedSeverity = AggregatedSeverity(Ratio::new_raw(1, 1));

    pub fn new(value: Ratio<u64>) -> Result<Self, TypesError> {
        if value > Ratio::from_integer(3) {
            return Err(TypesError::AggregatedOutOfRange(value.to_string()));
        }
        Ok(Self(value))
    }

    pub fn from_integer(n: u64) -> Result<Self, TypesError> {
        Self::new(Ratio::from_integer(n))
    }

    pub fn ratio(self) -> Ratio<u64> {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn is_zero(self) -> bool {
        self.0.is_zero()
    }
}

impl fmt::Display for AggregatedSeverity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for AggregatedSeverity {
    type Err = TypesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TypesError::MalformedSeverity(s.to_string());
        let t = s.trim();
        let ratio = if let Some((n, d)) = t.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            Ratio::new(n, d)
        } else if let Some((int, frac)) = t.split_once('.') {
            if frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
            let scale = 10u64.pow(frac.len() as u32);
            let frac_v: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
            let numer = int
                .checked_mul(scale)
                .and_then(|v| v.checked_add(frac_v))
                .ok_or_else(bad)?;
            Ratio::new(numer, scale)
        } else {
            Ratio::from_integer(t.parse().map_err(|_| bad())?)
        };
        Self::new(ratio)
    }
}

impl Serialize for AggregatedSeverity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AggregatedSeverity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `(prompt, rejected, chosen, severity)` preference record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub prompt: PromptRecord,
    pub rejected: AnnotatedResponse,
    pub chosen: ResponseRecord,
    pub aggregated_severity: AggregatedSeverity,
}

impl PreferencePair {
    /// Builds a pair, computing the aggregated severity from the rejected
    /// response's feedback.
    pub fn new(
        prompt: PromptRecord,
        rejected: AnnotatedResponse,
        chosen: ResponseRecord,
    ) -> Result<Self, TypesError> {
        let report = validate_annotated(&rejected);
        if !report.is_empty() {
            return Err(TypesError::InvalidAnnotation(report));
        }
        let aggregated_severity = crate::preference::aggregate_severity(&rejected.feedback)
            .map_err(|_| TypesError::EmptySentences(prompt.prompt_id.clone()))?;
        let pair = Self {
            prompt,
            rejected,
            chosen,
            aggregated_severity,
        };
        pair.check()?;
        Ok(pair)
    }

    /// Re-checks prompt alignment and recomputes the stored severity.
    pub fn check(&self) -> Result<(), TypesError> {
        let id = &self.prompt.prompt_id;
        for found in [self.rejected.response.prompt_id(), self.chosen.prompt_id()] {
            if found != id {
                return Err(TypesError::PromptMismatch {
                    expected: id.clone(),
                    found: found.to_string(),
                });
            }
        }
        let recomputed = crate::preference::aggregate_severity(&self.rejected.feedback)
            .map_err(|_| TypesError::EmptySentences(id.clone()))?;
        if recomputed != self.aggregated_severity {
            return Err(TypesError::SeverityMismatch {
                stored: self.aggregated_severity.to_string(),
                recomputed: recomputed.to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
    pub schema_version: u32,
}

impl DatasetMeta {
    pub fn new(source: impl Into<String>, created_unix: u64) -> Self {
        Self {
            source: source.into(),
            created_unix,
            schema_version: SCHEMA_VERSION,
        }
    }
}

/// An annotated response together with the prompt that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackRecord {
    pub prompt: PromptRecord,
    pub annotated: AnnotatedResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackDataset {
    pub meta: DatasetMeta,
    records: Vec<FeedbackRecord>,
    ids: HashSet<String>,
}

impl FeedbackDataset {
    pub fn new(meta: DatasetMeta) -> Self {
        Self {
            meta,
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn push(&mut self, record: FeedbackRecord) -> Result<(), TypesError> {
        if !self.ids.insert(record.prompt.prompt_id.clone()) {
            return Err(TypesError::DuplicatePromptId(record.prompt.prompt_id));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[FeedbackRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceDataset {
    pub meta: DatasetMeta,
    pairs: Vec<PreferencePair>,
    ids: HashSet<String>,
}

impl PreferenceDataset {
    pub fn new(meta: DatasetMeta) -> Self {
        Self {
            meta,
            pairs: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn push(&mut self, pair: PreferencePair) -> Result<(), TypesError> {
        if !self.ids.insert(pair.prompt.prompt_id.clone()) {
            return Err(TypesError::DuplicatePromptId(pair.prompt.prompt_id));
        }
        self.pairs.push(pair);
        Ok(())
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
