//! Caption hallucination and detection metrics.
//!
//! Formulas, all over canonical object mentions produced by
//! [`extract_objects`]:
//!
//! * `CHAIR_S` = responses with ≥1 hallucinated mention / responses
//! * `CHAIR_I` = hallucinated mentions / all mentions
//! * AMBER `CHAIR` = `CHAIR_I` computed over the AMBER record set
//! * `Cover` = mean over records with non-empty ground truth of
//!   |distinct mentioned ∩ ground truth| / |ground truth|
//! * `Hal` = `CHAIR_S` computed over the AMBER record set
//! * `Cog` = hallucinated mentions that are cognition decoys / hallucinated mentions
//!
//! A mention is hallucinated iff its canonical object is not in the record's
//! ground truth. Mentions count with multiplicity; `Cover` counts types.
//!
//! Every entry carries its exact numerator and denominator. A zero
//! denominator yields value 0 with `empty = true`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::pipeline::world::SyntheticWorld;
use crate::preference::aggregate_severity;
use crate::types::{AnnotatedResponse, HallucinationType, ResponseRecord, TypesError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no records to evaluate")]
    EmptyEval,
    #[error("record {index} has no cognition decoy set")]
    MissingDecoys { index: usize },
    #[error("predicted and gold disagree at record {index}: {reason}")]
    AlignmentError { index: usize, reason: String },
    #[error("object `{0}` is both ground truth and a cognition decoy")]
    DecoyOverlap(String),
    #[error("synonym `{surface}` points at unknown object `{target}`")]
    UnknownSynonymTarget { surface: String, target: String },
    #[error("record {index} has no sentences to score")]
    EmptyFeedback { index: usize },
    #[error("unknown metric group `{0}` (expected chair, amber, detect, severity)")]
    UnknownMetric(String),
    #[error(transparent)]
    Types(#[from] TypesError),
}

/// Canonical objects plus `surface → canonical` synonyms. Matching is
/// case-insensitive on whole words; multi-word surfaces are matched longest
/// first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LexiconFile", into = "LexiconFile")]
pub struct ObjectLexicon {
    objects: BTreeSet<String>,
    synonyms: BTreeMap<String, String>,
    /// Every surface form, tokenized.
    surfaces: BTreeMap<Vec<String>, String>,
    max_words: usize,
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    objects: BTreeSet<String>,
    #[serde(default)]
    synonyms: BTreeMap<String, String>,
}

impl TryFrom<LexiconFile> for ObjectLexicon {
    type Error = MetricsError;

    fn try_from(f: LexiconFile) -> Result<Self, Self::Error> {
        ObjectLexicon::new(f.objects, f.synonyms)
    }
}

impl From<ObjectLexicon> for LexiconFile {
    fn from(l: ObjectLexicon) -> Self {
        LexiconFile {
            objects: l.objects,
            synonyms: l.synonyms,
        }
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl ObjectLexicon {
    pub fn new(
        objects: impl IntoIterator<Item = String>,
        synonyms: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, MetricsError> {
        let objects: BTreeSet<String> = objects.into_iter().map(|o| o.to_lowercase()).collect();
        let synonyms: BTreeMap<String, String> = synonyms
            .into_iter()
            .map(|(s, t)| (s.to_lowercase(), t.to_lowercase()))
            .collect();
        let mut surfaces = BTreeMap::new();
        for o in &objects {
            surfaces.insert(words(o), o.clone());
        }
        for (s, t) in &synonyms {
            if !objects.contains(t) {
                return Err(MetricsError::UnknownSynonymTarget {
                    surface: s.clone(),
                    target: t.clone(),
                });
            }
            surfaces.insert(words(s), t.clone());
        }
        surfaces.retain(|k, _| !k.is_empty());
        let max_words = surfaces.keys().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            objects,
            synonyms,
            surfaces,
            max_words,
        })
    }

    /// Scene objects, decoy objects and synonyms of a synthetic world.
    pub fn from_world(world: &SyntheticWorld) -> Self {
        let mut objects: BTreeSet<String> = world.scenes.iter().flat_map(|s| s.objects.iter().cloned()).collect();
        objects.extend(world.lexicon.objects.iter().map(|e| e.item.clone()));
        objects.extend(world.scenes.iter().flat_map(|s| s.pitfalls.iter().cloned()));
        Self::new(objects, world.synonyms.clone()).expect("validated world has consistent synonyms")
    }

    pub fn objects(&self) -> &BTreeSet<String> {
        &self.objects
    }

    pub fn synonyms(&self) -> &BTreeMap<String, String> {
        &self.synonyms
    }
}

/// Canonical object mentions in order of occurrence, duplicates kept.
pub fn extract_objects(lexicon: &ObjectLexicon, response: &ResponseRecord) -> Vec<String> {
    extract_from_text(lexicon, response.raw_text())
}

pub fn extract_from_text(lexicon: &ObjectLexicon, text: &str) -> Vec<String> {
    let ws = words(text);
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < ws.len() {
        for n in (1..=lexicon.max_words.min(ws.len() - i)).rev() {
            if let Some(canon) = lexicon.surfaces.get(&ws[i..i + n]) {
                out.push(canon.clone());
                i += n;
                continue 'outer;
            }
        }
        i += 1;
    }
    out
}

/// One response with its object ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EvalLine", into = "EvalLine")]
pub struct EvalRecord {
    response: ResponseRecord,
    ground_truth_objects: BTreeSet<String>,
    cognition_decoys: Option<BTreeSet<String>>,
}

/// JSONL form of an [`EvalRecord`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalLine {
    pub prompt_id: String,
    pub sentences: Vec<String>,
    pub ground_truth_objects: BTreeSet<String>,
    #[serde(default)]
    pub cognition_decoys: Option<BTreeSet<String>>,
}

impl TryFrom<EvalLine> for EvalRecord {
    type Error = MetricsError;

    fn try_from(l: EvalLine) -> Result<Self, Self::Error> {
        EvalRecord::new(
            ResponseRecord::from_sentences(l.prompt_id, l.sentences)?,
            l.ground_truth_objects,
            l.cognition_decoys,
        )
    }
}

impl From<EvalRecord> for EvalLine {
    fn from(r: EvalRecord) -> Self {
        EvalLine {
            prompt_id: r.response.prompt_id().to_string(),
            sentences: r.response.sentences().to_vec(),
            ground_truth_objects: r.ground_truth_objects,
            cognition_decoys: r.cognition_decoys,
        }
    }
}

impl EvalRecord {
    pub fn new(
        response: ResponseRecord,
        ground_truth_objects: BTreeSet<String>,
        cognition_decoys: Option<BTreeSet<String>>,
    ) -> Result<Self, MetricsError> {
        if let Some(d) = &cognition_decoys {
            if let Some(o) = d.intersection(&ground_truth_objects).next() {
                return Err(MetricsError::DecoyOverlap(o.clone()));
            }
        }
        Ok(Self {
            response,
            ground_truth_objects,
            cognition_decoys,
        })
    }

    pub fn response(&self) -> &ResponseRecord {
        &self.response
    }

    pub fn ground_truth_objects(&self) -> &BTreeSet<String> {
        &self.ground_truth_objects
    }

    pub fn cognition_decoys(&self) -> Option<&BTreeSet<String>> {
        self.cognition_decoys.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    /// `100 · numerator / denominator`, bounded by 100.
    Percent,
    /// `numerator / denominator`, bounded by 3.
    Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricEntry {
    pub name: String,
    pub value: f64,
    /// Exact; rational only for averaged per-record quantities.
    #[serde(serialize_with = "ratio_string")]
    pub numerator: Ratio<u64>,
    pub denominator: u64,
    pub unit: Unit,
    /// Set when the denominator is zero; `value` is then 0.
    pub empty: bool,
}

fn ratio_string<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(r)
}

impl MetricEntry {
    pub fn new(name: impl Into<String>, numerator: Ratio<u64>, denominator: u64, unit: Unit) -> Self {
        let scale = match unit {
            Unit::Percent => 100,
            Unit::Severity => 1,
        };
        let (value, empty) = if denominator == 0 {
            (0.0, true)
        } else {
            let exact = numerator * scale / denominator;
            (*exact.numer() as f64 / *exact.denom() as f64, false)
        };
        Self {
            name: name.into(),
            value,
            numerator,
            denominator,
            unit,
            empty,
        }
    }

    pub fn count(name: impl Into<String>, numerator: u64, denominator: u64) -> Self {
        Self::new(name, Ratio::from_integer(numerator), denominator, Unit::Percent)
    }

    /// Exact value, `None` when empty.
    pub fn exact(&self) -> Option<Ratio<u64>> {
        let scale = match self.unit {
            Unit::Percent => 100,
            Unit::Severity => 1,
        };
        (self.denominator > 0).then(|| self.numerator * scale / self.denominator)
    }
}

/// Named metric entries in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&MetricEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Value of `name`. Panics if absent.
    pub fn value(&self, name: &str) -> f64 {
        self.get(name).unwrap_or_else(|| panic!("no metric `{name}`")).value
    }

    pub fn extend(&mut self, other: MetricReport) {
        self.entries.extend(other.entries);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let rows: Vec<[String; 4]> = self
            .entries
            .iter()
            .map(|e| {
                [
                    e.name.clone(),
                    if e.empty { "n/a".into() } else { format!("{:.2}", e.value) },
                    e.numerator.to_string(),
                    e.denominator.to_string(),
                ]
            })
            .collect();
        let header = ["metric", "value", "numerator", "denominator"].map(String::from);
        let mut widths = header.clone().map(|h| h.len());
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        for r in std::iter::once(&header).chain(&rows) {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                r[0],
                r[1],
                r[2],
                r[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        }
        out
    }
}

struct MentionCounts {
    mentions: u64,
    hallucinated: u64,
    hallucinated_responses: u64,
}

fn count_mentions(records: &[EvalRecord], lexicon: &ObjectLexicon) -> MentionCounts {
    let mut c = MentionCounts {
        mentions: 0,
        hallucinated: 0,
        hallucinated_responses: 0,
    };
    for r in records {
        let mentions = extract_objects(lexicon, &r.response);
        let bad = mentions.iter().filter(|m| !r.ground_truth_objects.contains(*m)).count() as u64;
        c.mentions += mentions.len() as u64;
        c.hallucinated += bad;
        c.hallucinated_responses += u64::from(bad > 0);
    }
    c
}

pub fn chair_object_halbench(records: &[EvalRecord], lexicon: &ObjectLexicon) -> Result<MetricReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyEval);
    }
    let c = count_mentions(records, lexicon);
    Ok(MetricReport {
        entries: vec![
            MetricEntry::count("CHAIR_S", c.hallucinated_responses, records.len() as u64),
            MetricEntry::count("CHAIR_I", c.hallucinated, c.mentions),
        ],
    })
}

/// AMBER generative metrics. `Cog` is included only when `with_cog`, which
/// requires every record to carry a decoy set.
pub fn amber_generative(
    records: &[EvalRecord],
    lexicon: &ObjectLexicon,
    with_cog: bool,
) -> Result<MetricReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyEval);
    }
    if with_cog {
        if let Some(index) = records.iter().position(|r| r.cognition_decoys.is_none()) {
            return Err(MetricsError::MissingDecoys { index });
        }
    }
    let c = count_mentions(records, lexicon);
    let mut cover_sum = Ratio::from_integer(0u64);
    let mut cover_n = 0u64;
    let mut cog_hits = 0u64;
    for r in records {
        let mentions = extract_objects(lexicon, &r.response);
        if !r.ground_truth_objects.is_empty() {
            let distinct: BTreeSet<&String> = mentions.iter().filter(|m| r.ground_truth_objects.contains(*m)).collect();
            cover_sum += Ratio::new(distinct.len() as u64, r.ground_truth_objects.len() as u64);
            cover_n += 1;
        }
        if let Some(decoys) = &r.cognition_decoys {
            cog_hits += mentions
                .iter()
                .filter(|m| !r.ground_truth_objects.contains(*m) && decoys.contains(*m))
                .count() as u64;
        }
    }
    let mut entries = vec![
        MetricEntry::count("CHAIR", c.hallucinated, c.mentions),
        MetricEntry::new("Cover", cover_sum, cover_n, Unit::Percent),
        MetricEntry::count("Hal", c.hallucinated_responses, records.len() as u64),
    ];
    if with_cog {
        entries.push(MetricEntry::count("Cog", cog_hits, c.hallucinated));
    }
    Ok(MetricReport { entries })
}

fn aligned_labels<'a>(
    predicted: &'a [AnnotatedResponse],
    gold: &'a [AnnotatedResponse],
) -> Result<Vec<(HallucinationType, HallucinationType)>, MetricsError> {
    if predicted.len() != gold.len() {
        return Err(MetricsError::AlignmentError {
            index: predicted.len().min(gold.len()),
            reason: format!("{} predicted vs {} gold records", predicted.len(), gold.len()),
        });
    }
    let mut out = Vec::new();
    for (index, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.response.prompt_id() != g.response.prompt_id() {
            return Err(MetricsError::AlignmentError {
                index,
                reason: format!("prompt `{}` vs `{}`", p.response.prompt_id(), g.response.prompt_id()),
            });
        }
        if p.feedback.len() != g.feedback.len() {
            return Err(MetricsError::AlignmentError {
                index,
                reason: format!("{} vs {} sentences", p.feedback.len(), g.feedback.len()),
            });
        }
        out.extend(p.feedback.iter().zip(&g.feedback).map(|(a, b)| (a.h_type, b.h_type)));
    }
    if out.is_empty() {
        return Err(MetricsError::EmptyEval);
    }
    Ok(out)
}

/// F1 as `2tp / (2tp + fp + fn)`, or `None` when the class never occurs.
fn f1_parts(tp: u64, fp: u64, fn_: u64) -> (u64, u64) {
    (2 * tp, 2 * tp + fp + fn_)
}

/// Mean of the per-class F1s over classes whose F1 is defined.
fn macro_f1(name: &str, parts: &[(u64, u64)]) -> MetricEntry {
    let defined: Vec<Ratio<u64>> = parts.iter().filter(|p| p.1 > 0).map(|&(n, d)| Ratio::new(n, d)).collect();
    let sum = defined.iter().fold(Ratio::from_integer(0), |a, b| a + b);
    MetricEntry::new(name, sum, defined.len() as u64, Unit::Percent)
}

/// Sentence-level hallucinated-vs-clean metrics. Positive = hallucinated.
pub fn detection_binary_metrics(
    predicted: &[AnnotatedResponse],
    gold: &[AnnotatedResponse],
) -> Result<MetricReport, MetricsError> {
    let labels = aligned_labels(predicted, gold)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (p, g) in labels {
        match (p.is_hallucination(), g.is_hallucination()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let pos = f1_parts(tp, fp, fn_);
    let neg = f1_parts(tn, fn_, fp);
    Ok(MetricReport {
        entries: vec![
            MetricEntry::count("Precision", tp, tp + fp),
            MetricEntry::count("Recall", tp, tp + fn_),
            MetricEntry::count("Accuracy", tp + tn, tp + fp + fn_ + tn),
            MetricEntry::count("F1", pos.0, pos.1),
            macro_f1("Macro-F1", &[pos, neg]),
        ],
    })
}

/// Four-way type classification metrics.
pub fn detection_multiclass_metrics(
    predicted: &[AnnotatedResponse],
    gold: &[AnnotatedResponse],
) -> Result<MetricReport, MetricsError> {
    let labels = aligned_labels(predicted, gold)?;
    let idx = |t: HallucinationType| HallucinationType::ALL.iter().position(|&x| x == t).unwrap();
    let mut confusion = [[0u64; 4]; 4];
    for (p, g) in &labels {
        confusion[idx(*g)][idx(*p)] += 1;
    }
    let correct: u64 = (0..4).map(|i| confusion[i][i]).sum();
    let mut entries = vec![MetricEntry::count("Accuracy_4way", correct, labels.len() as u64)];
    let mut parts = Vec::new();
    for (k, t) in HallucinationType::ALL.iter().enumerate() {
        let tp = confusion[k][k];
        let fp: u64 = (0..4).filter(|&g| g != k).map(|g| confusion[g][k]).sum();
        let fn_: u64 = (0..4).filter(|&p| p != k).map(|p| confusion[k][p]).sum();
        let f = f1_parts(tp, fp, fn_);
        entries.push(MetricEntry::count(format!("F1_{}", t.as_str()), f.0, f.1));
        parts.push(f);
    }
    entries.push(macro_f1("Macro-F1_4way", &parts));
    Ok(MetricReport { entries })
}

/// Mean per-response aggregated severity.
pub fn severity_score_metric(annotated: &[AnnotatedResponse]) -> Result<MetricReport, MetricsError> {
    if annotated.is_empty() {
        return Err(MetricsError::EmptyEval);
    }
    let mut sum = Ratio::from_integer(0u64);
    for (index, a) in annotated.iter().enumerate() {
        sum += aggregate_severity(&a.feedback)
            .map_err(|_| MetricsError::EmptyFeedback { index })?
            .ratio();
    }
    Ok(MetricReport {
        entries: vec![MetricEntry::new("HS", sum, annotated.len() as u64, Unit::Severity)],
    })
}

/// Metric groups selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricGroup {
    Chair,
    Amber,
    Detect,
    Severity,
}

impl std::str::FromStr for MetricGroup {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "chair" => Ok(Self::Chair),
            "amber" => Ok(Self::Amber),
            "detect" => Ok(Self::Detect),
            "severity" => Ok(Self::Severity),
            other => Err(MetricsError::UnknownMetric(other.to_string())),
        }
    }
}

/// Parses `chair,amber,…` into a sorted, de-duplicated list.
pub fn parse_metric_groups(s: &str) -> Result<Vec<MetricGroup>, MetricsError> {
    let set: BTreeSet<MetricGroup> = s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_, _>>()?;
    if set.is_empty() {
        return Err(MetricsError::UnknownMetric(s.to_string()));
    }
    Ok(set.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{SentenceFeedback, SeverityScore};

    fn lexicon() -> ObjectLexicon {
        ObjectLexicon::new(
            ["dog", "cat", "cup", "unicorn", "traffic light"].map(String::from),
            [("puppy".to_string(), "dog".to_string())],
        )
        .unwrap()
    }

    fn resp(id: &str, text: &str) -> ResponseRecord {
        ResponseRecord::from_text(id, text).unwrap()
    }

    fn gt(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn synonyms_collapse() {
        assert_eq!(extract_objects(&lexicon(), &resp("a", "A dog and a puppy.")), ["dog", "dog"]);
        assert!(extract_objects(&lexicon(), &resp("a", "Nothing here at all.")).is_empty());
    }

    #[test]
    fn whole_words_case_insensitive_longest_first() {
        let l = lexicon();
        assert_eq!(extract_from_text(&l, "Dogs? No, a DOG, a cupboard, a Traffic Light."), ["dog", "traffic light"]);
    }

    #[test]
    fn unknown_synonym_target_rejected() {
        assert!(ObjectLexicon::new(["dog".to_string()], [("kitty".to_string(), "cat".to_string())]).is_err());
    }

    #[test]
    fn chair_s_half() {
        let l = lexicon();
        let recs: Vec<_> = [
            "There is a dog in the image.",
            "There is a unicorn in the image.",
            "The cat is grey.",
            "A cup and a unicorn.",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| EvalRecord::new(resp(&i.to_string(), t), gt(&["dog", "cat", "cup"]), None).unwrap())
        .collect();
        let r = chair_object_halbench(&recs, &l).unwrap();
        assert_eq!(r.value("CHAIR_S"), 50.0);
        assert_eq!(r.get("CHAIR_I").unwrap().numerator, Ratio::from_integer(2));
        assert_eq!(r.get("CHAIR_I").unwrap().denominator, 5);
    }

    #[test]
    fn perfect_enumeration() {
        let l = lexicon();
        let recs = vec![EvalRecord::new(resp("a", "A dog and a cat."), gt(&["dog", "cat"]), Some(gt(&["unicorn"]))).unwrap()];
        let r = amber_generative(&recs, &l, true).unwrap();
        assert_eq!(r.value("CHAIR"), 0.0);
        assert_eq!(r.value("Cover"), 100.0);
        assert_eq!(r.value("Hal"), 0.0);
        assert_eq!(r.value("Cog"), 0.0);
        assert!(r.get("Cog").unwrap().empty);
        let c = chair_object_halbench(&recs, &l).unwrap();
        assert_eq!(c.value("CHAIR_S"), 0.0);
        assert_eq!(c.value("CHAIR_I"), 0.0);
    }

    #[test]
    fn single_decoy_mention() {
        let recs = vec![EvalRecord::new(resp("a", "A dog and a unicorn."), gt(&["dog"]), Some(gt(&["unicorn"]))).unwrap()];
        let r = amber_generative(&recs, &lexicon(), true).unwrap();
        assert_eq!(r.value("CHAIR"), 50.0);
        assert_eq!(r.value("Cog"), 100.0);
    }

    #[test]
    fn cog_needs_decoys() {
        let recs = vec![EvalRecord::new(resp("a", "A dog."), gt(&["dog"]), None).unwrap()];
        assert_eq!(amber_generative(&recs, &lexicon(), true), Err(MetricsError::MissingDecoys { index: 0 }));
        assert!(amber_generative(&recs, &lexicon(), false).is_ok());
    }

    #[test]
    fn decoy_overlap_rejected() {
        assert_eq!(
            EvalRecord::new(resp("a", "A dog."), gt(&["dog"]), Some(gt(&["dog"]))),
            Err(MetricsError::DecoyOverlap("dog".into()))
        );
    }

    fn annotated(id: &str, types: &[HallucinationType]) -> AnnotatedResponse {
        let sentences: Vec<String> = (0..types.len()).map(|i| format!("Sentence number {i}.")).collect();
        let response = ResponseRecord::from_sentences(id, sentences.clone()).unwrap();
        let feedback = types
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if t.is_hallucination() {
                    SentenceFeedback::hallucinated(i, &sentences[i], t, "r", SeverityScore::MAJOR, None)
                } else {
                    SentenceFeedback::clean(i, &sentences[i])
                }
            })
            .collect();
        AnnotatedResponse::new(response, feedback).unwrap()
    }

    use HallucinationType::{Attribute as A, NoHallucination as N, Object as O};

    #[test]
    fn identical_predictions_score_perfectly() {
        let gold = vec![annotated("a", &[O, N, A]), annotated("b", &[N, N])];
        let b = detection_binary_metrics(&gold, &gold).unwrap();
        for m in ["Precision", "Recall", "Accuracy", "F1", "Macro-F1"] {
            assert_eq!(b.value(m), 100.0, "{m}");
        }
        assert_eq!(detection_multiclass_metrics(&gold, &gold).unwrap().value("Accuracy_4way"), 100.0);
    }

    #[test]
    fn all_clean_predictions() {
        let gold = vec![annotated("a", &[O, N, A])];
        let pred = vec![annotated("a", &[N, N, N])];
        let b = detection_binary_metrics(&pred, &gold).unwrap();
        assert_eq!(b.value("Recall"), 0.0);
        assert!(b.get("Precision").unwrap().empty);
    }

    #[test]
    fn object_attribute_swap() {
        let gold = vec![annotated("a", &[O, O, O])];
        let pred = vec![annotated("a", &[A, A, A])];
        let m = detection_multiclass_metrics(&pred, &gold).unwrap();
        assert_eq!(m.value("F1_object"), 0.0);
        assert!(!m.get("F1_object").unwrap().empty);
    }

    #[test]
    fn misalignment_reports_index() {
        let gold = vec![annotated("a", &[O]), annotated("b", &[O, N])];
        let pred = vec![annotated("a", &[O]), annotated("b", &[O])];
        assert!(matches!(
            detection_binary_metrics(&pred, &gold),
            Err(MetricsError::AlignmentError { index: 1, .. })
        ));
    }

    #[test]
    fn severity_examples() {
        assert_eq!(severity_score_metric(&[annotated("a", &[N, N])]).unwrap().value("HS"), 0.0);
        assert_eq!(severity_score_metric(&[annotated("a", &[O, O])]).unwrap().value("HS"), 3.0);
    }

    #[test]
    fn groups_parse() {
        assert_eq!(
            parse_metric_groups("severity,chair,chair").unwrap(),
            [MetricGroup::Chair, MetricGroup::Severity]
        );
        assert!(parse_metric_groups("chair,bleu").is_err());
    }

    #[test]
    fn table_is_aligned() {
        let r = MetricReport {
            entries: vec![MetricEntry::count("CHAIR_S", 1, 4), MetricEntry::count("X", 0, 0)],
        };
        let t = r.to_table();
        let lens: BTreeSet<usize> = t.lines().map(str::len).collect();
        assert_eq!(lens.len(), 1, "{t}");
        assert!(t.contains("n/a"));
    }
}
