//! Deterministic in-process stand-ins for the detection and rewriting
//! models, plus the synthetic corpus generator they are checked against.
//!
//! Hallucination reasons carry a machine-readable tail, `… | decoy→fix`,
//! naming the offending span and its scene-consistent replacement. An empty
//! replacement (`decoy→`) means the sentence is dropped on rewrite.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::world::{Scene, SyntheticWorld, Template};
use super::{DetectorReply, DetectorRequest, PipelineError, RewriterReply, RewriterRequest};
use crate::metrics::EvalRecord;
use crate::types::{
    validate_annotated, AnnotatedResponse, DatasetMeta, FeedbackDataset, FeedbackRecord,
    HallucinationType, PromptRecord, RegionAnnotation, ResponseRecord, SentenceFeedback,
    SeverityScore, Task,
};

/// Separator between the prose reason and the structured rewrite tail.
pub const REASON_TAIL_SEP: &str = " | ";
pub const REPLACE_ARROW: char = '→';

const DDG_INSTRUCTIONS: &[&str] = &[
    "Describe this image in detail.",
    "Give a thorough description of everything visible in the picture.",
    "What is happening in this scene? Describe it carefully.",
    "Write a detailed caption for the image.",
];

const VCR_INSTRUCTIONS: &[&str] = &[
    "What might the people here do next, and why?",
    "Explain how the objects in the scene relate to each other.",
    "What can you infer about this place from the image?",
];

pub fn severity_reason(severity: SeverityScore) -> Option<String> {
    let text = match severity.value() {
        0 => return None,
        1 => "minor: a small detail is wrong and the overall scene is unaffected",
        2 => "moderate: a noticeable detail is wrong but the scene is still understood",
        _ => "major: the error changes what the scene is understood to contain",
    };
    Some(text.to_string())
}

fn with_tail(reason: String, decoy: &str, replacement: Option<&str>) -> String {
    format!(
        "{reason}{REASON_TAIL_SEP}{decoy}{REPLACE_ARROW}{}",
        replacement.unwrap_or("")
    )
}

fn flagged(
    index: usize,
    sentence: &str,
    h_type: HallucinationType,
    reason: String,
    severity: SeverityScore,
) -> SentenceFeedback {
    SentenceFeedback::hallucinated(index, sentence, h_type, reason, severity, severity_reason(severity))
}

/// Feedback for one sentence of a response about `scene`.
pub fn judge_sentence(
    world: &SyntheticWorld,
    scene: &Scene,
    index: usize,
    sentence: &str,
) -> Result<SentenceFeedback, PipelineError> {
    let unrecognized = || PipelineError::UnrecognizedSentence {
        index,
        sentence: sentence.to_string(),
    };
    let template = Template::parse(sentence).ok_or_else(unrecognized)?;
    let lex = &world.lexicon;

    for surface in template.objects() {
        if let Some(e) = lex.object(surface) {
            let reason = with_tail(format!("there is no {surface} in the image"), surface, None);
            return Ok(flagged(index, sentence, HallucinationType::Object, reason, e.severity));
        }
        if !scene.has_object(world.canonical(surface)) {
            return Err(unrecognized());
        }
    }

    match &template {
        Template::Presence { .. } => Ok(SentenceFeedback::clean(index, sentence)),
        Template::Attribute { object, attribute } => {
            let object = world.canonical(object);
            if let Some(e) = lex.attribute(attribute) {
                let fix = scene.attributes.get(object).and_then(|v| v.first());
                let reason = with_tail(
                    format!("the {object} is not {attribute}"),
                    attribute,
                    fix.map(String::as_str),
                );
                Ok(flagged(index, sentence, HallucinationType::Attribute, reason, e.severity))
            } else if scene.has_attribute(object, attribute) {
                Ok(SentenceFeedback::clean(index, sentence))
            } else {
                Err(unrecognized())
            }
        }
        Template::Relation {
            subject,
            predicate,
            object,
        } => {
            let (s, o) = (world.canonical(subject), world.canonical(object));
            if let Some(e) = lex.predicate(predicate) {
                let reason = with_tail(
                    format!("the {s} is not {predicate} the {o}"),
                    predicate,
                    scene.predicate_between(s, o),
                );
                Ok(flagged(index, sentence, HallucinationType::Relationship, reason, e.severity))
            } else if scene.has_relation(s, predicate, o) {
                Ok(SentenceFeedback::clean(index, sentence))
            } else {
                Err(unrecognized())
            }
        }
    }
}

/// Flags every sentence mentioning a lexicon decoy; clean sentences get the
/// canonical clean tuple.
pub fn reference_detect(
    world: &SyntheticWorld,
    req: &DetectorRequest,
) -> Result<DetectorReply, PipelineError> {
    let scene = world
        .scene(&req.prompt.image_ref)
        .ok_or_else(|| PipelineError::UnknownScene(req.prompt.image_ref.clone()))?;
    let feedback = req
        .response
        .sentences()
        .iter()
        .enumerate()
        .map(|(i, s)| judge_sentence(world, scene, i, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DetectorReply { feedback })
}

/// Splits `reason` into its `(decoy, replacement)` tail.
pub fn parse_reason_tail(reason: &str) -> Option<(&str, Option<&str>)> {
    let (_, tail) = reason.rsplit_once(REASON_TAIL_SEP)?;
    let (decoy, fix) = tail.split_once(REPLACE_ARROW)?;
    let decoy = decoy.trim();
    if decoy.is_empty() {
        return None;
    }
    let fix = fix.trim();
    Some((decoy, (!fix.is_empty()).then_some(fix)))
}

/// Byte offset of the first whole-word occurrence of `needle`.
fn find_span(haystack: &str, needle: &str) -> Option<usize> {
    let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric() && c != '-');
    haystack.match_indices(needle).map(|(i, _)| i).find(|&i| {
        boundary(haystack[..i].chars().last()) && boundary(haystack[i + needle.len()..].chars().next())
    })
}

/// Template rewrite driven by the reason tails: replaces each flagged span,
/// drops sentences with no replacement, passes clean sentences verbatim.
pub fn reference_rewrite(req: &RewriterRequest) -> Result<RewriterReply, PipelineError> {
    let a = &req.annotated;
    if !validate_annotated(a).is_empty() {
        return Err(PipelineError::InvalidAnnotation(req.prompt.prompt_id.clone()));
    }
    let mut out = Vec::with_capacity(a.feedback.len());
    for (index, (sentence, fb)) in a.response.sentences().iter().zip(&a.feedback).enumerate() {
        if !fb.is_hallucinated() {
            out.push(sentence.clone());
            continue;
        }
        let bad = |reason: &str| PipelineError::UnrewritableSentence {
            index,
            reason: reason.to_string(),
        };
        let reason = fb.h_reason.as_deref().ok_or_else(|| bad("missing reason"))?;
        let (decoy, fix) = parse_reason_tail(reason).ok_or_else(|| bad("reason has no `decoy→replacement` tail"))?;
        let at = find_span(sentence, decoy).ok_or_else(|| bad("decoy span not found in sentence"))?;
        if let Some(fix) = fix {
            out.push(format!("{}{}{}", &sentence[..at], fix, &sentence[at + decoy.len()..]));
        }
    }
    if out.is_empty() {
        return Err(PipelineError::EmptyRewrite(req.prompt.prompt_id.clone()));
    }
    let rewritten = ResponseRecord::from_sentences(req.prompt.prompt_id.clone(), out)
        .map_err(|_| PipelineError::EmptyRewrite(req.prompt.prompt_id.clone()))?;
    Ok(RewriterReply { rewritten })
}

/// Generated corpus with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dataset: FeedbackDataset,
    pub eval_records: Vec<EvalRecord>,
}

fn clean_sentence(world: &SyntheticWorld, scene: &Scene, rng: &mut ChaCha8Rng) -> Template {
    let with_attrs: Vec<&String> = scene.attributes.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| k).collect();
    match rng.random_range(0..3) {
        0 => {
            let object = scene.objects.choose(rng).unwrap();
            let synonyms: Vec<&String> = world
                .synonyms
                .iter()
                .filter(|(_, t)| *t == object)
                .map(|(s, _)| s)
                .collect();
            let surface = if !synonyms.is_empty() && rng.random_bool(0.3) {
                synonyms.choose(rng).unwrap()
            } else {
                object
            };
            Template::Presence {
                object: surface.to_string(),
            }
        }
        1 => {
            let object = *with_attrs.choose(rng).unwrap();
            let attribute = scene.attributes[object].choose(rng).unwrap();
            Template::Attribute {
                object: object.clone(),
                attribute: attribute.clone(),
            }
        }
        _ => match scene.relations.choose(rng) {
            Some(r) => Template::Relation {
                subject: r.subject.clone(),
                predicate: r.predicate.clone(),
                object: r.object.clone(),
            },
            None => Template::Presence {
                object: scene.objects.choose(rng).unwrap().clone(),
            },
        },
    }
}

fn planted_sentence(
    world: &SyntheticWorld,
    scene: &Scene,
    kind: HallucinationType,
    rng: &mut ChaCha8Rng,
) -> Template {
    let lex = &world.lexicon;
    match kind {
        HallucinationType::Object => {
            let decoy = if !scene.pitfalls.is_empty() && rng.random_bool(0.5) {
                scene.pitfalls.choose(rng).unwrap().clone()
            } else {
                lex.objects.choose(rng).unwrap().item.clone()
            };
            Template::Presence { object: decoy }
        }
        HallucinationType::Attribute => {
            let objects: Vec<&String> = scene.attributes.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| k).collect();
            Template::Attribute {
                object: (*objects.choose(rng).unwrap()).clone(),
                attribute: lex.attributes.choose(rng).unwrap().item.clone(),
            }
        }
        _ => match scene.relations.choose(rng) {
            Some(r) => Template::Relation {
                subject: r.subject.clone(),
                predicate: lex.predicates.choose(rng).unwrap().item.clone(),
                object: r.object.clone(),
            },
            None => planted_sentence(world, scene, HallucinationType::Attribute, rng),
        },
    }
}

/// Generates `n` template responses over random scenes; each sentence is a
/// planted hallucination with probability `hallucination_rate`.
///
/// A response whose sentences are all object hallucinations would rewrite to
/// nothing, so its last sentence is re-planted as an attribute
/// hallucination.
pub fn generate_synthetic_corpus(
    world: &SyntheticWorld,
    n: usize,
    hallucination_rate: f64,
    seed: u64,
) -> Result<SyntheticCorpus, PipelineError> {
    if !(0.0..=1.0).contains(&hallucination_rate) {
        return Err(PipelineError::InvalidRate(hallucination_rate));
    }
    if n == 0 {
        return Err(PipelineError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [
        HallucinationType::Object,
        HallucinationType::Attribute,
        HallucinationType::Relationship,
    ];
    let mut dataset = FeedbackDataset::new(DatasetMeta::new(format!("synthetic:seed={seed}"), 0));
    let mut eval_records = Vec::with_capacity(n);

    for i in 0..n {
        let scene = world.scenes.choose(&mut rng).unwrap();
        let prompt_id = format!("syn-{i:05}");
        let (task, instruction, regions) = if rng.random_bool(0.75) {
            let regions = scene
                .objects
                .iter()
                .map(|o| RegionAnnotation {
                    object_label: o.clone(),
                    bbox: [
                        rng.random_range(0..400),
                        rng.random_range(0..300),
                        rng.random_range(16..240),
                        rng.random_range(16..180),
                    ],
                })
                .collect();
            (Task::Ddg, *DDG_INSTRUCTIONS.choose(&mut rng).unwrap(), Some(regions))
        } else {
            (Task::Vcr, *VCR_INSTRUCTIONS.choose(&mut rng).unwrap(), None)
        };
        let prompt = PromptRecord::new(prompt_id.clone(), task, instruction, scene.scene_id.clone(), regions)?;

        let k = rng.random_range(3..=5);
        let mut planned: Vec<(Template, Option<HallucinationType>)> = (0..k)
            .map(|_| {
                if rng.random_bool(hallucination_rate) {
                    let kind = *kinds.choose(&mut rng).unwrap();
                    (planted_sentence(world, scene, kind, &mut rng), Some(kind))
                } else {
                    (clean_sentence(world, scene, &mut rng), None)
                }
            })
            .collect();
        if planned.iter().all(|(_, k)| *k == Some(HallucinationType::Object)) {
            let last = planned.last_mut().unwrap();
            *last = (
                planted_sentence(world, scene, HallucinationType::Attribute, &mut rng),
                Some(HallucinationType::Attribute),
            );
        }

        let sentences: Vec<String> = planned.iter().map(|(t, _)| t.render()).collect();
        let feedback = sentences
            .iter()
            .enumerate()
            .map(|(j, s)| judge_sentence(world, scene, j, s))
            .collect::<Result<Vec<_>, _>>()?;
        debug_assert!(feedback
            .iter()
            .zip(&planned)
            .all(|(f, (_, k))| f.is_hallucinated() == k.is_some()));
        let response = ResponseRecord::from_sentences(prompt_id.clone(), sentences)?;
        let annotated = AnnotatedResponse::new(response.clone(), feedback)?;

        let ground_truth_objects: BTreeSet<String> = scene.objects.iter().cloned().collect();
        let cognition_decoys: BTreeSet<String> = scene.pitfalls.iter().cloned().collect();
        eval_records.push(EvalRecord::new(response, ground_truth_objects, Some(cognition_decoys))?);
        dataset.push(FeedbackRecord { prompt, annotated })?;
    }
    Ok(SyntheticCorpus {
        dataset,
        eval_records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(scene: &str, sentences: &[&str]) -> DetectorRequest {
        DetectorRequest {
            prompt: PromptRecord::new("p", Task::Vcr, "why?", scene, None).unwrap(),
            response: ResponseRecord::from_sentences("p", sentences.iter().map(|s| s.to_string()).collect()).unwrap(),
        }
    }

    #[test]
    fn clean_response_is_all_clean() {
        let w = SyntheticWorld::standard();
        let req = request("kitchen", &["There is a cup in the image.", "The cup is on the table.", "The mug is white."]);
        let reply = reference_detect(&w, &req).unwrap();
        assert!(reply.feedback.iter().all(|f| !f.is_hallucinated()));
    }

    #[test]
    fn unicorn_is_major_object_hallucination() {
        let w = SyntheticWorld::standard();
        let req = request("park", &["The dog is brown.", "There is a unicorn in the image."]);
        let reply = reference_detect(&w, &req).unwrap();
        let f = &reply.feedback[1];
        assert_eq!(f.h_type, HallucinationType::Object);
        assert_eq!(f.severity, SeverityScore::MAJOR);
        assert_eq!(parse_reason_tail(f.h_reason.as_deref().unwrap()), Some(("unicorn", None)));
    }

    #[test]
    fn relation_and_attribute_decoys() {
        let w = SyntheticWorld::standard();
        let req = request("kitchen", &["The cup is flying over the table.", "The table is purple."]);
        let reply = reference_detect(&w, &req).unwrap();
        assert_eq!(reply.feedback[0].h_type, HallucinationType::Relationship);
        assert_eq!(
            parse_reason_tail(reply.feedback[0].h_reason.as_deref().unwrap()),
            Some(("flying over", Some("on")))
        );
        assert_eq!(reply.feedback[1].h_type, HallucinationType::Attribute);
        assert_eq!(reply.feedback[1].severity, SeverityScore::MINOR);
    }

    #[test]
    fn off_template_sentence_is_unrecognized() {
        let w = SyntheticWorld::standard();
        for bad in ["A dog runs.", "There is a cow in the image.", "The cup is green."] {
            let err = reference_detect(&w, &request("kitchen", &["The cup is white.", bad])).unwrap_err();
            assert!(matches!(err, PipelineError::UnrecognizedSentence { index: 1, .. }), "{bad}");
        }
        assert!(matches!(
            reference_detect(&w, &request("moon", &["The cup is white."])),
            Err(PipelineError::UnknownScene(_))
        ));
    }

    fn rewrite(w: &SyntheticWorld, scene: &str, sentences: &[&str]) -> Result<RewriterReply, PipelineError> {
        let req = request(scene, sentences);
        let fb = reference_detect(w, &req).unwrap().feedback;
        reference_rewrite(&RewriterRequest {
            prompt: req.prompt,
            annotated: AnnotatedResponse::new(req.response, fb).unwrap(),
        })
    }

    #[test]
    fn rewrite_pass_through_replace_and_drop() {
        let w = SyntheticWorld::standard();
        let clean = ["The cup is white.", "The cat is under the table."];
        assert_eq!(rewrite(&w, "kitchen", &clean).unwrap().rewritten.sentences(), clean);

        let out = rewrite(&w, "kitchen", &["The cup is white.", "There is a toaster in the image.", "The table is glowing."]).unwrap();
        assert_eq!(out.rewritten.sentences(), ["The cup is white.", "The table is wooden."]);
    }

    #[test]
    fn rewrite_rejects_malformed_reason() {
        let req = request("kitchen", &["There is a unicorn in the image."]);
        let fb = vec![SentenceFeedback::hallucinated(
            0,
            "There is a unicorn in the image.",
            HallucinationType::Object,
            "no unicorn here",
            SeverityScore::MAJOR,
            None,
        )];
        let err = reference_rewrite(&RewriterRequest {
            prompt: req.prompt,
            annotated: AnnotatedResponse::new(req.response, fb).unwrap(),
        })
        .unwrap_err();
        assert!(matches!(err, PipelineError::UnrewritableSentence { index: 0, .. }));
    }

    #[test]
    fn span_search_respects_word_boundaries() {
        assert_eq!(find_span("The cat is on the table.", "on"), Some(11));
        assert_eq!(find_span("The onion is red.", "on"), None);
        assert_eq!(find_span("There is a bicycle.", "bicycle"), Some(11));
    }

    #[test]
    fn generator_rates_and_rate_validation() {
        let w = SyntheticWorld::standard();
        let c = generate_synthetic_corpus(&w, 20, 0.0, 3).unwrap();
        assert!(c.dataset.records().iter().all(|r| r.annotated.is_all_clean()));
        let c = generate_synthetic_corpus(&w, 10, 1.0, 3).unwrap();
        assert!(c.dataset.records().iter().all(|r| !r.annotated.is_all_clean()));
        assert!(matches!(generate_synthetic_corpus(&w, 5, 1.5, 0), Err(PipelineError::InvalidRate(_))));
        assert!(matches!(generate_synthetic_corpus(&w, 0, 0.5, 0), Err(PipelineError::EmptyCorpus)));
    }
}
