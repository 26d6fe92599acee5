//! Synthetic scenes, the decoy lexicon and the sentence templates shared by
//! the generator, the reference detector and the metrics ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{HallucinationType, SeverityScore};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorldError {
    #[error("decoy `{0}` also appears in scene ground truth")]
    DecoyInGroundTruth(String),
    #[error("scene `{0}` is defined twice")]
    DuplicateScene(String),
    #[error("scene `{scene}` references unknown object `{object}`")]
    UnknownObject { scene: String, object: String },
    #[error("`{0}` must be a single lower-case word")]
    NotAWord(String),
    #[error("predicate `{0}` must be lower-case words and must not contain `the`")]
    BadPredicate(String),
    #[error("scene `{0}` needs at least one object with attributes")]
    NoAttributes(String),
    #[error("synonym `{surface}` targets unknown object `{target}`")]
    BadSynonym { surface: String, target: String },
    #[error("world has no scenes")]
    Empty,
    #[error("lexicon has no decoy {0}")]
    EmptyLexicon(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub objects: Vec<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    /// Decoy objects this scene is especially prone to (AMBER-style
    /// cognition pitfalls). Must be lexicon decoys.
    #[serde(default)]
    pub pitfalls: Vec<String>,
}

impl Scene {
    pub fn has_object(&self, o: &str) -> bool {
        self.objects.iter().any(|x| x == o)
    }

    pub fn has_attribute(&self, o: &str, a: &str) -> bool {
        self.attributes.get(o).is_some_and(|v| v.iter().any(|x| x == a))
    }

    pub fn predicate_between(&self, s: &str, o: &str) -> Option<&str> {
        self.relations
            .iter()
            .find(|r| r.subject == s && r.object == o)
            .map(|r| r.predicate.as_str())
    }

    pub fn has_relation(&self, s: &str, p: &str, o: &str) -> bool {
        self.relations
            .iter()
            .any(|r| r.subject == s && r.predicate == p && r.object == o)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoyEntry {
    pub item: String,
    pub severity: SeverityScore,
}

/// Items that never occur in any scene, each with its fixed severity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoyLexicon {
    pub objects: Vec<DecoyEntry>,
    pub attributes: Vec<DecoyEntry>,
    pub predicates: Vec<DecoyEntry>,
}

impl DecoyLexicon {
    fn find<'a>(list: &'a [DecoyEntry], item: &str) -> Option<&'a DecoyEntry> {
        list.iter().find(|e| e.item == item)
    }

    pub fn object(&self, item: &str) -> Option<&DecoyEntry> {
        Self::find(&self.objects, item)
    }

    pub fn attribute(&self, item: &str) -> Option<&DecoyEntry> {
        Self::find(&self.attributes, item)
    }

    pub fn predicate(&self, item: &str) -> Option<&DecoyEntry> {
        Self::find(&self.predicates, item)
    }

    /// Every decoy string of the given kind.
    pub fn items(&self, kind: HallucinationType) -> Vec<&str> {
        let list = match kind {
            HallucinationType::Object => &self.objects,
            HallucinationType::Attribute => &self.attributes,
            HallucinationType::Relationship => &self.predicates,
            HallucinationType::NoHallucination => return Vec::new(),
        };
        list.iter().map(|e| e.item.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub scenes: Vec<Scene>,
    pub lexicon: DecoyLexicon,
    /// Alternative surface forms, `surface → canonical object`.
    #[serde(default)]
    pub synonyms: BTreeMap<String, String>,
}

fn is_word(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '-')
}

impl SyntheticWorld {
    pub fn new(
        scenes: Vec<Scene>,
        lexicon: DecoyLexicon,
        synonyms: BTreeMap<String, String>,
    ) -> Result<Self, WorldError> {
        let w = Self {
            scenes,
            lexicon,
            synonyms,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.scenes.is_empty() {
            return Err(WorldError::Empty);
        }
        for (name, list) in [
            ("objects", &self.lexicon.objects),
            ("attributes", &self.lexicon.attributes),
            ("predicates", &self.lexicon.predicates),
        ] {
            if list.is_empty() {
                return Err(WorldError::EmptyLexicon(name));
            }
        }
        let mut ids = BTreeSet::new();
        let mut gt_objects = BTreeSet::new();
        let mut gt_attrs = BTreeSet::new();
        let mut gt_preds = BTreeSet::new();
        for s in &self.scenes {
            if !ids.insert(s.scene_id.as_str()) {
                return Err(WorldError::DuplicateScene(s.scene_id.clone()));
            }
            for o in &s.objects {
                if !is_word(o) {
                    return Err(WorldError::NotAWord(o.clone()));
                }
                gt_objects.insert(o.as_str());
            }
            let unknown = |o: &String| WorldError::UnknownObject {
                scene: s.scene_id.clone(),
                object: o.clone(),
            };
            for (o, attrs) in &s.attributes {
                if !s.has_object(o) {
                    return Err(unknown(o));
                }
                for a in attrs {
                    if !is_word(a) {
                        return Err(WorldError::NotAWord(a.clone()));
                    }
                    gt_attrs.insert(a.as_str());
                }
            }
            if !s.attributes.values().any(|v| !v.is_empty()) {
                return Err(WorldError::NoAttributes(s.scene_id.clone()));
            }
            for r in &s.relations {
                for o in [&r.subject, &r.object] {
                    if !s.has_object(o) {
                        return Err(unknown(o));
                    }
                }
                check_predicate(&r.predicate)?;
                gt_preds.insert(r.predicate.as_str());
            }
            for p in &s.pitfalls {
                if self.lexicon.object(p).is_none() {
                    return Err(unknown(p));
                }
            }
        }
        for e in &self.lexicon.objects {
            if !is_word(&e.item) {
                return Err(WorldError::NotAWord(e.item.clone()));
            }
            if gt_objects.contains(e.item.as_str()) || self.synonyms.contains_key(&e.item) {
                return Err(WorldError::DecoyInGroundTruth(e.item.clone()));
            }
        }
        for e in &self.lexicon.attributes {
            if !is_word(&e.item) {
                return Err(WorldError::NotAWord(e.item.clone()));
            }
            if gt_attrs.contains(e.item.as_str()) {
                return Err(WorldError::DecoyInGroundTruth(e.item.clone()));
            }
        }
        for e in &self.lexicon.predicates {
            check_predicate(&e.item)?;
            if gt_preds.contains(e.item.as_str()) {
                return Err(WorldError::DecoyInGroundTruth(e.item.clone()));
            }
        }
        for (surface, target) in &self.synonyms {
            if !is_word(surface) || !gt_objects.contains(target.as_str()) {
                return Err(WorldError::BadSynonym {
                    surface: surface.clone(),
                    target: target.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn scene(&self, scene_id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.scene_id == scene_id)
    }

    /// Maps a surface form to its canonical object name.
    pub fn canonical<'a>(&'a self, word: &'a str) -> &'a str {
        self.synonyms.get(word).map(String::as_str).unwrap_or(word)
    }

    /// Built-in world used by the CLI and the examples.
    pub fn standard() -> Self {
        fn s(x: &str) -> String {
            x.to_string()
        }
        fn rel(a: &str, p: &str, b: &str) -> Relation {
            Relation {
                subject: s(a),
                predicate: s(p),
                object: s(b),
            }
        }
        fn attrs(pairs: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
            pairs
                .iter()
                .map(|(o, a)| (s(o), a.iter().map(|x| s(x)).collect()))
                .collect()
        }
        fn decoys(items: &[(&str, u8)]) -> Vec<DecoyEntry> {
            items
                .iter()
                .map(|(i, sev)| DecoyEntry {
                    item: s(i),
                    severity: SeverityScore::new(*sev).unwrap(),
                })
                .collect()
        }
        let scenes = vec![
            Scene {
                scene_id: s("kitchen"),
                objects: vec![s("table"), s("cup"), s("kettle"), s("window"), s("cat")],
                attributes: attrs(&[
                    ("table", &["wooden", "round"]),
                    ("cup", &["white"]),
                    ("kettle", &["silver"]),
                    ("cat", &["sleepy", "grey"]),
                ]),
                relations: vec![
                    rel("cup", "on", "table"),
                    rel("kettle", "next to", "cup"),
                    rel("cat", "under", "table"),
                ],
                pitfalls: vec![s("toaster"), s("fork")],
            },
            Scene {
                scene_id: s("park"),
                objects: vec![s("dog"), s("bench"), s("tree"), s("ball"), s("man")],
                attributes: attrs(&[
                    ("dog", &["brown", "small"]),
                    ("bench", &["green"]),
                    ("tree", &["tall"]),
                    ("ball", &["red"]),
                ]),
                relations: vec![
                    rel("dog", "chasing", "ball"),
                    rel("man", "sitting on", "bench"),
                    rel("bench", "under", "tree"),
                ],
                pitfalls: vec![s("frisbee"), s("bicycle")],
            },
            Scene {
                scene_id: s("street"),
                objects: vec![s("car"), s("bus"), s("sign"), s("woman"), s("umbrella")],
                attributes: attrs(&[
                    ("car", &["blue"]),
                    ("bus", &["yellow", "long"]),
                    ("umbrella", &["black"]),
                ]),
                relations: vec![
                    rel("woman", "holding", "umbrella"),
                    rel("car", "behind", "bus"),
                    rel("sign", "above", "car"),
                ],
                pitfalls: vec![s("bicycle"), s("traffic-light")],
            },
            Scene {
                scene_id: s("beach"),
                objects: vec![s("surfboard"), s("boy"), s("wave"), s("towel"), s("bucket")],
                attributes: attrs(&[
                    ("surfboard", &["orange"]),
                    ("towel", &["striped"]),
                    ("wave", &["large"]),
                ]),
                relations: vec![
                    rel("boy", "carrying", "surfboard"),
                    rel("bucket", "on", "towel"),
                ],
                pitfalls: vec![s("boat"), s("seagull")],
            },
            Scene {
                scene_id: s("office"),
                objects: vec![s("desk"), s("laptop"), s("chair"), s("lamp"), s("plant")],
                attributes: attrs(&[
                    ("desk", &["wooden"]),
                    ("laptop", &["open", "silver"]),
                    ("lamp", &["bright"]),
                    ("plant", &["green"]),
                ]),
                relations: vec![
                    rel("laptop", "on", "desk"),
                    rel("chair", "in front of", "desk"),
                    rel("lamp", "next to", "laptop"),
                ],
                pitfalls: vec![s("keyboard"), s("phone")],
            },
            Scene {
                scene_id: s("farm"),
                objects: vec![s("cow"), s("fence"), s("barn"), s("girl"), s("bucket")],
                attributes: attrs(&[
                    ("cow", &["black", "spotted"]),
                    ("barn", &["red"]),
                    ("fence", &["wooden"]),
                ]),
                relations: vec![
                    rel("girl", "feeding", "cow"),
                    rel("cow", "behind", "fence"),
                    rel("bucket", "next to", "fence"),
                ],
                pitfalls: vec![s("horse"), s("tractor")],
            },
        ];
        let lexicon = DecoyLexicon {
            objects: decoys(&[
                ("unicorn", 3),
                ("toaster", 2),
                ("fork", 1),
                ("frisbee", 2),
                ("bicycle", 3),
                ("traffic-light", 2),
                ("boat", 3),
                ("seagull", 1),
                ("keyboard", 1),
                ("phone", 2),
                ("horse", 3),
                ("tractor", 3),
            ]),
            attributes: decoys(&[
                ("purple", 1),
                ("broken", 2),
                ("enormous", 2),
                ("transparent", 3),
                ("glowing", 3),
                ("tiny", 1),
            ]),
            predicates: decoys(&[
                ("flying over", 3),
                ("inside", 2),
                ("on top of", 2),
                ("eating", 3),
                ("beside", 1),
            ]),
        };
        let synonyms = [
            ("puppy", "dog"),
            ("automobile", "car"),
            ("mug", "cup"),
            ("kitten", "cat"),
            ("notebook", "laptop"),
            ("lady", "woman"),
        ]
        .into_iter()
        .map(|(a, b)| (s(a), s(b)))
        .collect();
        Self::new(scenes, lexicon, synonyms).expect("built-in world is valid")
    }
}

fn check_predicate(p: &str) -> Result<(), WorldError> {
    let ok = !p.is_empty() && p.split(' ').all(|w| is_word(w) && w != "the");
    if ok {
        Ok(())
    } else {
        Err(WorldError::BadPredicate(p.to_string()))
    }
}

/// The three sentence shapes every synthetic response is built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Template {
    /// `There is a {object} in the image.`
    Presence { object: String },
    /// `The {object} is {attribute}.`
    Attribute { object: String, attribute: String },
    /// `The {subject} is {predicate} the {object}.`
    Relation {
        subject: String,
        predicate: String,
        object: String,
    },
}

impl Template {
    pub fn render(&self) -> String {
        match self {
            Template::Presence { object } => format!("There is a {object} in the image."),
            Template::Attribute { object, attribute } => format!("The {object} is {attribute}."),
            Template::Relation {
                subject,
                predicate,
                object,
            } => format!("The {subject} is {predicate} the {object}."),
        }
    }

    /// Inverse of [`Template::render`]; `None` if the sentence has no
    /// template shape.
    pub fn parse(sentence: &str) -> Option<Template> {
        let body = sentence.strip_suffix('.')?;
        let words: Vec<&str> = body.split(' ').collect();
        if words.iter().any(|w| !is_word(w) && !matches!(*w, "There" | "The")) {
            return None;
        }
        match words.as_slice() {
            ["There", "is", "a", obj, "in", "the", "image"] => Some(Template::Presence {
                object: obj.to_string(),
            }),
            ["The", obj, "is", attr] => Some(Template::Attribute {
                object: obj.to_string(),
                attribute: attr.to_string(),
            }),
            ["The", subj, "is", rest @ ..] if rest.len() >= 3 => {
                let (obj, rest) = rest.split_last()?;
                let (the, pred) = rest.split_last()?;
                if *the != "the" || pred.is_empty() || pred.contains(&"the") {
                    return None;
                }
                Some(Template::Relation {
                    subject: subj.to_string(),
                    predicate: pred.join(" "),
                    object: obj.to_string(),
                })
            }
            _ => None,
        }
    }

    /// Object surface forms mentioned by the sentence, in order.
    pub fn objects(&self) -> Vec<&str> {
        match self {
            Template::Presence { object } | Template::Attribute { object, .. } => vec![object],
            Template::Relation { subject, object, .. } => vec![subject, object],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_world_is_valid() {
        let w = SyntheticWorld::standard();
        assert_eq!(w.validate(), Ok(()));
        assert_eq!(w.canonical("puppy"), "dog");
        assert_eq!(w.canonical("dog"), "dog");
    }

    #[test]
    fn decoy_overlap_is_rejected() {
        let mut w = SyntheticWorld::standard();
        w.lexicon.objects.push(DecoyEntry {
            item: "cup".into(),
            severity: SeverityScore::MAJOR,
        });
        assert_eq!(w.validate(), Err(WorldError::DecoyInGroundTruth("cup".into())));
        let mut w = SyntheticWorld::standard();
        w.lexicon.predicates.push(DecoyEntry {
            item: "on".into(),
            severity: SeverityScore::MINOR,
        });
        assert_eq!(w.validate(), Err(WorldError::DecoyInGroundTruth("on".into())));
    }

    #[test]
    fn templates_roundtrip() {
        let cases = [
            Template::Presence { object: "unicorn".into() },
            Template::Attribute {
                object: "cup".into(),
                attribute: "white".into(),
            },
            Template::Relation {
                subject: "chair".into(),
                predicate: "in front of".into(),
                object: "desk".into(),
            },
        ];
        for t in cases {
            assert_eq!(Template::parse(&t.render()), Some(t));
        }
    }

    #[test]
    fn parse_rejects_free_text() {
        assert_eq!(Template::parse("A dog runs."), None);
        assert_eq!(Template::parse("There is a dog in the image"), None);
        assert_eq!(Template::parse("The dog is near the the cat."), None);
        assert_eq!(Template::parse("The Dog is brown."), None);
    }
}
