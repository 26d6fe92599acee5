//! JSONL persistence: one UTF-8 JSON record per LF-terminated line.
//!
//! Three line shapes share the flattened prompt fields (`prompt_id`, `task`,
//! `instruction`, `image_ref`, `region_annotations`):
//!
//! - responses: `+ sentences`
//! - annotated responses: `+ sentences, feedback`
//! - preference pairs: `+ rejected {sentences, feedback}, chosen {sentences},
//!   aggregated_severity`
//!
//! Dataset metadata is kept beside the JSONL file in `<file>.meta.json`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    AggregatedSeverity, AnnotatedResponse, DatasetMeta, FeedbackDataset, FeedbackRecord,
    PreferenceDataset, PreferencePair, PromptRecord, ResponseRecord, SentenceFeedback,
    TypesError,
};

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: TypesError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Types(#[from] TypesError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JsonlError + '_ {
    move |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseLine {
    #[serde(flatten)]
    pub prompt: PromptRecord,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedLine {
    #[serde(flatten)]
    pub prompt: PromptRecord,
    pub sentences: Vec<String>,
    pub feedback: Vec<SentenceFeedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedBlock {
    pub sentences: Vec<String>,
    pub feedback: Vec<SentenceFeedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenBlock {
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceLine {
    #[serde(flatten)]
    pub prompt: PromptRecord,
    pub rejected: RejectedBlock,
    pub chosen: ChosenBlock,
    pub aggregated_severity: AggregatedSeverity,
}

impl ResponseLine {
    pub fn new(prompt: &PromptRecord, response: &ResponseRecord) -> Self {
        Self {
            prompt: prompt.clone(),
            sentences: response.sentences().to_vec(),
        }
    }

    pub fn into_parts(self) -> Result<(PromptRecord, ResponseRecord), TypesError> {
        self.prompt.check()?;
        let response = ResponseRecord::from_sentences(self.prompt.prompt_id.clone(), self.sentences)?;
        Ok((self.prompt, response))
    }
}

impl From<&FeedbackRecord> for AnnotatedLine {
    fn from(r: &FeedbackRecord) -> Self {
        Self {
            prompt: r.prompt.clone(),
            sentences: r.annotated.response.sentences().to_vec(),
            feedback: r.annotated.feedback.clone(),
        }
    }
}

impl TryFrom<AnnotatedLine> for FeedbackRecord {
    type Error = TypesError;

    fn try_from(line: AnnotatedLine) -> Result<Self, TypesError> {
        line.prompt.check()?;
        let response = ResponseRecord::from_sentences(line.prompt.prompt_id.clone(), line.sentences)?;
        let annotated = AnnotatedResponse::new(response, line.feedback)?;
        Ok(FeedbackRecord {
            prompt: line.prompt,
            annotated,
        })
    }
}

impl From<&PreferencePair> for PreferenceLine {
    fn from(p: &PreferencePair) -> Self {
        Self {
            prompt: p.prompt.clone(),
            rejected: RejectedBlock {
                sentences: p.rejected.response.sentences().to_vec(),
                feedback: p.rejected.feedback.clone(),
            },
            chosen: ChosenBlock {
                sentences: p.chosen.sentences().to_vec(),
            },
            aggregated_severity: p.aggregated_severity,
        }
    }
}

impl TryFrom<PreferenceLine> for PreferencePair {
    type Error = TypesError;

    fn try_from(line: PreferenceLine) -> Result<Self, TypesError> {
        line.prompt.check()?;
        let id = line.prompt.prompt_id.clone();
        let rejected = AnnotatedResponse::new(
            ResponseRecord::from_sentences(id.clone(), line.rejected.sentences)?,
            line.rejected.feedback,
        )?;
        let chosen = ResponseRecord::from_sentences(id, line.chosen.sentences)?;
        let pair = PreferencePair {
            prompt: line.prompt,
            rejected,
            chosen,
            aggregated_severity: line.aggregated_severity,
        };
        pair.check()?;
        Ok(pair)
    }
}

/// Streams typed records out of a JSONL source, skipping blank lines.
pub struct JsonlReader<R, T> {
    lines: std::io::Lines<R>,
    line_no: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<R: BufRead, T: DeserializeOwned> JsonlReader<R, T> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: DeserializeOwned> JsonlReader<BufReader<File>, T> {
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        let f = File::open(path).map_err(io_err(path))?;
        Ok(Self::new(BufReader::new(f)))
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for JsonlReader<R, T> {
    /// `(1-based line number, parsed record)`.
    type Item = Result<(usize, T), JsonlError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(source) => {
                    return Some(Err(JsonlError::Io {
                        path: format!("<line {}>", self.line_no),
                        source,
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let line_no = self.line_no;
            return Some(
                serde_json::from_str(&line)
                    .map(|v| (line_no, v))
                    .map_err(|source| JsonlError::Parse { line: line_no, source }),
            );
        }
    }
}

/// Writes compact JSON records, each followed by a single `\n`.
pub struct JsonlWriter<W: Write> {
    inner: W,
}

impl JsonlWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, JsonlError> {
        create_parent(path).map_err(io_err(path))?;
        let f = File::create(path).map_err(io_err(path))?;
        Ok(Self::new(BufWriter::new(f)))
    }
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), JsonlError> {
        let s = serde_json::to_string(record)?;
        self.inner
            .write_all(s.as_bytes())
            .and_then(|_| self.inner.write_all(b"\n"))
            .map_err(|source| JsonlError::Io {
                path: "<writer>".into(),
                source,
            })
    }

    pub fn finish(mut self) -> Result<W, JsonlError> {
        self.inner.flush().map_err(|source| JsonlError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(self.inner)
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Creates the directory holding `path` if it does not exist yet.
pub fn create_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d),
        _ => Ok(()),
    }
}

pub fn write_meta(path: &Path, meta: &DatasetMeta) -> Result<(), JsonlError> {
    let p = meta_path(path);
    let mut s = serde_json::to_string_pretty(meta)?;
    s.push('\n');
    std::fs::write(&p, s).map_err(io_err(&p))
}

fn read_meta(path: &Path, fallback_source: &str) -> Result<DatasetMeta, JsonlError> {
    let p = meta_path(path);
    match std::fs::read_to_string(&p) {
        Ok(s) => Ok(serde_json::from_str(&s)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Ok(DatasetMeta::new(fallback_source, 0))
        }
        Err(e) => Err(io_err(&p)(e)),
    }
}

pub fn write_feedback_dataset(path: &Path, ds: &FeedbackDataset) -> Result<(), JsonlError> {
    let mut w = JsonlWriter::create(path)?;
    for r in ds.records() {
        w.write(&AnnotatedLine::from(r))?;
    }
    w.finish()?;
    write_meta(path, &ds.meta)
}

pub fn read_feedback_dataset(path: &Path) -> Result<FeedbackDataset, JsonlError> {
    let mut ds = FeedbackDataset::new(read_meta(path, &path.display().to_string())?);
    for item in JsonlReader::<_, AnnotatedLine>::open(path)? {
        let (line, rec) = item?;
        let rec = FeedbackRecord::try_from(rec).map_err(|source| JsonlError::Invalid { line, source })?;
        ds.push(rec).map_err(|source| JsonlError::Invalid { line, source })?;
    }
    Ok(ds)
}

pub fn write_preference_dataset(path: &Path, ds: &PreferenceDataset) -> Result<(), JsonlError> {
    let mut w = JsonlWriter::create(path)?;
    for p in ds.pairs() {
        w.write(&PreferenceLine::from(p))?;
    }
    w.finish()?;
    write_meta(path, &ds.meta)
}

pub fn read_preference_dataset(path: &Path) -> Result<PreferenceDataset, JsonlError> {
    let mut ds = PreferenceDataset::new(read_meta(path, &path.display().to_string())?);
    for item in JsonlReader::<_, PreferenceLine>::open(path)? {
        let (line, rec) = item?;
        let pair = PreferencePair::try_from(rec).map_err(|source| JsonlError::Invalid { line, source })?;
        ds.push(pair).map_err(|source| JsonlError::Invalid { line, source })?;
    }
    Ok(ds)
}
