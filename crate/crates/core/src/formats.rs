//! Line-delimited record files and the score report.
//!
//! Questions, responses and candidates are JSON Lines: one UTF-8 JSON object
//! per line, blank lines ignored.
//!
//! ```text
//! questions:  {"question_id": "q01", "subject": "science", "question": "...", "sample_answer": "..."}
//! responses:  {"question_id": "q01", "model": "m", "text": "...", "temperature": 1.0, "trial": 3}
//! ```
//!
//! Candidate files use the response layout, with `model` naming the source.
//! A refset file `<question_id>.refset` starts with a header object followed
//! by one `{"source": ..., "text": ...}` object per normalized answer.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::MetricSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub subject: String,
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub sample_answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub question_id: String,
    pub model: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<u32>,
}

/// Reads JSON Lines. In strict mode the first malformed line aborts with its
/// line number; otherwise it is skipped with a warning and counted. Records
/// come back with their 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    strict: bool,
) -> Result<(Vec<(usize, T)>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(record) => records.push((idx + 1, record)),
            Err(e) if strict => {
                return Err(Error::Record {
                    path: path.to_owned(),
                    line: idx + 1,
                    message: e.to_string(),
                })
            }
            Err(e) => {
                log::warn!(
                    "{}:{}: skipping malformed record: {e}",
                    path.display(),
                    idx + 1
                );
                skipped += 1;
            }
        }
    }
    Ok((records, skipped))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads questions, enforcing unique ids and non-empty subjects.
pub fn load_questions(path: &Path) -> Result<Vec<QuestionRecord>> {
    let (records, _) = read_jsonl::<QuestionRecord>(path, true)?;
    let questions: Vec<QuestionRecord> = records.into_iter().map(|(_, q)| q).collect();
    let mut seen = HashSet::new();
    for q in &questions {
        if q.question_id.is_empty() || q.subject.trim().is_empty() {
            return Err(Error::Config(format!(
                "{}: question {:?} needs an id and a subject",
                path.display(),
                q.question_id
            )));
        }
        if !seen.insert(q.question_id.as_str()) {
            return Err(Error::Config(format!(
                "{}: duplicate question_id {:?}",
                path.display(),
                q.question_id
            )));
        }
    }
    Ok(questions)
}

/// Loads response (or candidate) records, checking every question id
/// against `known`. Unknown ids abort in strict mode and are skipped otherwise.
pub fn load_responses(
    path: &Path,
    known: &HashSet<String>,
    strict: bool,
) -> Result<Vec<ResponseRecord>> {
    let (records, _) = read_jsonl::<ResponseRecord>(path, strict)?;
    let mut out = Vec::with_capacity(records.len());
    for (line, r) in records {
        if known.contains(&r.question_id) {
            out.push(r);
        } else if strict {
            return Err(Error::Record {
                path: path.to_owned(),
                line,
                message: format!("unknown question_id {:?}", r.question_id),
            });
        } else {
            log::warn!(
                "{}: skipping record for unknown question {:?}",
                path.display(),
                r.question_id
            );
        }
    }
    Ok(out)
}

pub const REFSET_FORMAT: &str = "gramscore-refset";
pub const REFSET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefsetHeader {
    pub format: String,
    pub version: u32,
    pub question_id: String,
    pub normalization_digest: String,
    pub answers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefsetAnswer {
    pub source: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefsetFile {
    pub header: RefsetHeader,
    pub answers: Vec<RefsetAnswer>,
    /// SHA-256 of the file bytes.
    pub digest: [u8; 32],
}

pub fn refset_path(dir: &Path, question_id: &str) -> PathBuf {
    dir.join(format!("{question_id}.refset"))
}

pub fn encode_refset(
    question_id: &str,
    normalization_digest: &str,
    answers: &[RefsetAnswer],
) -> Result<Vec<u8>> {
    let header = RefsetHeader {
        format: REFSET_FORMAT.into(),
        version: REFSET_VERSION,
        question_id: question_id.into(),
        normalization_digest: normalization_digest.into(),
        answers: answers.len(),
    };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    for answer in answers {
        serde_json::to_writer(&mut buf, answer)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn read_refset(path: &Path) -> Result<RefsetFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Record {
        path: path.to_owned(),
        line: 0,
        message: e.to_string(),
    })?;
    let record_err = |line: usize, message: String| Error::Record {
        path: path.to_owned(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| record_err(1, "empty refset file".into()))?;
    let header: RefsetHeader =
        serde_json::from_str(first).map_err(|e| record_err(1, e.to_string()))?;
    if header.format != REFSET_FORMAT || header.version != REFSET_VERSION {
        return Err(record_err(
            1,
            format!(
                "unsupported refset format {} v{}",
                header.format, header.version
            ),
        ));
    }
    let mut answers = Vec::with_capacity(header.answers);
    for (idx, line) in lines {
        answers.push(serde_json::from_str(line).map_err(|e| record_err(idx + 1, e.to_string()))?);
    }
    if answers.len() != header.answers {
        return Err(record_err(
            1,
            format!(
                "header promises {} answers, found {}",
                header.answers,
                answers.len()
            ),
        ));
    }
    Ok(RefsetFile {
        header,
        answers,
        digest: Sha256::digest(&bytes).into(),
    })
}

pub const REPORT_FORMAT: &str = "gramscore-report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    /// Digest over every refset file used, in question order.
    pub refset_digest: String,
    /// Digest over scoring settings, normalization table, punctuation set
    /// and helpfulness rules.
    pub config_digest: String,
    pub normalization_digest: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model: String,
    pub overall: MetricSummary,
    pub questions: BTreeMap<String, MetricSummary>,
    #[serde(default)]
    pub subjects: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub format: String,
    pub metadata: ReportMetadata,
    /// Sorted by model name.
    pub models: Vec<ModelScores>,
}

impl ScoreReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: ScoreReport = serde_json::from_str(&text)?;
        if report.format != REPORT_FORMAT {
            return Err(Error::Report(format!(
                "{}: not a score report (format {:?})",
                path.display(),
                report.format
            )));
        }
        Ok(report)
    }

    /// Model name to overall final score.
    pub fn finals(&self) -> BTreeMap<String, f64> {
        self.models
            .iter()
            .map(|m| (m.model.clone(), m.overall.score))
            .collect()
    }

    /// Models ordered for display: final score descending, then name.
    pub fn ranked(&self) -> Vec<&ModelScores> {
        let mut models: Vec<&ModelScores> = self.models.iter().collect();
        models.sort_by(|a, b| {
            b.overall
                .score
                .total_cmp(&a.overall.score)
                .then_with(|| a.model.cmp(&b.model))
        });
        models
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Tsv,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "tsv" => Ok(TableFormat::Tsv),
            other => Err(Error::Argument(format!(
                "unknown report format {other:?} (expected markdown or tsv)"
            ))),
        }
    }
}

/// Leaderboard with the columns Model, Score, Fluency, Truthfulness, Helpfulness.
pub fn render_leaderboard(report: &ScoreReport, format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            out.push_str("| Model | Score | Fluency | Truthfulness | Helpfulness |\n");
            out.push_str("|---|---:|---:|---:|---:|\n");
            for m in report.ranked() {
                let s = &m.overall;
                out.push_str(&format!(
                    "| {} | {:.4} | {:.3} | {:.3} | {:.3} |\n",
                    m.model.replace('|', "\\|"),
                    s.score,
                    s.fluency,
                    s.truthfulness,
                    s.helpfulness
                ));
            }
        }
        TableFormat::Tsv => {
            out.push_str("model\tscore\tfluency\ttruthfulness\thelpfulness\n");
            for m in report.ranked() {
                let s = &m.overall;
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    m.model, s.score, s.fluency, s.truthfulness, s.helpfulness
                ));
            }
        }
    }
    out
}

/// External per-model scores: either a score report (JSON) or
/// `model<TAB>score` lines with optional `#` comments.
pub fn load_external_scores(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('{') {
        return Ok(ScoreReport::load(path)?.finals());
    }
    let mut scores = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Record {
            path: path.to_owned(),
            line: idx + 1,
            message,
        };
        let (model, score) = line
            .rsplit_once('\t')
            .ok_or_else(|| bad("expected model<TAB>score".into()))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad score {score:?}")))?;
        if scores.insert(model.to_owned(), score).is_some() {
            return Err(bad(format!("duplicate model {model:?}")));
        }
    }
    Ok(scores)
}
