//! The `build-refset`, `score`, `correlate` and `report` commands.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::correlate::{correlate_scores, Correlation};
use crate::error::{Error, Result};
use crate::formats::{
    encode_refset, load_external_scores, load_questions, load_responses, read_refset, refset_path,
    render_leaderboard, ModelScores, QuestionRecord, RefsetAnswer, ReportMetadata, ScoreReport,
    TableFormat, REPORT_FORMAT,
};
use crate::index::{build_index, load_cached_table, ReferenceSet, TableHeader};
use crate::metrics::{aggregate, score_response, MetricTriple};
use crate::pipeline::{run_pipeline, Candidate, CandidatePool, QuestionReport};
use crate::rules::{load_rule_dir, parse_drop_rules, DropRule, RuleSet};
use crate::text::{normalize_text, NormalizedText};

pub const PIPELINE_REPORT_FILE: &str = "pipeline_report.json";

#[derive(Debug, Clone)]
pub struct BuildRefsetArgs {
    pub questions: PathBuf,
    pub candidates: PathBuf,
    pub drop_rules: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub config: Config,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PipelineRunReport {
    pub normalization_digest: String,
    pub seed: u64,
    pub questions: Vec<QuestionReport>,
}

fn question_ids(questions: &[QuestionRecord]) -> HashSet<String> {
    questions.iter().map(|q| q.question_id.clone()).collect()
}

fn load_drop_rules(dir: &Path) -> Result<BTreeMap<String, Vec<DropRule>>> {
    let sets = load_rule_dir(dir, "drop")?;
    sets.into_iter()
        .map(|(qid, set)| {
            let rules = parse_drop_rules(&set.to_source())?
                .into_iter()
                .map(|r| DropRule {
                    question_id: qid.clone(),
                    ..r
                })
                .collect();
            Ok((qid, rules))
        })
        .collect()
}

/// Runs the construction pipeline for every question and writes
/// `<question_id>.refset` files plus `pipeline_report.json` into `out_dir`.
pub fn build_refset(args: &BuildRefsetArgs) -> Result<PipelineRunReport> {
    let config = &args.config;
    config.validate()?;
    let table = config.load_normalization_table()?;
    let punctuation = config.load_punctuation_set()?;
    let digest = table.digest_hex();
    let questions = load_questions(&args.questions)?;
    let known = question_ids(&questions);
    let records = load_responses(&args.candidates, &known, config.strict)?;

    let mut pools: HashMap<String, CandidatePool> = HashMap::new();
    for r in records {
        pools
            .entry(r.question_id.clone())
            .or_insert_with(|| CandidatePool::new(&r.question_id, &digest))
            .candidates
            .push(Candidate {
                text: normalize_text(&r.text, &table, &punctuation),
                source: r.model,
            });
    }
    let missing: Vec<&str> = questions
        .iter()
        .map(|q| q.question_id.as_str())
        .filter(|q| !pools.contains_key(*q))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Pipeline(format!(
            "no candidates for question(s): {}",
            missing.join(", ")
        )));
    }

    let drop_rules = match &args.drop_rules {
        Some(dir) => load_drop_rules(dir)?,
        None => BTreeMap::new(),
    };
    for qid in drop_rules.keys().filter(|q| !known.contains(*q)) {
        log::warn!("drop rules for unknown question {qid:?} ignored");
    }

    let pipeline = config.pipeline();
    let no_rules = Vec::new();
    let results: Vec<(String, Result<(CandidatePool, QuestionReport)>)> = questions
        .par_iter()
        .map(|q| {
            let qid = q.question_id.clone();
            let rules = drop_rules.get(&qid).unwrap_or(&no_rules);
            let outcome = run_pipeline(&pools[&qid], rules, &pipeline);
            (qid, outcome)
        })
        .collect();

    let failures: Vec<String> = results
        .iter()
        .filter_map(|(_, r)| r.as_ref().err().map(|e| e.to_string()))
        .collect();
    if !failures.is_empty() {
        return Err(Error::Pipeline(failures.join("; ")));
    }

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let mut reports = Vec::with_capacity(results.len());
    for (qid, outcome) in results {
        let (pool, report) = outcome.expect("failures handled above");
        let answers: Vec<RefsetAnswer> = pool
            .candidates
            .iter()
            .map(|c| RefsetAnswer {
                source: c.source.clone(),
                text: c.text.as_str().to_owned(),
            })
            .collect();
        let path = refset_path(&args.out_dir, &qid);
        let bytes = encode_refset(&qid, &digest, &answers)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        reports.push(report);
    }
    let run = PipelineRunReport {
        normalization_digest: digest,
        seed: config.seed,
        questions: reports,
    };
    let path = args.out_dir.join(PIPELINE_REPORT_FILE);
    let mut json = serde_json::to_string_pretty(&run)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct ScoreArgs {
    pub questions: PathBuf,
    pub refset_dir: PathBuf,
    pub rules_dir: PathBuf,
    pub responses: PathBuf,
    /// Report path; the Markdown leaderboard goes next to it with `.md`.
    pub out: PathBuf,
    pub config: Config,
}

struct LoadedQuestion {
    refset: ReferenceSet,
    rules: RuleSet,
    refset_digest: [u8; 32],
}

fn load_reference_set(
    dir: &Path,
    qid: &str,
    config: &Config,
    normalization_digest: &str,
    punctuation: &crate::text::PunctuationSet,
) -> Result<(ReferenceSet, [u8; 32])> {
    let path = refset_path(dir, qid);
    let file = read_refset(&path)?;
    if file.header.question_id != qid {
        return Err(Error::Config(format!(
            "{}: holds question {:?}, expected {qid:?}",
            path.display(),
            file.header.question_id
        )));
    }
    if file.header.normalization_digest != normalization_digest {
        return Err(Error::Config(format!(
            "{}: normalized with table {}, but this run uses {}",
            path.display(),
            file.header.normalization_digest,
            normalization_digest
        )));
    }
    let answers: Vec<NormalizedText> = file
        .answers
        .iter()
        .map(|a| NormalizedText::from_normalized(a.text.clone(), punctuation))
        .collect();
    let header = TableHeader {
        punctuation_digest: punctuation.digest(),
        source_digest: file.digest,
    };
    let cache = dir.join(format!("{qid}.ngt"));
    let cached = if config.cache_index {
        load_cached_table(&cache, &header)?
    } else {
        None
    };
    let table = match cached {
        Some(table) => table,
        None => {
            let table = build_index(&answers);
            if config.cache_index {
                std::fs::write(&cache, table.to_bytes(&header))
                    .map_err(|e| Error::io(&cache, e))?;
            }
            table
        }
    };
    let refset = ReferenceSet::with_table(qid, answers, table).calibrated(config.calibration)?;
    Ok((refset, file.digest))
}

/// Scores every response, aggregates per model and writes the JSON report
/// and the Markdown leaderboard.
pub fn score(args: &ScoreArgs) -> Result<ScoreReport> {
    let config = &args.config;
    config.validate()?;
    let table = config.load_normalization_table()?;
    let punctuation = config.load_punctuation_set()?;
    let normalization_digest = table.digest_hex();
    let questions = load_questions(&args.questions)?;
    let known = question_ids(&questions);
    let subjects: HashMap<String, String> = questions
        .iter()
        .map(|q| (q.question_id.clone(), q.subject.clone()))
        .collect();
    let responses = load_responses(&args.responses, &known, config.strict)?;
    if responses.is_empty() {
        return Err(Error::Report("no responses to score".into()));
    }

    let needed: Vec<&str> = questions
        .iter()
        .map(|q| q.question_id.as_str())
        .filter(|qid| responses.iter().any(|r| r.question_id == *qid))
        .collect();
    let rule_sets = load_rule_dir(&args.rules_dir, "rules")?;
    let mut gaps = Vec::new();
    for qid in &needed {
        if !refset_path(&args.refset_dir, qid).exists() {
            gaps.push(format!("{qid}: no refset"));
        }
        if !rule_sets.contains_key(*qid) {
            gaps.push(format!("{qid}: no rules"));
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Config(format!(
            "missing inputs: {}",
            gaps.join(", ")
        )));
    }

    let loaded: Vec<(String, LoadedQuestion)> = needed
        .par_iter()
        .map(|qid| {
            let (refset, refset_digest) = load_reference_set(
                &args.refset_dir,
                qid,
                config,
                &normalization_digest,
                &punctuation,
            )?;
            let rules = rule_sets[*qid].normalized_terms(&table)?;
            if config.forbid_not {
                rules.forbid_not()?;
            }
            Ok((
                qid.to_string(),
                LoadedQuestion {
                    refset,
                    rules,
                    refset_digest,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let by_id: HashMap<&str, &LoadedQuestion> =
        loaded.iter().map(|(q, l)| (q.as_str(), l)).collect();

    let scored: Vec<(String, String, MetricTriple)> = responses
        .par_iter()
        .map(|r| {
            let q = by_id[r.question_id.as_str()];
            let text = normalize_text(&r.text, &table, &punctuation);
            let triple = score_response(&text, &q.refset, &q.rules, config.threshold)?;
            Ok((r.model.clone(), r.question_id.clone(), triple))
        })
        .collect::<Result<_>>()?;

    let mut per_model: BTreeMap<String, Vec<(String, MetricTriple)>> = BTreeMap::new();
    for (model, qid, triple) in scored {
        per_model.entry(model).or_default().push((qid, triple));
    }
    let models = per_model
        .into_iter()
        .map(|(model, scores)| {
            let agg = aggregate(&scores)?;
            Ok(ModelScores {
                model,
                subjects: agg.by_subject(&subjects),
                overall: agg.overall,
                questions: agg.per_question,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut refset_hasher = Sha256::new();
    for (qid, q) in &loaded {
        refset_hasher.update(qid.as_bytes());
        refset_hasher.update(q.refset_digest);
    }
    let rule_sources: Vec<String> = loaded.iter().map(|(_, q)| q.rules.to_source()).collect();
    let mut extra: Vec<&str> = vec![&normalization_digest];
    let punctuation_canonical = punctuation.to_canonical_string();
    extra.push(&punctuation_canonical);
    extra.extend(rule_sources.iter().map(String::as_str));

    let report = ScoreReport {
        format: REPORT_FORMAT.into(),
        metadata: ReportMetadata {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            refset_digest: hex::encode(refset_hasher.finalize()),
            config_digest: config.scoring_digest_hex(&extra),
            normalization_digest,
            threshold: config.threshold,
        },
        models,
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&args.out, report.to_json()?).map_err(|e| Error::io(&args.out, e))?;
    let md = args.out.with_extension("md");
    std::fs::write(&md, render_leaderboard(&report, TableFormat::Markdown))
        .map_err(|e| Error::io(&md, e))?;
    Ok(report)
}

/// Pearson correlation of a report's final scores with external scores.
pub fn correlate(report: &Path, external: &Path) -> Result<Correlation> {
    let ours = ScoreReport::load(report)?.finals();
    let theirs = load_external_scores(external)?;
    correlate_scores(&ours, &theirs)
}

pub fn report(path: &Path, format: &str) -> Result<String> {
    let format: TableFormat = format.parse()?;
    Ok(render_leaderboard(&ScoreReport::load(path)?, format))
}
