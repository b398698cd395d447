//! C ABI over the gramscore engine.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`GsStatus`]; on failure the message is available from
//! [`gs_last_error_message`] on the same thread until the next failing call.
//! Texts are UTF-8, NUL-terminated, and normalized with the built-in table.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gramscore::error::Error;
use gramscore::formats::read_refset;
use gramscore::text::NormalizationRuleTable;
use gramscore::{
    normalize_text, parse_rules, score_response, CalibrationMode, NormalizedText, PunctuationSet,
    ReferenceSet, RuleSet,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Config = 4,
    State = 5,
    Io = 6,
    Argument = 7,
    Failed = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GsMetricTriple {
    pub fluency: f64,
    pub truthfulness: f64,
    pub helpfulness: f64,
    /// Mean of the three metrics.
    pub score: f64,
}

/// A calibrated reference set for one question.
pub struct GsReferenceSet {
    refset: ReferenceSet,
    normalization: NormalizationRuleTable,
    punctuation: PunctuationSet,
}

/// Parsed helpfulness rules with normalized terms.
pub struct GsRuleSet {
    rules: RuleSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn status_of(err: &Error) -> GsStatus {
    match err {
        Error::Parse { .. } => GsStatus::Parse,
        Error::Config(_) | Error::Calibration(_) => GsStatus::Config,
        Error::State(_) => GsStatus::State,
        Error::Io { .. } => GsStatus::Io,
        Error::Argument(_) => GsStatus::Argument,
        _ => GsStatus::Failed,
    }
}

struct Failure(GsStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> GsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => GsStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            GsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(GsStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(GsStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn null_out(name: &str) -> Failure {
    Failure(GsStatus::NullPointer, format!("{name} is null"))
}

fn finish_refset(
    question_id: &str,
    answers: Vec<NormalizedText>,
    punctuation: PunctuationSet,
) -> Result<Box<GsReferenceSet>, Failure> {
    let refset =
        ReferenceSet::new(question_id, answers).calibrated(CalibrationMode::SelfInclusive)?;
    Ok(Box::new(GsReferenceSet {
        refset,
        normalization: NormalizationRuleTable::default(),
        punctuation,
    }))
}

/// Builds and calibrates a reference set from `count` raw answer strings.
///
/// # Safety
/// `question_id` and each of the `count` entries of `answers` must be valid
/// NUL-terminated strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_refset_new(
    question_id: *const c_char,
    answers: *const *const c_char,
    count: usize,
    out: *mut *mut GsReferenceSet,
) -> GsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        *out = ptr::null_mut();
        let qid = str_arg(question_id, "question_id")?;
        if answers.is_null() && count > 0 {
            return Err(null_out("answers"));
        }
        let table = NormalizationRuleTable::default();
        let punctuation = PunctuationSet::default();
        let mut texts = Vec::with_capacity(count);
        for i in 0..count {
            let raw = str_arg(*answers.add(i), &format!("answers[{i}]"))?;
            texts.push(normalize_text(raw, &table, &punctuation));
        }
        *out = Box::into_raw(finish_refset(qid, texts, punctuation)?);
        Ok(())
    })
}

/// Loads and calibrates a `.refset` file written by `gramscore build-refset`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_refset_load(
    path: *const c_char,
    out: *mut *mut GsReferenceSet,
) -> GsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let file = read_refset(Path::new(path))?;
        let expected = NormalizationRuleTable::default().digest_hex();
        if file.header.normalization_digest != expected {
            return Err(Failure(
                GsStatus::Config,
                format!("{path}: normalized with a different table"),
            ));
        }
        let punctuation = PunctuationSet::default();
        let answers = file
            .answers
            .into_iter()
            .map(|a| NormalizedText::from_normalized(a.text, &punctuation))
            .collect();
        *out = Box::into_raw(finish_refset(
            &file.header.question_id,
            answers,
            punctuation,
        )?);
        Ok(())
    })
}

/// Number of answers in the reference set; 0 for a null handle.
///
/// # Safety
/// `refset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_refset_len(refset: *const GsReferenceSet) -> usize {
    refset.as_ref().map_or(0, |r| r.refset.answers().len())
}

/// # Safety
/// `refset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gs_refset_free(refset: *mut GsReferenceSet) {
    if !refset.is_null() {
        drop(Box::from_raw(refset));
    }
}

/// Parses helpfulness rules (one `weight<TAB>expression` clause per line).
///
/// # Safety
/// `source` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_rules_parse(
    source: *const c_char,
    out: *mut *mut GsRuleSet,
) -> GsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        *out = ptr::null_mut();
        let source = str_arg(source, "source")?;
        let rules = parse_rules(source)?.normalized_terms(&NormalizationRuleTable::default())?;
        *out = Box::into_raw(Box::new(GsRuleSet { rules }));
        Ok(())
    })
}

/// # Safety
/// `rules` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gs_rules_free(rules: *mut GsRuleSet) {
    if !rules.is_null() {
        drop(Box::from_raw(rules));
    }
}

/// Scores one raw response. `threshold` is the truthfulness
/// document-frequency cap; pass 0.005 for the default.
///
/// # Safety
/// Handles must be live, `response` a valid NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_score(
    refset: *const GsReferenceSet,
    rules: *const GsRuleSet,
    response: *const c_char,
    threshold: f64,
    out: *mut GsMetricTriple,
) -> GsStatus {
    guard(|| {
        let refset = refset.as_ref().ok_or_else(|| null_out("refset"))?;
        let rules = rules.as_ref().ok_or_else(|| null_out("rules"))?;
        if out.is_null() {
            return Err(null_out("out"));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Failure(
                GsStatus::Argument,
                format!("threshold must be in (0, 1], got {threshold}"),
            ));
        }
        let raw = str_arg(response, "response")?;
        let text = normalize_text(raw, &refset.normalization, &refset.punctuation);
        let t = score_response(&text, &refset.refset, &rules.rules, threshold)?;
        *out = GsMetricTriple {
            fluency: t.fluency,
            truthfulness: t.truthfulness,
            helpfulness: t.helpfulness,
            score: t.score,
        };
        Ok(())
    })
}

/// Length discount applied to texts longer than 100 characters.
#[no_mangle]
pub extern "C" fn gs_discount(length: usize) -> f64 {
    gramscore::discount(length)
}

/// Pearson correlation of two series of `count` values.
///
/// # Safety
/// `xs` and `ys` must each point to `count` readable doubles; `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_pearson(
    xs: *const f64,
    ys: *const f64,
    count: usize,
    out: *mut f64,
) -> GsStatus {
    guard(|| {
        if xs.is_null() || ys.is_null() || out.is_null() {
            return Err(null_out("xs, ys or out"));
        }
        let xs = std::slice::from_raw_parts(xs, count);
        let ys = std::slice::from_raw_parts(ys, count);
        *out = gramscore::correlate::pearson(xs, ys)?;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. The pointer is
/// owned by the library and valid until the next failing call on the thread.
#[no_mangle]
pub extern "C" fn gs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
