//! Judge-free scoring of open-ended generations against reference answer sets.
//!
//! Responses are scored on three axes, each in the neighbourhood of `[0, 1]`:
//!
//! - **Fluency**: the inner product of a response's character 1..10-gram
//!   counts with the reference set's gram probabilities, length-discounted
//!   and normalized so the reference answers themselves average 1.0.
//! - **Truthfulness**: the share of content characters whose neighbouring
//!   3-grams occur in at least 0.5% of reference answers, maximized over
//!   truncation lengths.
//! - **Helpfulness**: the weighted share of per-question keyword clauses a
//!   response satisfies, maximized over truncation lengths.
//!
//! The final score is their mean. The [`pipeline`] module builds reference
//! sets from raw candidate corpora; [`cli`] wires everything to files.

pub mod cli;
pub mod config;
pub mod correlate;
pub mod error;
pub mod formats;
pub mod index;
pub mod metrics;
pub mod pipeline;
pub mod rules;
pub mod text;

pub use error::{Error, Result};
pub use index::{build_index, NGramTable, ReferenceSet};
pub use metrics::{
    aggregate, calibrate_fluency, discount, fluency, fluency_raw, helpfulness, score_response,
    truthfulness, CalibrationMode, FluencyNormalizer, MetricSummary, MetricTriple,
    DEFAULT_THRESHOLD,
};
pub use rules::{parse_drop_rules, parse_rules, DropRule, RuleExpr, RuleSet};
pub use text::{
    classify_char, extract_grams, normalize_text, CharClass, Gram, NormalizationRuleTable,
    NormalizedText, PunctuationSet, Symbol, MAX_WIDTH,
};
