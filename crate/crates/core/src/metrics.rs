//! Fluency, truthfulness and helpfulness, plus their aggregation.
//!
//! All three share one length discount: responses up to 100 characters are
//! undiscounted, the factor falls linearly to zero at 150. Fluency applies it
//! to the whole response. Truthfulness and helpfulness instead take the best
//! discounted score over every truncation length `I` in `100..=L` (or just
//! `I = L` for responses of at most 100 characters).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{NGramTable, ReferenceSet};
use crate::rules::RuleSet;
use crate::text::{framed_grams, CharClass, Gram, NormalizedText, Symbol, MAX_WIDTH};

/// Minimum document frequency for a 3-gram to count as attested.
pub const DEFAULT_THRESHOLD: f64 = 0.005;

/// Length at which discounting starts.
pub const TARGET_LENGTH: usize = 100;
const DISCOUNT_SPAN: f64 = 50.0;

/// `1 - max(length - 100, 0) / 50`, floored at 0.
pub fn discount(length: usize) -> f64 {
    let over = length.saturating_sub(TARGET_LENGTH) as f64;
    (1.0 - over / DISCOUNT_SPAN).max(0.0)
}

/// Truncation lengths searched for a response of `len` characters.
pub fn candidate_lengths(len: usize) -> std::ops::RangeInclusive<usize> {
    if len <= TARGET_LENGTH {
        len..=len
    } else {
        TARGET_LENGTH..=len
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluencyBreakdown {
    /// `per_width[w - 1]` is the undiscounted sum of gram probabilities at width `w`.
    pub per_width: [f64; MAX_WIDTH],
    pub total: f64,
}

/// Undiscounted fluency: for each width, the sum over the response's grams
/// (sentinels included) of their probability in the table.
pub fn fluency_raw(response: &NormalizedText, table: &NGramTable) -> FluencyBreakdown {
    fluency_raw_with(response, |gram| table.gram_probability(gram))
}

fn fluency_raw_with(
    response: &NormalizedText,
    mut probability: impl FnMut(&Gram) -> f64,
) -> FluencyBreakdown {
    let framed = response.framed_symbols();
    let mut per_width = [0.0; MAX_WIDTH];
    for (w, slot) in (1..=MAX_WIDTH).zip(per_width.iter_mut()) {
        *slot = framed_grams(&framed, w).map(|g| probability(&g)).sum();
    }
    let total = per_width.iter().sum();
    FluencyBreakdown { per_width, total }
}

fn discounted_raw_fluency(response: &NormalizedText, table: &NGramTable) -> f64 {
    discount(response.len()) * fluency_raw(response, table).total
}

/// Per-question divisor making the reference answers' mean fluency 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluencyNormalizer(f64);

impl FluencyNormalizer {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(FluencyNormalizer(value))
        } else {
            Err(Error::Calibration(format!(
                "fluency normalizer must be positive, got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// Each answer is scored against the full table, itself included.
    #[default]
    SelfInclusive,
    /// Each answer is scored against the table without its own grams.
    LeaveOneOut,
}

/// Mean discounted raw fluency of the answers, under `mode`.
pub fn calibrate_fluency(
    answers: &[NormalizedText],
    table: &NGramTable,
    mode: CalibrationMode,
) -> Result<FluencyNormalizer> {
    if answers.is_empty() {
        return Err(Error::Calibration("empty reference answer set".into()));
    }
    let sum: f64 = match mode {
        CalibrationMode::SelfInclusive => answers
            .iter()
            .map(|a| discounted_raw_fluency(a, table))
            .sum(),
        CalibrationMode::LeaveOneOut => answers
            .iter()
            .map(|a| discount(a.len()) * leave_one_out_raw(a, table).total)
            .sum(),
    };
    FluencyNormalizer::new(sum / answers.len() as f64)
}

fn leave_one_out_raw(answer: &NormalizedText, table: &NGramTable) -> FluencyBreakdown {
    let framed = answer.framed_symbols();
    let mut own: HashMap<Gram, u64> = HashMap::new();
    let mut own_totals = [0u64; MAX_WIDTH];
    for w in 1..=MAX_WIDTH {
        for gram in framed_grams(&framed, w) {
            *own.entry(gram).or_insert(0) += 1;
            own_totals[w - 1] += 1;
        }
    }
    fluency_raw_with(answer, |gram| {
        let w = gram.width();
        let total = table.total(w).saturating_sub(own_totals[w - 1]);
        if total == 0 {
            return 0.0;
        }
        let count = table
            .corpus_gram_count(gram)
            .saturating_sub(own.get(gram).copied().unwrap_or(0));
        count as f64 / total as f64
    })
}

/// `discount(L) · Σ_w F*_w / normalizer`; empty responses score 0.
pub fn fluency(response: &NormalizedText, refset: &ReferenceSet) -> Result<f64> {
    let normalizer = refset.normalizer().ok_or_else(|| {
        Error::State(format!(
            "reference set {:?} has no fluency normalizer",
            refset.question_id()
        ))
    })?;
    if response.is_empty() {
        return Ok(0.0);
    }
    Ok(discounted_raw_fluency(response, refset.table()) / normalizer.value())
}

/// Best discounted share of attested content characters over truncations.
///
/// A content character at position `i` takes the largest document frequency
/// among the 3-grams starting at `i - 1`, `i` and `i + 1` (windows outside
/// the framed text count as 0), capped at `threshold` and divided by it.
/// Truncating to `I` characters rescores the text as if it ended there, so
/// only the last three positions differ from the untruncated values.
pub fn truthfulness(response: &NormalizedText, table: &NGramTable, threshold: f64) -> f64 {
    let len = response.len();
    if len == 0 {
        return 0.0;
    }
    let threshold = threshold.max(f64::MIN_POSITIVE);
    let framed = response.framed_symbols();
    // likelihood[j] is the document frequency of G³_j, j in 0..len.
    let likelihood: Vec<f64> = framed_grams(&framed, 3)
        .map(|g| table.doc_frequency_unchecked(&g))
        .collect();
    let content = |i: usize| response.class_mask()[i - 1] == CharClass::Content;
    let value = |lik: &dyn Fn(usize) -> f64, i: usize| {
        let best = lik(i - 1).max(lik(i)).max(lik(i + 1));
        best.min(threshold) / threshold
    };
    let full = |j: usize| likelihood.get(j).copied().unwrap_or(0.0);

    // prefix[k] / counts[k]: sum and number of content values over 1..=k.
    let mut prefix = Vec::with_capacity(len + 1);
    let mut counts = Vec::with_capacity(len + 1);
    prefix.push(0.0);
    counts.push(0usize);
    for i in 1..=len {
        let (mut sum, mut n) = (prefix[i - 1], counts[i - 1]);
        if content(i) {
            sum += value(&full, i);
            n += 1;
        }
        prefix.push(sum);
        counts.push(n);
    }

    let mut best = 0.0f64;
    for cut in candidate_lengths(len) {
        let tail_gram = if cut == len {
            None
        } else {
            let start = cut - 1;
            let window = [framed[start], framed[cut], Symbol::EOS];
            Some(table.doc_frequency_unchecked(&Gram::from_window(&window)))
        };
        let truncated = |j: usize| {
            if j + 1 < cut {
                full(j)
            } else if j + 1 == cut {
                tail_gram.unwrap_or_else(|| full(j))
            } else {
                0.0
            }
        };
        let stable = cut.saturating_sub(3);
        let (mut sum, mut n) = (prefix[stable], counts[stable]);
        for i in stable + 1..=cut {
            if content(i) {
                sum += value(&truncated, i);
                n += 1;
            }
        }
        if n == 0 {
            continue;
        }
        best = best.max(discount(cut) * (sum / n as f64));
    }
    best
}

/// Best discounted weighted clause share over truncations. Errors on an
/// empty rule set; empty responses score 0.
pub fn helpfulness(response: &NormalizedText, rules: &RuleSet) -> Result<f64> {
    if rules.clauses.is_empty() || rules.total_weight() <= 0.0 {
        return Err(Error::Config(format!(
            "no helpfulness rules for question {:?}",
            rules.question_id
        )));
    }
    if response.is_empty() {
        return Ok(0.0);
    }
    // Character position at which each term's first occurrence ends.
    let mut first_end: HashMap<&str, usize> = HashMap::new();
    for clause in &rules.clauses {
        for term in clause.expr.terms() {
            first_end.entry(term).or_insert_with(|| {
                response
                    .as_str()
                    .find(term)
                    .map(|start| response.char_count_at(start + term.len()))
                    .unwrap_or(usize::MAX)
            });
        }
    }
    let mut best = 0.0f64;
    for cut in candidate_lengths(response.len()) {
        let share = rules.weighted_fraction(|expr| expr.eval_with(&mut |t| first_end[t] <= cut));
        best = best.max(discount(cut) * share);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub fluency: f64,
    pub truthfulness: f64,
    pub helpfulness: f64,
    /// Mean of the three metrics.
    #[serde(rename = "score")]
    pub score: f64,
}

impl MetricTriple {
    pub fn new(fluency: f64, truthfulness: f64, helpfulness: f64) -> Self {
        MetricTriple {
            fluency,
            truthfulness,
            helpfulness,
            score: (fluency + truthfulness + helpfulness) / 3.0,
        }
    }
}

pub fn score_response(
    response: &NormalizedText,
    refset: &ReferenceSet,
    rules: &RuleSet,
    threshold: f64,
) -> Result<MetricTriple> {
    Ok(MetricTriple::new(
        fluency(response, refset)?,
        truthfulness(response, refset.table(), threshold),
        helpfulness(response, rules)?,
    ))
}

/// Means of a group of triples. `score` is the mean of the members' scores,
/// not recomputed from the three averaged metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub score: f64,
    pub fluency: f64,
    pub truthfulness: f64,
    pub helpfulness: f64,
    /// Number of responses behind the means.
    pub responses: usize,
}

impl MetricSummary {
    /// Averages the given summaries with equal weight each.
    fn mean_of(items: &[MetricSummary]) -> MetricSummary {
        let n = items.len() as f64;
        let mean = |f: fn(&MetricSummary) -> f64| items.iter().map(f).sum::<f64>() / n;
        MetricSummary {
            score: mean(|m| m.score),
            fluency: mean(|m| m.fluency),
            truthfulness: mean(|m| m.truthfulness),
            helpfulness: mean(|m| m.helpfulness),
            responses: items.iter().map(|m| m.responses).sum(),
        }
    }

    fn from_triples(triples: &mut [MetricTriple]) -> MetricSummary {
        // Canonical order so the float sums do not depend on input order.
        triples.sort_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .then(a.fluency.total_cmp(&b.fluency))
                .then(a.truthfulness.total_cmp(&b.truthfulness))
                .then(a.helpfulness.total_cmp(&b.helpfulness))
        });
        let n = triples.len() as f64;
        let mean = |f: fn(&MetricTriple) -> f64| triples.iter().map(f).sum::<f64>() / n;
        MetricSummary {
            score: mean(|t| t.score),
            fluency: mean(|t| t.fluency),
            truthfulness: mean(|t| t.truthfulness),
            helpfulness: mean(|t| t.helpfulness),
            responses: triples.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub per_question: BTreeMap<String, MetricSummary>,
    /// Unweighted mean over questions.
    pub overall: MetricSummary,
}

/// Per-question means over responses, then the mean over questions.
pub fn aggregate(scores: &[(String, MetricTriple)]) -> Result<Aggregate> {
    if scores.is_empty() {
        return Err(Error::Report("no scored responses to aggregate".into()));
    }
    let mut grouped: BTreeMap<String, Vec<MetricTriple>> = BTreeMap::new();
    for (qid, triple) in scores {
        grouped.entry(qid.clone()).or_default().push(*triple);
    }
    let per_question: BTreeMap<String, MetricSummary> = grouped
        .into_iter()
        .map(|(qid, mut triples)| (qid, MetricSummary::from_triples(&mut triples)))
        .collect();
    let summaries: Vec<MetricSummary> = per_question.values().copied().collect();
    Ok(Aggregate {
        overall: MetricSummary::mean_of(&summaries),
        per_question,
    })
}

impl Aggregate {
    /// Mean over the questions of each subject. Questions without a subject
    /// entry are grouped under `""`.
    pub fn by_subject(
        &self,
        subjects: &HashMap<String, String>,
    ) -> BTreeMap<String, MetricSummary> {
        let mut grouped: BTreeMap<String, Vec<MetricSummary>> = BTreeMap::new();
        for (qid, summary) in &self.per_question {
            let subject = subjects.get(qid).cloned().unwrap_or_default();
            grouped.entry(subject).or_default().push(*summary);
        }
        grouped
            .into_iter()
            .map(|(s, items)| (s, MetricSummary::mean_of(&items)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use crate::rules::parse_rules;
    use crate::text::PunctuationSet;
    use proptest::prelude::*;

    fn nt(s: &str) -> NormalizedText {
        NormalizedText::from_normalized(s, &PunctuationSet::default())
    }

    fn texts(items: &[&str]) -> Vec<NormalizedText> {
        items.iter().map(|s| nt(s)).collect()
    }

    #[test]
    fn discount_values() {
        assert_eq!(discount(0), 1.0);
        assert_eq!(discount(100), 1.0);
        assert_eq!(discount(125), 0.5);
        assert_eq!(discount(150), 0.0);
        assert_eq!(discount(400), 0.0);
    }

    #[test]
    fn raw_fluency_by_hand() {
        let table = build_index(&texts(&["abc", "abd"]));
        let raw = fluency_raw(&nt("abc"), &table);
        // BOS a b c EOS over a 10-unigram table: 2+2+2+1+2 = 9.
        assert!((raw.per_width[0] - 0.9).abs() < 1e-15);
        // (BOS,a) (a,b) (b,c) (c,EOS): 2+2+1+1 over 8.
        assert!((raw.per_width[1] - 0.75).abs() < 1e-15);
        let empty = fluency_raw(&nt(""), &table);
        assert!((empty.per_width[0] - 0.4).abs() < 1e-15);
        assert_eq!(empty.per_width[1], 0.0);
    }

    #[test]
    fn calibration_cases() {
        let answers = texts(&["abc", "abd"]);
        let table = build_index(&answers);
        let norm = calibrate_fluency(&answers, &table, CalibrationMode::SelfInclusive).unwrap();
        let a = fluency_raw(&answers[0], &table).total;
        let b = fluency_raw(&answers[1], &table).total;
        assert!((norm.value() - (a + b) / 2.0).abs() < 1e-15);

        let single = texts(&["hello"]);
        let t1 = build_index(&single);
        let n1 = calibrate_fluency(&single, &t1, CalibrationMode::SelfInclusive).unwrap();
        let rs = ReferenceSet::with_table("q", single.clone(), t1)
            .calibrated(CalibrationMode::SelfInclusive)
            .unwrap();
        assert!((fluency(&single[0], &rs).unwrap() - 1.0).abs() < 1e-12);

        let twice = texts(&["hello", "hello"]);
        let n2 = calibrate_fluency(&twice, &build_index(&twice), CalibrationMode::SelfInclusive)
            .unwrap();
        assert_eq!(n1, n2);

        assert!(calibrate_fluency(&[], &build_index(&[]), CalibrationMode::SelfInclusive).is_err());
        let long = texts(&[&"x".repeat(150)]);
        assert!(
            calibrate_fluency(&long, &build_index(&long), CalibrationMode::SelfInclusive).is_err()
        );
    }

    #[test]
    fn leave_one_out_excludes_own_grams() {
        let answers = texts(&["abc", "xyz"]);
        let table = build_index(&answers);
        // Disjoint answers: without itself, nothing but the sentinel grams is shared.
        let loo = leave_one_out_raw(&answers[0], &table);
        let own_excluded = build_index(&answers[1..]);
        let direct = fluency_raw(&answers[0], &own_excluded);
        assert_eq!(loo, direct);
    }

    #[test]
    fn fluency_requires_calibration_and_zeroes_long_or_empty() {
        let answers = texts(&["abc", "abd"]);
        let rs = ReferenceSet::new("q", answers.clone());
        assert!(matches!(fluency(&answers[0], &rs), Err(Error::State(_))));
        let rs = rs.calibrated(CalibrationMode::SelfInclusive).unwrap();
        assert_eq!(fluency(&nt(&"a".repeat(150)), &rs).unwrap(), 0.0);
        assert_eq!(fluency(&nt(""), &rs).unwrap(), 0.0);
    }

    #[test]
    fn fluency_invariant_under_count_scaling() {
        let base = texts(&["今日は晴れ", "今日は雨です", "明日は晴れ"]);
        let doubled: Vec<NormalizedText> = base.iter().chain(base.iter()).cloned().collect();
        let r1 = ReferenceSet::new("q", base)
            .calibrated(CalibrationMode::SelfInclusive)
            .unwrap();
        let r2 = ReferenceSet::new("q", doubled)
            .calibrated(CalibrationMode::SelfInclusive)
            .unwrap();
        let probe = nt("今日は晴れです");
        assert_eq!(fluency(&probe, &r1).unwrap(), fluency(&probe, &r2).unwrap());
    }

    #[test]
    fn truthfulness_extremes() {
        let answer = "電気抵抗がゼロになる現象。";
        let answers: Vec<NormalizedText> = (0..1000).map(|_| nt(answer)).collect();
        let table = build_index(&answers);
        assert_eq!(truthfulness(&nt(answer), &table, DEFAULT_THRESHOLD), 1.0);
        assert_eq!(
            truthfulness(&nt("ぴゃぽぬ"), &table, DEFAULT_THRESHOLD),
            0.0
        );
        assert_eq!(truthfulness(&nt(""), &table, DEFAULT_THRESHOLD), 0.0);
        assert_eq!(
            truthfulness(&nt("。、「」"), &table, DEFAULT_THRESHOLD),
            0.0
        );
    }

    #[test]
    fn helpfulness_cases() {
        let rules = parse_rules("\"温度\"\n\"抵抗\"\nANY(\"ゼロ\", \"0\")\n\"磁\"\n").unwrap();
        assert_eq!(
            helpfulness(&nt("低い温度で電気抵抗がゼロになる"), &rules).unwrap(),
            0.75
        );
        let full = format!("{}温度抵抗ゼロ磁", "あ".repeat(93));
        assert_eq!(full.chars().count(), 100);
        assert_eq!(helpfulness(&nt(&full), &rules).unwrap(), 1.0);
        // Fourth term ends at 120: 0.6 · 1.0 loses to 1.0 · 0.75.
        let late = format!("温度抵抗ゼロ{}磁", "あ".repeat(113));
        assert_eq!(late.chars().count(), 120);
        assert_eq!(helpfulness(&nt(&late), &rules).unwrap(), 0.75);
        assert!(helpfulness(&nt("x"), &RuleSet::default()).is_err());
        assert_eq!(helpfulness(&nt(""), &rules).unwrap(), 0.0);
    }

    #[test]
    fn triple_mean_and_aggregation() {
        let t = MetricTriple::new(0.9, 0.6, 0.3);
        assert!((t.score - 0.6).abs() < 1e-15);
        let one = aggregate(&[("q".into(), t)]).unwrap();
        assert_eq!(one.overall.score, t.score);
        assert_eq!(one.overall.fluency, t.fluency);
        let two = aggregate(&[
            ("a".into(), MetricTriple::new(0.4, 0.4, 0.4)),
            ("b".into(), MetricTriple::new(0.8, 0.8, 0.8)),
        ])
        .unwrap();
        assert!((two.overall.score - 0.6).abs() < 1e-15);
        assert!(aggregate(&[]).is_err());
        let subjects: HashMap<String, String> = [("a".to_string(), "math".to_string())]
            .into_iter()
            .collect();
        let rollup = two.by_subject(&subjects);
        assert_eq!(rollup["math"].responses, 1);
        assert_eq!(rollup[""].score, two.per_question["b"].score);
    }

    proptest! {
        #[test]
        fn aggregation_is_order_invariant(
            raw in prop::collection::vec((0usize..4, 0.0f64..2.0, 0.0f64..1.0, 0.0f64..1.0), 1..30),
            rot in any::<usize>(),
        ) {
            let scores: Vec<(String, MetricTriple)> = raw
                .iter()
                .map(|(q, f, t, h)| (format!("q{q}"), MetricTriple::new(*f, *t, *h)))
                .collect();
            let mut permuted = scores.clone();
            permuted.rotate_left(rot % scores.len());
            permuted.reverse();
            prop_assert_eq!(aggregate(&scores).unwrap(), aggregate(&permuted).unwrap());
        }

        #[test]
        fn raising_threshold_never_helps(s in "[abc。]{0,120}", lo in 0.001f64..0.5, bump in 0.0f64..0.5) {
            let answers = texts(&["abcabc", "bcab。", "cabba", "aaa", "ccbca"]);
            let table = build_index(&answers);
            let t = nt(&s);
            prop_assert!(truthfulness(&t, &table, lo + bump) <= truthfulness(&t, &table, lo));
        }
    }
}
