//! Reference-set construction from raw candidate corpora.
//!
//! Stages, per question: drop-rule filtering, rare 5-gram filtering, length
//! refinement toward 100 characters, and a hill-climbing subset search that
//! matches the kept answers' 1..10-gram distribution to the whole pool's.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::NGramTable;
use crate::metrics::TARGET_LENGTH;
use crate::rules::DropRule;
use crate::text::{extract_grams, framed_grams, Gram, NormalizedText, MAX_WIDTH};

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: NormalizedText,
    /// Name of the model (or other source) that produced the text.
    pub source: String,
}

/// One question's candidates; a multiset, order preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub question_id: String,
    pub candidates: Vec<Candidate>,
    /// Digest of the normalization table every candidate went through.
    pub normalization_digest: String,
}

impl CandidatePool {
    pub fn new(question_id: impl Into<String>, normalization_digest: impl Into<String>) -> Self {
        CandidatePool {
            question_id: question_id.into(),
            candidates: Vec::new(),
            normalization_digest: normalization_digest.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn texts(&self) -> Vec<NormalizedText> {
        self.candidates.iter().map(|c| c.text.clone()).collect()
    }

    fn retain_indices(&self, keep: &[bool]) -> CandidatePool {
        CandidatePool {
            question_id: self.question_id.clone(),
            candidates: self
                .candidates
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(c, _)| c.clone())
                .collect(),
            normalization_digest: self.normalization_digest.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    /// Candidates matched by each rule, in rule order. A candidate matched by
    /// several rules counts for each of them.
    pub matches_per_rule: Vec<usize>,
    pub removed: usize,
}

/// Removes every candidate matched by any drop-rule.
pub fn apply_drop_rules(pool: &CandidatePool, rules: &[DropRule]) -> (CandidatePool, DropReport) {
    let mut matches_per_rule = vec![0; rules.len()];
    let keep: Vec<bool> = pool
        .candidates
        .iter()
        .map(|c| {
            let mut dropped = false;
            for (rule, hits) in rules.iter().zip(matches_per_rule.iter_mut()) {
                if rule.matches(&c.text) {
                    *hits += 1;
                    dropped = true;
                }
            }
            !dropped
        })
        .collect();
    let filtered = pool.retain_indices(&keep);
    if filtered.is_empty() && !pool.is_empty() {
        log::warn!(
            "question {}: drop rules removed all {} candidates",
            pool.question_id,
            pool.len()
        );
    }
    let removed = pool.len() - filtered.len();
    (
        filtered,
        DropReport {
            matches_per_rule,
            removed,
        },
    )
}

/// Removes every candidate holding a width-`width` gram that occurs exactly
/// once in the whole pool. Counts are taken once, before any removal.
pub fn rare_gram_filter(
    pool: &CandidatePool,
    width: usize,
    include_sentinels: bool,
) -> Result<CandidatePool> {
    let texts = pool.texts();
    let table = NGramTable::build(&texts, [width])?;
    let keep: Vec<bool> = texts
        .iter()
        .map(|t| {
            let framed = t.framed_symbols();
            let rare = framed_grams(&framed, width)
                .filter(|g| include_sentinels || !g.contains_sentinel())
                .any(|g| table.corpus_gram_count(&g) == 1);
            !rare
        })
        .collect();
    Ok(pool.retain_indices(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
}

impl LengthStats {
    pub fn of(texts: impl IntoIterator<Item = usize>) -> Self {
        let lengths: Vec<f64> = texts.into_iter().map(|l| l as f64).collect();
        if lengths.is_empty() {
            return LengthStats {
                count: 0,
                mean: 0.0,
                std_dev: 0.0,
            };
        }
        let n = lengths.len() as f64;
        let mean = lengths.iter().sum::<f64>() / n;
        let var = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
        LengthStats {
            count: lengths.len(),
            mean,
            std_dev: var.sqrt(),
        }
    }

    pub fn of_pool(pool: &CandidatePool) -> Self {
        Self::of(pool.candidates.iter().map(|c| c.text.len()))
    }
}

/// Indices of the `keep` candidates closest to `target` characters, ties by
/// input order, returned sorted by distance.
fn closest_to_length(pool: &CandidatePool, target: usize, keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by_key(|&i| pool.candidates[i].text.len().abs_diff(target));
    order.truncate(keep);
    order
}

/// Keeps the `keep` candidates whose length is closest to `target`, in their
/// original order.
pub fn length_refine(pool: &CandidatePool, target: usize, keep: usize) -> CandidatePool {
    if keep >= pool.len() {
        if keep > pool.len() {
            log::warn!(
                "question {}: length refinement asked for {keep} of {} candidates; keeping all",
                pool.question_id,
                pool.len()
            );
        }
        return pool.clone();
    }
    let mut mask = vec![false; pool.len()];
    for i in closest_to_length(pool, target, keep) {
        mask[i] = true;
    }
    pool.retain_indices(&mask)
}

/// Relative gram frequencies at each width.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistributionVector {
    /// `widths[w - 1]` maps each width-`w` gram to its share of that width.
    pub widths: Vec<BTreeMap<Gram, f64>>,
}

impl DistributionVector {
    pub fn from_texts(texts: &[NormalizedText]) -> Self {
        let mut widths = Vec::with_capacity(MAX_WIDTH);
        for w in 1..=MAX_WIDTH {
            let mut counts: BTreeMap<Gram, u64> = BTreeMap::new();
            for t in texts {
                for g in extract_grams(t, w).expect("width in range") {
                    *counts.entry(g).or_insert(0) += 1;
                }
            }
            let total: u64 = counts.values().sum();
            widths.push(
                counts
                    .into_iter()
                    .map(|(g, c)| (g, c as f64 / total as f64))
                    .collect(),
            );
        }
        DistributionVector { widths }
    }

    fn width(&self, w: usize) -> Option<&BTreeMap<Gram, f64>> {
        self.widths.get(w - 1)
    }
}

/// Mean squared frequency difference over the union of keys at each width
/// (absent keys count as 0), averaged over all ten widths. Widths where both
/// sides are empty contribute 0.
pub fn mse_distance(a: &DistributionVector, b: &DistributionVector) -> f64 {
    let empty = BTreeMap::new();
    let mut total = 0.0;
    for w in 1..=MAX_WIDTH {
        let (da, db) = (a.width(w).unwrap_or(&empty), b.width(w).unwrap_or(&empty));
        let mut keys: Vec<&Gram> = da.keys().chain(db.keys()).collect();
        keys.sort_unstable();
        keys.dedup();
        if keys.is_empty() {
            continue;
        }
        let sum: f64 = keys
            .iter()
            .map(|k| {
                let d = da.get(*k).copied().unwrap_or(0.0) - db.get(*k).copied().unwrap_or(0.0);
                d * d
            })
            .sum();
        total += sum / keys.len() as f64;
    }
    total / MAX_WIDTH as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub keep: usize,
    pub seed: u64,
    /// Target length used to pick the starting subset.
    pub target_length: usize,
    /// Cap on accepted swaps; `None` means `10 · keep`.
    pub max_iters: Option<usize>,
}

impl RefineConfig {
    pub fn new(keep: usize, seed: u64) -> Self {
        RefineConfig {
            keep,
            seed,
            target_length: TARGET_LENGTH,
            max_iters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub accepted_swaps: usize,
    pub sweeps: usize,
    /// MSE after each accepted swap.
    pub trace: Vec<f64>,
}

/// Exact integer bookkeeping for the subset-vs-pool MSE.
///
/// Per width, with subset counts `c_g` (total `T`), pool counts `n_g` (total
/// `N`) and `K` distinct pool grams:
///
/// `MSE_w = Σ (c_g/T - n_g/N)² / K = (A·N² - 2·B·T·N + C·T²) / (T²·N²·K)`
///
/// where `A = Σ c²`, `B = Σ c·n`, `C = Σ n²` are integers. A swap only
/// touches the grams of the two candidates involved.
struct SubsetState {
    /// Per candidate: (gram id, count), sorted by id.
    grams: Vec<Vec<(usize, i128)>>,
    width_of: Vec<usize>,
    pool_counts: Vec<i128>,
    pool_totals: [i128; MAX_WIDTH],
    pool_sq: [i128; MAX_WIDTH],
    distinct: [i128; MAX_WIDTH],
    counts: Vec<i128>,
    totals: [i128; MAX_WIDTH],
    sq: [i128; MAX_WIDTH],
    cross: [i128; MAX_WIDTH],
}

impl SubsetState {
    fn new(texts: &[NormalizedText]) -> Self {
        let mut ids: HashMap<Gram, usize> = HashMap::new();
        let mut width_of = Vec::new();
        let mut grams = Vec::with_capacity(texts.len());
        for t in texts {
            let framed = t.framed_symbols();
            let mut local: BTreeMap<usize, i128> = BTreeMap::new();
            for w in 1..=MAX_WIDTH {
                for g in framed_grams(&framed, w) {
                    let next = ids.len();
                    let id = *ids.entry(g).or_insert_with(|| {
                        width_of.push(w);
                        next
                    });
                    *local.entry(id).or_insert(0) += 1;
                }
            }
            grams.push(local.into_iter().collect::<Vec<_>>());
        }
        let mut pool_counts = vec![0i128; width_of.len()];
        for list in &grams {
            for &(id, c) in list {
                pool_counts[id] += c;
            }
        }
        let mut pool_totals = [0i128; MAX_WIDTH];
        let mut pool_sq = [0i128; MAX_WIDTH];
        let mut distinct = [0i128; MAX_WIDTH];
        for (id, &n) in pool_counts.iter().enumerate() {
            let w = width_of[id] - 1;
            pool_totals[w] += n;
            pool_sq[w] += n * n;
            distinct[w] += 1;
        }
        SubsetState {
            counts: vec![0; width_of.len()],
            grams,
            width_of,
            pool_counts,
            pool_totals,
            pool_sq,
            distinct,
            totals: [0; MAX_WIDTH],
            sq: [0; MAX_WIDTH],
            cross: [0; MAX_WIDTH],
        }
    }

    fn add(&mut self, candidate: usize, sign: i128) {
        for &(id, c) in &self.grams[candidate] {
            let w = self.width_of[id] - 1;
            let d = sign * c;
            let old = self.counts[id];
            self.sq[w] += 2 * old * d + d * d;
            self.cross[w] += d * self.pool_counts[id];
            self.totals[w] += d;
            self.counts[id] = old + d;
        }
    }

    fn mse_of(
        &self,
        totals: &[i128; MAX_WIDTH],
        sq: &[i128; MAX_WIDTH],
        cross: &[i128; MAX_WIDTH],
    ) -> f64 {
        let mut sum = 0.0;
        for w in 0..MAX_WIDTH {
            let (k, n, t) = (self.distinct[w], self.pool_totals[w], totals[w]);
            if k == 0 {
                continue;
            }
            sum += if t == 0 {
                self.pool_sq[w] as f64 / (n * n * k) as f64
            } else {
                let num = sq[w] * n * n - 2 * cross[w] * t * n + self.pool_sq[w] * t * t;
                num as f64 / (t * t * n * n * k) as f64
            };
        }
        sum / MAX_WIDTH as f64
    }

    fn mse(&self) -> f64 {
        self.mse_of(&self.totals, &self.sq, &self.cross)
    }

    /// MSE after swapping `out` (selected) for `inn` (unselected), without
    /// applying the swap.
    fn mse_after_swap(&self, out: usize, inn: usize) -> f64 {
        let (mut totals, mut sq, mut cross) = (self.totals, self.sq, self.cross);
        let (a, b) = (&self.grams[out], &self.grams[inn]);
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let (id, d) = match (a.get(i), b.get(j)) {
                (Some(&(ia, ca)), Some(&(ib, cb))) if ia == ib => {
                    i += 1;
                    j += 1;
                    (ia, cb - ca)
                }
                (Some(&(ia, ca)), Some(&(ib, _))) if ia < ib => {
                    i += 1;
                    (ia, -ca)
                }
                (Some(&(ia, ca)), None) => {
                    i += 1;
                    (ia, -ca)
                }
                (_, Some(&(ib, cb))) => {
                    j += 1;
                    (ib, cb)
                }
                (None, None) => unreachable!(),
            };
            if d == 0 {
                continue;
            }
            let w = self.width_of[id] - 1;
            let old = self.counts[id];
            sq[w] += 2 * old * d + d * d;
            cross[w] += d * self.pool_counts[id];
            totals[w] += d;
        }
        self.mse_of(&totals, &sq, &cross)
    }
}

/// Hill-climbs a `keep`-subset whose gram distribution approaches the pool's.
///
/// Starts from the `keep` candidates closest to the target length. Each sweep
/// visits the selected slots in order and, for each, tries unselected
/// candidates in a seed-determined order, applying the first swap that
/// strictly lowers the MSE. Stops after a sweep with no improvement or once
/// `max_iters` swaps have been accepted.
pub fn distribution_refine(
    pool: &CandidatePool,
    config: &RefineConfig,
) -> Result<(CandidatePool, RefineReport)> {
    if config.keep == 0 {
        return Err(Error::Pipeline(
            "distribution refinement needs keep >= 1".into(),
        ));
    }
    if config.keep >= pool.len() {
        return Ok((
            pool.clone(),
            RefineReport {
                initial_mse: 0.0,
                final_mse: 0.0,
                accepted_swaps: 0,
                sweeps: 0,
                trace: Vec::new(),
            },
        ));
    }
    let mut state = SubsetState::new(&pool.texts());
    let mut selected = closest_to_length(pool, config.target_length, config.keep);
    let mut in_subset = vec![false; pool.len()];
    for &i in &selected {
        in_subset[i] = true;
        state.add(i, 1);
    }
    let mut unselected: Vec<usize> = (0..pool.len()).filter(|i| !in_subset[*i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    unselected.shuffle(&mut rng);

    let max_iters = config.max_iters.unwrap_or(10 * config.keep);
    let initial_mse = state.mse();
    let mut current = initial_mse;
    let mut trace = Vec::new();
    let mut sweeps = 0;
    'search: loop {
        sweeps += 1;
        let mut improved = false;
        for slot in selected.iter_mut() {
            let out = *slot;
            let found = unselected
                .iter()
                .position(|&inn| state.mse_after_swap(out, inn) < current);
            if let Some(pos) = found {
                let inn = unselected[pos];
                state.add(out, -1);
                state.add(inn, 1);
                *slot = inn;
                unselected[pos] = out;
                current = state.mse();
                trace.push(current);
                improved = true;
                if trace.len() >= max_iters {
                    break 'search;
                }
            }
        }
        if !improved {
            break;
        }
    }

    let mut mask = vec![false; pool.len()];
    for &i in &selected {
        mask[i] = true;
    }
    Ok((
        pool.retain_indices(&mask),
        RefineReport {
            initial_mse,
            final_mse: current,
            accepted_swaps: trace.len(),
            sweeps,
            trace,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub rare_width: usize,
    pub rare_include_sentinels: bool,
    pub length_target: usize,
    /// Quota for the length stage.
    pub length_keep: usize,
    pub refine: RefineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rare_width: 5,
            rare_include_sentinels: true,
            length_target: TARGET_LENGTH,
            length_keep: 30_000,
            refine: RefineConfig::new(1000, 0),
        }
    }
}

/// Per-question stage accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionReport {
    pub question_id: String,
    pub ingested: usize,
    pub drop_rules: DropReport,
    pub after_drop_rules: usize,
    pub rare_gram_removed: usize,
    pub after_rare_gram_filter: usize,
    pub after_length_refine: usize,
    pub length_refine_stats: LengthStats,
    pub final_count: usize,
    pub final_length_stats: LengthStats,
    pub refine: RefineReport,
}

/// Runs every stage; errors if any stage leaves the pool empty.
pub fn run_pipeline(
    pool: &CandidatePool,
    drop_rules: &[DropRule],
    config: &PipelineConfig,
) -> Result<(CandidatePool, QuestionReport)> {
    let qid = &pool.question_id;
    let empty =
        |stage: &str| Error::Pipeline(format!("question {qid}: no candidates left after {stage}"));
    if pool.is_empty() {
        return Err(empty("ingestion"));
    }
    let (dropped, drop_report) = apply_drop_rules(pool, drop_rules);
    if dropped.is_empty() {
        return Err(empty("drop rules"));
    }
    let rare = rare_gram_filter(&dropped, config.rare_width, config.rare_include_sentinels)?;
    if rare.is_empty() {
        return Err(empty("rare gram filter"));
    }
    let lengthy = length_refine(&rare, config.length_target, config.length_keep);
    let refine = RefineConfig {
        target_length: config.length_target,
        ..config.refine
    };
    let (refined, refine_report) = distribution_refine(&lengthy, &refine)?;
    let report = QuestionReport {
        question_id: qid.clone(),
        ingested: pool.len(),
        after_drop_rules: dropped.len(),
        drop_rules: drop_report,
        rare_gram_removed: dropped.len() - rare.len(),
        after_rare_gram_filter: rare.len(),
        after_length_refine: lengthy.len(),
        length_refine_stats: LengthStats::of_pool(&lengthy),
        final_count: refined.len(),
        final_length_stats: LengthStats::of_pool(&refined),
        refine: refine_report,
    };
    Ok((refined, report))
}
