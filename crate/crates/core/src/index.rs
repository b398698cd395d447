//! Per-question n-gram statistics over reference answers.
//!
//! [`NGramTable`] keeps exact occurrence counts for every indexed width and,
//! at width 3, the number of distinct answers containing each gram. Fluency
//! reads gram probabilities (`count / total_w`), truthfulness reads document
//! frequencies (`answers containing / answers`), and the pipeline filters
//! read raw counts.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{calibrate_fluency, CalibrationMode, FluencyNormalizer};
use crate::text::{check_width, framed_grams, Gram, NormalizedText, Symbol, MAX_WIDTH};

/// Width whose per-answer containment is tracked.
pub const DOC_FREQUENCY_WIDTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramTable {
    /// `counts[w - 1]` maps each width-`w` gram to its occurrence count.
    counts: Vec<HashMap<Gram, u64>>,
    totals: Vec<u64>,
    indexed: [bool; MAX_WIDTH],
    doc_counts: HashMap<Gram, u64>,
    doc_count: u64,
}

impl Default for NGramTable {
    fn default() -> Self {
        NGramTable {
            counts: vec![HashMap::new(); MAX_WIDTH],
            totals: vec![0; MAX_WIDTH],
            indexed: [false; MAX_WIDTH],
            doc_counts: HashMap::new(),
            doc_count: 0,
        }
    }
}

/// Indexes widths `1..=10` of every answer, with sentinels.
pub fn build_index(answers: &[NormalizedText]) -> NGramTable {
    NGramTable::build(answers, 1..=MAX_WIDTH).expect("default widths are valid")
}

impl NGramTable {
    /// Indexes the given widths. Document frequencies are recorded when
    /// width 3 is among them.
    pub fn build(
        answers: &[NormalizedText],
        widths: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut table = NGramTable::default();
        for w in widths {
            check_width(w)?;
            table.indexed[w - 1] = true;
        }
        for answer in answers {
            table.add(answer);
        }
        Ok(table)
    }

    /// Adds one answer's grams at every indexed width.
    pub fn add(&mut self, answer: &NormalizedText) {
        let framed = answer.framed_symbols();
        for w in 1..=MAX_WIDTH {
            if !self.indexed[w - 1] {
                continue;
            }
            let counts = &mut self.counts[w - 1];
            let mut added = 0u64;
            for gram in framed_grams(&framed, w) {
                *counts.entry(gram).or_insert(0) += 1;
                added += 1;
            }
            self.totals[w - 1] += added;
            if w == DOC_FREQUENCY_WIDTH {
                let distinct: HashSet<Gram> = framed_grams(&framed, w).collect();
                for gram in distinct {
                    *self.doc_counts.entry(gram).or_insert(0) += 1;
                }
            }
        }
        self.doc_count += 1;
    }

    /// Folds another table over the same widths into this one. The result
    /// equals indexing both answer multisets together.
    pub fn absorb(&mut self, other: &NGramTable) -> Result<()> {
        if self.indexed != other.indexed {
            return Err(Error::Argument("tables index different widths".into()));
        }
        for (mine, theirs) in self.counts.iter_mut().zip(&other.counts) {
            for (gram, count) in theirs {
                *mine.entry(*gram).or_insert(0) += count;
            }
        }
        for (mine, theirs) in self.totals.iter_mut().zip(&other.totals) {
            *mine += theirs;
        }
        for (gram, count) in &other.doc_counts {
            *self.doc_counts.entry(*gram).or_insert(0) += count;
        }
        self.doc_count += other.doc_count;
        Ok(())
    }

    pub fn is_indexed(&self, w: usize) -> bool {
        (1..=MAX_WIDTH).contains(&w) && self.indexed[w - 1]
    }

    /// Total gram occurrences at width `w`.
    pub fn total(&self, w: usize) -> u64 {
        if (1..=MAX_WIDTH).contains(&w) {
            self.totals[w - 1]
        } else {
            0
        }
    }

    /// Number of indexed answers.
    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn distinct_grams(&self, w: usize) -> usize {
        if (1..=MAX_WIDTH).contains(&w) {
            self.counts[w - 1].len()
        } else {
            0
        }
    }

    /// Iterates `(gram, count)` at width `w` in no particular order.
    pub fn grams(&self, w: usize) -> impl Iterator<Item = (&Gram, u64)> {
        let map = (1..=MAX_WIDTH).contains(&w).then(|| &self.counts[w - 1]);
        map.into_iter().flatten().map(|(g, c)| (g, *c))
    }

    /// Raw occurrence count across the indexed corpus.
    pub fn corpus_gram_count(&self, gram: &Gram) -> u64 {
        self.counts[gram.width() - 1]
            .get(gram)
            .copied()
            .unwrap_or(0)
    }

    /// `count(g) / total_w`; zero for unseen grams and empty widths.
    pub fn gram_probability(&self, gram: &Gram) -> f64 {
        let total = self.totals[gram.width() - 1];
        if total == 0 {
            return 0.0;
        }
        self.corpus_gram_count(gram) as f64 / total as f64
    }

    /// Fraction of indexed answers containing the width-3 `gram`.
    pub fn doc_frequency(&self, gram: &Gram) -> Result<f64> {
        if gram.width() != DOC_FREQUENCY_WIDTH {
            return Err(Error::Argument(format!(
                "document frequency is tracked for width {DOC_FREQUENCY_WIDTH}, got {}",
                gram.width()
            )));
        }
        Ok(self.doc_frequency_unchecked(gram))
    }

    pub(crate) fn doc_frequency_unchecked(&self, gram: &Gram) -> f64 {
        if self.doc_count == 0 {
            return 0.0;
        }
        self.doc_counts.get(gram).copied().unwrap_or(0) as f64 / self.doc_count as f64
    }

    fn sorted_counts(map: &HashMap<Gram, u64>) -> Vec<(Gram, u64)> {
        let mut entries: Vec<(Gram, u64)> = map.iter().map(|(g, c)| (*g, *c)).collect();
        entries.sort_unstable_by_key(|a| a.0);
        entries
    }

    /// Writes the portable binary form. See [`TableHeader`] for the layout.
    pub fn write_to(&self, mut out: impl Write, header: &TableHeader) -> std::io::Result<()> {
        out.write_all(TABLE_MAGIC)?;
        out.write_all(&TABLE_VERSION.to_le_bytes())?;
        out.write_all(&header.punctuation_digest)?;
        out.write_all(&header.source_digest)?;
        let mask: u16 = self
            .indexed
            .iter()
            .enumerate()
            .filter(|(_, on)| **on)
            .map(|(i, _)| 1u16 << i)
            .sum();
        out.write_all(&mask.to_le_bytes())?;
        out.write_all(&self.doc_count.to_le_bytes())?;
        for w in 1..=MAX_WIDTH {
            if !self.indexed[w - 1] {
                continue;
            }
            let entries = Self::sorted_counts(&self.counts[w - 1]);
            out.write_all(&self.totals[w - 1].to_le_bytes())?;
            write_entries(&mut out, &entries)?;
        }
        write_entries(&mut out, &Self::sorted_counts(&self.doc_counts))?;
        Ok(())
    }

    pub fn to_bytes(&self, header: &TableHeader) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf, header)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<(Self, TableHeader)> {
        let mut magic = [0u8; 4];
        read_exact(&mut bytes, &mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut bytes)?);
        if version != TABLE_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let header = TableHeader {
            punctuation_digest: read_array(&mut bytes)?,
            source_digest: read_array(&mut bytes)?,
        };
        let mask = u16::from_le_bytes(read_array(&mut bytes)?);
        if mask >> MAX_WIDTH != 0 {
            return Err(Error::Format("width mask out of range".into()));
        }
        let mut table = NGramTable {
            doc_count: u64::from_le_bytes(read_array(&mut bytes)?),
            ..NGramTable::default()
        };
        for w in 1..=MAX_WIDTH {
            if mask & (1 << (w - 1)) == 0 {
                continue;
            }
            table.indexed[w - 1] = true;
            let total = u64::from_le_bytes(read_array(&mut bytes)?);
            let entries = read_entries(&mut bytes)?;
            let sum: u64 = entries.iter().map(|(_, c)| *c).sum();
            if sum != total || entries.iter().any(|(g, _)| g.width() != w) {
                return Err(Error::Format(format!("inconsistent width-{w} section")));
            }
            table.totals[w - 1] = total;
            table.counts[w - 1] = entries.into_iter().collect();
        }
        let docs = read_entries(&mut bytes)?;
        if docs
            .iter()
            .any(|(g, c)| g.width() != DOC_FREQUENCY_WIDTH || *c == 0 || *c > table.doc_count)
        {
            return Err(Error::Format(
                "inconsistent document-frequency section".into(),
            ));
        }
        table.doc_counts = docs.into_iter().collect();
        if !bytes.is_empty() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok((table, header))
    }
}

const TABLE_MAGIC: &[u8; 4] = b"NGTB";
const TABLE_VERSION: u32 = 1;

/// Provenance carried in a serialized table.
///
/// Layout (all integers little-endian):
///
/// ```text
/// "NGTB" | version u32 | punctuation digest [32] | source digest [32]
/// | width mask u16 | doc_count u64
/// | per indexed width, ascending: total u64, section
/// | doc-frequency section
/// section := n u64, then n × (width u8, width × symbol u32, count u64)
/// ```
///
/// Entries are sorted by gram, so equal tables serialize to equal bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TableHeader {
    pub punctuation_digest: [u8; 32],
    /// Digest of whatever the table was built from, typically the refset file.
    pub source_digest: [u8; 32],
}

fn write_entries(out: &mut impl Write, entries: &[(Gram, u64)]) -> std::io::Result<()> {
    out.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (gram, count) in entries {
        out.write_all(&[gram.width() as u8])?;
        for sym in gram.symbols() {
            out.write_all(&sym.raw().to_le_bytes())?;
        }
        out.write_all(&count.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact(input: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|_| Error::Format("unexpected end of data".into()))
}

fn read_array<const N: usize>(input: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(input, &mut buf)?;
    Ok(buf)
}

fn read_entries(input: &mut &[u8]) -> Result<Vec<(Gram, u64)>> {
    let n = u64::from_le_bytes(read_array(input)?);
    let mut entries: Vec<(Gram, u64)> = Vec::new();
    for _ in 0..n {
        let [width] = read_array::<1>(input)?;
        let width = width as usize;
        check_width(width).map_err(|e| Error::Format(e.to_string()))?;
        let mut symbols = Vec::with_capacity(width);
        for _ in 0..width {
            let raw = u32::from_le_bytes(read_array(input)?);
            symbols.push(
                Symbol::from_raw(raw)
                    .ok_or_else(|| Error::Format(format!("bad symbol {raw:#x}")))?,
            );
        }
        let gram = Gram::new(&symbols).map_err(|e| Error::Format(e.to_string()))?;
        let count = u64::from_le_bytes(read_array(input)?);
        if count == 0 {
            return Err(Error::Format("zero count entry".into()));
        }
        if entries.last().is_some_and(|(prev, _)| *prev >= gram) {
            return Err(Error::Format("entries not strictly sorted".into()));
        }
        entries.push((gram, count));
    }
    Ok(entries)
}

/// Reference answers for one question, their index and the fluency normalizer.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    question_id: String,
    answers: Vec<NormalizedText>,
    table: NGramTable,
    normalizer: Option<FluencyNormalizer>,
}

impl ReferenceSet {
    /// Indexes `answers`; the set is uncalibrated until [`calibrate`](Self::calibrate).
    pub fn new(question_id: impl Into<String>, answers: Vec<NormalizedText>) -> Self {
        let table = build_index(&answers);
        Self::with_table(question_id, answers, table)
    }

    /// Pairs answers with a previously built (e.g. cached) table.
    pub fn with_table(
        question_id: impl Into<String>,
        answers: Vec<NormalizedText>,
        table: NGramTable,
    ) -> Self {
        ReferenceSet {
            question_id: question_id.into(),
            answers,
            table,
            normalizer: None,
        }
    }

    pub fn calibrate(&mut self, mode: CalibrationMode) -> Result<()> {
        self.normalizer = Some(calibrate_fluency(&self.answers, &self.table, mode)?);
        Ok(())
    }

    pub fn calibrated(mut self, mode: CalibrationMode) -> Result<Self> {
        self.calibrate(mode)?;
        Ok(self)
    }

    pub fn set_normalizer(&mut self, normalizer: FluencyNormalizer) {
        self.normalizer = Some(normalizer);
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn answers(&self) -> &[NormalizedText] {
        &self.answers
    }

    pub fn table(&self) -> &NGramTable {
        &self.table
    }

    pub fn normalizer(&self) -> Option<FluencyNormalizer> {
        self.normalizer
    }
}

/// Loads a cached table, accepting it only if its header matches `expected`.
pub fn load_cached_table(path: &Path, expected: &TableHeader) -> Result<Option<NGramTable>> {
    let bytes = match std::fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let (table, header) = NGramTable::from_bytes(&bytes)?;
    Ok((header == *expected).then_some(table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::PunctuationSet;
    use proptest::prelude::*;

    fn texts(items: &[&str]) -> Vec<NormalizedText> {
        let set = PunctuationSet::default();
        items
            .iter()
            .map(|s| NormalizedText::from_normalized(*s, &set))
            .collect()
    }

    fn gram(symbols: &[Symbol]) -> Gram {
        Gram::new(symbols).unwrap()
    }

    fn ch(c: char) -> Symbol {
        Symbol::from_char(c)
    }

    #[test]
    fn unigram_table_by_hand() {
        let table = build_index(&texts(&["abc", "abd"]));
        assert_eq!(table.total(1), 10);
        assert_eq!(table.gram_probability(&gram(&[ch('a')])), 0.2);
        assert_eq!(table.gram_probability(&gram(&[ch('c')])), 0.1);
        assert_eq!(table.gram_probability(&gram(&[Symbol::BOS])), 0.2);
    }

    #[test]
    fn bigram_table_by_hand() {
        let table = build_index(&texts(&["abc", "abd"]));
        assert_eq!(table.total(2), 8);
        assert_eq!(table.gram_probability(&gram(&[ch('a'), ch('b')])), 0.25);
        assert_eq!(table.gram_probability(&gram(&[Symbol::BOS, ch('a')])), 0.25);
        assert_eq!(table.gram_probability(&gram(&[ch('z'), ch('b')])), 0.0);
    }

    #[test]
    fn empty_corpus() {
        let table = build_index(&[]);
        for w in 1..=MAX_WIDTH {
            assert_eq!(table.total(w), 0);
        }
        let g = Gram::from_str_chars("abc").unwrap();
        assert_eq!(table.gram_probability(&g), 0.0);
        assert_eq!(table.doc_frequency(&g).unwrap(), 0.0);
        assert_eq!(table.corpus_gram_count(&g), 0);
    }

    #[test]
    fn doc_frequency_threshold_case() {
        let mut answers = vec!["xyz"; 995];
        answers.extend(["abc"; 5]);
        let table = build_index(&texts(&answers));
        let g = Gram::from_str_chars("abc").unwrap();
        assert_eq!(table.doc_frequency(&g).unwrap(), 0.005);
        let everywhere = gram(&[Symbol::BOS, ch('x'), ch('y')]);
        assert!(table.doc_frequency(&everywhere).unwrap() < 1.0);
        let table = build_index(&texts(&["abcd", "zabc"]));
        assert_eq!(table.doc_frequency(&g).unwrap(), 1.0);
        assert_eq!(
            table
                .doc_frequency(&Gram::from_str_chars("qqq").unwrap())
                .unwrap(),
            0.0
        );
        assert!(table
            .doc_frequency(&Gram::from_str_chars("ab").unwrap())
            .is_err());
    }

    #[test]
    fn occurrences_not_documents() {
        let table = build_index(&texts(&["ababa", "zzz"]));
        let g = Gram::from_str_chars("aba").unwrap();
        assert_eq!(table.corpus_gram_count(&g), 2);
        assert_eq!(table.doc_frequency(&g).unwrap(), 0.5);
        let five = build_index(&texts(&["abcdefg", "hijklmn"]));
        assert_eq!(
            five.corpus_gram_count(&Gram::from_str_chars("bcdef").unwrap()),
            1
        );
    }

    #[test]
    fn serialized_table_rejects_corruption() {
        let table = build_index(&texts(&["abc", "abd"]));
        let header = TableHeader::default();
        let bytes = table.to_bytes(&header);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(NGramTable::from_bytes(&bad).is_err());
        assert!(NGramTable::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(NGramTable::from_bytes(&trailing).is_err());
    }

    #[test]
    fn cached_table_requires_matching_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.ngt");
        let table = build_index(&texts(&["abc"]));
        let header = TableHeader {
            punctuation_digest: [1; 32],
            source_digest: [2; 32],
        };
        assert!(load_cached_table(&path, &header).unwrap().is_none());
        std::fs::write(&path, table.to_bytes(&header)).unwrap();
        assert_eq!(load_cached_table(&path, &header).unwrap(), Some(table));
        let other = TableHeader {
            source_digest: [3; 32],
            ..header
        };
        assert!(load_cached_table(&path, &other).unwrap().is_none());
    }

    fn corpus() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[abc。]{0,12}", 0..8)
    }

    proptest! {
        #[test]
        fn totals_match_formula(items in corpus()) {
            let refs: Vec<&str> = items.iter().map(String::as_str).collect();
            let answers = texts(&refs);
            let table = build_index(&answers);
            for w in 1..=MAX_WIDTH {
                let sum: u64 = table.grams(w).map(|(_, c)| c).sum();
                prop_assert_eq!(sum, table.total(w));
                let expect: u64 = answers
                    .iter()
                    .map(|a| (a.len() as i64 - w as i64 + 3).max(0) as u64)
                    .sum();
                prop_assert_eq!(table.total(w), expect);
                if table.total(w) > 0 {
                    let mass: f64 = table.grams(w).map(|(g, _)| table.gram_probability(g)).sum();
                    prop_assert!((mass - 1.0).abs() < 1e-9);
                }
            }
            for (g, c) in table.grams(3) {
                let df = table.doc_frequency(g).unwrap();
                prop_assert!(df > 0.0 && df <= 1.0);
                prop_assert!(c > 0);
            }
        }

        #[test]
        fn permutation_and_union(a in corpus(), b in corpus(), seed in any::<u64>()) {
            let ra: Vec<&str> = a.iter().map(String::as_str).collect();
            let rb: Vec<&str> = b.iter().map(String::as_str).collect();
            let mut all = ra.clone();
            all.extend(&rb);
            let union = build_index(&texts(&all));
            let mut merged = build_index(&texts(&ra));
            merged.absorb(&build_index(&texts(&rb))).unwrap();
            prop_assert_eq!(&merged, &union);

            let mut shuffled = all.clone();
            let n = shuffled.len();
            if n > 1 {
                shuffled.rotate_left((seed as usize) % n);
                shuffled.reverse();
            }
            prop_assert_eq!(build_index(&texts(&shuffled)), union);
        }

        #[test]
        fn binary_round_trip_is_bit_exact(items in corpus()) {
            let refs: Vec<&str> = items.iter().map(String::as_str).collect();
            let table = build_index(&texts(&refs));
            let header = TableHeader { punctuation_digest: [7; 32], source_digest: [9; 32] };
            let bytes = table.to_bytes(&header);
            let (decoded, h) = NGramTable::from_bytes(&bytes).unwrap();
            prop_assert_eq!(h, header);
            prop_assert_eq!(decoded.to_bytes(&header), bytes);
            prop_assert_eq!(decoded, table);
        }
    }
}
