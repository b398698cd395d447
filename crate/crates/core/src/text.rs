//! Text normalization, character classes and sentinel-aware character n-grams.
//!
//! A "character" is a Unicode scalar value. Every text is framed by a
//! beginning-of-sentence and an end-of-sentence sentinel before grams are
//! taken, so a text of `L` characters yields `L - w + 3` grams of width `w`
//! (or none when `L < w - 2`).

use std::fmt;
use std::path::Path;

use regex::Regex;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest gram width indexed anywhere in the crate.
pub const MAX_WIDTH: usize = 10;

/// A gram token: a character or one of the two sentinels.
///
/// Sentinels live above `char::MAX` so they can never collide with text.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Symbol(u32);

impl Symbol {
    pub const BOS: Symbol = Symbol(0x11_0000);
    pub const EOS: Symbol = Symbol(0x11_0001);

    pub fn from_char(c: char) -> Self {
        Symbol(c as u32)
    }

    pub fn as_char(self) -> Option<char> {
        char::from_u32(self.0)
    }

    pub fn is_sentinel(self) -> bool {
        self == Self::BOS || self == Self::EOS
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    pub(crate) fn from_raw(raw: u32) -> Option<Self> {
        let sym = Symbol(raw);
        (sym.is_sentinel() || char::from_u32(raw).is_some()).then_some(sym)
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Symbol::BOS => f.write_str("<s>"),
            Symbol::EOS => f.write_str("</s>"),
            other => write!(f, "{:?}", other.as_char().unwrap_or('\u{fffd}')),
        }
    }
}

/// A fixed-capacity run of `width` symbols.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Gram {
    width: u8,
    symbols: [Symbol; MAX_WIDTH],
}

impl Gram {
    /// Builds a gram from its symbols, checking the width range and the
    /// sentinel placement rules (BOS only as a prefix, EOS only as a suffix).
    pub fn new(symbols: &[Symbol]) -> Result<Self> {
        let width = symbols.len();
        if !(1..=MAX_WIDTH).contains(&width) {
            return Err(Error::Argument(format!(
                "gram width {width} outside 1..={MAX_WIDTH}"
            )));
        }
        let bos_run = symbols.iter().take_while(|s| **s == Symbol::BOS).count();
        let eos_run = symbols
            .iter()
            .rev()
            .take_while(|s| **s == Symbol::EOS)
            .count();
        let misplaced = symbols[bos_run..width - eos_run.min(width - bos_run)]
            .iter()
            .any(|s| s.is_sentinel());
        if misplaced {
            return Err(Error::Argument(
                "sentinels must form a BOS prefix or an EOS suffix".into(),
            ));
        }
        Ok(Self::from_window(symbols))
    }

    /// Convenience constructor for tests and callers holding plain text:
    /// every character of `s` becomes one symbol.
    pub fn from_str_chars(s: &str) -> Result<Self> {
        let symbols: Vec<Symbol> = s.chars().map(Symbol::from_char).collect();
        Self::new(&symbols)
    }

    pub(crate) fn from_window(window: &[Symbol]) -> Self {
        debug_assert!(!window.is_empty() && window.len() <= MAX_WIDTH);
        let mut symbols = [Symbol::default(); MAX_WIDTH];
        symbols[..window.len()].copy_from_slice(window);
        Gram {
            width: window.len() as u8,
            symbols,
        }
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols[..self.width as usize]
    }

    pub fn contains_sentinel(&self) -> bool {
        self.symbols().iter().any(|s| s.is_sentinel())
    }
}

impl fmt::Debug for Gram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.symbols()).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CharClass {
    Content,
    PunctuationOrSymbol,
}

/// The set of characters excluded from truthfulness counting, stored as
/// sorted, merged, inclusive code-point ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PunctuationSet {
    ranges: Vec<(u32, u32)>,
}

const DEFAULT_PUNCTUATION: &[(u32, u32)] = &[
    (0x09, 0x0D), // ASCII control whitespace
    (0x20, 0x2F),
    (0x3A, 0x40),
    (0x5B, 0x60),
    (0x7B, 0x7E),
    (0xA0, 0xBF),
    (0xD7, 0xD7),
    (0xF7, 0xF7),
    (0x2000, 0x206F), // general punctuation
    (0x3000, 0x3004), // CJK punctuation, minus 々〆〇
    (0x3008, 0x3020),
    (0x3030, 0x3030),
    (0x303D, 0x303D),
    (0x30FB, 0x30FB), // katakana middle dot
    (0xFE10, 0xFE19),
    (0xFE30, 0xFE4F),
    (0xFF01, 0xFF0F), // fullwidth ASCII punctuation
    (0xFF1A, 0xFF20),
    (0xFF3B, 0xFF40),
    (0xFF5B, 0xFF65),
];

impl Default for PunctuationSet {
    fn default() -> Self {
        PunctuationSet::from_ranges(DEFAULT_PUNCTUATION.iter().copied())
    }
}

impl PunctuationSet {
    pub fn from_ranges(ranges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut ranges: Vec<(u32, u32)> = ranges
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        ranges.sort_unstable();
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(ranges.len());
        for (lo, hi) in ranges {
            match merged.last_mut() {
                Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        PunctuationSet { ranges: merged }
    }

    /// Parses the punctuation file format: one character, or an inclusive
    /// `U+XXXX..U+YYYY` range, per line. Blank lines and `#` comments are
    /// skipped, so `#` itself must be written `U+0023`.
    pub fn parse(source: &str) -> Result<Self> {
        let mut ranges = Vec::new();
        for (idx, raw) in source.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let bad = |what: &str| {
                Error::Config(format!(
                    "punctuation set line {}: {what}: {trimmed:?}",
                    idx + 1
                ))
            };
            if let Some((lo, hi)) = trimmed.split_once("..") {
                let lo = parse_code_point(lo).ok_or_else(|| bad("bad range start"))?;
                let hi = parse_code_point(hi).ok_or_else(|| bad("bad range end"))?;
                if lo > hi {
                    return Err(bad("empty range"));
                }
                ranges.push((lo, hi));
            } else if let Some(cp) = parse_code_point(trimmed) {
                ranges.push((cp, cp));
            } else {
                let mut chars = trimmed.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => ranges.push((c as u32, c as u32)),
                    _ => return Err(bad("expected one character or U+XXXX")),
                }
            }
        }
        Ok(PunctuationSet::from_ranges(ranges))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&source)
    }

    pub fn contains(&self, c: char) -> bool {
        let cp = c as u32;
        let idx = self.ranges.partition_point(|&(lo, _)| lo <= cp);
        idx > 0 && self.ranges[idx - 1].1 >= cp
    }

    pub fn ranges(&self) -> &[(u32, u32)] {
        &self.ranges
    }

    /// Canonical text form, one merged range per line.
    pub fn to_canonical_string(&self) -> String {
        self.ranges
            .iter()
            .map(|(lo, hi)| format!("U+{lo:04X}..U+{hi:04X}\n"))
            .collect()
    }

    /// SHA-256 of the canonical form.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_canonical_string().as_bytes()).into()
    }
}

fn parse_code_point(s: &str) -> Option<u32> {
    let hex = s
        .trim()
        .strip_prefix("U+")
        .or_else(|| s.trim().strip_prefix("u+"))?;
    let cp = u32::from_str_radix(hex, 16).ok()?;
    char::from_u32(cp).map(|c| c as u32)
}

pub fn classify_char(c: char, set: &PunctuationSet) -> CharClass {
    if set.contains(c) {
        CharClass::PunctuationOrSymbol
    } else {
        CharClass::Content
    }
}

#[derive(Debug, Clone)]
struct RewriteRule {
    pattern: Regex,
    replacement: String,
}

/// Ordered regex rewrites plus the width-unification and trimming passes.
///
/// Application order is: width unification, each rewrite rule once in file
/// order (`replace_all`, so `$1`-style group references work and a literal
/// `$` is written `$$`), then trimming of leading and trailing whitespace.
#[derive(Debug, Clone)]
pub struct NormalizationRuleTable {
    rules: Vec<RewriteRule>,
    pub width_unification: bool,
    pub trim_whitespace: bool,
}

impl Default for NormalizationRuleTable {
    fn default() -> Self {
        Self::parse(DEFAULT_NORMALIZATION).expect("built-in normalization table is valid")
    }
}

/// Shipped defaults. Lines are joined without a separator (line breaks carry
/// no content in short Japanese answers) and remaining whitespace runs
/// collapse to one space.
pub const DEFAULT_NORMALIZATION: &str = "\
# built-in normalization table
@width-unification\ton
@trim\ton
\\s*\\n\\s*\t
\\s+\t \n";

impl NormalizationRuleTable {
    /// A table with no rewrites and both passes disabled.
    pub fn empty() -> Self {
        NormalizationRuleTable {
            rules: Vec::new(),
            width_unification: false,
            trim_whitespace: false,
        }
    }

    pub fn with_rules<'a>(rules: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut table = Self::empty();
        for (idx, (pattern, replacement)) in rules.into_iter().enumerate() {
            table.push_rule(idx + 1, pattern, replacement)?;
        }
        Ok(table)
    }

    fn push_rule(&mut self, index: usize, pattern: &str, replacement: &str) -> Result<()> {
        let compiled = Regex::new(pattern)
            .map_err(|e| Error::Config(format!("normalization rule {index}: bad pattern: {e}")))?;
        self.rules.push(RewriteRule {
            pattern: compiled,
            replacement: replacement.to_owned(),
        });
        Ok(())
    }

    /// Parses the rule-table file format: `pattern<TAB>replacement` per line,
    /// `#` comments, and `@width-unification` / `@trim` directives taking
    /// `on` or `off`. Rules are numbered from 1 in diagnostics.
    pub fn parse(source: &str) -> Result<Self> {
        let mut table = Self::empty();
        let mut index = 0;
        for (lineno, raw) in source.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(directive) = line.strip_prefix('@') {
                let (key, value) = directive.split_once(['\t', ' ']).unwrap_or((directive, ""));
                let on = match value.trim() {
                    "on" => true,
                    "off" => false,
                    other => {
                        return Err(Error::Config(format!(
                            "normalization table line {}: expected on/off, got {other:?}",
                            lineno + 1
                        )))
                    }
                };
                match key {
                    "width-unification" => table.width_unification = on,
                    "trim" => table.trim_whitespace = on,
                    other => {
                        return Err(Error::Config(format!(
                            "normalization table line {}: unknown directive @{other}",
                            lineno + 1
                        )))
                    }
                }
                continue;
            }
            index += 1;
            let (pattern, replacement) = line.split_once('\t').ok_or_else(|| {
                Error::Config(format!(
                    "normalization rule {index} (line {}): expected pattern<TAB>replacement",
                    lineno + 1
                ))
            })?;
            table.push_rule(index, pattern, replacement)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&source)
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn apply(&self, raw: &str) -> String {
        let mut text = if self.width_unification {
            unify_width(raw)
        } else {
            raw.to_owned()
        };
        for rule in &self.rules {
            text = rule
                .pattern
                .replace_all(&text, rule.replacement.as_str())
                .into_owned();
        }
        if self.trim_whitespace {
            text = text.trim().to_owned();
        }
        text
    }

    pub fn to_canonical_string(&self) -> String {
        let flag = |b: bool| if b { "on" } else { "off" };
        let mut out = format!(
            "@width-unification\t{}\n@trim\t{}\n",
            flag(self.width_unification),
            flag(self.trim_whitespace)
        );
        for rule in &self.rules {
            out.push_str(rule.pattern.as_str());
            out.push('\t');
            out.push_str(&rule.replacement);
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the canonical form. Refset files record it so scoring
    /// can refuse texts normalized under a different table.
    pub fn digest_hex(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_string().as_bytes()))
    }
}

const HALFWIDTH_KATAKANA: [u32; 63] = [
    0x3002, 0x300C, 0x300D, 0x3001, 0x30FB, 0x30F2, 0x30A1, 0x30A3, 0x30A5, 0x30A7, 0x30A9, 0x30E3,
    0x30E5, 0x30E7, 0x30C3, 0x30FC, 0x30A2, 0x30A4, 0x30A6, 0x30A8, 0x30AA, 0x30AB, 0x30AD, 0x30AF,
    0x30B1, 0x30B3, 0x30B5, 0x30B7, 0x30B9, 0x30BB, 0x30BD, 0x30BF, 0x30C1, 0x30C4, 0x30C6, 0x30C8,
    0x30CA, 0x30CB, 0x30CC, 0x30CD, 0x30CE, 0x30CF, 0x30D2, 0x30D5, 0x30D8, 0x30DB, 0x30DE, 0x30DF,
    0x30E0, 0x30E1, 0x30E2, 0x30E4, 0x30E6, 0x30E8, 0x30E9, 0x30EA, 0x30EB, 0x30EC, 0x30ED, 0x30EF,
    0x30F3, 0x309B, 0x309C,
];

fn voiced(base: char) -> Option<char> {
    let cp = base as u32;
    let plus_one = matches!(cp, 0x30AB..=0x30C2 if (cp - 0x30AB).is_multiple_of(2))
        || matches!(cp, 0x30C4 | 0x30C6 | 0x30C8)
        || matches!(cp, 0x30CF..=0x30DB if (cp - 0x30CF).is_multiple_of(3));
    if plus_one {
        char::from_u32(cp + 1)
    } else if cp == 0x30A6 {
        Some('\u{30F4}')
    } else {
        None
    }
}

fn semi_voiced(base: char) -> Option<char> {
    let cp = base as u32;
    matches!(cp, 0x30CF..=0x30DB if (cp - 0x30CF).is_multiple_of(3))
        .then(|| char::from_u32(cp + 2))
        .flatten()
}

/// Fullwidth ASCII to ASCII, ideographic space to space, halfwidth katakana
/// to fullwidth with sound marks composed onto the preceding kana.
pub fn unify_width(raw: &str) -> String {
    let mut out: Vec<char> = Vec::with_capacity(raw.len());
    for c in raw.chars() {
        let cp = c as u32;
        let mapped = match cp {
            0xFF01..=0xFF5E => char::from_u32(cp - 0xFEE0).unwrap_or(c),
            0x3000 => ' ',
            0xFF61..=0xFF9F => {
                char::from_u32(HALFWIDTH_KATAKANA[(cp - 0xFF61) as usize]).unwrap_or(c)
            }
            _ => c,
        };
        let composed = match (mapped, out.last().copied()) {
            ('\u{309B}', Some(prev)) if cp == 0xFF9E => voiced(prev),
            ('\u{309C}', Some(prev)) if cp == 0xFF9F => semi_voiced(prev),
            _ => None,
        };
        match composed {
            Some(k) => *out.last_mut().expect("checked above") = k,
            None => out.push(mapped),
        }
    }
    out.into_iter().collect()
}

/// A response after normalization: the text, its characters and their classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    text: String,
    chars: Vec<char>,
    /// Byte offset of each character, plus one trailing entry for `text.len()`.
    offsets: Vec<usize>,
    class_mask: Vec<CharClass>,
}

impl NormalizedText {
    /// Wraps text that is already normalized (e.g. read back from a refset
    /// file), assigning character classes only.
    pub fn from_normalized(text: impl Into<String>, punctuation: &PunctuationSet) -> Self {
        let text = text.into();
        let mut chars = Vec::with_capacity(text.len());
        let mut offsets = Vec::with_capacity(text.len() + 1);
        for (offset, c) in text.char_indices() {
            chars.push(c);
            offsets.push(offset);
        }
        offsets.push(text.len());
        let class_mask = chars
            .iter()
            .map(|&c| classify_char(c, punctuation))
            .collect();
        NormalizedText {
            text,
            chars,
            offsets,
            class_mask,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn class_mask(&self) -> &[CharClass] {
        &self.class_mask
    }

    /// Character count `L`.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// The first `n` characters as a string slice.
    pub fn prefix_str(&self, n: usize) -> &str {
        &self.text[..self.offsets[n.min(self.len())]]
    }

    /// The first `n` characters, classes preserved.
    pub fn truncated(&self, n: usize) -> NormalizedText {
        let n = n.min(self.len());
        NormalizedText {
            text: self.prefix_str(n).to_owned(),
            chars: self.chars[..n].to_vec(),
            offsets: self.offsets[..=n].to_vec(),
            class_mask: self.class_mask[..n].to_vec(),
        }
    }

    /// Character count of the prefix ending at byte offset `byte_end`.
    pub(crate) fn char_count_at(&self, byte_end: usize) -> usize {
        self.offsets.partition_point(|&o| o < byte_end)
    }

    /// `[BOS, C_1, .., C_L, EOS]`.
    pub(crate) fn framed_symbols(&self) -> Vec<Symbol> {
        let mut symbols = Vec::with_capacity(self.len() + 2);
        symbols.push(Symbol::BOS);
        symbols.extend(self.chars.iter().map(|&c| Symbol::from_char(c)));
        symbols.push(Symbol::EOS);
        symbols
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

pub fn normalize_text(
    raw: &str,
    table: &NormalizationRuleTable,
    punctuation: &PunctuationSet,
) -> NormalizedText {
    NormalizedText::from_normalized(table.apply(raw), punctuation)
}

pub(crate) fn check_width(w: usize) -> Result<()> {
    if (1..=MAX_WIDTH).contains(&w) {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "gram width {w} outside 1..={MAX_WIDTH}"
        )))
    }
}

/// Iterates the grams `G^w_0 ..= G^w_{L-w+2}` of a framed symbol sequence.
pub(crate) fn framed_grams(framed: &[Symbol], w: usize) -> impl Iterator<Item = Gram> + '_ {
    framed.windows(w).map(Gram::from_window)
}

/// All width-`w` grams of `text` with sentinels, in order.
pub fn extract_grams(text: &NormalizedText, w: usize) -> Result<Vec<Gram>> {
    check_width(w)?;
    let framed = text.framed_symbols();
    Ok(framed_grams(&framed, w).collect())
}
