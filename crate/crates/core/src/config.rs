//! Run configuration: a `key = value` text file, overridable from the CLI.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{CalibrationMode, DEFAULT_THRESHOLD, TARGET_LENGTH};
use crate::pipeline::{PipelineConfig, RefineConfig};
use crate::text::{NormalizationRuleTable, PunctuationSet};

/// Default normalization table path when the config names none.
pub const ENV_NORMALIZATION_TABLE: &str = "GRAMSCORE_NORMALIZATION_TABLE";
/// Default punctuation set path when the config names none.
pub const ENV_PUNCTUATION_SET: &str = "GRAMSCORE_PUNCTUATION_SET";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    /// Final reference set size.
    pub keep: usize,
    /// Quota after length refinement.
    pub length_keep: usize,
    pub length_target: usize,
    pub max_iters: Option<usize>,
    pub rare_width: usize,
    pub rare_include_sentinels: bool,
    pub threshold: f64,
    pub strict: bool,
    pub calibration: CalibrationMode,
    /// Reject helpfulness rules that use NOT.
    pub forbid_not: bool,
    /// Write and reuse `<question>.ngt` index caches beside refset files.
    pub cache_index: bool,
    pub normalization_table: Option<PathBuf>,
    pub punctuation_set: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            keep: 1000,
            length_keep: 30_000,
            length_target: TARGET_LENGTH,
            max_iters: None,
            rare_width: 5,
            rare_include_sentinels: true,
            threshold: DEFAULT_THRESHOLD,
            strict: false,
            calibration: CalibrationMode::SelfInclusive,
            forbid_not: false,
            cache_index: false,
            normalization_table: None,
            punctuation_set: None,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl Config {
    /// Parses `key = value` lines; `#` starts a comment line. Relative paths
    /// resolve against `base_dir`.
    pub fn parse(source: &str, base_dir: &Path) -> Result<Self> {
        let mut config = Config::default();
        for (lineno, raw) in source.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key = value", lineno + 1))
            })?;
            config.set(key.trim(), value.trim(), base_dir)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&source, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "keep" => self.keep = parse_num(key, value)?,
            "length_keep" => self.length_keep = parse_num(key, value)?,
            "length_target" => self.length_target = parse_num(key, value)?,
            "max_iters" => self.max_iters = Some(parse_num(key, value)?),
            "rare_width" => self.rare_width = parse_num(key, value)?,
            "rare_include_sentinels" => self.rare_include_sentinels = parse_bool(key, value)?,
            "threshold" => self.threshold = parse_num(key, value)?,
            "strict" => self.strict = parse_bool(key, value)?,
            "forbid_not" => self.forbid_not = parse_bool(key, value)?,
            "cache_index" => self.cache_index = parse_bool(key, value)?,
            "calibration" => {
                self.calibration = match value {
                    "self-inclusive" => CalibrationMode::SelfInclusive,
                    "leave-one-out" => CalibrationMode::LeaveOneOut,
                    _ => {
                        return Err(Error::Config(format!(
                            "calibration: expected self-inclusive or leave-one-out, got {value:?}"
                        )))
                    }
                }
            }
            "normalization_table" => self.normalization_table = Some(base_dir.join(value)),
            "punctuation_set" => self.punctuation_set = Some(base_dir.join(value)),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "threshold must be in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.keep == 0 || self.length_keep == 0 {
            return Err(Error::Config(
                "keep and length_keep must be positive".into(),
            ));
        }
        if !(1..=crate::text::MAX_WIDTH).contains(&self.rare_width) {
            return Err(Error::Config(format!(
                "rare_width {} out of range",
                self.rare_width
            )));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            rare_width: self.rare_width,
            rare_include_sentinels: self.rare_include_sentinels,
            length_target: self.length_target,
            length_keep: self.length_keep,
            refine: RefineConfig {
                keep: self.keep,
                seed: self.seed,
                target_length: self.length_target,
                max_iters: self.max_iters,
            },
        }
    }

    fn table_path(&self) -> Option<PathBuf> {
        self.normalization_table
            .clone()
            .or_else(|| std::env::var_os(ENV_NORMALIZATION_TABLE).map(PathBuf::from))
    }

    fn punctuation_path(&self) -> Option<PathBuf> {
        self.punctuation_set
            .clone()
            .or_else(|| std::env::var_os(ENV_PUNCTUATION_SET).map(PathBuf::from))
    }

    pub fn load_normalization_table(&self) -> Result<NormalizationRuleTable> {
        match self.table_path() {
            Some(path) => NormalizationRuleTable::load(&path),
            None => Ok(NormalizationRuleTable::default()),
        }
    }

    pub fn load_punctuation_set(&self) -> Result<PunctuationSet> {
        match self.punctuation_path() {
            Some(path) => PunctuationSet::load(&path),
            None => Ok(PunctuationSet::default()),
        }
    }

    /// Settings that affect scores, one `key=value` per line. Paths are
    /// left out; the loaded tables are digested separately.
    pub fn scoring_canonical(&self) -> String {
        let calibration = match self.calibration {
            CalibrationMode::SelfInclusive => "self-inclusive",
            CalibrationMode::LeaveOneOut => "leave-one-out",
        };
        format!(
            "threshold={}\ncalibration={}\nforbid_not={}\n",
            self.threshold, calibration, self.forbid_not
        )
    }

    pub fn scoring_digest_hex(&self, extra: &[&str]) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.scoring_canonical().as_bytes());
        for part in extra {
            hasher.update(part.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}
