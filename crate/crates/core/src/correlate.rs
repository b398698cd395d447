//! Pearson correlation between two sets of per-model scores.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Models needed before a correlation is reported.
pub const MIN_COMMON_MODELS: usize = 3;

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Correlation(format!(
            "series lengths differ ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Correlation("need at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Correlation(
            "correlation undefined: one series has zero variance".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedScore {
    pub model: String,
    pub ours: f64,
    pub external: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    pub pairs: Vec<PairedScore>,
}

/// Pairs models by name (sorted) and correlates their scores.
pub fn correlate_scores(
    ours: &BTreeMap<String, f64>,
    external: &BTreeMap<String, f64>,
) -> Result<Correlation> {
    let pairs: Vec<PairedScore> = ours
        .iter()
        .filter_map(|(model, &a)| {
            external.get(model).map(|&b| PairedScore {
                model: model.clone(),
                ours: a,
                external: b,
            })
        })
        .collect();
    if pairs.len() < MIN_COMMON_MODELS {
        return Err(Error::Correlation(format!(
            "only {} model(s) in common; need at least {MIN_COMMON_MODELS}",
            pairs.len()
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.ours).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.external).collect();
    Ok(Correlation {
        r: pearson(&xs, &ys)?,
        pairs,
    })
}

impl Correlation {
    pub fn render(&self) -> String {
        let mut out = format!("r\t{}\nmodel\tours\texternal\n", self.r);
        for p in &self.pairs {
            out.push_str(&format!("{}\t{}\t{}\n", p.model, p.ours, p.external));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_four_points() {
        // Means 2.5 / 3.75: Σdxdy = 3.5, Σdx² = 5, Σdy² = 4.75.
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 5.0, 4.0]).unwrap();
        assert!((r - 3.5 / (5.0f64 * 4.75).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
        let a: BTreeMap<String, f64> = [("a".into(), 1.0), ("b".into(), 2.0)].into_iter().collect();
        assert!(correlate_scores(&a, &a).is_err());
    }
}
