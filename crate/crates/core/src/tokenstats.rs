//! Rank–frequency statistics of n-grams in token streams.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct NgramTable {
    pub n: usize,
    pub counts: BTreeMap<Vec<usize>, u64>,
    pub total: u64,
}

/// Sliding-window n-gram counts within each utterance, summed.
pub fn ngram_counts(streams: &[Vec<usize>], n: usize) -> Result<NgramTable> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::Config(format!("n-gram order must be in 1..={MAX_ORDER}, got {n}")));
    }
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for s in streams {
        for w in s.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
            total += 1;
        }
    }
    Ok(NgramTable { n, counts, total })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankCurve {
    /// `(rank, count)`, ranks from 1. Counts are real so exact synthetic
    /// laws can be represented.
    pub rows: Vec<(usize, f64)>,
}

/// Counts sorted descending; equal counts keep the lexicographic order of
/// their n-grams.
pub fn rank_curve(t: &NgramTable, drop_hapax: bool) -> RankCurve {
    let mut entries: Vec<(&Vec<usize>, u64)> = t
        .counts
        .iter()
        .filter(|&(_, &c)| !(drop_hapax && c == 1))
        .map(|(k, &c)| (k, c))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    RankCurve {
        rows: entries.iter().enumerate().map(|(i, &(_, c))| (i + 1, c as f64)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZipfFit {
    pub s: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line `ln f = a − s·ln r`.
pub fn zipf_fit(c: &RankCurve) -> Result<ZipfFit> {
    if c.rows.len() < 3 {
        return Err(Error::Contract(format!("zipf fit needs >= 3 points, got {}", c.rows.len())));
    }
    let pts: Vec<(f64, f64)> = c.rows.iter().map(|&(r, f)| ((r as f64).ln(), f.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ZipfFit {
        s: -slope,
        intercept,
        r2,
    })
}

/// `x = ln r / ln r_max`, `y = ln(f/f₁) / ln(f_last/f₁)`. All-equal counts
/// give `y = 0` everywhere.
pub fn normalized_curve(c: &RankCurve) -> Result<Vec<(f64, f64)>> {
    if c.rows.len() < 2 {
        return Err(Error::Contract("normalized curve needs >= 2 points".into()));
    }
    let first = c.rows[0].1;
    let (max_rank, last) = c.rows[c.rows.len() - 1];
    let denom_y = (last / first).ln();
    let denom_x = (max_rank as f64).ln();
    Ok(c.rows
        .iter()
        .map(|&(r, f)| {
            let x = (r as f64).ln() / denom_x;
            let y = if denom_y == 0.0 { 0.0 } else { (f / first).ln() / denom_y };
            (x, y)
        })
        .collect())
}

/// One utterance per line of whitespace-separated decimal ids.
pub fn parse_token_lines(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.lines() {
        let ids = line
            .split_whitespace()
            .map(|w| {
                w.parse::<usize>().map_err(|_| Error::Parse {
                    offset,
                    detail: format!("`{w}` is not a token id"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if !ids.is_empty() {
            out.push(ids);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

pub fn format_token_line(tokens: &[usize]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}
