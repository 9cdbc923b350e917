//! Per-sentence novelty ("dark band") scores and ensemble flags.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embedding::ModelId;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::ssm::StandardizedSsm;

pub const EXCERPT_CHARS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoveltyParams {
    /// Fraction of sentences each model may mark, in (0, 1).
    pub q: f64,
    /// Minimum number of agreeing models.
    pub k: usize,
}

impl NoveltyParams {
    pub const DEFAULT_Q: f64 = 0.05;

    /// q = 0.05 and a simple majority of `models`.
    pub fn default_for(models: usize) -> Self {
        NoveltyParams {
            q: Self::DEFAULT_Q,
            k: models.div_ceil(2).max(1),
        }
    }

    pub fn validate(&self, models: usize) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidParameter(format!("q must lie in (0, 1), got {}", self.q)));
        }
        if self.k < 1 || self.k > models {
            return Err(Error::InvalidParameter(format!(
                "k must lie in [1, {models}], got {}",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoveltyReport {
    pub doc_id: String,
    pub models: Vec<ModelId>,
    /// One list of N scores per model, aligned with `models`.
    pub scores: Vec<Vec<f64>>,
    /// Number of models marking each sentence as a candidate.
    pub candidate_counts: Vec<usize>,
    /// `(sentence, agreeing models)` with count >= k, count descending then
    /// index ascending.
    pub flags: Vec<(usize, usize)>,
    pub params: NoveltyParams,
}

/// score[i] = -mean_{j != i} z[i][j]. Higher means the row is darker than
/// the document average.
pub fn row_novelty(z: &StandardizedSsm) -> Result<Vec<f64>> {
    row_novelty_with(z, Execution::default())
}

pub fn row_novelty_with(z: &StandardizedSsm, exec: Execution) -> Result<Vec<f64>> {
    let n = z.n();
    if n < 3 {
        return Err(Error::TooSmall { need: 3, got: n });
    }
    let denom = (n - 1) as f64;
    Ok(exec::map_indices(exec, n, |i| {
        let row = z.row(i);
        let sum: f64 = row[..i].iter().chain(&row[i + 1..]).map(|&v| f64::from(v)).sum();
        // `+ 0.0` folds -0.0 into 0.0 so exports never print "-0"
        -sum / denom + 0.0
    }))
}

/// Marks the sentences whose score is strictly above the model's empirical
/// (1 - q) quantile, i.e. the order statistic of rank N - floor(qN). At most
/// floor(qN) sentences qualify; ties at the threshold are excluded.
pub fn candidates(scores: &[f64], q: f64) -> Vec<bool> {
    let n = scores.len();
    let allowed = ((q * n as f64) + 1e-9).floor() as usize;
    if n == 0 || allowed == 0 {
        return vec![false; n];
    }
    let allowed = allowed.min(n - 1);
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[n - allowed - 1];
    scores.iter().map(|&s| s > threshold).collect()
}

fn candidate_counts(scores: &[Vec<f64>], q: f64) -> Vec<usize> {
    let n = scores.first().map_or(0, Vec::len);
    let mut counts = vec![0usize; n];
    for s in scores {
        for (c, flagged) in counts.iter_mut().zip(candidates(s, q)) {
            *c += usize::from(flagged);
        }
    }
    counts
}

fn check_scores(scores: &[Vec<f64>]) -> Result<()> {
    let first = scores.first().ok_or(Error::TooFewModels { need: 1, got: 0 })?;
    if let Some(s) = scores.iter().find(|s| s.len() != first.len()) {
        return Err(Error::LengthMismatch(s.len(), first.len()));
    }
    Ok(())
}

/// Sentences marked by at least `k` models at quantile `q`.
pub fn ensemble_flags(scores: &[Vec<f64>], q: f64, k: usize) -> Result<Vec<(usize, usize)>> {
    check_scores(scores)?;
    NoveltyParams { q, k }.validate(scores.len())?;
    Ok(flags_from_counts(&candidate_counts(scores, q), k))
}

fn flags_from_counts(counts: &[usize], k: usize) -> Vec<(usize, usize)> {
    let mut flags: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c >= k)
        .map(|(i, &c)| (i, c))
        .collect();
    flags.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    flags
}

/// Scores every model and aggregates the ensemble flags.
pub fn novelty_report(zs: &[StandardizedSsm], params: NoveltyParams) -> Result<NoveltyReport> {
    let first = zs.first().ok_or(Error::TooFewModels { need: 1, got: 0 })?;
    params.validate(zs.len())?;
    for z in zs {
        if z.n() != first.n() || z.doc_id != first.doc_id {
            return Err(Error::Inconsistent(format!(
                "{} ({}, n = {}) does not match {} ({}, n = {})",
                z.model,
                z.doc_id,
                z.n(),
                first.model,
                first.doc_id,
                first.n()
            )));
        }
    }
    let scores = zs.iter().map(row_novelty).collect::<Result<Vec<_>>>()?;
    report_from_scores(&first.doc_id, zs.iter().map(|z| z.model.clone()).collect(), scores, params)
}

/// Builds a report from per-model row scores already computed with
/// [`row_novelty`], aligned with `models`.
pub fn report_from_scores(
    doc_id: &str,
    models: Vec<ModelId>,
    scores: Vec<Vec<f64>>,
    params: NoveltyParams,
) -> Result<NoveltyReport> {
    check_scores(&scores)?;
    if models.len() != scores.len() {
        return Err(Error::LengthMismatch(models.len(), scores.len()));
    }
    params.validate(scores.len())?;
    let counts = candidate_counts(&scores, params.q);
    Ok(NoveltyReport {
        doc_id: doc_id.to_string(),
        models,
        flags: flags_from_counts(&counts, params.k),
        candidate_counts: counts,
        scores,
        params,
    })
}

fn excerpt(doc: Option<&Document>, i: usize) -> String {
    doc.and_then(|d| d.sentences.get(i))
        .map(|s| s.text.chars().take(EXCERPT_CHARS).collect())
        .unwrap_or_default()
}

#[derive(Serialize)]
struct JsonSentence {
    index: usize,
    sentence_excerpt: String,
    agree_count: usize,
    scores: Vec<f64>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    doc_id: &'a str,
    models: &'a [ModelId],
    params: NoveltyParams,
    flags: Vec<JsonFlag>,
    sentences: Vec<JsonSentence>,
}

#[derive(Serialize)]
struct JsonFlag {
    index: usize,
    agree_count: usize,
}

impl NoveltyReport {
    pub fn n(&self) -> usize {
        self.candidate_counts.len()
    }

    /// `index,sentence_excerpt,agree_count,score_<model>...`, one row per
    /// sentence.
    pub fn write_csv(&self, doc: Option<&Document>, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string(), "sentence_excerpt".into(), "agree_count".into()];
        header.extend(self.models.iter().map(|m| format!("score_{m}")));
        wr.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![i.to_string(), excerpt(doc, i), self.candidate_counts[i].to_string()];
            row.extend(self.scores.iter().map(|s| s[i].to_string()));
            wr.write_record(&row)?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_json(&self, doc: Option<&Document>, mut w: impl Write) -> Result<()> {
        let report = JsonReport {
            doc_id: &self.doc_id,
            models: &self.models,
            params: self.params,
            flags: self
                .flags
                .iter()
                .map(|&(index, agree_count)| JsonFlag { index, agree_count })
                .collect(),
            sentences: (0..self.n())
                .map(|i| JsonSentence {
                    index: i,
                    sentence_excerpt: excerpt(doc, i),
                    agree_count: self.candidate_counts[i],
                    scores: self.scores.iter().map(|s| s[i]).collect(),
                })
                .collect(),
        };
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.write_all(b"\n").map_err(|e| Error::write("<novelty json>", e))?;
        Ok(())
    }
}
