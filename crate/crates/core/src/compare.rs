//! Cross-model agreement: Pearson correlation maps over successive-sentence
//! series and the positive/negative/directional agreement fractions over
//! standardized SSMs.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::ModelId;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::ssm::{StandardizedSsm, TimeSeries};

pub const MEAN_DOC_ID: &str = "<mean>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Correlation,
    Paf,
    Naf,
    Ddaf,
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixKind::Correlation => "correlation",
            MatrixKind::Paf => "paf",
            MatrixKind::Naf => "naf",
            MatrixKind::Ddaf => "ddaf",
        })
    }
}

impl FromStr for MatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlation" => Ok(MatrixKind::Correlation),
            "paf" => Ok(MatrixKind::Paf),
            "naf" => Ok(MatrixKind::Naf),
            "ddaf" => Ok(MatrixKind::Ddaf),
            other => Err(Error::Inconsistent(format!("unknown matrix kind {other:?}"))),
        }
    }
}

/// Labeled M x M matrix over models.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelMatrix {
    pub kind: MatrixKind,
    pub models: Vec<ModelId>,
    /// Row-major, `models.len()` squared entries.
    pub values: Vec<f64>,
    pub doc_id: String,
}

impl ModelMatrix {
    fn zeros(kind: MatrixKind, models: Vec<ModelId>, doc_id: impl Into<String>) -> Self {
        let m = models.len();
        ModelMatrix {
            kind,
            models,
            values: vec![0.0; m * m],
            doc_id: doc_id.into(),
        }
    }

    pub fn m(&self) -> usize {
        self.models.len()
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.m() + b]
    }

    fn set(&mut self, a: usize, b: usize, v: f64) {
        let m = self.m();
        self.values[a * m + b] = v;
    }

    /// CSV: `kind,doc_id`, then a blank cell and the model names, then one
    /// row per model with six-decimal values.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().flexible(true).from_writer(w);
        wr.write_record([self.kind.to_string(), self.doc_id.clone()])?;
        let mut header = vec![String::new()];
        header.extend(self.models.iter().map(ToString::to_string));
        wr.write_record(&header)?;
        for (a, name) in self.models.iter().enumerate() {
            let mut row = vec![name.to_string()];
            row.extend((0..self.m()).map(|b| format!("{:.6}", self.get(a, b))));
            wr.write_record(&row)?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(r);
        let mut records = rd.records();
        let bad = |msg: &str| Error::Inconsistent(format!("model matrix csv: {msg}"));
        let first = records.next().ok_or_else(|| bad("missing kind row"))??;
        if first.len() != 2 {
            return Err(bad("first row must be kind,doc_id"));
        }
        let kind: MatrixKind = first[0].parse()?;
        let doc_id = first[1].to_string();
        let names = records.next().ok_or_else(|| bad("missing model row"))??;
        let models = names
            .iter()
            .skip(1)
            .map(ModelId::new)
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(models.len() * models.len());
        for (a, rec) in records.enumerate() {
            let rec = rec?;
            if a >= models.len() || rec.len() != models.len() + 1 || rec[0] != *models[a].as_str() {
                return Err(bad(&format!("unexpected row {}", a + 3)));
            }
            for cell in rec.iter().skip(1) {
                values.push(cell.parse().map_err(|_| bad(&format!("bad number {cell:?}")))?);
            }
        }
        if values.len() != models.len() * models.len() {
            return Err(bad("wrong number of rows"));
        }
        Ok(ModelMatrix {
            kind,
            models,
            values,
            doc_id,
        })
    }
}

/// Pearson correlation with 64-bit two-pass accumulation.
pub fn pearson<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::TooSmall { need: 3, got: x.len() });
    }
    let constant = |s: &[T]| {
        let first: f64 = s[0].into();
        s.iter().all(|&v| v.into() == first)
    };
    if constant(x) || constant(y) {
        return Err(Error::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v.into()).sum::<f64>() / n;
    let my = y.iter().map(|&v| v.into()).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a.into() - mx, b.into() - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn pairwise_correlation<S: AsRef<[f32]> + Sync>(
    models: Vec<ModelId>,
    doc_id: &str,
    data: &[S],
) -> Result<ModelMatrix> {
    let m = models.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect();
    let rs = exec::map_indices(Execution::default(), pairs.len(), |k| {
        let (a, b) = pairs[k];
        pearson(data[a].as_ref(), data[b].as_ref())
    });
    let mut out = ModelMatrix::zeros(MatrixKind::Correlation, models, doc_id);
    for a in 0..m {
        out.set(a, a, 1.0);
    }
    for ((a, b), r) in pairs.into_iter().zip(rs) {
        let r = r?;
        out.set(a, b, r);
        out.set(b, a, r);
    }
    Ok(out)
}

fn check_models<'a>(models: impl Iterator<Item = &'a ModelId>) -> Result<Vec<ModelId>> {
    let models: Vec<ModelId> = models.cloned().collect();
    if models.len() < 2 {
        return Err(Error::TooFewModels { need: 2, got: models.len() });
    }
    for (i, m) in models.iter().enumerate() {
        if models[..i].contains(m) {
            return Err(Error::Inconsistent(format!("duplicate model {m}")));
        }
    }
    Ok(models)
}

/// Pearson correlation between every pair of successive-sentence series.
pub fn correlation_map(series: &[TimeSeries]) -> Result<ModelMatrix> {
    let models = check_models(series.iter().map(|s| &s.model))?;
    let first = &series[0];
    for s in series {
        if s.doc_id != first.doc_id || s.len() != first.len() {
            return Err(Error::Inconsistent(format!(
                "series {} ({}, len {}) does not match {} ({}, len {})",
                s.model,
                s.doc_id,
                s.len(),
                first.model,
                first.doc_id,
                first.len()
            )));
        }
    }
    let data: Vec<&[f32]> = series.iter().map(|s| s.values.as_slice()).collect();
    pairwise_correlation(models, &first.doc_id, &data)
}

/// Pearson correlation over the flattened strict upper triangles.
pub fn correlation_map_full_ssm(ssms: &[StandardizedSsm]) -> Result<ModelMatrix> {
    let models = check_models(ssms.iter().map(|s| &s.model))?;
    check_same_document(ssms)?;
    let data: Vec<Vec<f32>> = ssms.iter().map(StandardizedSsm::upper_triangle).collect();
    pairwise_correlation(models, &ssms[0].doc_id, &data)
}

/// Pearson correlation between arbitrary equal-length vectors, one per
/// model, e.g. upper triangles extracted ahead of time.
pub fn correlation_map_flat(doc_id: &str, data: &[(ModelId, Vec<f32>)]) -> Result<ModelMatrix> {
    let models = check_models(data.iter().map(|(m, _)| m))?;
    let values: Vec<&[f32]> = data.iter().map(|(_, v)| v.as_slice()).collect();
    pairwise_correlation(models, doc_id, &values)
}

/// Entrywise mean of per-document correlation maps.
pub fn mean_correlation_map(maps: &[ModelMatrix]) -> Result<ModelMatrix> {
    let first = maps.first().ok_or(Error::Inconsistent("no maps to average".into()))?;
    for m in maps {
        if m.kind != MatrixKind::Correlation {
            return Err(Error::Inconsistent(format!("expected correlation map, got {}", m.kind)));
        }
        if m.models != first.models {
            return Err(Error::Inconsistent(format!(
                "model lists differ between {} and {}",
                first.doc_id, m.doc_id
            )));
        }
    }
    let mut out = ModelMatrix::zeros(MatrixKind::Correlation, first.models.clone(), MEAN_DOC_ID);
    for (k, v) in out.values.iter_mut().enumerate() {
        *v = maps.iter().map(|m| m.values[k]).sum::<f64>() / maps.len() as f64;
    }
    Ok(out)
}

/// Sign-pair counts over unordered sentence pairs. "Positive" means z > 0;
/// exact zeros count as negative.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PairSignSummary {
    pub model_a: ModelId,
    pub model_b: ModelId,
    pub pos_pos: u64,
    pub neg_neg: u64,
    pub pos_neg: u64,
    pub neg_pos: u64,
    pub total_pairs: u64,
}

fn check_same_document<'a>(ssms: impl IntoIterator<Item = &'a StandardizedSsm>) -> Result<()> {
    let mut iter = ssms.into_iter();
    let Some(first) = iter.next() else {
        return Ok(());
    };
    for s in iter {
        if s.n() != first.n() || s.doc_id != first.doc_id {
            return Err(Error::Inconsistent(format!(
                "{} ({}, n = {}) does not match {} ({}, n = {})",
                s.model,
                s.doc_id,
                s.n(),
                first.model,
                first.doc_id,
                first.n()
            )));
        }
    }
    Ok(())
}

pub fn sign_summary(a: &StandardizedSsm, b: &StandardizedSsm) -> Result<PairSignSummary> {
    check_same_document([a, b])?;
    let n = a.n();
    let mut s = PairSignSummary {
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        pos_pos: 0,
        neg_neg: 0,
        pos_neg: 0,
        neg_pos: 0,
        total_pairs: (n * n.saturating_sub(1) / 2) as u64,
    };
    for i in 0..n {
        for (&x, &y) in a.row(i)[i + 1..].iter().zip(&b.row(i)[i + 1..]) {
            match (x > 0.0, y > 0.0) {
                (true, true) => s.pos_pos += 1,
                (false, false) => s.neg_neg += 1,
                (true, false) => s.pos_neg += 1,
                (false, true) => s.neg_pos += 1,
            }
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgreementMatrices {
    pub paf: ModelMatrix,
    pub naf: ModelMatrix,
    pub ddaf: ModelMatrix,
    /// One entry per unordered model pair a < b.
    pub summaries: Vec<PairSignSummary>,
    /// Positive-pair count per model.
    pub positives: Vec<u64>,
    pub total_pairs: u64,
}

/// Positive-sign pattern of one standardized SSM over the strict upper
/// triangle, row by row. Small enough to keep for every model of a document
/// after the matrices themselves are dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignBits {
    pub model: ModelId,
    pub doc_id: String,
    pub n: usize,
    pub positives: u64,
    words: Vec<u64>,
}

impl SignBits {
    pub fn from_standardized(z: &StandardizedSsm) -> Self {
        let n = z.n();
        let total = n * n.saturating_sub(1) / 2;
        let mut words = vec![0u64; total.div_ceil(64)];
        let mut k = 0usize;
        for i in 0..n {
            for &v in &z.row(i)[i + 1..] {
                if v > 0.0 {
                    words[k / 64] |= 1u64 << (k % 64);
                }
                k += 1;
            }
        }
        SignBits {
            model: z.model.clone(),
            doc_id: z.doc_id.clone(),
            n,
            positives: words.iter().map(|w| u64::from(w.count_ones())).sum(),
            words,
        }
    }

    pub fn total_pairs(&self) -> u64 {
        (self.n * self.n.saturating_sub(1) / 2) as u64
    }

    fn both_positive(&self, other: &SignBits) -> u64 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(x, y)| u64::from((x & y).count_ones()))
            .sum()
    }
}

/// PAF, NAF and DDAF for every model pair from exact integer counts.
///
/// `paf[a][b]` and `naf[a][b]` are the fractions of pairs both models score
/// above (resp. not above) average; their diagonals hold each model's own
/// positive (negative) fraction. `ddaf[a][b]` is the fraction positive in
/// `a` and negative in `b`; its diagonal is zero.
pub fn agreement_matrices(ssms: &[StandardizedSsm]) -> Result<AgreementMatrices> {
    check_models(ssms.iter().map(|s| &s.model))?;
    check_same_document(ssms)?;
    let bits = exec::map_indices(Execution::default(), ssms.len(), |a| SignBits::from_standardized(&ssms[a]));
    agreement_from_bits(&bits)
}

/// Same as [`agreement_matrices`] from precomputed sign patterns.
pub fn agreement_from_bits(bits: &[SignBits]) -> Result<AgreementMatrices> {
    let models = check_models(bits.iter().map(|b| &b.model))?;
    let first = &bits[0];
    if let Some(b) = bits.iter().find(|b| b.n != first.n || b.doc_id != first.doc_id) {
        return Err(Error::Inconsistent(format!(
            "{} ({}, n = {}) does not match {} ({}, n = {})",
            b.model, b.doc_id, b.n, first.model, first.doc_id, first.n
        )));
    }
    let m = models.len();
    let total = first.total_pairs();
    if total == 0 {
        return Err(Error::TooSmall { need: 2, got: first.n });
    }
    let positives: Vec<u64> = bits.iter().map(|b| b.positives).collect();

    let mut paf = ModelMatrix::zeros(MatrixKind::Paf, models.clone(), &first.doc_id);
    let mut naf = ModelMatrix::zeros(MatrixKind::Naf, models.clone(), &first.doc_id);
    let mut ddaf = ModelMatrix::zeros(MatrixKind::Ddaf, models.clone(), &first.doc_id);
    let frac = |c: u64| c as f64 / total as f64;
    let mut summaries = Vec::with_capacity(m * (m - 1) / 2);

    for a in 0..m {
        paf.set(a, a, frac(positives[a]));
        naf.set(a, a, frac(total - positives[a]));
        for b in a + 1..m {
            let pos_pos = bits[a].both_positive(&bits[b]);
            let pos_neg = positives[a] - pos_pos;
            let neg_pos = positives[b] - pos_pos;
            let neg_neg = total - pos_pos - pos_neg - neg_pos;
            paf.set(a, b, frac(pos_pos));
            paf.set(b, a, frac(pos_pos));
            naf.set(a, b, frac(neg_neg));
            naf.set(b, a, frac(neg_neg));
            ddaf.set(a, b, frac(pos_neg));
            ddaf.set(b, a, frac(neg_pos));
            summaries.push(PairSignSummary {
                model_a: models[a].clone(),
                model_b: models[b].clone(),
                pos_pos,
                neg_neg,
                pos_neg,
                neg_pos,
                total_pairs: total,
            });
        }
    }
    Ok(AgreementMatrices {
        paf,
        naf,
        ddaf,
        summaries,
        positives,
        total_pairs: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn id(s: &str) -> ModelId {
        ModelId::new(s).unwrap()
    }

    fn series(model: &str, values: Vec<f32>) -> TimeSeries {
        TimeSeries { model: id(model), doc_id: "doc".into(), values }
    }

    /// Symmetric z matrix from upper-triangle values, diagonal 1.
    fn zmat(model: &str, n: usize, upper: &[f32]) -> StandardizedSsm {
        let mut v = vec![1.0f32; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                v[i * n + j] = upper[k];
                v[j * n + i] = upper[k];
                k += 1;
            }
        }
        StandardizedSsm::new(id(model), "doc", n, v, 0.0, 1.0).unwrap()
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0f64, 2.0, 3.0, 4.0, 7.5];
        assert_abs_diff_eq!(pearson(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            pearson(&[1.0f64, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).unwrap(),
            0.98270763,
            epsilon = 1e-6
        );
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert_abs_diff_eq!(pearson(&x, &affine).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(pearson(&[1.0f64, 2.0, 3.0], &[1.0, 2.0]), Err(Error::LengthMismatch(3, 2))));
        assert!(matches!(pearson(&[1.0f64, 2.0], &[1.0, 2.0]), Err(Error::TooSmall { .. })));
        assert!(matches!(pearson(&[0.1f32; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn correlation_map_examples() {
        let v = vec![0.5, -1.0, 2.0, 0.0, 1.5];
        let map = correlation_map(&[series("A", v.clone()), series("B", v)]).unwrap();
        assert!(map.values.iter().all(|&r| (r - 1.0).abs() < 1e-12));

        let a = vec![1.0, 3.0, 2.0, 5.0, 4.0, 0.0];
        let b = vec![2.0, 1.0, 4.0, 3.0, 6.0, 5.0];
        let c = vec![0.0, -1.0, 3.0, 1.0, 2.0, 9.0];
        let map = correlation_map(&[series("A", a.clone()), series("B", b.clone()), series("C", c.clone())]).unwrap();
        assert_eq!(map.m(), 3);
        assert_eq!(map.get(0, 1), pearson(&a, &b).unwrap());
        assert_eq!(map.get(0, 2), pearson(&a, &c).unwrap());
        assert_eq!(map.get(1, 2), pearson(&b, &c).unwrap());
        assert_eq!(map.get(2, 1), map.get(1, 2));
        for k in 0..3 {
            assert_eq!(map.get(k, k), 1.0);
        }
    }

    #[test]
    fn correlation_map_rejects_mismatch() {
        let err = correlation_map(&[series("A", vec![1.0, 2.0, 3.0]), series("B", vec![1.0, 2.0, 3.0, 4.0])]);
        assert!(matches!(err, Err(Error::Inconsistent(_))));
        assert!(matches!(correlation_map(&[series("A", vec![1.0, 2.0, 3.0])]), Err(Error::TooFewModels { .. })));
        let dup = correlation_map(&[series("A", vec![1.0, 2.0, 4.0]), series("A", vec![1.0, 2.0, 3.0])]);
        assert!(matches!(dup, Err(Error::Inconsistent(_))));
    }

    #[test]
    fn mean_map_examples() {
        let base = correlation_map(&[series("A", vec![1.0, 2.0, 4.0, 3.0]), series("B", vec![2.0, 1.0, 4.0, 3.0])]).unwrap();
        let single = mean_correlation_map(std::slice::from_ref(&base)).unwrap();
        assert_eq!(single.values, base.values);
        assert_eq!(single.doc_id, MEAN_DOC_ID);

        let mut m1 = base.clone();
        let mut m2 = base.clone();
        m1.values[1] = 0.2;
        m2.values[1] = 0.6;
        let mean = mean_correlation_map(&[m1, m2]).unwrap();
        assert_abs_diff_eq!(mean.get(0, 1), 0.4, epsilon = 1e-15);

        let mut other = base.clone();
        other.models = vec![id("A"), id("C")];
        assert!(mean_correlation_map(&[base, other]).is_err());
    }

    #[test]
    fn sign_summary_examples() {
        let a = zmat("A", 4, &[0.5, -0.5, 1.0, -1.0, 0.2, -0.3]);
        let s = sign_summary(&a, &a).unwrap();
        assert_eq!((s.pos_neg, s.neg_pos), (0, 0));
        assert_eq!(s.pos_pos + s.neg_neg, 6);

        let neg: Vec<f32> = a.values().iter().map(|v| -v).collect();
        let b = StandardizedSsm::new(id("B"), "doc", 4, neg, 0.0, 1.0).unwrap();
        let s = sign_summary(&a, &b).unwrap();
        assert_eq!((s.pos_pos, s.neg_neg), (0, 0));

        // Hand enumeration of the six pairs (01,02,03,12,13,23):
        //   a: + - + - + -      c: + + - 0 - -
        //   pp: 01         nn: 12(0 counts negative), 23
        //   pn: 03, 13     np: 02
        let c = zmat("C", 4, &[0.1, 0.7, -0.2, 0.0, -0.4, -0.9]);
        let s = sign_summary(&a, &c).unwrap();
        assert_eq!((s.pos_pos, s.neg_neg, s.pos_neg, s.neg_pos, s.total_pairs), (1, 2, 2, 1, 6));
    }

    #[test]
    fn sign_summary_requires_same_n() {
        let a = zmat("A", 3, &[1.0, -1.0, 0.5]);
        let b = zmat("B", 4, &[1.0; 6]);
        assert!(sign_summary(&a, &b).is_err());
    }

    #[test]
    fn agreement_identical_models() {
        let a = zmat("A", 5, &[0.3, -0.1, 0.9, -2.0, 0.4, 0.0, -0.7, 1.1, -0.2, 0.5]);
        let mut b = a.clone();
        b.model = id("B");
        let agr = agreement_matrices(&[a, b]).unwrap();
        assert_eq!(agr.paf.get(0, 1) + agr.naf.get(0, 1), 1.0);
        assert_eq!(agr.ddaf.get(0, 1), 0.0);
        assert_eq!(agr.ddaf.get(1, 0), 0.0);
        assert_eq!(agr.paf.get(0, 0), 0.5);
        assert_eq!(agr.naf.get(0, 0), 0.5);
    }

    #[test]
    fn agreement_brute_force_three_models() {
        let ups: [[f32; 10]; 3] = [
            [0.3, -0.1, 0.9, -2.0, 0.4, 0.0, -0.7, 1.1, -0.2, 0.5],
            [-0.3, 0.2, 0.8, -1.0, -0.4, 0.6, -0.7, 0.1, 0.2, -0.5],
            [1.3, 1.2, -0.8, 0.0, 0.4, -0.6, 0.7, -0.1, 0.2, 0.05],
        ];
        let zs: Vec<_> = ["A", "B", "C"].iter().zip(&ups).map(|(m, u)| zmat(m, 5, u)).collect();
        let agr = agreement_matrices(&zs).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let (mut pp, mut nn, mut pn) = (0, 0, 0);
                for (u, v) in ups[a].iter().zip(&ups[b]) {
                    let (x, y) = (*u > 0.0, *v > 0.0);
                    pp += (x && y) as u32;
                    nn += (!x && !y) as u32;
                    pn += (x && !y) as u32;
                }
                assert_eq!(agr.paf.get(a, b), f64::from(pp) / 10.0);
                assert_eq!(agr.naf.get(a, b), f64::from(nn) / 10.0);
                let want_ddaf = if a == b { 0.0 } else { f64::from(pn) / 10.0 };
                assert_eq!(agr.ddaf.get(a, b), want_ddaf);
            }
        }
        for s in &agr.summaries {
            let a = zs.iter().position(|z| z.model == s.model_a).unwrap();
            let b = zs.iter().position(|z| z.model == s.model_b).unwrap();
            assert_eq!(*s, sign_summary(&zs[a], &zs[b]).unwrap());
            assert_eq!(s.pos_pos + s.neg_neg + s.pos_neg + s.neg_pos, s.total_pairs);
        }
    }

    #[test]
    fn csv_format_and_round_trip() {
        let map = correlation_map(&[series("DC", vec![1.0, 2.0, 4.0, 3.0]), series("I-F", vec![2.0, 1.0, 4.0, 3.0])]).unwrap();
        let text = map.to_csv_string().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "correlation,doc");
        assert_eq!(lines[1], ",DC,I-F");
        assert_eq!(lines[2], format!("DC,1.000000,{:.6}", map.get(0, 1)));
        let back = ModelMatrix::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.models, map.models);
        assert_eq!(back.kind, MatrixKind::Correlation);
        for (x, y) in back.values.iter().zip(&map.values) {
            assert_abs_diff_eq!(x, y, epsilon = 5e-7);
        }
    }

    proptest! {
        #[test]
        fn partition_identity(ups in proptest::collection::vec(proptest::collection::vec(-2.0f32..2.0, 15), 2..5)) {
            let zs: Vec<_> = ups.iter().enumerate().map(|(k, u)| zmat(&format!("M{k}"), 6, u)).collect();
            let agr = agreement_matrices(&zs).unwrap();
            for s in &agr.summaries {
                prop_assert_eq!(s.pos_pos + s.neg_neg + s.pos_neg + s.neg_pos, s.total_pairs);
            }
            for a in 0..zs.len() {
                prop_assert_eq!(agr.positives[a] + (agr.total_pairs - agr.positives[a]), agr.total_pairs);
                for b in 0..zs.len() {
                    prop_assert_eq!(agr.paf.get(a, b), agr.paf.get(b, a));
                    prop_assert_eq!(agr.naf.get(a, b), agr.naf.get(b, a));
                }
            }
        }

        #[test]
        fn correlation_permutation_equivariant(
            data in proptest::collection::vec(proptest::collection::vec(-5.0f32..5.0, 8), 3),
        ) {
            let names = ["A", "B", "C"];
            let fwd: Vec<_> = names.iter().zip(&data).map(|(n, v)| series(n, v.clone())).collect();
            let rev: Vec<_> = fwd.iter().rev().cloned().collect();
            if let (Ok(f), Ok(r)) = (correlation_map(&fwd), correlation_map(&rev)) {
                for a in 0..3 {
                    for b in 0..3 {
                        prop_assert_eq!(f.get(a, b), r.get(2 - a, 2 - b));
                    }
                }
            }
        }

        #[test]
        fn pearson_affine(x in proptest::collection::vec(-100.0f64..100.0, 3..50), a in 0.1f64..10.0, c in -10.0f64..10.0) {
            let y: Vec<f64> = x.iter().map(|v| a * v + c).collect();
            if let Ok(r) = pearson(&x, &y) {
                prop_assert!((r - 1.0).abs() < 1e-9);
            }
        }
    }
}
