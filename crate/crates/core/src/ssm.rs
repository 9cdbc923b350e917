//! Semantic similarity matrices: cosine SSM, z-score standardization and the
//! successive-sentence series (first superdiagonal).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, ModelId};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// Rows handled per task in [`build_ssm_with`]; each column vector is reused
/// across the whole block while it sits in cache.
const ROW_BLOCK: usize = 16;
const MIRROR_TILE: usize = 64;

/// Symmetric N x N matrix of raw cosine similarities, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Ssm {
    pub model: ModelId,
    pub doc_id: String,
    n: usize,
    values: Vec<f32>,
}

/// Z-scored SSM together with the statistics used to standardize it.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedSsm {
    pub model: ModelId,
    pub doc_id: String,
    n: usize,
    values: Vec<f32>,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub model: ModelId,
    pub doc_id: String,
    pub values: Vec<f32>,
}

/// Which cells define the mean and standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Population {
    /// Pairs i < j only.
    #[default]
    UpperTriangle,
    /// All N^2 cells, diagonal included.
    FullMatrix,
}

macro_rules! square_accessors {
    ($t:ty) => {
        impl $t {
            pub fn n(&self) -> usize {
                self.n
            }

            pub fn values(&self) -> &[f32] {
                &self.values
            }

            #[inline]
            pub fn get(&self, i: usize, j: usize) -> f32 {
                self.values[i * self.n + j]
            }

            pub fn row(&self, i: usize) -> &[f32] {
                &self.values[i * self.n..(i + 1) * self.n]
            }

            /// Entries with i < j, row by row.
            pub fn upper_triangle(&self) -> Vec<f32> {
                let n = self.n;
                let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
                for i in 0..n {
                    out.extend_from_slice(&self.row(i)[i + 1..]);
                }
                out
            }
        }
    };
}

square_accessors!(Ssm);
square_accessors!(StandardizedSsm);

fn check_square(n: usize, len: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    if len != n * n {
        return Err(Error::LengthMismatch(len, n * n));
    }
    Ok(())
}

impl Ssm {
    pub fn new(model: ModelId, doc_id: impl Into<String>, n: usize, values: Vec<f32>) -> Result<Self> {
        check_square(n, values.len())?;
        Ok(Ssm {
            model,
            doc_id: doc_id.into(),
            n,
            values,
        })
    }
}

impl StandardizedSsm {
    pub fn new(
        model: ModelId,
        doc_id: impl Into<String>,
        n: usize,
        values: Vec<f32>,
        mu: f64,
        sigma: f64,
    ) -> Result<Self> {
        check_square(n, values.len())?;
        Ok(StandardizedSsm {
            model,
            doc_id: doc_id.into(),
            n,
            values,
            mu,
            sigma,
        })
    }
}

/// Cosine similarity with 64-bit accumulation, clamped to [-1, 1].
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Copies the strict upper triangle onto the lower one.
fn mirror_upper(values: &mut [f32], n: usize) {
    for bi in (0..n).step_by(MIRROR_TILE) {
        for bj in (0..=bi).step_by(MIRROR_TILE) {
            for i in bi..(bi + MIRROR_TILE).min(n) {
                for j in bj..(bj + MIRROR_TILE).min(i) {
                    values[i * n + j] = values[j * n + i];
                }
            }
        }
    }
}

pub fn build_ssm(m: &EmbeddingMatrix) -> Result<Ssm> {
    build_ssm_with(m, Execution::default())
}

/// Builds the cosine SSM. Rows are normalized once in 64-bit, pairs i <= j
/// are computed as plain dot products and the lower triangle is mirrored.
pub fn build_ssm_with(m: &EmbeddingMatrix, exec: Execution) -> Result<Ssm> {
    let (n, d) = (m.n(), m.d());
    if n < 2 {
        return Err(Error::TooSmall { need: 2, got: n });
    }
    let mut unit = vec![0.0f64; n * d];
    for (i, (src, dst)) in m.rows().zip(unit.chunks_exact_mut(d)).enumerate() {
        let norm = src.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector(i));
        }
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = f64::from(v) / norm;
        }
    }

    let mut values = vec![0.0f32; n * n];
    exec::for_each_row_mut(exec, &mut values, ROW_BLOCK * n, |block, rows| {
        let i0 = block * ROW_BLOCK;
        let rows_here = rows.len() / n;
        for j in i0..n {
            let uj = &unit[j * d..(j + 1) * d];
            for r in 0..rows_here.min(j + 1 - i0) {
                let i = i0 + r;
                let ui = &unit[i * d..(i + 1) * d];
                rows[r * n + j] = dot(ui, uj).clamp(-1.0, 1.0) as f32;
            }
        }
    });
    mirror_upper(&mut values, n);

    Ssm::new(m.model().clone(), m.doc_id(), n, values)
}

pub fn standardize(s: &Ssm) -> Result<StandardizedSsm> {
    standardize_with(s, Population::UpperTriangle, Execution::default())
}

/// Maps every cell to (x - mu) / sigma, with mu and the population sigma
/// taken over `population`. Statistics are accumulated in 64-bit, two-pass,
/// with per-row partial sums folded in row order.
pub fn standardize_with(s: &Ssm, population: Population, exec: Execution) -> Result<StandardizedSsm> {
    let n = s.n;
    if n < 3 {
        return Err(Error::TooSmall { need: 3, got: n });
    }
    let cells = |i: usize| -> &[f32] {
        match population {
            Population::UpperTriangle => &s.row(i)[i + 1..],
            Population::FullMatrix => s.row(i),
        }
    };
    let count = match population {
        Population::UpperTriangle => n * (n - 1) / 2,
        Population::FullMatrix => n * n,
    } as f64;

    let sums = exec::map_indices(exec, n, |i| cells(i).iter().map(|&x| f64::from(x)).sum::<f64>());
    let mu = sums.iter().sum::<f64>() / count;
    let sq = exec::map_indices(exec, n, |i| {
        cells(i).iter().map(|&x| (f64::from(x) - mu).powi(2)).sum::<f64>()
    });
    let sigma = (sq.iter().sum::<f64>() / count).sqrt();
    if sigma.is_nan() || sigma < 1e-9 {
        return Err(Error::DegenerateSigma);
    }

    let mut values = vec![0.0f32; n * n];
    exec::for_each_row_mut(exec, &mut values, n, |i, row| {
        for (out, &x) in row[i..].iter_mut().zip(&s.row(i)[i..]) {
            *out = ((f64::from(x) - mu) / sigma) as f32;
        }
    });
    mirror_upper(&mut values, n);

    StandardizedSsm::new(s.model.clone(), s.doc_id.clone(), n, values, mu, sigma)
}

pub fn successive_series(z: &StandardizedSsm) -> Result<TimeSeries> {
    if z.n < 2 {
        return Err(Error::TooSmall { need: 2, got: z.n });
    }
    Ok(TimeSeries {
        model: z.model.clone(),
        doc_id: z.doc_id.clone(),
        values: (0..z.n - 1).map(|t| z.get(t, t + 1)).collect(),
    })
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with header `index,z`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "z"])?;
        for (t, v) in self.values.iter().enumerate() {
            wr.write_record([t.to_string(), v.to_string()])?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv(r: impl std::io::Read, model: ModelId, doc_id: impl Into<String>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["index", "z"] {
            return Err(Error::Inconsistent(format!("series header {headers:?}, expected index,z")));
        }
        let mut values = Vec::new();
        for (t, rec) in rd.records().enumerate() {
            let rec = rec?;
            let idx: usize = rec[0]
                .parse()
                .map_err(|_| Error::Inconsistent(format!("bad index {:?}", &rec[0])))?;
            if idx != t {
                return Err(Error::Inconsistent(format!("series index {idx} at row {t}")));
            }
            values.push(
                rec[1]
                    .parse()
                    .map_err(|_| Error::Inconsistent(format!("bad value {:?}", &rec[1])))?,
            );
        }
        Ok(TimeSeries {
            model,
            doc_id: doc_id.into(),
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::reference_embed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mid() -> ModelId {
        ModelId::new("M").unwrap()
    }

    fn emb(rows: Vec<Vec<f32>>) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(mid(), "doc", rows).unwrap()
    }

    fn toy_embedding(n: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
        let rows = (0..n)
            .map(|i| reference_embed(&format!("sentence {i} seed {seed} word{}", i % 3), dim))
            .collect();
        emb(rows)
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-7);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn cosine_scale_invariant() {
        let u = reference_embed("scale test one", 24);
        let v = reference_embed("another sentence here", 24);
        let base = cosine(&u, &v).unwrap();
        for alpha in [0.5f32, 10.0] {
            let scaled: Vec<f32> = u.iter().map(|x| x * alpha).collect();
            assert_abs_diff_eq!(cosine(&scaled, &v).unwrap(), base, epsilon = 1e-7);
        }
    }

    #[test]
    fn build_small_cases() {
        let s = build_ssm(&emb(vec![vec![0.3, 0.4], vec![0.3, 0.4]])).unwrap();
        assert!(s.values().iter().all(|&v| (v - 1.0).abs() < 1e-7));
        let s = build_ssm(&emb(vec![vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(s.values(), &[1.0, 0.0, 0.0, 1.0]);
        let one = EmbeddingMatrix::from_rows(mid(), "d", vec![vec![1.0, 0.0]]).unwrap();
        assert!(matches!(build_ssm(&one), Err(Error::TooSmall { need: 2, got: 1 })));
    }

    #[test]
    fn build_matches_brute_force() {
        for n in 2..=10 {
            let m = toy_embedding(n, 16, n as u64);
            let s = build_ssm(&m).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let want = cosine(m.row(i), m.row(j)).unwrap();
                    assert_abs_diff_eq!(f64::from(s.get(i, j)), want, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let m = toy_embedding(70, 32, 7);
        let a = build_ssm_with(&m, Execution::Sequential).unwrap();
        let b = build_ssm_with(&m, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let za = standardize_with(&a, Population::UpperTriangle, Execution::Sequential).unwrap();
        let zb = standardize_with(&b, Population::UpperTriangle, Execution::Parallel).unwrap();
        assert_eq!(za, zb);
    }

    #[test]
    fn standardize_hand_example() {
        let x = vec![1.0, 0.2, 0.4, 0.2, 1.0, 0.6, 0.4, 0.6, 1.0];
        let s = Ssm::new(mid(), "d", 3, x).unwrap();
        let z = standardize(&s).unwrap();
        assert_abs_diff_eq!(z.mu, 0.4, epsilon = 1e-7);
        assert_abs_diff_eq!(z.sigma, 0.16329932, epsilon = 1e-7);
        assert_abs_diff_eq!(z.get(0, 1), -1.2247, epsilon = 1e-4);
        assert_abs_diff_eq!(z.get(0, 2), 0.0, epsilon = 1e-4);
        assert_abs_diff_eq!(z.get(1, 2), 1.2247, epsilon = 1e-4);
        assert_eq!(z.get(2, 1), z.get(1, 2));
    }

    #[test]
    fn standardize_degenerate() {
        let mut x = vec![0.5f32; 16];
        for i in 0..4 {
            x[i * 4 + i] = 1.0;
        }
        let s = Ssm::new(mid(), "d", 4, x).unwrap();
        let err = standardize(&s).unwrap_err();
        assert_eq!(err.to_string(), "degenerate sigma");
    }

    #[test]
    fn standardize_needs_three() {
        let s = build_ssm(&emb(vec![vec![1.0, 0.0], vec![0.6, 0.8]])).unwrap();
        assert!(matches!(standardize(&s), Err(Error::TooSmall { need: 3, got: 2 })));
    }

    #[test]
    fn full_matrix_population_includes_diagonal() {
        let x = vec![1.0, 0.2, 0.4, 0.2, 1.0, 0.6, 0.4, 0.6, 1.0];
        let s = Ssm::new(mid(), "d", 3, x.clone()).unwrap();
        let z = standardize_with(&s, Population::FullMatrix, Execution::Sequential).unwrap();
        let mean: f64 = x.iter().map(|&v| f64::from(v)).sum::<f64>() / 9.0;
        assert_abs_diff_eq!(z.mu, mean, epsilon = 1e-7);
        let full_mean: f64 = z.values().iter().map(|&v| f64::from(v)).sum::<f64>() / 9.0;
        assert_abs_diff_eq!(full_mean, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn series_examples() {
        let m = toy_embedding(2, 8, 1);
        let s = build_ssm(&m).unwrap();
        // n = 2 cannot be standardized; build a z matrix directly.
        let z = StandardizedSsm::new(mid(), "d", 2, s.values().to_vec(), 0.0, 1.0).unwrap();
        let ts = successive_series(&z).unwrap();
        assert_eq!(ts.values, vec![z.get(0, 1)]);

        let vals: Vec<f32> = (0..25).map(|k| k as f32).collect();
        let z = StandardizedSsm::new(mid(), "d", 5, vals, 0.0, 1.0).unwrap();
        assert_eq!(successive_series(&z).unwrap().values, vec![1.0, 7.0, 13.0, 19.0]);
    }

    #[test]
    fn series_csv_round_trip() {
        let ts = TimeSeries { model: mid(), doc_id: "d".into(), values: vec![-1.5, 0.25, 3.0e-7] };
        let mut buf = Vec::new();
        ts.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("index,z\n0,-1.5\n"));
        let back = TimeSeries::read_csv(&buf[..], mid(), "d").unwrap();
        assert_eq!(back, ts);
    }

    fn random_ssm(vals: &[f32], n: usize) -> Ssm {
        let mut x = vec![1.0f32; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                x[i * n + j] = vals[k];
                x[j * n + i] = vals[k];
                k += 1;
            }
        }
        Ssm::new(mid(), "d", n, x).unwrap()
    }

    proptest! {
        #[test]
        fn standardize_preserves_rank(vals in proptest::collection::vec(-1.0f32..1.0, 15)) {
            let s = random_ssm(&vals, 6);
            prop_assume!(standardize(&s).is_ok());
            let z = standardize(&s).unwrap();
            let (xu, zu) = (s.upper_triangle(), z.upper_triangle());
            for a in 0..xu.len() {
                for b in 0..xu.len() {
                    if xu[a] < xu[b] {
                        prop_assert!(zu[a] <= zu[b]);
                    }
                }
            }
        }

        #[test]
        fn standardized_contract(seed in 0u64..1000, n in 3usize..40) {
            let m = toy_embedding(n, 12, seed);
            let s = build_ssm(&m).unwrap();
            let z = standardize(&s).unwrap();
            let up: Vec<f64> = z.upper_triangle().iter().map(|&v| f64::from(v)).collect();
            let mean = up.iter().sum::<f64>() / up.len() as f64;
            let sd = (up.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / up.len() as f64).sqrt();
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((sd - 1.0).abs() <= 1e-5);
            for i in 0..n {
                prop_assert!((s.get(i, i) - 1.0).abs() <= 1e-5);
                for j in 0..n {
                    prop_assert_eq!(s.get(i, j), s.get(j, i));
                    prop_assert_eq!(z.get(i, j), z.get(j, i));
                    prop_assert!(s.get(i, j).abs() <= 1.0 + 1e-6);
                }
            }
            let ts = successive_series(&z).unwrap();
            prop_assert_eq!(ts.len(), n - 1);
            for t in 0..n - 1 {
                prop_assert_eq!(ts.values[t], z.values()[t * n + t + 1]);
            }
        }
    }
}
