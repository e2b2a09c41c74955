//! Embedding-space probes: cosine similarity of mean-pooled encoder tokens
//! for image pairs, and a ridge linear probe for measuring what a feature
//! set can predict.

// Only needed when no dependency links std.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::encoders::{Encoders, ImageGrid};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        bail!(Dimension, "cosine similarity of lengths {} and {}", a.len(), b.len());
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if !(na > 0.0) || !(nb > 0.0) {
        bail!(Input, "cosine similarity is undefined for a zero vector");
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Column means of an `N x D` token matrix.
pub fn mean_pool(tokens: &Tensor) -> Result<Vec<f64>> {
    if tokens.shape().len() != 2 || tokens.rows() == 0 {
        bail!(Input, "mean pooling needs a non-empty token matrix, got shape {:?}", tokens.shape());
    }
    let (n, d) = (tokens.rows(), tokens.cols());
    let mut out = vec![0.0; d];
    for r in 0..n {
        out.iter_mut().zip(tokens.row(r)).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    Ok(out)
}

/// Which encoder output to pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EncoderTap {
    Semantic,
    /// Output of geometry block `i`, counted from 0.
    GeometryBlock(usize),
}

impl fmt::Display for EncoderTap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderTap::Semantic => f.write_str("semantic"),
            EncoderTap::GeometryBlock(i) => write!(f, "geometry-block-{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityProbe {
    pub taps: Vec<EncoderTap>,
}

impl SimilarityProbe {
    /// The semantic encoder plus every geometry block.
    pub fn all(encoders: &Encoders) -> Self {
        let mut taps = vec![EncoderTap::Semantic];
        taps.extend((0..encoders.config().blocks).map(EncoderTap::GeometryBlock));
        Self { taps }
    }

    /// The semantic encoder and the last geometry block.
    pub fn contrast(encoders: &Encoders) -> Self {
        Self { taps: vec![EncoderTap::Semantic, EncoderTap::GeometryBlock(encoders.config().blocks - 1)] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapSimilarity {
    pub tap: EncoderTap,
    pub similarity: f64,
}

/// Mean-pooled features of `img` at every tap of `probe`.
pub fn pooled_features(encoders: &Encoders, img: &ImageGrid, probe: &SimilarityProbe) -> Result<Vec<Vec<f64>>> {
    let sem = if probe.taps.contains(&EncoderTap::Semantic) { Some(encoders.semantic_encode(img)?) } else { None };
    let geo = if probe.taps.iter().any(|t| matches!(t, EncoderTap::GeometryBlock(_))) { Some(encoders.geometry_encode(img)?) } else { None };
    probe
        .taps
        .iter()
        .map(|t| match (t, &sem, &geo) {
            (EncoderTap::Semantic, Some(s), _) => mean_pool(s),
            (EncoderTap::GeometryBlock(i), _, Some(g)) => match g.blocks.get(*i) {
                Some(b) => mean_pool(b),
                None => bail!(Index, "geometry block {} of {}", i, g.len()),
            },
            _ => unreachable!("encoders run for every requested tap"),
        })
        .collect()
}

pub fn probe_pair(encoders: &Encoders, a: &ImageGrid, b: &ImageGrid, probe: &SimilarityProbe) -> Result<Vec<TapSimilarity>> {
    if a.height() != b.height() || a.width() != b.width() {
        bail!(Input, "image pair sizes differ: {}x{} and {}x{}", a.height(), a.width(), b.height(), b.width());
    }
    if probe.taps.is_empty() {
        bail!(Input, "probe has no taps");
    }
    let fa = pooled_features(encoders, a, probe)?;
    let fb = pooled_features(encoders, b, probe)?;
    probe.taps.iter().zip(fa.iter().zip(&fb)).map(|(&tap, (x, y))| Ok(TapSimilarity { tap, similarity: cosine_similarity(x, y)? })).collect()
}

/// Mean similarity per tap over many pairs, in probe order.
pub fn mean_similarities(tables: &[Vec<TapSimilarity>]) -> Result<Vec<TapSimilarity>> {
    let Some(first) = tables.first() else {
        bail!(Input, "no pairs to summarize");
    };
    let mut out: Vec<TapSimilarity> = first.iter().map(|t| TapSimilarity { tap: t.tap, similarity: 0.0 }).collect();
    for table in tables {
        if table.len() != out.len() || table.iter().zip(&out).any(|(a, b)| a.tap != b.tap) {
            bail!(Input, "pair tables use different taps");
        }
        out.iter_mut().zip(table).for_each(|(o, t)| o.similarity += t.similarity);
    }
    out.iter_mut().for_each(|o| o.similarity /= tables.len() as f64);
    Ok(out)
}

/// Solves `a x = b` for square `a` by Gauss-Jordan elimination with partial
/// pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        bail!(Dimension, "solve needs an {}x{} system", n, n);
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap_or(col);
        if !(a[pivot][col].abs() > 1e-300) {
            bail!(Input, "singular system at column {}", col);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = 1.0 / a[col][col];
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col] * inv;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    Ok((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Affine ridge regression; the intercept is not penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearProbe {
    pub fn fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            bail!(Input, "probe needs matching non-empty features and targets");
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            bail!(Dimension, "ragged probe features");
        }
        let n = x.len() as f64;
        let mx: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let my = y.iter().sum::<f64>() / n;
        let mut gram = vec![vec![0.0; d]; d];
        let mut rhs = vec![0.0; d];
        for (r, t) in x.iter().zip(y) {
            for i in 0..d {
                let xi = r[i] - mx[i];
                rhs[i] += xi * (t - my);
                for j in 0..d {
                    gram[i][j] += xi * (r[j] - mx[j]);
                }
            }
        }
        for (i, row) in gram.iter_mut().enumerate() {
            row[i] += lambda;
        }
        let weights = solve(gram, rhs)?;
        let bias = my - weights.iter().zip(&mx).map(|(w, m)| w * m).sum::<f64>();
        Ok(Self { weights, bias })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Coefficient of determination on `(x, y)`. Can be negative.
    pub fn r_squared(&self, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
        r_squared(&x.iter().map(|r| self.predict(r)).collect::<Vec<_>>(), y)
    }
}

/// `1 - SS_res / SS_tot`. A constant target gives 0 for an exact fit and
/// negative infinity otherwise.
pub fn r_squared(pred: &[f64], y: &[f64]) -> Result<f64> {
    if y.is_empty() || pred.len() != y.len() {
        bail!(Input, "r-squared needs matching non-empty inputs");
    }
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = pred.iter().zip(y).map(|(p, v)| (p - v) * (p - v)).sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// CSV header for per-pair similarity rows.
pub const SIMILARITY_CSV_HEADER: &str = "pair_id,encoder_tap,similarity";

pub fn similarity_csv_row(pair_id: &str, s: &TapSimilarity) -> String {
    format!("{pair_id},{},{:.12}", s.tap, s.similarity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::matched_pair;
    use crate::encoders::EncoderConfig;
    use crate::rng::seeded;

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-6);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(crate::Error::Input(_))));
        assert!(cosine_similarity(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn identical_images_score_one() {
        let enc = Encoders::new(EncoderConfig::default()).unwrap();
        let img = crate::data::random_scene(&mut seeded(1), 32).render(32).unwrap();
        for t in probe_pair(&enc, &img, &img, &SimilarityProbe::all(&enc)).unwrap() {
            assert!((t.similarity - 1.0).abs() < 1e-12, "{t:?}");
        }
    }

    #[test]
    fn matched_pair_contrast() {
        let enc = Encoders::new(EncoderConfig::default()).unwrap();
        let probe = SimilarityProbe::contrast(&enc);
        let mut r = seeded(3);
        let (a, b) = matched_pair(&mut r, 32);
        let s = probe_pair(&enc, &a.render(32).unwrap(), &b.render(32).unwrap(), &probe).unwrap();
        assert!((s[0].similarity - 1.0).abs() < 1e-12);
        assert!(s[1].similarity < s[0].similarity);
    }

    #[test]
    fn solve_and_probe_recover_linear_map() {
        let x = solve(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 1.0]).is_err());

        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + 1.0).collect();
        let p = LinearProbe::fit(&xs, &ys, 0.0).unwrap();
        assert!((p.weights[0] - 3.0).abs() < 1e-9 && (p.weights[1] + 2.0).abs() < 1e-9 && (p.bias - 1.0).abs() < 1e-9);
        assert!((p.r_squared(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
    }
}
