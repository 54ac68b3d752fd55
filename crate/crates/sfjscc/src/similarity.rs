//! RV2 and absolute Pearson similarity between semantic feature matrices.
//!
//! A feature matrix is the c x (h*w) flattening of one image's encoded
//! features. RV2 is the modified RV coefficient: column-center, form the
//! sample cross-product matrices with zeroed diagonals, and take their
//! normalized Frobenius inner product.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// One image's semantic features as a rows x cols matrix.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows < 2 || cols < 2 || data.len() != rows * cols {
            return Err(Error::shape(format!(
                "feature matrix needs >= 2x2, got {rows}x{cols} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("feature matrix has non-finite entries"));
        }
        Ok(Self { rows, cols, data })
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Subtract each column's mean.
    fn column_centered(&self) -> Vec<f64> {
        let mut out = self.data.clone();
        for c in 0..self.cols {
            let mean = (0..self.rows).map(|r| self.at(r, c)).sum::<f64>() / self.rows as f64;
            for r in 0..self.rows {
                out[r * self.cols + c] -= mean;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    Rv2,
    AbsPearson,
}

/// Symmetric pairwise similarity matrix over a feature set.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub values: Vec<Vec<f64>>,
    pub metric: SimilarityMetric,
    pub image_ids: Vec<usize>,
}

/// |Pearson correlation| of the two matrices' flattenings.
pub fn pearson_abs(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<f64> {
    if a.data.len() != b.data.len() {
        return Err(Error::shape("pearson_abs: element counts differ"));
    }
    let n = a.data.len() as f64;
    let ma = a.data.iter().sum::<f64>() / n;
    let mb = b.data.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined(
            "pearson correlation of a zero-variance input".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).abs())
}

/// S = M_c * M_c^T with the diagonal zeroed, for column-centered M_c.
fn zeroed_cross_product(m: &FeatureMatrix) -> Vec<f64> {
    let centered = m.column_centered();
    let r = m.rows;
    let mut s = vec![0.0; r * r];
    for i in 0..r {
        for j in (i + 1)..r {
            let mut dot = 0.0;
            for c in 0..m.cols {
                dot += centered[i * m.cols + c] * centered[j * m.cols + c];
            }
            s[i * r + j] = dot;
            s[j * r + i] = dot;
        }
    }
    s
}

/// Modified RV coefficient between two feature matrices with equal row count.
pub fn rv2(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<f64> {
    if a.rows != b.rows {
        return Err(Error::shape(format!(
            "rv2: row counts differ ({} vs {})",
            a.rows, b.rows
        )));
    }
    let sa = zeroed_cross_product(a);
    let sb = zeroed_cross_product(b);
    let inner: f64 = sa.iter().zip(&sb).map(|(x, y)| x * y).sum();
    let na: f64 = sa.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = sb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Undefined(
            "rv2 of a matrix that is zero after centering".into(),
        ));
    }
    Ok(inner / (na * nb))
}

/// All pairwise similarities over a feature list.
pub fn similarity_matrix(
    features: &[FeatureMatrix],
    metric: SimilarityMetric,
) -> Result<SimilarityMatrix> {
    if features.len() < 2 {
        return Err(Error::config("similarity_matrix needs >= 2 features"));
    }
    let n = features.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = 1.0;
        for j in (i + 1)..n {
            let v = match metric {
                SimilarityMetric::Rv2 => rv2(&features[i], &features[j]),
                SimilarityMetric::AbsPearson => pearson_abs(&features[i], &features[j]),
            }
            .map_err(|e| Error::Undefined(format!("pair ({i}, {j}): {e}")))?;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(SimilarityMatrix {
        values,
        metric,
        image_ids: (0..n).collect(),
    })
}

impl SimilarityMatrix {
    /// Off-diagonal entries (upper triangle).
    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.values.len();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.values[i][j]);
            }
        }
        out
    }

    /// Write the matrix as CSV with ids on the header row and first column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(self.image_ids.iter().map(|i| i.to_string()));
        w.write_record(&header)?;
        for (i, row) in self.values.iter().enumerate() {
            let mut rec = vec![self.image_ids[i].to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Render a simple heatmap PNG (dark = 0, bright = 1 in |value|).
    pub fn write_heatmap(&self, path: &Path, cell: u32) -> Result<()> {
        let n = self.values.len() as u32;
        let mut img = image::RgbImage::new(n * cell, n * cell);
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let t = v.abs().clamp(0.0, 1.0);
                // viridis-ish ramp
                let r = (255.0 * t.powf(1.5)) as u8;
                let g = (255.0 * t) as u8;
                let b = (96.0 + 159.0 * (1.0 - t)) as u8;
                for dy in 0..cell {
                    for dx in 0..cell {
                        img.put_pixel(
                            j as u32 * cell + dx,
                            i as u32 * cell + dy,
                            image::Rgb([r, g, b]),
                        );
                    }
                }
            }
        }
        img.save(path)?;
        Ok(())
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
        let mut rng = stream_rng(seed, Stream::Eval, 77);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn pearson_self_and_negation() {
        let x = random_matrix(4, 6, 1);
        let neg = FeatureMatrix::new(4, 6, x.data.iter().map(|v| -v).collect()).unwrap();
        assert!((pearson_abs(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_abs(&x, &neg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_affine_invariance() {
        let x = random_matrix(4, 6, 2);
        for &(c, d) in &[(2.5, 0.0), (-3.0, 1.0), (0.1, -7.0)] {
            let y =
                FeatureMatrix::new(4, 6, x.data.iter().map(|v| c * v + d).collect()).unwrap();
            assert!((pearson_abs(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_zero_variance_is_undefined() {
        let x = random_matrix(3, 3, 3);
        let flat = FeatureMatrix::new(3, 3, vec![2.0; 9]).unwrap();
        assert!(pearson_abs(&x, &flat).is_err());
    }

    #[test]
    fn rv2_self_symmetry() {
        let x = random_matrix(6, 10, 4);
        let y = random_matrix(6, 10, 5);
        assert!((rv2(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let xy = rv2(&x, &y).unwrap();
        let yx = rv2(&y, &x).unwrap();
        assert!((xy - yx).abs() < 1e-15);
    }

    #[test]
    fn rv2_orthogonal_invariance() {
        // rotate columns pairwise: X -> X Q with Q orthogonal leaves X X^T alone
        let x = random_matrix(5, 8, 6);
        let theta: f64 = 0.7;
        let (c, s) = (theta.cos(), theta.sin());
        let mut rotated = x.data.clone();
        for r in 0..x.rows {
            for p in 0..(x.cols / 2) {
                let a = x.at(r, 2 * p);
                let b = x.at(r, 2 * p + 1);
                rotated[r * x.cols + 2 * p] = c * a - s * b;
                rotated[r * x.cols + 2 * p + 1] = s * a + c * b;
            }
        }
        let y = FeatureMatrix::new(x.rows, x.cols, rotated).unwrap();
        assert!((rv2(&x, &y).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rv2_row_permutation_invariance() {
        let x = random_matrix(5, 7, 8);
        let y = random_matrix(5, 7, 9);
        let base = rv2(&x, &y).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let permute = |m: &FeatureMatrix| {
            let mut d = vec![0.0; m.data.len()];
            for (to, &from) in perm.iter().enumerate() {
                d[to * m.cols..(to + 1) * m.cols]
                    .copy_from_slice(&m.data[from * m.cols..(from + 1) * m.cols]);
            }
            FeatureMatrix::new(m.rows, m.cols, d).unwrap()
        };
        let v = rv2(&permute(&x), &permute(&y)).unwrap();
        assert!((v - base).abs() < 1e-12);
    }

    #[test]
    fn matrix_construction_and_bounds() {
        let feats: Vec<_> = (0..5).map(|i| random_matrix(4, 9, 20 + i)).collect();
        for metric in [SimilarityMetric::Rv2, SimilarityMetric::AbsPearson] {
            let m = similarity_matrix(&feats, metric).unwrap();
            let n = m.values.len();
            assert_eq!(n, 5);
            for i in 0..n {
                assert!((m.values[i][i] - 1.0).abs() < 1e-9);
                for j in 0..n {
                    assert!((m.values[i][j] - m.values[j][i]).abs() < 1e-12);
                    let lo = if metric == SimilarityMetric::AbsPearson { 0.0 } else { -1.0 };
                    assert!(m.values[i][j] >= lo - 1e-12 && m.values[i][j] <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_features_give_ones() {
        let x = random_matrix(4, 6, 30);
        let m = similarity_matrix(&[x.clone(), x], SimilarityMetric::Rv2).unwrap();
        for row in &m.values {
            for &v in row {
                assert!((v - 1.0).abs() < 1e-9);
            }
        }
    }
}
