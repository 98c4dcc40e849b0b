//! Principal component analysis via a cyclic Jacobi eigensolver on the
//! sample covariance matrix.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Fitted PCA basis: rows of `components` are orthonormal and ordered by
/// nonincreasing eigenvalue.
#[derive(Clone, Debug)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `[d, d]`, one component per row.
    pub components: Tensor,
    pub eigenvalues: Vec<f64>,
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as rows), unsorted.
fn jacobi_eigen(matrix: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    // v starts as identity; rows accumulate the eigenvectors.
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[i * d + j] * a[i * d + j];
                }
            }
        }
        s
    };
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    let tol = 1e-30 * frob;

    for _sweep in 0..64 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vpk = v[p * d + k];
                    let vqk = v[q * d + k];
                    v[p * d + k] = c * vpk - s * vqk;
                    v[q * d + k] = s * vpk + c * vqk;
                }
            }
        }
    }

    let eigenvalues: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    (eigenvalues, v)
}

/// Fit PCA on `data` (`[n, d]`, n >= 2): center, form the sample
/// covariance, and eigendecompose it.
pub fn pca_fit(data: &Tensor) -> Result<PcaModel> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::Data(format!("PCA needs at least 2 samples, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = data.row(r);
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(&cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eigenvalues[j].total_cmp(&eigenvalues[i]));

    let mut components = vec![0.0; d * d];
    let mut sorted_values = Vec::with_capacity(d);
    for (rank, &idx) in order.iter().enumerate() {
        sorted_values.push(eigenvalues[idx]);
        let row = &vectors[idx * d..(idx + 1) * d];
        // Fix the sign so the largest-magnitude coordinate is positive.
        let lead = row
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let flip = if lead < 0.0 { -1.0 } else { 1.0 };
        for (k, &val) in row.iter().enumerate() {
            components[rank * d + k] = flip * val;
        }
    }

    Ok(PcaModel { mean, components: Tensor::new(d, d, components)?, eigenvalues: sorted_values })
}

/// Project `data` onto the first `dims` components.
pub fn pca_project(model: &PcaModel, data: &Tensor, dims: usize) -> Result<Tensor> {
    let d = model.mean.len();
    if data.cols() != d {
        return Err(Error::Dimension(format!(
            "data width {} does not match PCA dimension {}",
            data.cols(),
            d
        )));
    }
    if dims == 0 || dims > d {
        return Err(Error::Config(format!("projection dims {dims} outside 1..={d}")));
    }
    let n = data.rows();
    let mut out = vec![0.0; n * dims];
    for r in 0..n {
        let row = data.row(r);
        for c in 0..dims {
            let comp = model.components.row(c);
            let mut acc = 0.0;
            for k in 0..d {
                acc += (row[k] - model.mean[k]) * comp[k];
            }
            out[r * dims + c] = acc;
        }
    }
    Tensor::new(n, dims, out)
}

impl PcaModel {
    /// Total variance captured by all components.
    pub fn total_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::SeedTree;

    fn random_data(seed: u64, n: usize, d: usize) -> Tensor {
        let mut rng = SeedTree::new(seed).rng();
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::new(n, d, data).unwrap()
    }

    /// Roots of the characteristic polynomial of a symmetric 3x3 matrix,
    /// via the trigonometric solution for real symmetric eigenvalues.
    fn char_poly_eigen_3x3(m: &[f64]) -> Vec<f64> {
        let p1 = m[1] * m[1] + m[2] * m[2] + m[5] * m[5];
        let q = (m[0] + m[4] + m[8]) / 3.0;
        let p2 = (m[0] - q).powi(2) + (m[4] - q).powi(2) + (m[8] - q).powi(2) + 2.0 * p1;
        if p2 <= 0.0 {
            return vec![q, q, q];
        }
        let p = (p2 / 6.0).sqrt();
        let mut b = [0.0; 9];
        for i in 0..9 {
            b[i] = m[i];
        }
        b[0] -= q;
        b[4] -= q;
        b[8] -= q;
        let det_b = b[0] * (b[4] * b[8] - b[5] * b[7]) - b[1] * (b[3] * b[8] - b[5] * b[6])
            + b[2] * (b[3] * b[7] - b[4] * b[6]);
        let r = (det_b / (2.0 * p * p * p)).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let e2 = 3.0 * q - e1 - e3;
        let mut v = vec![e1, e2, e3];
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    #[test]
    fn line_data_concentrates_variance() {
        let mut rng = SeedTree::new(71).rng();
        let dir = [0.3, -0.5, 0.8];
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let t: f64 = rng.random_range(-3.0..3.0);
                dir.iter().map(|d| d * t).collect()
            })
            .collect();
        let model = pca_fit(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let total = model.total_variance();
        assert!(model.eigenvalues[0] / total > 1.0 - 1e-8);
    }

    #[test]
    fn projections_are_uncorrelated() {
        let data = random_data(72, 60, 4);
        let model = pca_fit(&data).unwrap();
        let proj = pca_project(&model, &data, 4).unwrap();
        let n = proj.rows();
        for a in 0..4 {
            for b in (a + 1)..4 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for r in 0..n {
                    ma += proj.get(r, a);
                    mb += proj.get(r, b);
                }
                ma /= n as f64;
                mb /= n as f64;
                let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
                for r in 0..n {
                    let da = proj.get(r, a) - ma;
                    let db = proj.get(r, b) - mb;
                    cov += da * db;
                    va += da * da;
                    vb += db * db;
                }
                let corr = cov / (va.sqrt() * vb.sqrt());
                assert!(corr.abs() < 1e-8, "components {a},{b} correlate: {corr}");
            }
        }
    }

    #[test]
    fn eigenvalues_match_characteristic_polynomial_oracle() {
        let data = random_data(73, 5, 3);
        let model = pca_fit(&data).unwrap();

        // Rebuild the covariance independently.
        let (n, d) = data.shape();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(data.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; 9];
        for r in 0..n {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i * 3 + j] +=
                        (data.get(r, i) - mean[i]) * (data.get(r, j) - mean[j]) / (n - 1) as f64;
                }
            }
        }
        let expect = char_poly_eigen_3x3(&cov);
        for (a, b) in model.eigenvalues.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn components_are_orthonormal() {
        let data = random_data(74, 30, 5);
        let model = pca_fit(&data).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let dot: f64 = model
                    .components
                    .row(a)
                    .iter()
                    .zip(model.components.row(b))
                    .map(|(x, y)| x * y)
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8);
            }
        }
        // Eigenvalues nonincreasing and nearly nonnegative.
        for w in model.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(model.eigenvalues.iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn eigenvalue_sum_preserves_trace() {
        let data = random_data(75, 50, 6);
        let model = pca_fit(&data).unwrap();
        let (n, d) = data.shape();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(data.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut trace = 0.0;
        for i in 0..d {
            let mut s = 0.0;
            for r in 0..n {
                let diff = data.get(r, i) - mean[i];
                s += diff * diff;
            }
            trace += s / (n - 1) as f64;
        }
        let total = model.total_variance();
        assert!((total - trace).abs() / trace < 1e-8);
    }

    #[test]
    fn too_few_samples_rejected() {
        let data = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(pca_fit(&data).is_err());
    }

    #[test]
    fn projection_dim_checked() {
        let data = random_data(76, 10, 3);
        let model = pca_fit(&data).unwrap();
        assert!(pca_project(&model, &data, 0).is_err());
        assert!(pca_project(&model, &data, 4).is_err());
        let wrong = random_data(77, 4, 2);
        assert!(pca_project(&model, &wrong, 2).is_err());
    }
}
