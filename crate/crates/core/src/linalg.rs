//! Small dense linear algebra: 3x3 helpers for tangent-space evolution and a
//! cyclic Jacobi eigensolver for symmetric matrices.

use crate::dynsys::Mat3;

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn mat3_scale(a: &Mat3, k: f64) -> Mat3 {
    let mut c = *a;
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v *= k;
        }
    }
    c
}

pub fn mat3_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += b[i][j];
        }
    }
    c
}

/// Maximum absolute row sum.
pub fn mat3_norm_inf(a: &Mat3) -> f64 {
    a.iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn mat3_det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Thin QR by modified Gram-Schmidt on the columns of `a`. The diagonal of
/// `R` is non-negative by construction; a zero entry means the columns are
/// linearly dependent.
pub fn qr3(a: &Mat3) -> (Mat3, Mat3) {
    let mut cols = [[0.0; 3]; 3];
    for j in 0..3 {
        for i in 0..3 {
            cols[j][i] = a[i][j];
        }
    }
    let mut r = [[0.0; 3]; 3];
    for j in 0..3 {
        for k in 0..j {
            let dot: f64 = (0..3).map(|i| cols[k][i] * cols[j][i]).sum();
            r[k][j] = dot;
            for i in 0..3 {
                cols[j][i] -= dot * cols[k][i];
            }
        }
        let norm = (0..3).map(|i| cols[j][i] * cols[j][i]).sum::<f64>().sqrt();
        r[j][j] = norm;
        if norm > 0.0 {
            for i in 0..3 {
                cols[j][i] /= norm;
            }
        }
    }
    let mut q = [[0.0; 3]; 3];
    for j in 0..3 {
        for i in 0..3 {
            q[i][j] = cols[j][i];
        }
    }
    (q, r)
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues sorted in descending order.
    pub values: Vec<f64>,
    /// Column `k` of this row-major `n x n` matrix is the eigenvector of
    /// `values[k]`.
    pub vectors: Vec<f64>,
    pub n: usize,
    pub sweeps: usize,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.vectors[i * self.n + k]).collect()
    }
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// `tol` times the matrix norm (absolute `tol` for a zero matrix).
/// `a` is row-major `n x n` and must be symmetric.
pub fn symmetric_eigen(a: &[f64], n: usize, tol: f64) -> SymmetricEigen {
    assert_eq!(a.len(), n * n, "matrix buffer does not match n");
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = if total > 0.0 { tol * total } else { tol };
    let mut sweeps = 0;
    let max_sweeps = 100;
    while sweeps < max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= target {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + new_col] = v[r * n + old_col];
        }
    }
    SymmetricEigen {
        values,
        vectors,
        n,
        sweeps,
    }
}

/// Sample covariance (divisor `n - 1`) of the rows of an `n x d` matrix,
/// together with the column means.
pub fn covariance(data: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(data.len(), n * d);
    let mut mean = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for j in 0..d {
            centered[j] = row[j] - mean[j];
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let base = i * d;
            for j in i..d {
                cov[base + j] += ci * centered[j];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    (cov, mean)
}

/// Principal components of the rows of an `n x d` matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k x d` row-major; row `i` is the `i`-th principal direction.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
    /// Computed covariance eigenvalues, descending (negative round-off
    /// clamped to 0). All `d` of them for narrow data, the leading `k` otherwise.
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
    pub d: usize,
    pub k: usize,
}

/// Above this width only the leading components are computed, by subspace
/// iteration.
const FULL_EIGEN_MAX_DIM: usize = 200;

impl Pca {
    pub fn fit(data: &[f64], n: usize, d: usize, k: usize) -> Pca {
        let (cov, mean) = covariance(data, n, d);
        let k = k.min(d);
        let total_variance: f64 = (0..d).map(|i| cov[i * d + i]).sum();
        let (eigenvalues, components) = if d <= FULL_EIGEN_MAX_DIM {
            let eig = symmetric_eigen(&cov, d, 1e-10);
            let mut components = vec![0.0; k * d];
            for c in 0..k {
                for i in 0..d {
                    components[c * d + i] = eig.vectors[i * d + c];
                }
            }
            (eig.values.iter().map(|v| v.max(0.0)).collect::<Vec<_>>(), components)
        } else {
            top_eigen(&cov, d, k)
        };
        Pca {
            mean,
            components,
            explained_variance: eigenvalues[..k].to_vec(),
            total_variance,
            eigenvalues,
            d,
            k,
        }
    }

    /// Project rows onto the retained components (`n x k`).
    pub fn transform(&self, data: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut out = Vec::with_capacity(data.len() / d * self.k);
        for row in data.chunks_exact(d) {
            for c in 0..self.k {
                let comp = &self.components[c * d..(c + 1) * d];
                out.push(
                    row.iter()
                        .zip(&self.mean)
                        .zip(comp)
                        .map(|((x, m), w)| (x - m) * w)
                        .sum(),
                );
            }
        }
        out
    }
}

/// Leading `k` eigenpairs of a symmetric PSD `d x d` matrix by orthogonal
/// subspace iteration with Rayleigh-Ritz, oversampled by `max(10, k/2)`
/// columns. Stops when the leading `k` Ritz values move by less than 1e-9
/// relative, or after 100 iterations; directions inside a flat noise floor
/// need not converge.
/// Returns eigenvalues and `k x d` row-major eigenvectors.
fn top_eigen(a: &[f64], d: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (k + (k / 2).max(10)).min(d);
    // Deterministic start: a fixed pseudo-random basis.
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut q: Vec<f64> = (0..d * m)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    orthonormalize_columns(&mut q, d, m);
    let mut prev = vec![f64::INFINITY; k];
    let mut ritz = (vec![0.0; m], vec![0.0; m * m]);
    for _ in 0..100 {
        let mut z = mat_mul_cols(a, &q, d, m);
        orthonormalize_columns(&mut z, d, m);
        q = z;
        // Projected matrix T = Q^T A Q.
        let aq = mat_mul_cols(a, &q, d, m);
        let mut t = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                t[i * m + j] = (0..d).map(|r| q[r * m + i] * aq[r * m + j]).sum();
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let v = 0.5 * (t[i * m + j] + t[j * m + i]);
                t[i * m + j] = v;
                t[j * m + i] = v;
            }
        }
        let eig = symmetric_eigen(&t, m, 1e-12);
        let done = eig.values[..k]
            .iter()
            .zip(&prev)
            .all(|(v, p)| (v - p).abs() <= 1e-7 * v.abs().max(1e-300));
        prev.copy_from_slice(&eig.values[..k]);
        ritz = (eig.values, eig.vectors);
        if done {
            break;
        }
    }
    let (values, vecs) = ritz;
    let mut components = vec![0.0; k * d];
    for c in 0..k {
        for r in 0..d {
            components[c * d + r] = (0..m).map(|j| q[r * m + j] * vecs[j * m + c]).sum();
        }
    }
    (values[..k].iter().map(|v| v.max(0.0)).collect(), components)
}

/// `A Q` for row-major `d x d` A and `d x m` Q.
fn mat_mul_cols(a: &[f64], q: &[f64], d: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * m];
    for r in 0..d {
        let row = &a[r * d..(r + 1) * d];
        let dst = &mut out[r * m..(r + 1) * m];
        for (c, &arc) in row.iter().enumerate() {
            if arc == 0.0 {
                continue;
            }
            let src = &q[c * m..(c + 1) * m];
            for j in 0..m {
                dst[j] += arc * src[j];
            }
        }
    }
    out
}

/// Modified Gram-Schmidt on the columns of a row-major `d x m` matrix.
/// Dependent columns are zeroed.
fn orthonormalize_columns(q: &mut [f64], d: usize, m: usize) {
    for j in 0..m {
        for p in 0..j {
            let dot: f64 = (0..d).map(|r| q[r * m + p] * q[r * m + j]).sum();
            for r in 0..d {
                q[r * m + j] -= dot * q[r * m + p];
            }
        }
        let norm = (0..d).map(|r| q[r * m + j] * q[r * m + j]).sum::<f64>().sqrt();
        let inv = if norm > 1e-300 { 1.0 / norm } else { 0.0 };
        for r in 0..d {
            q[r * m + j] *= inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn qr_reconstructs() {
        let a = [[2.0, -1.0, 0.5], [1.0, 3.0, -2.0], [0.0, 1.0, 4.0]];
        let (q, r) = qr3(&a);
        let back = mat3_mul(&q, &r);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(back[i][j], a[i][j], epsilon = 1e-12);
            }
            assert!(r[i][i] > 0.0);
        }
        let qtq = mat3_mul(
            &[
                [q[0][0], q[1][0], q[2][0]],
                [q[0][1], q[1][1], q[2][1]],
                [q[0][2], q[1][2], q[2][2]],
            ],
            &q,
        );
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(qtq[i][j], IDENTITY3[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_two_by_two() {
        let e = symmetric_eigen(&[2.0, 1.0, 1.0, 2.0], 2, 1e-14);
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-12);
        let v = e.vector(0);
        assert_abs_diff_eq!(v[0].abs(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        let n = 6;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = ((i * 7 + j * 3) % 11) as f64 - 5.0;
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let e = symmetric_eigen(&a, n, 1e-13);
        for i in 0..n {
            for j in 0..n {
                let rec: f64 = (0..n)
                    .map(|k| e.vectors[i * n + k] * e.values[k] * e.vectors[j * n + k])
                    .sum();
                assert_abs_diff_eq!(rec, a[i * n + j], epsilon = 1e-9);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn subspace_iteration_matches_full_solver() {
        let d = 210;
        let n = 400;
        let mut state = 7u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let data: Vec<f64> = (0..n * d)
            .map(|i| {
                let col = i % d;
                next() * if col < 5 { 10.0 - col as f64 } else { 0.3 }
            })
            .collect();
        let (cov, _) = covariance(&data, n, d);
        let full = symmetric_eigen(&cov, d, 1e-12);
        let (vals, comps) = top_eigen(&cov, d, 4);
        for c in 0..4 {
            assert!((vals[c] - full.values[c]).abs() < 1e-8 * full.values[c]);
            let dot: f64 = (0..d).map(|r| comps[c * d + r] * full.vectors[r * d + c]).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-6, "component {c}: {dot}");
        }
    }
}
