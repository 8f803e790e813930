//! Principal component analysis of RN frames, without dimensionality
//! reduction: the full 20x20 rotation is kept so PCA coefficients map back
//! to RN frames losslessly.

use crate::codebook::{RnFrame, RN_LEN};
use crate::error::{Error, Result};

/// Convergence threshold on the off-diagonal Frobenius norm, relative to the
/// full norm of the covariance.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: [f64; RN_LEN],
    /// Rows are eigenvectors, strongest first.
    basis: [[f64; RN_LEN]; RN_LEN],
    eigenvalues: [f64; RN_LEN],
}

impl PcaModel {
    /// Rebuilds a model from stored parts, checking orthonormality and order.
    pub fn from_parts(
        mean: [f64; RN_LEN],
        basis: [[f64; RN_LEN]; RN_LEN],
        eigenvalues: [f64; RN_LEN],
    ) -> Result<Self> {
        if eigenvalues.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || eigenvalues.windows(2).any(|w| w[0] < w[1])
        {
            return Err(Error::invalid("eigenvalues must be non-negative and descending"));
        }
        for i in 0..RN_LEN {
            for j in 0..RN_LEN {
                let dot: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::invalid("PCA basis is not orthonormal"));
                }
            }
        }
        Ok(PcaModel { mean, basis, eigenvalues })
    }

    pub fn mean(&self) -> &[f64; RN_LEN] {
        &self.mean
    }

    pub fn basis(&self) -> &[[f64; RN_LEN]; RN_LEN] {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64; RN_LEN] {
        &self.eigenvalues
    }

    /// `basis * (x - mean)`.
    pub fn encode(&self, x: &RnFrame) -> [f64; RN_LEN] {
        self.encode_vector(x.coeffs())
    }

    pub fn encode_vector(&self, x: &[f64; RN_LEN]) -> [f64; RN_LEN] {
        let centred: [f64; RN_LEN] = std::array::from_fn(|i| x[i] - self.mean[i]);
        std::array::from_fn(|r| self.basis[r].iter().zip(&centred).map(|(b, c)| b * c).sum())
    }

    /// `basis^T * y + mean`.
    pub fn decode(&self, y: &[f64; RN_LEN]) -> [f64; RN_LEN] {
        std::array::from_fn(|c| self.mean[c] + (0..RN_LEN).map(|r| self.basis[r][c] * y[r]).sum::<f64>())
    }

    /// Decodes and rescales to unit energy so the result can drive selection.
    pub fn decode_rn(&self, y: &[f64; RN_LEN]) -> Result<RnFrame> {
        RnFrame::normalized(self.decode(y))
    }

    /// The `i`-th eigen-RN frame.
    pub fn eigen_frame(&self, i: usize) -> Result<[f64; RN_LEN]> {
        self.basis
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("eigen-frame index {i} out of range 0..{RN_LEN}")))
    }
}

/// Fits mean and covariance (divisor `n - 1`) and diagonalizes the latter.
/// Eigenvectors are oriented so their largest-magnitude component is positive.
pub fn fit_pca(points: &[RnFrame]) -> Result<PcaModel> {
    let vectors: Vec<[f64; RN_LEN]> = points.iter().map(|p| *p.coeffs()).collect();
    fit_pca_vectors(&vectors)
}

pub fn fit_pca_vectors(points: &[[f64; RN_LEN]]) -> Result<PcaModel> {
    if points.len() <= RN_LEN {
        return Err(Error::invalid(format!(
            "PCA needs more than {RN_LEN} points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    // Accumulate offsets from the first point so a constant input yields its
    // own value exactly.
    let origin = points[0];
    let mut shift = [0.0; RN_LEN];
    for p in points {
        for ((m, v), o) in shift.iter_mut().zip(p).zip(&origin) {
            *m += v - o;
        }
    }
    let mean: [f64; RN_LEN] = std::array::from_fn(|i| origin[i] + shift[i] / n);
    let cov = covariance(points, &mean);
    let (values, vectors) = jacobi_eigen(cov);

    let mut order: Vec<usize> = (0..RN_LEN).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut basis = [[0.0; RN_LEN]; RN_LEN];
    let mut eigenvalues = [0.0; RN_LEN];
    for (row, &j) in order.iter().enumerate() {
        let mut v: [f64; RN_LEN] = std::array::from_fn(|i| vectors[i][j]);
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        basis[row] = v;
        eigenvalues[row] = values[j].max(0.0);
    }
    Ok(PcaModel { mean, basis, eigenvalues })
}

pub(crate) fn covariance(points: &[[f64; RN_LEN]], mean: &[f64; RN_LEN]) -> [[f64; RN_LEN]; RN_LEN] {
    let mut cov = [[0.0; RN_LEN]; RN_LEN];
    for p in points {
        let d: [f64; RN_LEN] = std::array::from_fn(|i| p[i] - mean[i]);
        for i in 0..RN_LEN {
            for j in i..RN_LEN {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    let denom = (points.len() - 1) as f64;
    for i in 0..RN_LEN {
        for j in i..RN_LEN {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }
    cov
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns the
/// eigenvalues and a matrix whose columns are the eigenvectors.
pub fn jacobi_eigen<const D: usize>(mut a: [[f64; D]; D]) -> ([f64; D], [[f64; D]; D]) {
    let mut v = [[0.0; D]; D];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let total: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..D)
            .flat_map(|i| (0..D).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOLERANCE * total || off == 0.0 {
            break;
        }
        for p in 0..D {
            for q in p + 1..D {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..D {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..D {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    (std::array::from_fn(|i| a[i][i]), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_unit(rng: &mut ChaCha8Rng) -> RnFrame {
        RnFrame::normalized(std::array::from_fn(|i| {
            let g: f64 = StandardNormal.sample(rng);
            g * (1.0 + i as f64 * 0.1)
        }))
        .unwrap()
    }

    fn model(seed: u64, n: usize) -> (PcaModel, Vec<RnFrame>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<RnFrame> = (0..n).map(|_| random_unit(&mut rng)).collect();
        (fit_pca(&pts).unwrap(), pts)
    }

    fn axis_aligned(n: usize, seed: u64) -> PcaModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; RN_LEN]> = (0..n)
            .map(|_| {
                std::array::from_fn(|i| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g * ((21 - (i + 1)) as f64).sqrt()
                })
            })
            .collect();
        fit_pca_vectors(&pts).unwrap()
    }

    #[test]
    fn axis_aligned_variances_recovered() {
        let m = axis_aligned(10_000, 1);
        for (i, lambda) in m.eigenvalues().iter().enumerate() {
            let want = (20 - i) as f64;
            assert!((lambda - want).abs() <= 0.1 * want, "{i}: {lambda} vs {want}");
        }
    }

    #[test]
    fn axis_aligned_directions_recovered() {
        // Adjacent variances differ by one unit, so the sampling error of the
        // leading directions shrinks like sqrt(400 / n) radians.
        let m = axis_aligned(400_000, 1);
        for i in 0..RN_LEN {
            let cos = m.basis()[i][i].abs();
            assert!(cos >= 5f64.to_radians().cos(), "axis {i}: cos {cos}");
        }
    }

    #[test]
    fn identical_points_have_zero_spectrum() {
        let p = RnFrame::normalized(std::array::from_fn(|i| i as f64)).unwrap();
        let m = fit_pca(&vec![p; 30]).unwrap();
        assert!(m.eigenvalues().iter().all(|v| *v == 0.0));
        assert_eq!(m.mean(), p.coeffs());
        assert!(PcaModel::from_parts(*m.mean(), *m.basis(), *m.eigenvalues()).is_ok());
    }

    #[test]
    fn trace_is_preserved() {
        let (m, pts) = model(2, 500);
        let vecs: Vec<[f64; RN_LEN]> = pts.iter().map(|p| *p.coeffs()).collect();
        let cov = covariance(&vecs, m.mean());
        let trace: f64 = (0..RN_LEN).map(|i| cov[i][i]).sum();
        let sum: f64 = m.eigenvalues().iter().sum();
        assert!((trace - sum).abs() <= 1e-9);
    }

    #[test]
    fn basis_is_orthonormal_and_signed() {
        let (m, _) = model(3, 200);
        for i in 0..RN_LEN {
            for j in 0..RN_LEN {
                let dot: f64 = m.basis()[i].iter().zip(&m.basis()[j]).map(|(a, b)| a * b).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() <= 1e-9);
            }
            let lead = m.basis()[i].iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(lead > 0.0);
        }
        assert!(m.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn encode_decode_round_trip_and_isometry() {
        let (m, pts) = model(4, 100);
        let y0 = m.encode_vector(m.mean());
        assert!(y0.iter().all(|v| v.abs() < 1e-15));
        for p in pts.iter().take(20) {
            let y = m.encode(p);
            let back = m.decode(&y);
            for (a, b) in back.iter().zip(p.coeffs()) {
                assert!((a - b).abs() <= 1e-9);
            }
            let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nx: f64 = p.coeffs().iter().zip(m.mean()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((ny - nx).abs() <= 1e-9);
            let r = m.decode_rn(&y).unwrap();
            assert!((r.coeffs().iter().map(|v| v * v).sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn eigen_frame_bounds_and_errors() {
        let (m, _) = model(5, 50);
        assert_eq!(m.eigen_frame(0).unwrap(), m.basis()[0]);
        assert!(m.eigen_frame(20).is_err());
        let few: Vec<RnFrame> = model(6, 21).1.into_iter().take(20).collect();
        assert!(fit_pca(&few).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        assert_eq!(model(7, 300).0, model(7, 300).0);
    }
}
